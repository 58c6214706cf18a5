//! The method x label-fraction grid: from-scratch and texture-pretrained
//! finetuning at every fraction, plus the four pretext baselines at the full
//! training set, each repeated over several seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::nn::checkpoint::save_checkpoint;
use crate::pipeline::dataset::{LoadedDataset, Splits};
use crate::pipeline::evaluate::write_report;
use crate::pipeline::train::{finetune, pretrain, PretextKind, TrainConfig, TrainStage};
use crate::unet::{build_unet, Stage, UNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    NoPretraining,
    Ours,
    Pretext(PretextKind),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NoPretraining,
        Method::Ours,
        Method::Pretext(PretextKind::Reconstruction),
        Method::Pretext(PretextKind::Deblur),
        Method::Pretext(PretextKind::Denoise),
        Method::Pretext(PretextKind::SuperResolution),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoPretraining => "no_pretraining",
            Method::Ours => "ours",
            Method::Pretext(k) => k.name(),
        }
    }

    /// The pretraining stage feeding this method, if any.
    pub fn pretrain_stage(self) -> Option<TrainStage> {
        match self {
            Method::NoPretraining => None,
            Method::Ours => Some(TrainStage::Pretrain),
            Method::Pretext(k) => Some(TrainStage::Pretext(k)),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method {s:?}")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub methods: Vec<Method>,
    /// Fractions for `no_pretraining` and `ours`.
    pub fractions: Vec<f64>,
    /// Fractions for the pretext baselines.
    pub pretext_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Stage and seed are set per cell.
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Concurrent training runs.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            fractions: vec![1.0, 0.5, 0.25, 0.05],
            pretext_fractions: vec![1.0],
            seeds: vec![0, 1, 2],
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            jobs: 1,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            bail!(Argument, "ablation needs at least one method and one seed");
        }
        if self.jobs == 0 {
            bail!(Argument, "jobs must be at least 1");
        }
        for f in self.fractions.iter().chain(&self.pretext_fractions) {
            if !(*f > 0.0 && *f <= 1.0) {
                bail!(Argument, "fraction {f} must lie in (0, 1]");
            }
        }
        if self.pretrain.base_width != self.finetune.base_width || self.pretrain.depth != self.finetune.depth {
            bail!(Argument, "pretrain and finetune architectures must match");
        }
        self.pretrain.validate()?;
        self.finetune.validate()
    }

    fn fractions_for(&self, m: Method) -> &[f64] {
        match m {
            Method::Pretext(_) => &self.pretext_fractions,
            _ => &self.fractions,
        }
    }

    /// Grid cells in output order: seed, then method, then fraction.
    pub fn cells(&self) -> Vec<(Method, f64, u64)> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &m in &self.methods {
                for &f in self.fractions_for(m) {
                    out.push((m, f, seed));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub fraction: f64,
    pub seed: u64,
    pub mean_jsi: f64,
    pub pooled_jsi: f64,
    /// Parameters of the finetuned 4->2 network.
    pub n_params: usize,
    /// Parameters of the 3->1 network it started from.
    pub pretrain_n_params: Option<usize>,
    pub train_images: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub fraction: f64,
    pub seeds: usize,
    pub mean_jsi: f64,
    pub mean_jsi_sd: f64,
    pub pooled_jsi: f64,
    pub pooled_jsi_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<SummaryRow>,
    pub config: AblationConfig,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Sample mean and standard deviation per (method, fraction), in first-seen order.
pub fn summarize(rows: &[AblationRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(Method, u64)> = Vec::new();
    let mut groups: BTreeMap<(Method, u64), Vec<&AblationRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method, r.fraction.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let (m, s) = mean_sd(&g.iter().map(|r| r.mean_jsi).collect::<Vec<_>>());
            let (pm, ps) = mean_sd(&g.iter().map(|r| r.pooled_jsi).collect::<Vec<_>>());
            SummaryRow {
                method: key.0,
                fraction: f64::from_bits(key.1),
                seeds: g.len(),
                mean_jsi: m,
                mean_jsi_sd: s,
                pooled_jsi: pm,
                pooled_jsi_sd: ps,
            }
        })
        .collect()
}

impl AblationTable {
    pub fn row(&self, method: Method, fraction: f64, seed: u64) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.fraction == fraction && r.seed == seed)
    }

    pub fn summary_for(&self, method: Method, fraction: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.fraction == fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "method,fraction,seed,mean_jsi,pooled_jsi,n_params").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{}",
                r.method, r.fraction, r.seed, r.mean_jsi, r.pooled_jsi, r.n_params
            )
            .unwrap();
        }
        String::from_utf8(out).expect("ascii")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("ablation.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("ablation.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }
}

/// Runs `f` over `tasks` on up to `jobs` threads; results keep task order.
fn run_pool<T: Sync, R: Send>(jobs: usize, tasks: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let r = f(&tasks[i]);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

fn fraction_tag(f: f64) -> String {
    format!("{f}").replace('.', "p")
}

/// Trains and scores every grid cell. When `out_dir` is given, each
/// pretrained model goes to `pretrain/<method>_s<seed>/` and each cell's test
/// metrics to `cells/<method>_f<fraction>_s<seed>/`, then the table is
/// written as `ablation.csv` and `ablation.json`.
pub fn run_ablation(
    cfg: &AblationConfig,
    data: &LoadedDataset,
    splits: &Splits,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    cfg.validate()?;
    let mut pre_tasks: Vec<(Method, u64)> = Vec::new();
    for &seed in &cfg.seeds {
        for &m in &cfg.methods {
            if m.pretrain_stage().is_some() && !pre_tasks.contains(&(m, seed)) {
                pre_tasks.push((m, seed));
            }
        }
    }
    let subdir = |parts: &[&str]| -> Result<Option<PathBuf>> {
        let Some(root) = out_dir else { return Ok(None) };
        let d = parts.iter().fold(root.to_path_buf(), |p, s| p.join(s));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(Some(d))
    };

    let pretrained: Vec<UNet<f32>> = run_pool(cfg.jobs, &pre_tasks, |&(m, seed)| {
        let pcfg = TrainConfig {
            stage: m.pretrain_stage().expect("pretrained method"),
            seed,
            ..cfg.pretrain
        };
        log::info!("pretraining {m} seed {seed}");
        let model = build_unet::<f32>(&pcfg.unet(Stage::Pretrain))?;
        let out = pretrain(model, data, splits, &pcfg)?;
        if let Some(d) = subdir(&["pretrain", &format!("{m}_s{seed}")])? {
            save_checkpoint(&out.model, &out.meta, d.join("model.wseg"))?;
            let curve = d.join("curve.json");
            std::fs::write(&curve, serde_json::to_string_pretty(&out.curve)? + "\n")
                .map_err(|e| Error::io(&curve, e))?;
        }
        Ok(out.model)
    })?;

    let cells = cfg.cells();
    let rows = run_pool(cfg.jobs, &cells, |&(m, fraction, seed)| {
        let start = pre_tasks
            .iter()
            .position(|t| *t == (m, seed))
            .map(|i| pretrained[i].clone());
        let pretrain_n_params = start.as_ref().map(UNet::count_params);
        let fcfg = TrainConfig {
            stage: TrainStage::Finetune,
            fraction,
            seed,
            ..cfg.finetune
        };
        log::info!("finetuning {m} fraction {fraction} seed {seed}");
        let out = finetune(start, data, splits, &fcfg)?;
        if let Some(d) = subdir(&["cells", &format!("{m}_f{}_s{seed}", fraction_tag(fraction))])? {
            write_report(&out.test_report, &d)?;
        }
        Ok(AblationRow {
            method: m,
            fraction,
            seed,
            mean_jsi: out.test_report.mean_jsi,
            pooled_jsi: out.test_report.pooled_jsi,
            n_params: out.train.model.count_params(),
            pretrain_n_params,
            train_images: out.train.train_ids.len(),
            best_epoch: out.train.best_epoch,
        })
    })?;

    let table = AblationTable {
        summary: summarize(&rows),
        rows,
        config: cfg.clone(),
    };
    if let Some(d) = out_dir {
        table.write(d)?;
    }
    Ok(table)
}

/// Renders an ablation CSV as a method x fraction grid of `mean ± sd` of
/// the per-image mean JSI across seeds.
pub fn render_table(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != "method,fraction,seed,mean_jsi,pooled_jsi,n_params" {
        bail!(Format, "not an ablation table header: {header:?}");
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("row {}: {line:?}", i + 2));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(AblationRow {
            method: f[0].parse()?,
            fraction: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            mean_jsi: f[3].parse().map_err(|_| bad())?,
            pooled_jsi: f[4].parse().map_err(|_| bad())?,
            n_params: f[5].parse().map_err(|_| bad())?,
            pretrain_n_params: None,
            train_images: 0,
            best_epoch: 0,
        });
    }
    let summary = summarize(&rows);
    let mut fractions: Vec<f64> = summary.iter().map(|s| s.fraction).collect();
    fractions.sort_by(|a, b| b.total_cmp(a));
    fractions.dedup();
    let mut methods: Vec<Method> = Vec::new();
    for s in &summary {
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    let mut out = format!("{:<18}", "method");
    for f in &fractions {
        out += &format!("{:>18}", format!("{:.0}%", f * 100.0));
    }
    out += &format!("{:>12}\n", "params");
    for m in methods {
        out += &format!("{:<18}", m.name());
        for f in &fractions {
            let cell = summary
                .iter()
                .find(|s| s.method == m && s.fraction == *f)
                .map(|s| format!("{:.4} ± {:.4}", s.mean_jsi, s.mean_jsi_sd))
                .unwrap_or_else(|| "-".into());
            out += &format!("{cell:>18}");
        }
        let params = rows.iter().find(|r| r.method == m).map(|r| r.n_params).unwrap_or(0);
        out += &format!("{params:>12}\n");
    }
    Ok(out)
}
