//! Command-line front end: one subcommand per pipeline step.
//!
//! Settings are merged from built-in defaults, then the `WSEG_SEED`
//! environment variable, then a `--config` file (TOML or JSON, same layout
//! as [`Settings`]), then explicit flags. Every subcommand writes the
//! effective settings, with the source of each overridden value, to
//! `<out-dir>/<subcommand>.config.json`.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or config), 2 runtime error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fusion::DEFAULT_K;
use crate::nn::checkpoint::{checkpoint_from_bytes, checkpoint_id, load_checkpoint, save_checkpoint};
use crate::nn::gradcheck::run_suite;
use crate::pipeline::ablation::{render_table, run_ablation, AblationConfig, Method};
use crate::pipeline::dataset::{split_dataset, DatasetManifest, LoadedDataset, Splits, DEFAULT_RATIOS};
use crate::pipeline::evaluate::{evaluate, write_report, EvalOptions};
use crate::pipeline::prepare::{fuse_manifest, weaklabel_manifest};
use crate::pipeline::synth::{synth_dataset, SynthConfig};
use crate::pipeline::train::{finetune, pretrain, PretextKind, TrainConfig, TrainOutcome, TrainStage};
use crate::unet::{build_unet, Stage};
use crate::weaklabel::TextureConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseSettings {
    pub k: usize,
}

impl Default for FuseSettings {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: [f64; 3],
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { ratios: DEFAULT_RATIOS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub methods: Vec<Method>,
    pub fractions: Vec<f64>,
    pub pretext_fractions: Vec<f64>,
    /// Defaults to three consecutive seeds from the master seed.
    pub seeds: Option<Vec<u64>>,
    pub jobs: usize,
}

impl Default for AblateSettings {
    fn default() -> Self {
        let d = AblationConfig::default();
        Self {
            methods: d.methods,
            fractions: d.fractions,
            pretext_fractions: d.pretext_fractions,
            seeds: None,
            jobs: 1,
        }
    }
}

/// Everything a subcommand may read. The master `seed` and `deterministic`
/// flag are copied into every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub deterministic: bool,
    pub synth: SynthConfig,
    pub texture: TextureConfig,
    pub fuse: FuseSettings,
    pub splits: SplitSettings,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub ablate: AblateSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            synth: SynthConfig::default(),
            texture: TextureConfig::default(),
            fuse: FuseSettings::default(),
            splits: SplitSettings::default(),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            ablate: AblateSettings::default(),
        }
    }
}

impl Settings {
    fn finish(mut self) -> Self {
        self.synth.seed = self.seed;
        for t in [&mut self.pretrain, &mut self.finetune] {
            t.seed = self.seed;
            t.deterministic = self.deterministic;
        }
        self
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            methods: self.ablate.methods.clone(),
            fractions: self.ablate.fractions.clone(),
            pretext_fractions: self.ablate.pretext_fractions.clone(),
            seeds: self
                .ablate
                .seeds
                .clone()
                .unwrap_or_else(|| (0..3).map(|i| self.seed + i).collect()),
            pretrain: self.pretrain,
            finetune: self.finetune,
            jobs: self.ablate.jobs,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wseg", version, about = "Facial wrinkle segmentation: weak-label pretraining, label fusion, finetuning, evaluation")]
struct Cli {
    /// Master seed (lowest priority: WSEG_SEED, then --config, then this flag)
    #[arg(long, global = true, env = "WSEG_SEED", default_value_t = 0)]
    seed: u64,
    /// Record runs as deterministic (all computation is single-threaded and reproducible)
    #[arg(long, global = true)]
    deterministic: bool,
    /// Settings file, TOML or JSON
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs and the effective-config echo
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic face dataset with simulated annotators
    Synth(SynthArgs),
    /// Write texture weak labels for every image of a manifest
    Weaklabel(WeaklabelArgs),
    /// Majority-vote annotator masks into fused ground truth
    Fuse(FuseArgs),
    /// Pretrain a 3->1 network on texture labels or a pretext task
    Pretrain(PretrainArgs),
    /// Finetune a 4->2 wrinkle network, optionally from a pretrained checkpoint
    Finetune(FinetuneArgs),
    /// Score a finetuned checkpoint and write overlays
    Evaluate(EvaluateArgs),
    /// Run the method x label-fraction grid
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Render an ablation CSV as a text table
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 124)]
    count: usize,
    /// Image side, a power of two >= 32
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    annotators: usize,
    /// Probability an annotator misses a stroke
    #[arg(long, default_value_t = 0.15)]
    drop_prob: f64,
    /// Maximum annotator shift in pixels
    #[arg(long, default_value_t = 1)]
    jitter: i32,
    /// Maximum annotator stroke half-width change in pixels
    #[arg(long, default_value_t = 1)]
    morph_radius: i32,
}

#[derive(Debug, Args)]
struct ManifestArg {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct WeaklabelArgs {
    #[command(flatten)]
    data: ManifestArg,
    /// Gaussian sigma of the high-pass filter
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Residual magnitude mapped to 1.0
    #[arg(long, default_value_t = 0.2)]
    scale: f64,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[command(flatten)]
    data: ManifestArg,
    /// Votes needed for a wrinkle pixel
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: ManifestArg,
    /// Splits JSON; generated from the seed when absent
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    base_width: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// texture, reconstruction, deblur, denoise or super_resolution
    #[arg(long, default_value = "texture")]
    task: String,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Pretrained (3->1) or finetuned (4->2) checkpoint to start from
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Share of the training split to use
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Cross-entropy weight of wrinkle pixels
    #[arg(long, default_value_t = 1.0)]
    pos_weight: f64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: ManifestArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Splits JSON; generated from the seed when absent
    #[arg(long)]
    splits: Option<PathBuf>,
    /// train, val or test
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    data: ManifestArg,
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
    methods: Vec<Method>,
    /// Fractions for no_pretraining and ours
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5, 0.25, 0.05])]
    fractions: Vec<f64>,
    /// Seeds to repeat over (default: three from the master seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 60)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 30)]
    finetune_epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pos_weight: f64,
    /// Concurrent training runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Number of consecutive seeds
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Ablation CSV
    #[arg(long)]
    table: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Records explicit flags as settings overrides.
struct Overrides<'a> {
    matches: &'a ArgMatches,
    set: Vec<(String, Value, &'static str)>,
}

impl Overrides<'_> {
    fn flag<T: Serialize>(&mut self, id: &str, path: impl Into<String>, value: T) {
        let source = match self.matches.value_source(id) {
            Some(ValueSource::CommandLine) => "flag",
            Some(ValueSource::EnvVariable) => "env",
            _ => return,
        };
        self.set
            .push((path.into(), serde_json::to_value(value).expect("plain value"), source));
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .as_object_mut()
            .expect("settings sections are objects")
            .entry(*p)
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .expect("settings sections are objects")
        .insert(parts[parts.len() - 1].to_string(), v);
}

fn merge(into: &mut Value, from: Value, prefix: &str, prov: &mut BTreeMap<String, String>) {
    match (into, from) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match a.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path, prov),
                    _ => {
                        prov.insert(path, "file".into());
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_config(path: &Path) -> std::result::Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parsed = if is_toml {
        toml::from_str::<toml::Value>(&text)
            .map_err(|e| e.to_string())
            .and_then(|v| serde_json::to_value(v).map_err(|e| e.to_string()))
    } else {
        serde_json::from_str::<Value>(&text).map_err(|e| e.to_string())
    };
    let v = parsed.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Failure::Usage(format!("{}: top level must be a table", path.display())));
    }
    Ok(v)
}

struct Effective {
    settings: Settings,
    provenance: BTreeMap<String, String>,
}

fn resolve(cli: &Cli, top: &ArgMatches, overrides: Vec<(String, Value, &'static str)>) -> std::result::Result<Effective, Failure> {
    let mut value = serde_json::to_value(Settings::default()).expect("serializable defaults");
    let mut provenance = BTreeMap::new();
    let mut global = Overrides {
        matches: top,
        set: Vec::new(),
    };
    global.flag("seed", "seed", cli.seed);
    global.flag("deterministic", "deterministic", cli.deterministic);
    let (env, flags): (Vec<_>, Vec<_>) = global
        .set
        .into_iter()
        .chain(overrides)
        .partition(|(_, _, s)| *s == "env");
    for (path, v, src) in env {
        set_path(&mut value, &path, v);
        provenance.insert(path, src.to_string());
    }
    if let Some(p) = &cli.config {
        merge(&mut value, read_config(p)?, "", &mut provenance);
    }
    for (path, v, src) in flags {
        set_path(&mut value, &path, v);
        provenance.insert(path, src.to_string());
    }
    let settings: Settings =
        serde_json::from_value(value).map_err(|e| Failure::Usage(format!("invalid settings: {e}")))?;
    Ok(Effective {
        settings: settings.finish(),
        provenance,
    })
}

fn ensure_dir(d: &Path) -> Result<()> {
    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn echo_config(out: &Path, name: &str, eff: &Effective) -> Result<()> {
    ensure_dir(out)?;
    write_json(
        &out.join(format!("{name}.config.json")),
        &serde_json::json!({
            "command": name,
            "settings": eff.settings,
            "provenance": eff.provenance,
        }),
    )
}

fn splits_for(manifest: &DatasetManifest, path: Option<&Path>, s: &Settings) -> Result<Splits> {
    match path {
        Some(p) => Splits::load(p),
        None => split_dataset(manifest, s.splits.ratios, s.seed),
    }
}

fn write_outcome(out: &Path, name: &str, o: &TrainOutcome) -> Result<()> {
    save_checkpoint(&o.model, &o.meta, out.join(format!("{name}.wseg")))?;
    write_json(&out.join(format!("{name}.curve.json")), &o.curve)
}

fn pretrain_stage(task: &str) -> Result<TrainStage> {
    if task == "texture" {
        Ok(TrainStage::Pretrain)
    } else {
        Ok(TrainStage::Pretext(task.parse::<PretextKind>()?))
    }
}

fn train_flags(o: &mut Overrides<'_>, t: &TrainArgs, section: &str) {
    let p = |k: &str| format!("{section}.{k}");
    o.flag("batch_size", p("batch_size"), t.batch_size);
    o.flag("lr", p("lr"), t.lr);
    o.flag("base_width", p("base_width"), t.base_width);
    o.flag("depth", p("depth"), t.depth);
}

fn execute(cli: &Cli, top: &ArgMatches) -> std::result::Result<(), Failure> {
    let (name, sub) = top.subcommand().expect("subcommand required");
    let mut o = Overrides {
        matches: sub,
        set: Vec::new(),
    };
    match &cli.command {
        Command::Synth(a) => {
            o.flag("count", "synth.count", a.count);
            o.flag("size", "synth.size", a.size);
            o.flag("annotators", "synth.n_annotators", a.annotators);
            o.flag("drop_prob", "synth.annotator_noise.drop_prob", a.drop_prob);
            o.flag("jitter", "synth.annotator_noise.jitter", a.jitter);
            o.flag("morph_radius", "synth.annotator_noise.morph_radius", a.morph_radius);
        }
        Command::Weaklabel(a) => {
            o.flag("sigma", "texture.sigma", a.sigma);
            o.flag("scale", "texture.scale", a.scale);
        }
        Command::Fuse(a) => o.flag("k", "fuse.k", a.k),
        Command::Pretrain(a) => {
            train_flags(&mut o, &a.train, "pretrain");
            o.flag("epochs", "pretrain.epochs", a.epochs);
            let stage = pretrain_stage(&a.task).map_err(|e| Failure::Usage(e.to_string()))?;
            o.flag("task", "pretrain.stage", stage);
        }
        Command::Finetune(a) => {
            train_flags(&mut o, &a.train, "finetune");
            o.flag("epochs", "finetune.epochs", a.epochs);
            o.flag("fraction", "finetune.fraction", a.fraction);
            o.flag("pos_weight", "finetune.pos_weight", a.pos_weight);
        }
        Command::Ablate(a) => {
            o.flag("methods", "ablate.methods", &a.methods);
            o.flag("fractions", "ablate.fractions", &a.fractions);
            o.flag("seeds", "ablate.seeds", &a.seeds);
            o.flag("jobs", "ablate.jobs", a.jobs);
            o.flag("pretrain_epochs", "pretrain.epochs", a.pretrain_epochs);
            o.flag("finetune_epochs", "finetune.epochs", a.finetune_epochs);
            o.flag("pos_weight", "finetune.pos_weight", a.pos_weight);
        }
        Command::Evaluate(_) | Command::Gradcheck(_) | Command::Report(_) => {}
    }
    let eff = resolve(cli, top, o.set)?;
    let s = &eff.settings;
    let out = cli.out_dir.as_path();
    echo_config(out, name, &eff)?;

    match &cli.command {
        Command::Synth(_) => {
            let m = synth_dataset(&s.synth, out)?;
            println!("wrote {} samples and {}", m.samples.len(), out.join("manifest.json").display());
        }
        Command::Weaklabel(a) => {
            let m = weaklabel_manifest(&DatasetManifest::load(&a.data.manifest)?, &s.texture)?;
            println!("wrote {} texture maps", m.samples.len());
        }
        Command::Fuse(a) => {
            let (m, summary) = fuse_manifest(&DatasetManifest::load(&a.data.manifest)?, s.fuse.k)?;
            write_json(&out.join("agreement.json"), &summary)?;
            match summary.mean_pairwise_jsi {
                Some(j) => println!("fused {} images, mean pairwise annotator JSI {j:.4}", m.samples.len()),
                None => println!("fused {} images", m.samples.len()),
            }
        }
        Command::Pretrain(a) => {
            let manifest = DatasetManifest::load(&a.train.data.manifest)?;
            let splits = splits_for(&manifest, a.train.splits.as_deref(), s)?;
            splits.save(out.join("splits.json"))?;
            let data = LoadedDataset::load(&manifest, &s.texture)?;
            let model = build_unet::<f32>(&s.pretrain.unet(Stage::Pretrain))?;
            let o = pretrain(model, &data, &splits, &s.pretrain)?;
            write_outcome(out, "pretrain", &o)?;
            println!("best epoch {} of {}", o.best_epoch, s.pretrain.epochs);
        }
        Command::Finetune(a) => {
            let manifest = DatasetManifest::load(&a.train.data.manifest)?;
            let splits = splits_for(&manifest, a.train.splits.as_deref(), s)?;
            splits.save(out.join("splits.json"))?;
            let data = LoadedDataset::load(&manifest, &s.texture)?;
            let start = match &a.checkpoint {
                Some(p) => Some(load_checkpoint(p)?.0),
                None => None,
            };
            let o = finetune(start, &data, &splits, &s.finetune)?;
            write_outcome(out, "finetune", &o.train)?;
            write_report(&o.test_report, out)?;
            println!(
                "best epoch {}; test mean JSI {:.4}, pooled JSI {:.4}",
                o.train.best_epoch, o.test_report.mean_jsi, o.test_report.pooled_jsi
            );
        }
        Command::Evaluate(a) => {
            let bytes = std::fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
            let (model, _) = checkpoint_from_bytes(&bytes)?;
            if model.stage() != Stage::Finetune {
                return Err(Error::Usage(format!(
                    "{} is a {} checkpoint; evaluate needs a finetune checkpoint",
                    a.checkpoint.display(),
                    model.stage()
                ))
                .into());
            }
            let manifest = DatasetManifest::load(&a.data.manifest)?;
            let splits = splits_for(&manifest, a.splits.as_deref(), s)?;
            let ids = splits.get(&a.split)?;
            let data = LoadedDataset::load(&manifest, &s.texture)?;
            let r = evaluate(
                &model,
                &data,
                ids,
                &EvalOptions {
                    config: serde_json::to_value(s).map_err(Error::from)?,
                    checkpoint_id: checkpoint_id(&bytes),
                    out_dir: Some(out.to_path_buf()),
                },
            )?;
            println!("{} images: mean JSI {:.4}, pooled JSI {:.4}", r.per_image.len(), r.mean_jsi, r.pooled_jsi);
        }
        Command::Ablate(a) => {
            let manifest = DatasetManifest::load(&a.data.manifest)?;
            let splits = splits_for(&manifest, a.splits.as_deref(), s)?;
            splits.save(out.join("splits.json"))?;
            let data = LoadedDataset::load(&manifest, &s.texture)?;
            let table = run_ablation(&s.ablation(), &data, &splits, Some(out))?;
            print!("{}", render_table(&table.to_csv())?);
        }
        Command::Gradcheck(a) => {
            let reports = run_suite(s.seed, a.seeds)?;
            write_json(&out.join("gradcheck.json"), &reports)?;
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
            for r in &reports {
                println!(
                    "{:<20} seed {:<4} max rel err {:.2e} ({})",
                    r.name, r.seed, r.max_rel_err, r.worst_tensor
                );
            }
            if !failed.is_empty() {
                return Err(Error::State(format!("{} gradient checks failed", failed.len())).into());
            }
        }
        Command::Report(a) => {
            let csv = std::fs::read_to_string(&a.table).map_err(|e| Error::io(&a.table, e))?;
            print!("{}", render_table(&csv)?);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match execute(&cli, &matches) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
