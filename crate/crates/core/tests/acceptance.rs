//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run a subset with `cargo test --test acceptance -- 2 3 10`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wseg::fusion::{majority_vote, AnnotationSet};
use wseg::imagecore::{gaussian_blur, gaussian_kernel, reflect101, BinaryMask, Image};
use wseg::nn::checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointMeta};
use wseg::nn::gradcheck::{run_suite, TOLERANCE};
use wseg::nn::Tensor4;
use wseg::pipeline::ablation::{run_ablation, AblationConfig, AblationTable, Method};
use wseg::pipeline::dataset::{split_dataset, LoadedDataset, Splits, DEFAULT_RATIOS};
use wseg::pipeline::prepare::{fuse_manifest, weaklabel_manifest};
use wseg::pipeline::synth::{synth_dataset, SynthConfig};
use wseg::pipeline::train::{finetune, split_jsi, TrainConfig};
use wseg::unet::{build_unet, transfer_param_delta, transfer_weights, UNetConfig};
use wseg::weaklabel::{extract_texture, weak_label, TextureConfig};
use wseg::{jsi, Error};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random::<f64>() < p)
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let reports = run_suite(0, 10).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("non-empty suite");
    let unets = reports.iter().filter(|r| r.name.starts_with("unet")).count();
    ensure(unets == 20, format!("expected 20 U-Net checks, ran {unets}"))?;
    ensure(
        reports.iter().all(|r| r.passed()),
        format!("{} seed {}: rel err {:.3e}", worst.name, worst.seed, worst.max_rel_err),
    )?;
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} checks over 10 seeds, worst {:.2e} ({}) < {TOLERANCE:e}, {secs:.1}s",
        reports.len(),
        worst.max_rel_err,
        worst.name
    ))
}

fn c2_jsi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let p = rng.random_range(0.0..0.6);
        let a = random_mask(&mut rng, 16, 16, p);
        let b = random_mask(&mut rng, 16, 16, p);
        let (mut inter, mut uni) = (0u32, 0u32);
        for y in 0..16 {
            for x in 0..16 {
                inter += (a.get(y, x) && b.get(y, x)) as u32;
                uni += (a.get(y, x) || b.get(y, x)) as u32;
            }
        }
        let want = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
        let got = jsi(&a, &b).map_err(err)?;
        ensure(got.to_bits() == want.to_bits(), format!("pair {i}: {got} vs {inter}/{uni}"))?;
    }
    let empty = BinaryMask::zeros(16, 16);
    ensure(jsi(&empty, &empty).map_err(err)? == 1.0, "empty/empty is not 1.0")?;
    Ok("1000 random 16x16 pairs bit-equal to integer counts; empty/empty = 1.0".into())
}

fn c3_vote_oracle() -> Outcome {
    let table: [bool; 8] = std::array::from_fn(|p| {
        let votes = (0..3).filter(|a| p >> a & 1 == 1).count();
        votes >= 2
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..200 {
        let masks: Vec<BinaryMask> = (0..3).map(|_| random_mask(&mut rng, 12, 12, 0.5)).collect();
        let ann = AnnotationSet::new("t", masks.clone()).map_err(err)?;
        let fused = majority_vote(&ann, 2).map_err(err)?;
        let or = majority_vote(&ann, 1).map_err(err)?;
        let and = majority_vote(&ann, 3).map_err(err)?;
        for i in 0..144 {
            let pattern: usize = (0..3).map(|a| (masks[a].data()[i] as usize) << a).sum();
            ensure(fused.data()[i] == table[pattern] as u8, format!("trial {trial} pixel {i}"))?;
            ensure(or.data()[i] == masks.iter().map(|m| m.data()[i]).max().unwrap(), "k=1 is not OR")?;
            ensure(and.data()[i] == masks.iter().map(|m| m.data()[i]).min().unwrap(), "k=n is not AND")?;
        }
    }
    Ok("200 random 3-annotator panels match the 8-pattern truth table; k=1 OR, k=3 AND".into())
}

fn dense_blur(img: &Image, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma).unwrap();
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = reflect101(y as isize + dy, h);
                    let xx = reflect101(x as isize + dx, w);
                    acc += k[(dy + r) as usize] * k[(dx + r) as usize] * img.get(yy, xx, 0);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn c4_texture() -> Outcome {
    let cfg = TextureConfig::default();
    let flat = Image::filled(32, 32, 3, 0.37).map_err(err)?;
    let t = extract_texture(&flat, &cfg).map_err(err)?;
    let max_flat = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(max_flat <= 1e-6, format!("constant image texture {max_flat:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for sigma in [0.8, 2.0, 3.5] {
        let img = Image::from_fn(24, 20, 1, |_, _, _| rng.random()).map_err(err)?;
        let fast = gaussian_blur(&img, sigma).map_err(err)?;
        for (a, b) in fast.data().iter().zip(dense_blur(&img, sigma)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, format!("separable vs dense {worst:e}"))?;

    let img = Image::from_fn(32, 32, 3, |_, _, _| rng.random()).map_err(err)?;
    let face = BinaryMask::from_fn(32, 32, |y, x| (y as i32 - 16).pow(2) + (x as i32 - 16).pow(2) < 120);
    let masked = weak_label(&img, Some(&face), &cfg).map_err(err)?;
    let off = masked
        .data()
        .iter()
        .zip(face.data())
        .filter(|(v, f)| **f == 0 && **v != 0.0)
        .count();
    ensure(off == 0, format!("{off} non-zero pixels off the face"))?;
    Ok(format!(
        "constant max {max_flat:.1e}; separable vs dense max {worst:.1e}; off-face exactly zero"
    ))
}

fn c5_surgery() -> Outcome {
    let pre_cfg = UNetConfig::pretrain(16, 3, 5);
    let fin_cfg = UNetConfig::finetune(16, 3, 6);
    let pre = build_unet::<f32>(&pre_cfg).map_err(err)?;
    let fin = transfer_weights(&pre, &fin_cfg).map_err(err)?;
    let (pp, fp) = (pre.graph().params(), fin.graph().params());
    let n = pp.len();
    for (a, b) in pp.iter().zip(&fp).skip(2).take(n - 4) {
        ensure(
            a.name == b.name && a.value.iter().map(|v| v.to_bits()).eq(b.value.iter().map(|v| v.to_bits())),
            format!("{} differs", a.name),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rgb: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.random()).collect();
    let with_texture = |rng: &mut ChaCha8Rng| {
        let mut d = rgb.clone();
        d.extend((0..64 * 64).map(|_| rng.random::<f32>()));
        Tensor4::from_vec([1, 4, 64, 64], d).unwrap()
    };
    let a = fin.infer(&with_texture(&mut rng)).map_err(err)?;
    let b = fin.infer(&with_texture(&mut rng)).map_err(err)?;
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
    ensure(diff as f64 <= 1e-6, format!("logits moved by {diff:e}"))?;

    let delta = fin.count_params() as i64 - pre.count_params() as i64;
    let closed = 9 * 16 + (16 + 1);
    ensure(
        delta == closed && transfer_param_delta(&pre_cfg, &fin_cfg) == closed,
        format!("delta {delta}, closed form {closed}"),
    )?;
    Ok(format!(
        "{} interior tensors bit-equal; texture-channel logit change {diff:.1e}; params {} -> {} (+{delta} = 9b + b + 1)",
        n - 4,
        pre.count_params(),
        fin.count_params()
    ))
}

fn prepared(dir: &Path, cfg: &SynthConfig) -> Result<LoadedDataset, String> {
    let m = synth_dataset(cfg, dir).map_err(err)?;
    let m = weaklabel_manifest(&m, &TextureConfig::default()).map_err(err)?;
    let (m, _) = fuse_manifest(&m, 2).map_err(err)?;
    LoadedDataset::load(&m, &TextureConfig::default()).map_err(err)
}

/// Epochs for the overfit run; the criterion allows up to 500.
const OVERFIT_EPOCHS: usize = 200;

fn c6_overfit() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = prepared(
        dir.path(),
        &SynthConfig {
            count: 4,
            size: 64,
            seed: 11,
            ..SynthConfig::default()
        },
    )?;
    let ids: Vec<String> = (0..4).map(wseg::pipeline::synth::sample_id).collect();
    let splits = Splits {
        train: ids.clone(),
        val: ids.clone(),
        test: vec![],
        ratios: [1.0, 0.0, 0.0],
        seed: 0,
    };
    let cfg = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        batch_size: 1,
        ..TrainConfig::finetune()
    };
    let out = finetune(None, &data, &splits, &cfg).map_err(err)?;
    let j = split_jsi(&out.train.model, &data, &ids).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let first = out
        .train
        .curve
        .iter()
        .find(|l| l.val_jsi.unwrap_or(0.0) >= 0.8)
        .map(|l| l.epoch);
    ensure(out.train.model.count_params() == 535_954, "not the desk 16/3 network")?;
    ensure(j >= 0.8, format!("train mean JSI {j:.4} after {OVERFIT_EPOCHS} epochs"))?;
    ensure(secs < 600.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "train mean JSI {j:.4} (first >= 0.8 at epoch {}), {OVERFIT_EPOCHS} epochs, {secs:.0}s",
        first.map_or("-".into(), |e| e.to_string())
    ))
}

/// Pinned trend setup: 124 faces at 64x64 split 100/12/12, seeds 0..3,
/// desk network, 20 pretraining and 20 finetuning epochs.
const TREND_DATA_SEED: u64 = 2024;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_PRETRAIN_EPOCHS: usize = 20;
const TREND_FINETUNE_EPOCHS: usize = 20;

fn trend_table(out: &Path) -> Result<AblationTable, String> {
    let data = prepared(
        &out.join("data"),
        &SynthConfig {
            count: 124,
            size: 64,
            seed: TREND_DATA_SEED,
            ..SynthConfig::default()
        },
    )?;
    let ids: Vec<String> = (0..124).map(wseg::pipeline::synth::sample_id).collect();
    let manifest = wseg::pipeline::dataset::DatasetManifest::load(out.join("data/manifest.json")).map_err(err)?;
    let splits = split_dataset(&manifest, DEFAULT_RATIOS, TREND_DATA_SEED).map_err(err)?;
    ensure(
        (splits.train.len(), splits.val.len(), splits.test.len()) == (100, 12, 12) && ids.len() == 124,
        "split is not 100/12/12",
    )?;
    let cfg = AblationConfig {
        methods: vec![Method::NoPretraining, Method::Ours],
        fractions: vec![1.0, 0.05],
        seeds: TREND_SEEDS.to_vec(),
        pretrain: TrainConfig {
            epochs: TREND_PRETRAIN_EPOCHS,
            ..TrainConfig::pretrain()
        },
        finetune: TrainConfig {
            epochs: TREND_FINETUNE_EPOCHS,
            ..TrainConfig::finetune()
        },
        ..AblationConfig::default()
    };
    run_ablation(&cfg, &data, &splits, Some(out)).map_err(err)
}

fn c7_trend() -> Outcome {
    let t = Instant::now();
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_trend");
    let _ = std::fs::remove_dir_all(&out);
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let table = trend_table(&out)?;
    let secs = t.elapsed().as_secs_f64();
    let j = |m, f, s| table.row(m, f, s).map(|r| r.mean_jsi).unwrap_or(f64::NAN);
    let mut wider = 0;
    let mut detail = Vec::new();
    for s in TREND_SEEDS {
        let small = j(Method::Ours, 0.05, s) - j(Method::NoPretraining, 0.05, s);
        let full = j(Method::Ours, 1.0, s) - j(Method::NoPretraining, 1.0, s);
        wider += (small > full) as usize;
        detail.push(format!("s{s} gap5 {small:+.4} gap100 {full:+.4}"));
    }
    let mean = |m, f| table.summary_for(m, f).map(|r| r.mean_jsi).unwrap_or(f64::NAN);
    let (ours5, scratch5) = (mean(Method::Ours, 0.05), mean(Method::NoPretraining, 0.05));
    let (ours100, scratch100) = (mean(Method::Ours, 1.0), mean(Method::NoPretraining, 1.0));
    let summary = format!(
        "5%: ours {ours5:.4} vs scratch {scratch5:.4}; 100%: ours {ours100:.4} vs scratch {scratch100:.4}; {}; {secs:.0}s (table in {})",
        detail.join(", "),
        out.display()
    );
    ensure(ours5 >= scratch5, format!("ours below scratch at 5%: {summary}"))?;
    ensure(wider >= 2, format!("gap wider at 5% in only {wider} of 3 seeds: {summary}"))?;
    ensure(secs < 3600.0, format!("over budget: {summary}"))?;
    Ok(summary)
}

fn cli(args: &[&str]) -> i32 {
    wseg::cli::run(std::iter::once("wseg").chain(args.iter().copied()))
}

fn c8_ablation_shape() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let data = d.join("data");
    let (data_s, out_s) = (data.to_str().unwrap(), d.join("ablate"));
    let manifest = data.join("manifest.json");
    let steps: [Vec<&str>; 3] = [
        vec!["--out-dir", data_s, "synth", "--count", "20", "--size", "32"],
        vec!["--out-dir", data_s, "fuse", "--manifest", manifest.to_str().unwrap()],
        vec![
            "--out-dir",
            out_s.to_str().unwrap(),
            "ablate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--seeds",
            "1",
            "--fractions",
            "1.0",
            "--pretrain-epochs",
            "2",
            "--finetune-epochs",
            "2",
        ],
    ];
    let cfg = d.join("small.toml");
    std::fs::write(
        &cfg,
        "[pretrain]\nbase_width = 4\ndepth = 2\n[finetune]\nbase_width = 4\ndepth = 2\n",
    )
    .map_err(|e| e.to_string())?;
    for s in &steps {
        let mut args = vec!["--config", cfg.to_str().unwrap()];
        args.extend(s);
        ensure(cli(&args) == 0, format!("`{}` failed", s.join(" ")))?;
    }
    let text = std::fs::read_to_string(out_s.join("ablation.json")).map_err(|e| e.to_string())?;
    let table: AblationTable = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let methods: Vec<&str> = table.rows.iter().map(|r| r.method.name()).collect();
    ensure(
        methods == ["no_pretraining", "ours", "reconstruction", "deblur", "denoise", "super_resolution"],
        format!("rows {methods:?}"),
    )?;
    ensure(
        table
            .rows
            .iter()
            .all(|r| r.mean_jsi.is_finite() && (0.0..=1.0).contains(&r.mean_jsi) && (0.0..=1.0).contains(&r.pooled_jsi)),
        "JSI outside [0, 1]",
    )?;
    let pretrained: Vec<_> = table.rows.iter().filter(|r| r.method != Method::NoPretraining).collect();
    ensure(
        pretrained.iter().all(|r| r.pretrain_n_params == pretrained[0].pretrain_n_params && r.n_params == pretrained[0].n_params),
        "param counts differ across pretrained variants",
    )?;
    let csv = std::fs::read_to_string(out_s.join("ablation.csv")).map_err(|e| e.to_string())?;
    ensure(csv.starts_with("method,fraction,seed,mean_jsi,pooled_jsi,n_params\n"), "csv header")?;
    Ok(format!(
        "6 method rows, JSI in [0,1], pretrained variants all {} -> {} params",
        pretrained[0].pretrain_n_params.unwrap_or(0),
        pretrained[0].n_params
    ))
}

fn end_to_end(root: &Path) -> Result<(), String> {
    let r = root.to_str().unwrap();
    let data = format!("{r}/data");
    let manifest = format!("{data}/manifest.json");
    let cfg = format!("{r}/run.toml");
    std::fs::write(
        &cfg,
        "[pretrain]\nepochs = 3\nbase_width = 4\ndepth = 2\n[finetune]\nepochs = 3\nbase_width = 4\ndepth = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let common = ["--seed", "77", "--deterministic", "--config", cfg.as_str()];
    let pre = format!("{r}/pre");
    let fin = format!("{r}/fin");
    let ev = format!("{r}/eval");
    let pre_ckpt = format!("{pre}/pretrain.wseg");
    let fin_ckpt = format!("{fin}/finetune.wseg");
    let steps: Vec<Vec<&str>> = vec![
        vec!["--out-dir", &data, "synth", "--count", "12", "--size", "32"],
        vec!["--out-dir", &data, "weaklabel", "--manifest", &manifest],
        vec!["--out-dir", &data, "fuse", "--manifest", &manifest],
        vec!["--out-dir", &pre, "pretrain", "--manifest", &manifest],
        vec!["--out-dir", &fin, "finetune", "--manifest", &manifest, "--checkpoint", &pre_ckpt],
        vec!["--out-dir", &ev, "evaluate", "--manifest", &manifest, "--checkpoint", &fin_ckpt],
    ];
    for s in steps {
        let mut args: Vec<&str> = common.to_vec();
        args.extend(&s);
        ensure(cli(&args) == 0, format!("`{}` failed", s.join(" ")))?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    end_to_end(a.path())?;
    end_to_end(b.path())?;
    let fa = files_under(a.path());
    ensure(fa == files_under(b.path()), "runs produced different file sets")?;
    for f in &fa {
        if f.extension().is_some_and(|e| e == "toml") {
            continue;
        }
        let x = std::fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
        ensure(x == y, format!("{} differs", f.display()))?;
    }
    let key = ["pre/pretrain.wseg", "fin/finetune.wseg", "eval/metrics.json", "eval/metrics.csv"];
    ensure(key.iter().all(|k| fa.contains(&k.into())), "missing checkpoints or metrics")?;
    Ok(format!(
        "synth -> weaklabel -> fuse -> pretrain -> finetune -> evaluate twice: {} files byte-identical",
        fa.len()
    ))
}

fn c10_checkpoint() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pre = build_unet::<f32>(&UNetConfig::pretrain(16, 3, 10)).map_err(err)?;
    let model = transfer_weights(&pre, &UNetConfig::finetune(16, 3, 11)).map_err(err)?;
    let meta = CheckpointMeta {
        task: "wrinkles".into(),
        epoch: 4,
        seed: 10,
    };
    let (p, q) = (dir.path().join("a.wseg"), dir.path().join("b.wseg"));
    save_checkpoint(&model, &meta, &p).map_err(err)?;
    let (back, _) = load_checkpoint(&p).map_err(err)?;
    save_checkpoint(&back, &meta, &q).map_err(err)?;
    let (x, y) = (std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    ensure(x == y, "save -> load -> save differs")?;

    let bytes = checkpoint_bytes(&model, &meta).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let header_end = 13 + u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    for _ in 0..20 {
        let mut bad = bytes.clone();
        let i = rng.random_range(header_end..bad.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        ensure(
            matches!(checkpoint_from_bytes(&bad), Err(Error::Corrupt(_))),
            format!("flip at byte {i} undetected"),
        )?;
    }
    ensure(
        matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 7]), Err(Error::Corrupt(_))),
        "truncation undetected",
    )?;
    Ok(format!(
        "{} bytes round trip identical; 20 payload bit flips and a truncation detected",
        x.len()
    ))
}

fn main() {
    std::env::set_var("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "warn".into()));
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "JSI oracle", c2_jsi_oracle),
        (3, "majority-vote oracle", c3_vote_oracle),
        (4, "texture properties", c4_texture),
        (5, "transfer surgery", c5_surgery),
        (6, "overfit capability", c6_overfit),
        (7, "transfer trend", c7_trend),
        (8, "ablation harness shape", c8_ablation_shape),
        (9, "determinism", c9_determinism),
        (10, "checkpoint round trip", c10_checkpoint),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = Duration::from_secs_f64(t.elapsed().as_secs_f64().round());
        match r {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg} [{took:?}]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {msg} [{took:?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
