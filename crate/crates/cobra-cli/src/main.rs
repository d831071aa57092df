//! `cobra` — dataset synthesis, dual-branch training, seed/mask generation,
//! evaluation, gradient checking, and reporting.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod panels;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cobra_core::config::{config_snapshot, load_train_config};
use cobra_core::data::{generate_shapes, load_voc_style, write_voc_style, DatasetConfig, Sample};
use cobra_core::eval::{accumulate, format_kv, format_table, miou, ConfusionMatrix};
use cobra_core::gradcheck::check_all_losses;
use cobra_core::model::{CobraModel, SeedSource};
use cobra_core::nn::ParamStore;
use cobra_core::sak::object_attention;
use cobra_core::seeds::{export_mask, make_trimap, CrfHook, ThresholdConfig};
use cobra_core::train::{infer_seeds, train, TrainConfig};
use cobra_core::types::Seed;

#[derive(Parser)]
#[command(name = "cobra", version, about = "dual-branch weakly supervised segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set loss.tau=0.2
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<TrainConfig> {
        Ok(load_train_config(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset in VOC-style layout
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        shapes_min: usize,
        #[arg(long, default_value_t = 3)]
        shapes_max: usize,
    },
    /// Train both branches on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate multi-scale localization seeds from a checkpoint
    Seed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed source override (defaults to the branch mode's source)
        #[arg(long)]
        source: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate trimap pseudo-masks (seeds -> thresholds -> palette PNGs)
    Mask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// External refinement command; COBRA_CRF_CMD is honored too
        #[arg(long)]
        crf_cmd: Option<String>,
        #[arg(long, default_value_t = 0.3)]
        bg_weight: f64,
        #[arg(long, default_value_t = 0.5)]
        fg_bg_gap: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate predicted masks against ground-truth masks (mIoU)
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Foreground class count; inferred from the masks when omitted
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Check analytic loss gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render per-image comparison panels and the mIoU table for a run
    Report {
        /// Run directory produced by `seed`/`mask`
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders usage/help; help requests are successes
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn write_snapshot(out: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_samples(data: &Path, num_classes: usize) -> anyhow::Result<Vec<Sample>> {
    let loaded = load_voc_style(data, num_classes)
        .with_context(|| format!("loading dataset from {}", data.display()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if loaded.samples.is_empty() {
        bail!("no usable samples in {}", data.display());
    }
    Ok(loaded.samples)
}

fn load_model(cfg: &TrainConfig, checkpoint: &Path) -> anyhow::Result<(CobraModel, ParamStore)> {
    let mut store = ParamStore::new();
    let model = CobraModel::new(cfg.model.clone(), &mut store, cfg.rng_seed)?;
    model
        .load_checkpoint(&mut store, checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok((model, store))
}

fn parse_source(s: &str) -> anyhow::Result<SeedSource> {
    Ok(match s {
        "fuse" => SeedSource::Fuse,
        "cnn" => SeedSource::Cnn,
        "tran" => SeedSource::Tran,
        "average" => SeedSource::Average,
        "max" => SeedSource::Max,
        other => bail!("unknown seed source `{other}` (fuse|cnn|tran|average|max)"),
    })
}

/// Manifest tying a run directory back to its inputs, written by
/// `seed` / `mask` and read by `report`.
#[derive(serde::Serialize, serde::Deserialize)]
struct RunManifest {
    data: PathBuf,
    checkpoint: PathBuf,
    num_classes: usize,
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { out, classes, n, seed, size, shapes_min, shapes_max } => {
            let cfg = DatasetConfig {
                num_classes: classes,
                image_size: size,
                samples: n,
                shapes_min,
                shapes_max,
                rng_seed: seed,
                ..Default::default()
            };
            let samples = generate_shapes(&cfg)?;
            write_voc_style(&out, &samples)?;
            write_snapshot(&out, &serde_json::to_value(&cfg)?)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }

        Command::Train { data, out, config } => {
            let cfg = config.load()?;
            let samples = load_samples(&data, cfg.model.num_classes)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.json"), config_snapshot(&cfg))?;
            let result = train(&cfg, &samples, Some(&out))?;
            println!(
                "trained {} epochs on {} samples; final total loss {:.6}",
                cfg.epochs,
                samples.len(),
                result.last_report.total
            );
            println!("checkpoints and metrics.csv in {}", out.display());
        }

        Command::Seed { data, checkpoint, out, source, config } => {
            let cfg = config.load()?;
            let samples = load_samples(&data, cfg.model.num_classes)?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let source = match source {
                Some(s) => parse_source(&s)?,
                None => cfg.seed_source(),
            };
            std::fs::create_dir_all(out.join("seeds"))?;
            std::fs::write(out.join("config.json"), config_snapshot(&cfg))?;
            std::fs::write(
                out.join("run.json"),
                serde_json::to_string_pretty(&RunManifest {
                    data: data.clone(),
                    checkpoint: checkpoint.clone(),
                    num_classes: cfg.model.num_classes,
                })?,
            )?;
            let seeds = infer_seeds(&model, &store, &samples, &cfg.scales, source)?;
            for (sample, seed) in samples.iter().zip(seeds.iter()) {
                let path = out.join("seeds").join(format!("{}.bin", sample.id));
                export_seed_with_branch_maps(&model, &store, sample, seed, &path)?;
            }
            println!("wrote {} seeds to {}", seeds.len(), out.join("seeds").display());
        }

        Command::Mask { data, checkpoint, out, crf_cmd, bg_weight, fg_bg_gap, config } => {
            let cfg = config.load()?;
            let samples = load_samples(&data, cfg.model.num_classes)?;
            let (model, store) = load_model(&cfg, &checkpoint)?;
            let thresholds = ThresholdConfig { bg_weight, fg_bg_gap, ..Default::default() };
            thresholds.validate()?;
            let hook = match crf_cmd {
                Some(cmd) => CrfHook::new(Some(cmd)),
                None => CrfHook::from_env(),
            };
            std::fs::create_dir_all(out.join("masks"))?;
            std::fs::write(out.join("config.json"), config_snapshot(&cfg))?;
            std::fs::write(
                out.join("run.json"),
                serde_json::to_string_pretty(&RunManifest {
                    data: data.clone(),
                    checkpoint: checkpoint.clone(),
                    num_classes: cfg.model.num_classes,
                })?,
            )?;
            let source = cfg.seed_source();
            for sample in &samples {
                let seed = model.infer_seed(&store, &sample.image, &cfg.scales, source, &sample.id)?;
                let seed = hook.apply(&seed, &sample.image)?;
                let (_, attn) = model.vit.forward(&store, &sample.image)?;
                let a_obj = object_attention(&attn)?;
                let trimap = make_trimap(&seed, &a_obj, &sample.positives(), &thresholds)?;
                export_mask(&trimap, out.join("masks").join(format!("{}.png", sample.id)))?;
            }
            println!("wrote {} masks to {}", samples.len(), out.join("masks").display());
        }

        Command::Eval { pred, gt, out, classes } => {
            let (table, kv, mean) = eval_mask_dirs(&pred, &gt, classes)?;
            print!("{table}");
            if let Some(out) = &out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("miou.txt"), &table)?;
                std::fs::write(out.join("miou.kv"), &kv)?;
                write_snapshot(
                    out,
                    &serde_json::json!({
                        "command": "eval",
                        "pred": pred,
                        "gt": gt,
                        "miou": mean,
                    }),
                )?;
            }
        }

        Command::Gradcheck { tau, instances, seed, eps, out } => {
            let errs = check_all_losses(tau, instances, seed, eps)?;
            println!("cls  max rel err {:.3e}", errs.cls);
            println!("cam  max rel err {:.3e}", errs.cam);
            println!("cap  max rel err {:.3e}", errs.cap);
            println!("sap  max rel err {:.3e}", errs.sap);
            if let Some(out) = &out {
                write_snapshot(
                    out,
                    &serde_json::json!({
                        "command": "gradcheck",
                        "tau": tau, "instances": instances, "seed": seed, "eps": eps,
                        "cls": errs.cls, "cam": errs.cam, "cap": errs.cap, "sap": errs.sap,
                    }),
                )?;
            }
            if errs.max() > 1e-3 {
                bail!("max relative error {:.3e} exceeds 1e-3", errs.max());
            }
            println!("all gradients within 1e-3");
        }

        Command::Report { run, out } => {
            let out = out.unwrap_or_else(|| run.join("report"));
            let manifest: RunManifest = serde_json::from_str(
                &std::fs::read_to_string(run.join("run.json"))
                    .with_context(|| format!("{} has no run.json (run `seed`/`mask` first)", run.display()))?,
            )?;
            let count = panels::render_report(&run, &manifest.data, manifest.num_classes, &out)?;
            write_snapshot(
                &out,
                &serde_json::json!({
                    "command": "report",
                    "run": run,
                    "panels": count,
                }),
            )?;
            println!("wrote {count} panels to {}", out.display());
        }
    }
    Ok(())
}

/// Seed container: the multi-scale fused seed plus the two single-scale
/// branch maps the report panels show.
fn export_seed_with_branch_maps(
    model: &CobraModel,
    store: &ParamStore,
    sample: &Sample,
    seed: &Seed,
    path: &Path,
) -> anyhow::Result<()> {
    use cobra_core::container::TensorContainer;
    use cobra_core::imageops::bilinear_resize;

    let (h, w, _) = sample.image.dim();
    let m_cnn = model.source_cam(store, &sample.image, SeedSource::Cnn)?;
    let m_tran = model.source_cam(store, &sample.image, SeedSource::Tran)?;
    let mut c = TensorContainer::new();
    c.insert("seed", seed.values.clone().into_dyn());
    c.insert("m_cnn", bilinear_resize(&m_cnn, h, w).into_dyn());
    c.insert("m_tran", bilinear_resize(&m_tran, h, w).into_dyn());
    c.save(path)?;
    Ok(())
}

/// Pair up identically-named PNGs in two directories and compute mIoU.
fn eval_mask_dirs(
    pred: &Path,
    gt: &Path,
    classes: Option<usize>,
) -> anyhow::Result<(String, String, f64)> {
    let mut pred_files = BTreeMap::new();
    for entry in std::fs::read_dir(pred).with_context(|| format!("reading {}", pred.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            pred_files.insert(path.file_name().unwrap().to_owned(), path);
        }
    }
    if pred_files.is_empty() {
        bail!("no .png masks in {}", pred.display());
    }

    let mut pairs = Vec::new();
    for (name, pred_path) in &pred_files {
        let gt_path = gt.join(name);
        if gt_path.is_file() {
            pairs.push((
                cobra_core::pngio::read_indexed(pred_path)?,
                cobra_core::pngio::read_indexed(&gt_path)?,
            ));
        }
    }
    if pairs.is_empty() {
        bail!("no matching mask names between {} and {}", pred.display(), gt.display());
    }

    let num_classes = match classes {
        Some(c) => c,
        None => pairs
            .iter()
            .flat_map(|(p, g)| p.iter().chain(g.iter()))
            .filter(|&&v| v != cobra_core::types::UNKNOWN_LABEL)
            .map(|&v| v as usize)
            .max()
            .unwrap_or(1),
    };

    let mut cm = ConfusionMatrix::new(num_classes);
    for (pred_mask, gt_mask) in &pairs {
        accumulate(&mut cm, gt_mask, pred_mask).map_err(|e| anyhow!(e))?;
    }
    let (ious, mean) = miou(&cm);
    Ok((format_table(&ious, mean, None), format_kv(&ious, mean), mean))
}
