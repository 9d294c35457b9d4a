use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ldenhancer::config::AppConfig;
use ldenhancer::enhance::Enhancer;
use ldenhancer::eval::{emit_plots, format_delta, improvement_delta, load_records, ope_metrics, read_attributes, MetricReport};
use ldenhancer::image_io::{load_image, save_image};
use ldenhancer::train::{synth, train, DatasetIndex};

#[derive(Parser)]
#[command(name = "ldenhancer", version, about = "Low-light enhancement with light distribution suppression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config with `network`, `train`, `loss` and `eval` sections.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<AppConfig> {
        let mut cfg = match &self.config {
            Some(p) => AppConfig::from_file(p)?,
            None => AppConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache light labels for the training frames.
    Label {
        #[command(flatten)]
        config: ConfigArgs,
        /// Recompute labels that already exist.
        #[arg(long)]
        overwrite: bool,
        /// First write this many synthetic uneven-light scenes into the
        /// dataset root.
        #[arg(long, value_name = "COUNT")]
        synthesize: Option<usize>,
        /// Seed for `--synthesize`.
        #[arg(long, default_value_t = 0)]
        synth_seed: u64,
    },
    /// Train on the labelled dataset; writes checkpoints, a loss log and
    /// final weights under `train.out_dir`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint sidecar (`epoch_NNNN.json`).
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Enhance an image or every image in a directory.
    Enhance {
        #[command(flatten)]
        config: ConfigArgs,
        /// Weight archive written by `train`.
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        /// Image file or directory of images.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Output directory; results keep their file names.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Adjustment iterations (defaults to `network.iterations`).
        #[arg(long)]
        iterations: Option<usize>,
        /// Also write every iteration as `<stem>_trace/iter_NN.png`.
        #[arg(long)]
        dump_trace: bool,
    },
    /// Score tracker outputs against ground truth.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory of `<sequence>.txt` prediction files.
        #[arg(long, value_name = "DIR")]
        pred_dir: PathBuf,
        /// Directory of `<sequence>.txt` ground-truth files.
        #[arg(long, value_name = "DIR")]
        gt_dir: PathBuf,
        /// Predictions of the same tracker without enhancement; adds
        /// relative improvements and a second curve to the plots.
        #[arg(long, value_name = "DIR")]
        baseline_dir: Option<PathBuf>,
        /// JSON object mapping sequence ids to attribute tags.
        #[arg(long, value_name = "FILE")]
        attributes: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Box files use 1-based pixel coordinates.
        #[arg(long)]
        one_based: bool,
    },
    /// Draw curves from one or more saved reports.
    Plot {
        /// `LABEL=report.json`, repeatable; curves are overlaid in order.
        #[arg(long = "report", value_name = "LABEL=FILE", required = true)]
        reports: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
}

fn label(cfg: &AppConfig, overwrite: bool, synthesize: Option<usize>, seed: u64) -> Result<()> {
    let tc = &cfg.train;
    if let Some(count) = synthesize {
        synth::write_synthetic_corpus(&tc.dataset_root, count, tc.input_size, seed)?;
        println!("wrote {count} synthetic frames to {}", tc.dataset_root.display());
    }
    let index = DatasetIndex::scan(&tc.dataset_root, tc.sample_stride, &tc.label_cache)?;
    let written = index.populate_labels(tc.input_size, tc.lambda_smooth, overwrite)?;
    println!("{written} labels written, {} frames indexed", index.len());
    Ok(())
}

fn run_train(cfg: &AppConfig, resume: Option<&Path>) -> Result<()> {
    let tc = &cfg.train;
    let index = DatasetIndex::scan(&tc.dataset_root, tc.sample_stride, &tc.label_cache)?;
    let missing = index.missing_labels();
    if let Some(first) = missing.first() {
        bail!(
            "{} frames have no cached label (first: {}); run `ldenhancer label` first",
            missing.len(),
            first.frame.display()
        );
    }
    let summary = train(cfg, &index, resume)?;
    if let (Some((e0, a)), Some((e1, b))) = (summary.epochs.first(), summary.epochs.last()) {
        println!("epoch {e0}: total {:.6}; epoch {e1}: total {:.6}", a.total, b.total);
    }
    println!("weights: {}", summary.weights.display());
    println!("loss log: {}", summary.log.display());
    Ok(())
}

fn enhance(cfg: &AppConfig, weights: &Path, input: &Path, out: &Path, iterations: Option<usize>, dump: bool) -> Result<()> {
    let mut enhancer = Enhancer::from_weights(cfg.network.clone(), weights)?;
    if let Some(n) = iterations {
        if n == 0 {
            bail!("--iterations must be at least 1");
        }
        enhancer = enhancer.with_iterations(n);
    }
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| input.display().to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        v.sort();
        if v.is_empty() {
            bail!("{} contains no images", input.display());
        }
        v
    } else {
        vec![input.to_path_buf()]
    };
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    for path in &inputs {
        let name = path.file_name().context("input has no file name")?;
        let image = load_image(path)?;
        let trace = enhancer.enhance(&image)?;
        let dest = out.join(name);
        save_image(trace.output(), 0, &dest)?;
        if dump {
            let stem = path.file_stem().unwrap().to_string_lossy();
            let dir = out.join(format!("{stem}_trace"));
            fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            for (i, frame) in trace.frames.iter().enumerate() {
                save_image(frame, 0, dir.join(format!("iter_{i:02}.png")))?;
            }
        }
        log::info!("{} -> {} ({} clamp events)", path.display(), dest.display(), trace.clamp_events);
    }
    println!("enhanced {} image(s) into {}", inputs.len(), out.display());
    Ok(())
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&value)?).with_context(|| path.display().to_string())
}

fn summary_line(label: &str, r: &MetricReport) -> String {
    format!(
        "{label}: precision {:.3}, normalized precision {:.3}, success AUC {:.3} ({} sequences, {} frames)",
        r.precision, r.norm_precision, r.success_auc, r.sequences, r.frames
    )
}

fn eval(
    cfg: &AppConfig,
    pred: &Path,
    gt: &Path,
    baseline: Option<&Path>,
    attributes: Option<&Path>,
    out: &Path,
    one_based: bool,
) -> Result<()> {
    let one_based = one_based || cfg.eval.one_based;
    let attrs = attributes.map(read_attributes).transpose()?;
    let report = ope_metrics(&load_records(pred, gt, attrs.as_ref(), one_based)?)?;
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    write_json(&out.join("report.json"), serde_json::to_value(&report)?)?;
    println!("{}", summary_line("enhanced", &report));
    let mut curves = vec![("enhanced".to_string(), report.clone())];
    if let Some(base_dir) = baseline {
        let base = ope_metrics(&load_records(base_dir, gt, attrs.as_ref(), one_based)?)?;
        write_json(&out.join("baseline.json"), serde_json::to_value(&base)?)?;
        println!("{}", summary_line("baseline", &base));
        let deltas = serde_json::json!({
            "precision": improvement_delta(base.precision, report.precision)?,
            "norm_precision": improvement_delta(base.norm_precision, report.norm_precision)?,
            "success_auc": improvement_delta(base.success_auc, report.success_auc)?,
        });
        for key in ["precision", "norm_precision", "success_auc"] {
            println!("{key} change: {}%", format_delta(deltas[key].as_f64().unwrap()));
        }
        write_json(&out.join("deltas.json"), deltas)?;
        curves.insert(0, ("baseline".to_string(), base));
    }
    emit_plots(&curves, out)?;
    Ok(())
}

fn plot(specs: &[String], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    for spec in specs {
        let (label, path) = spec
            .split_once('=')
            .with_context(|| format!("--report {spec:?} is not LABEL=FILE"))?;
        let text = fs::read_to_string(path).with_context(|| path.to_string())?;
        let report: MetricReport = serde_json::from_str(&text).with_context(|| path.to_string())?;
        reports.push((label.to_string(), report));
    }
    for p in emit_plots(&reports, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Label { config, overwrite, synthesize, synth_seed } => {
            label(&config.load()?, overwrite, synthesize, synth_seed)
        }
        Command::Train { config, resume } => run_train(&config.load()?, resume.as_deref()),
        Command::Enhance { config, weights, input, out, iterations, dump_trace } => {
            enhance(&config.load()?, &weights, &input, &out, iterations, dump_trace)
        }
        Command::Eval { config, pred_dir, gt_dir, baseline_dir, attributes, out_dir, one_based } => eval(
            &config.load()?,
            &pred_dir,
            &gt_dir,
            baseline_dir.as_deref(),
            attributes.as_deref(),
            &out_dir,
            one_based,
        ),
        Command::Plot { reports, out_dir } => plot(&reports, &out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
