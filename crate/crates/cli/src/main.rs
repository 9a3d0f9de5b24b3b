use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use cutonce::annotations::{export_annotations, import_annotations};
use cutonce::evaluation::{default_thresholds, evaluate, IouType};
use cutonce::pipeline::{assemble, feature_files, run_batch, ImageOutcome};
use cutonce::saliency::Neighborhood;
use cutonce::spectral::SolverKind;
use cutonce::PipelineConfig;

mod inspect;

#[derive(Parser)]
#[command(name = "cutonce", version, about = "Normalized-cut instance masks from patch features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a directory of feature files into one annotation file.
    Generate {
        #[arg(long, value_name = "DIR")]
        features: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Per-image stage timings (TSV); defaults to `<out>.timings.tsv`.
        #[arg(long, value_name = "FILE")]
        timings: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
        /// Metrics JSON; printed to stdout when absent.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Comma-separated IoU thresholds (default 0.50:0.05:0.95).
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, default_value = "segm")]
        iou_type: IouType,
    },
    /// Dump every intermediate map of one image as grayscale images.
    Inspect {
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Patches whose similarity rows are dumped (default: centre and
        /// quadrant centres).
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<usize>>,
        #[command(flatten)]
        tuning: Tuning,
    },
}

#[derive(Args)]
struct Tuning {
    /// Flat `key = value` file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau_ncut: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    neighborhood: Option<Neighborhood>,
    #[arg(long)]
    solver: Option<SolverKind>,
    /// Images processed concurrently (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Tuning {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_file_text(&text)
                .with_context(|| format!("in config {}", path.display()))?;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.t0 {
            cfg.t0 = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.tau_ncut {
            cfg.tau_ncut = v;
        }
        if let Some(v) = self.tau {
            cfg.tau_filter = v;
        }
        if let Some(v) = self.neighborhood {
            cfg.neighborhood = v;
        }
        if let Some(v) = self.solver {
            cfg.solver = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ms(d: std::time::Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

fn write_timings(path: &Path, outcomes: &[ImageOutcome]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(
        f,
        "file\timage_id\tload_ms\tnormalize_ms\taffinity_ms\teigen_ms\tsaliency_ms\tinstances_ms\tcompute_ms\tsolver\tmasks"
    )?;
    for o in outcomes {
        let Ok(r) = &o.result else { continue };
        let t = &r.timings;
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.path.display(),
            r.meta.image_id,
            ms(o.load_time),
            ms(t.normalize),
            ms(t.affinity),
            ms(t.eigen),
            ms(t.saliency),
            ms(t.instances),
            ms(t.total()),
            r.solver,
            r.masks.len()
        )?;
    }
    Ok(())
}

fn generate(features: &Path, out: &Path, timings: Option<PathBuf>, cfg: &PipelineConfig) -> Result<()> {
    let files = feature_files(features)?;
    if files.is_empty() {
        bail!("no .npy feature files in {}", features.display());
    }
    info!("processing {} feature files", files.len());
    let outcomes = run_batch(&files, cfg)?;

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for o in &outcomes {
        match &o.result {
            Ok(r) => {
                info!(
                    "{}: {} masks, {} components, lambda1 {:.3e}, {} ms",
                    r.meta.image_id,
                    r.masks.len(),
                    r.n_components,
                    r.lambda1,
                    ms(r.timings.total())
                );
                ok.push(r);
            }
            Err(e) => {
                error!("{}: {e}", o.path.display());
                failed.push((o.path.clone(), e.to_string()));
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("{} of {} files failed:", failed.len(), outcomes.len());
        for (path, msg) in &failed {
            eprintln!("  {}: {msg}", path.display());
        }
    }
    if ok.is_empty() {
        bail!("none of the {} feature files could be processed", outcomes.len());
    }

    let set = assemble(&ok, cfg);
    export_annotations(&set, out).with_context(|| format!("writing {}", out.display()))?;
    let timings = timings.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".timings.tsv");
        PathBuf::from(name)
    });
    write_timings(&timings, &outcomes)?;
    info!(
        "wrote {} annotations for {} images to {}",
        set.annotations.len(),
        set.images.len(),
        out.display()
    );
    Ok(())
}

fn eval(
    pred: &Path,
    gt: &Path,
    out: Option<&Path>,
    thresholds: Option<Vec<f64>>,
    iou_type: IouType,
) -> Result<()> {
    let preds = import_annotations(pred).with_context(|| format!("loading {}", pred.display()))?;
    let gts = import_annotations(gt).with_context(|| format!("loading {}", gt.display()))?;
    let thresholds = thresholds.unwrap_or_else(default_thresholds);
    let metrics = evaluate(&preds, &gts, &thresholds, iou_type)?;
    if metrics.n_gt == 0 {
        warn!("ground truth has no annotations; AP and AR are reported as -1");
    }
    print!("{}", metrics.table());
    let json = serde_json::to_string_pretty(&metrics)? + "\n";
    match out {
        Some(path) => fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            features,
            out,
            timings,
            tuning,
        } => generate(&features, &out, timings, &tuning.resolve()?),
        Command::Eval {
            pred,
            gt,
            out,
            thresholds,
            iou_type,
        } => eval(&pred, &gt, out.as_deref(), thresholds, iou_type),
        Command::Inspect {
            features,
            out,
            rows,
            tuning,
        } => inspect::run(&features, &out, rows, &tuning.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CUTONCE_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
