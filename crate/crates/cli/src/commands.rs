use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use etiobench_core::data::{FoldAssignment, Manifest, DEVELOPMENT_PROPORTIONS};
use etiobench_core::inference::PredictionSet;
use etiobench_core::nn::IchNetConfig;
use etiobench_core::phantom::{CohortSpec, PhantomGeometry};
use etiobench_core::pipeline;
use etiobench_core::stats::{ReportConfig, TaskResponses};
use etiobench_core::study::{
    finalize_and_report, labels_by_task, read_responses, replay_log, simulate_raters, write_responses, Dataset,
    RaterProfile, SessionStatus, StudyService,
};
use etiobench_core::volume::{read_volume, PrepConfig};

#[derive(Debug, Parser)]
#[command(name = "etiobench", version, about = "Hemorrhage etiology pipeline on synthetic CT phantoms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a phantom cohort.
    Gen(GenArgs),
    /// Resample, skull-strip and crop every volume of a manifest.
    Prep(PrepArgs),
    /// Stratified k-fold assignment.
    Split(SplitArgs),
    /// Train one model per fold.
    Train(TrainArgs),
    /// Ensemble prediction with every checkpoint in a directory.
    Predict(PredictArgs),
    /// Model-only metrics from a predictions CSV.
    Eval(EvalArgs),
    /// Serve the reader-study HTTP API.
    StudyServe(ServeArgs),
    /// Write simulated rater responses.
    StudySim(SimArgs),
    /// Full report: model plus reader responses.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Prep(_) => "prep",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::StudyServe(_) => "study-serve",
            Command::StudySim(_) => "study-sim",
            Command::Report(_) => "report",
        }
    }
}

fn parse_list<T: std::str::FromStr, const N: usize>(s: &str) -> Result<[T; N], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let n = parts.len();
    parts
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated values, got {n}"))
}

fn f64x3(s: &str) -> Result<[f64; 3], String> {
    let v: [f64; 3] = parse_list(s)?;
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err("values must be positive".into());
    }
    Ok(v)
}

fn usizex3(s: &str) -> Result<[usize; 3], String> {
    parse_list(s)
}

/// `uniform`, `development`, or six comma-separated weights.
fn proportions(s: &str) -> Result<[f64; 6], String> {
    let raw = match s {
        "uniform" => [1.0; 6],
        "development" => DEVELOPMENT_PROPORTIONS,
        _ => parse_list(s)?,
    };
    let total: f64 = raw.iter().sum();
    if raw.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || total <= 0.0 {
        return Err("weights must be non-negative with a positive sum".into());
    }
    Ok(raw.map(|p| p / total))
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    /// `uniform`, `development` (the development-cohort mix), or six weights
    /// in the order aneurysm,hypertensive,avm,mmd,cm,others.
    #[arg(long, default_value = "uniform", value_parser = proportions)]
    pub proportions: [f64; 6],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "64,64,16", value_parser = usizex3)]
    pub dims: [usize; 3],
    #[arg(long, default_value = "2.625,2.625,7.875", value_parser = f64x3)]
    pub spacing: [f64; 3],
    #[arg(long, default_value_t = 4.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Target voxel spacing in mm (x,y,z).
    #[arg(long, default_value = "2.625,2.625,7.875", value_parser = f64x3)]
    pub target_spacing: [f64; 3],
    /// Final grid after resampling (x,y,z).
    #[arg(long, default_value = "64,64,16", value_parser = usizex3)]
    pub crop: [usize; 3],
    #[arg(long)]
    pub no_skull_strip: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub folds: PathBuf,
    /// Train only these folds (repeatable); all folds by default.
    #[arg(long = "fold")]
    pub fold: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub slow_stride: usize,
    #[arg(long, default_value = "2,4,8", value_parser = usizex3)]
    pub fast_widths: [usize; 3],
    #[arg(long, default_value = "8,16,32", value_parser = usizex3)]
    pub slow_widths: [usize; 3],
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
    #[arg(long)]
    pub no_rotation: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding fold-*.ichc checkpoints.
    #[arg(long)]
    pub models: PathBuf,
    /// Axial rotation copies averaged per case: 1 or 18.
    #[arg(long, default_value_t = 18)]
    pub rotations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 2000)]
    pub bootstrap: usize,
    #[arg(long = "stats-seed", default_value_t = 0)]
    pub stats_seed: u64,
    /// Sensitivity target for the reported operating points.
    #[arg(long, default_value_t = 0.9)]
    pub operating_target: f64,
}

impl StatsArgs {
    pub fn config(&self) -> ReportConfig {
        ReportConfig {
            confidence: self.confidence,
            bootstrap_replicates: self.bootstrap,
            seed: self.stats_seed,
            operating_target: self.operating_target,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub stats: StatsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictions CSV; required for the model-assisted task.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub dataset_id: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Session event logs; existing logs are replayed on start.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[command(flatten)]
    pub stats: StatsArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub raters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub accuracy: f64,
    #[arg(long, default_value_t = 0.6)]
    pub clinical_accuracy: f64,
    #[arg(long, default_value_t = 0.5)]
    pub adoption: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Directory of `<rater>.<task>.jsonl` response files.
    #[arg(long, conflicts_with = "sessions")]
    pub responses: Option<PathBuf>,
    /// Directory of study-serve session logs; finalized sessions are used.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub dataset_id: String,
    #[command(flatten)]
    pub stats: StatsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn read_predictions(path: &Path) -> Result<PredictionSet> {
    PredictionSet::read_csv(path).with_context(|| format!("reading predictions {}", path.display()))
}

fn dataset(id: &str, manifest: &Path, predictions: Option<&Path>) -> Result<Dataset> {
    Ok(Dataset {
        id: id.to_string(),
        manifest: read_manifest(manifest)?,
        predictions: predictions.map(read_predictions).transpose()?,
    })
}

/// Writes the resolved command and the artifact list under `out`.
fn finish(command: &Command, out: &Path) -> Result<()> {
    let listed = pipeline::record_run(command.name(), command, out)?;
    println!("{}: {} artifacts under {}", command.name(), listed.artifacts.len(), out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let command = &cli.command;
    match command {
        Command::Gen(a) => {
            let spec = CohortSpec {
                n: a.n,
                proportions: a.proportions,
                seed: a.seed,
                geometry: PhantomGeometry {
                    dims: a.dims,
                    spacing_mm: a.spacing,
                    noise_hu: a.noise,
                },
            };
            pipeline::gen(&a.out, &spec)?;
            finish(command, &a.out)
        }
        Command::Prep(a) => {
            let config = PrepConfig {
                target_spacing_mm: a.target_spacing,
                target_dims: a.crop,
                skull_strip: !a.no_skull_strip,
            };
            pipeline::prep(&read_manifest(&a.manifest)?, &config, &a.out)?;
            finish(command, &a.out)
        }
        Command::Split(a) => {
            pipeline::split(&read_manifest(&a.manifest)?, a.k, a.seed, &a.out)?;
            finish(command, &a.out)
        }
        Command::Train(a) => {
            let manifest = read_manifest(&a.manifest)?;
            let folds = FoldAssignment::read(&a.folds).with_context(|| format!("reading folds {}", a.folds.display()))?;
            let first = manifest.cases.first().context("manifest has no cases")?;
            let input_dims = read_volume(manifest.volume_path(first))?.dims();
            let config = IchNetConfig {
                input_dims,
                slow_stride: a.slow_stride,
                fast_widths: a.fast_widths,
                slow_widths: a.slow_widths,
                embedding_dim: a.embedding_dim,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                rotation_augment: !a.no_rotation,
                seed: a.seed,
                ..IchNetConfig::default()
            };
            pipeline::train(&manifest, &folds, &config, &a.fold, &a.out)?;
            pipeline::write_json(&a.out.join("model_config.json"), &config)?;
            finish(command, &a.out)
        }
        Command::Predict(a) => {
            let checkpoints = pipeline::read_checkpoints(&a.models)?;
            let set = pipeline::predict(&checkpoints, &read_manifest(&a.manifest)?, a.rotations, &a.out)?;
            let failed = set.failed().count();
            if failed > 0 {
                eprintln!("predict: {failed} of {} cases failed", set.len());
            }
            finish(command, &a.out)
        }
        Command::Eval(a) => {
            let preds = read_predictions(&a.predictions)?;
            let report = pipeline::eval(
                &read_manifest(&a.manifest)?,
                Some(&preds),
                &TaskResponses::new(),
                &a.stats.config(),
                &a.out,
            )?;
            if let Some(m) = &report.model {
                if let Some(acc) = m.accuracy.value {
                    println!("accuracy {acc:.4} over {} cases", report.case_count);
                }
            }
            finish(command, &a.out)
        }
        Command::StudySim(a) => {
            let manifest = read_manifest(&a.manifest)?;
            let preds = a.predictions.as_deref().map(read_predictions).transpose()?;
            let profiles: Vec<RaterProfile> = (0..a.raters)
                .map(|i| RaterProfile {
                    rater_id: format!("rater{}", i + 1),
                    accuracy: a.accuracy,
                    clinical_accuracy: a.clinical_accuracy,
                    adoption: a.adoption,
                })
                .collect();
            let sim = simulate_raters(&manifest, preds.as_ref(), &profiles, a.seed)?;
            fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            write_responses(&a.out, &sim)?;
            finish(command, &a.out)
        }
        Command::Report(a) => {
            let data = dataset(&a.dataset_id, &a.manifest, a.predictions.as_deref())?;
            let config = a.stats.config();
            let report = match (&a.responses, &a.sessions) {
                (Some(dir), _) => {
                    let responses = labels_by_task(&read_responses(dir)?);
                    pipeline::eval(&data.manifest, data.predictions.as_ref(), &responses, &config, &a.out)?
                }
                (None, Some(dir)) => {
                    let sessions = session_logs(dir)?
                        .into_iter()
                        .filter(|s| s.dataset_id == data.id && s.status == SessionStatus::Finalized)
                        .collect::<Vec<_>>();
                    let report = finalize_and_report(&sessions, &data, &config)?;
                    fs::create_dir_all(&a.out)?;
                    fs::write(a.out.join(pipeline::REPORT_FILE), report.to_json())?;
                    report
                }
                (None, None) => bail!("report needs --responses or --sessions"),
            };
            println!("report over {} cases, {} tasks", report.case_count, report.tasks.len());
            finish(command, &a.out)
        }
        Command::StudyServe(a) => {
            let data = dataset(&a.dataset_id, &a.manifest, a.predictions.as_deref())?;
            let service = match &a.log_dir {
                Some(dir) => StudyService::with_log_dir(dir)?,
                None => StudyService::new(),
            };
            service.register_dataset(data)?;
            let app = crate::server::router(Arc::new(service), a.stats.config());
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(a.addr)
                    .await
                    .with_context(|| format!("binding {}", a.addr))?;
                println!("study-serve: listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app).await?;
                Ok(())
            })
        }
    }
}

fn session_logs(dir: &Path) -> Result<Vec<etiobench_core::study::StudySession>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading session logs in {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| replay_log(p).with_context(|| format!("replaying {}", p.display())))
        .collect()
}

/// Caps the global rayon pool at `ETIOBENCH_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ETIOBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("ETIOBENCH_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use etiobench_core::phantom::{DESK_DIMS, DESK_SPACING_MM};

    #[test]
    fn list_parsers() {
        assert_eq!(f64x3("0.6,0.6,4.2").unwrap(), [0.6, 0.6, 4.2]);
        assert!(f64x3("0.6,0.6").is_err());
        assert!(f64x3("0.6,-1,4").is_err());
        assert_eq!(usizex3("280, 280, 30").unwrap(), [280, 280, 30]);
        assert_eq!(proportions("uniform").unwrap(), [1.0 / 6.0; 6]);
        assert_eq!(proportions("2,2,0,0,0,0").unwrap(), [0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!(proportions("0,0,0,0,0,0").is_err());
        assert!(proportions("table").is_err());
    }

    #[test]
    fn desk_defaults() {
        let cli = Cli::try_parse_from(["etiobench", "gen", "--out", "x"]).unwrap();
        let Command::Gen(g) = cli.command else { panic!() };
        assert_eq!((g.n, g.dims, g.spacing), (60, DESK_DIMS, DESK_SPACING_MM));
        let cli = Cli::try_parse_from(["etiobench", "train", "--manifest", "m", "--folds", "f", "--out", "o"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.epochs, 10);
    }
}
