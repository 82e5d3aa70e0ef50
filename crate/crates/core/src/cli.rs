//! Command-line front end. `run` parses argv and returns the exit status:
//! 0 on success, 1 on usage or domain errors, 2 on runtime failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{self, AugmentKind, AugmentParams};
use crate::data::{self, Dataset, SamplerConfig, Task, TimeSeries};
use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;
use crate::search::{self, DataFormat, RunConfig, TraceIteration, TraceStep};
use crate::train::TrainedModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "tsrep", version, about = "Pipeline and hyperparameter search for time-series representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search pipelines and hyperparameters, then retrain and test the best.
    Search(SearchArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Delete a fraction of timestamps from every series.
    Sample(SampleArgs),
    /// Preview augmented copies of a dataset.
    Augment(AugmentArgs),
    /// Write the synthetic sine benchmark.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Ucr,
    Mvjson,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ucr => DataFormat::Ucr,
            FormatArg::Mvjson => DataFormat::Mvjson,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Anomaly,
    Cluster,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Anomaly => Task::Anomaly,
            TaskArg::Cluster => Task::Cluster,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Scaling,
    Shifting,
    Timewarp,
}

impl From<KindArg> for AugmentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Scaling => AugmentKind::Scaling,
            KindArg::Shifting => AugmentKind::Shifting,
            KindArg::Timewarp => AugmentKind::Timewarp,
        }
    }
}

#[derive(Args, Debug)]
struct Input {
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to mvjson for `.json` files and ucr otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl Input {
    fn format(&self) -> DataFormat {
        self.format.map_or_else(|| DataFormat::from_path(&self.dataset), Into::into)
    }

    fn load(&self) -> Result<Dataset> {
        self.format().load(&self.dataset)
    }
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "anomaly")]
    task: TaskArg,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    contamination: f64,
    /// Thompson-sampling iterations.
    #[arg(long, default_value_t = search::DEFAULT_ITERATIONS)]
    iterations: usize,
    /// BO steps per iteration.
    #[arg(long, default_value_t = search::DEFAULT_BO_ITERS)]
    bo_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also save the retrained best model.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    normal_class: Option<i64>,
    /// Train, validation and test fractions.
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"])]
    ratios: Option<Vec<f64>>,
    /// Skip per-series z-normalization.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    final_epochs: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "anomaly")]
    task: TaskArg,
    /// Anomaly task: label treated as normal, every other label anomalous.
    /// Defaults to the most frequent label.
    #[arg(long)]
    normal_class: Option<i64>,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    raw: bool,
    /// Per-series `id,score,label` CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Written as multivariate JSON since lengths differ afterwards.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "scaling")]
    kind: KindArg,
    /// Number of augmented copies.
    #[arg(long, short, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 1.5)]
    h_amp: f64,
    #[arg(long, default_value_t = 3)]
    h_shift: i64,
    /// Defaults to the smallest valid count.
    #[arg(long)]
    h_tm: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only the augmented copies are written.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    out_format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 300)]
    normal: usize,
    #[arg(long, default_value_t = 100)]
    anomalous: usize,
    #[arg(long, default_value_t = 64)]
    length: usize,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.1, 0.2])]
    noise_span: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Search(a) => cmd_search(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run_config(a: &SearchArgs) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::new(&a.input.dataset, a.task.into());
    cfg.format = a.input.format();
    cfg.beta = a.beta;
    cfg.contamination = a.contamination;
    cfg.iterations = a.iterations;
    cfg.bo_iters = a.bo_iters;
    cfg.seed = a.seed;
    cfg.normal_class = a.normal_class;
    cfg.znormalize = !a.raw;
    cfg.out = Some(a.out.clone());
    if let Some(r) = &a.ratios {
        cfg.ratios = (r[0], r[1], r[2]);
    }
    let t = &mut cfg.train;
    t.search_epochs = a.epochs.unwrap_or(t.search_epochs);
    t.final_epochs = a.final_epochs.unwrap_or(t.final_epochs);
    t.lambda1 = a.lambda1.unwrap_or(t.lambda1);
    t.lambda2 = a.lambda2.unwrap_or(t.lambda2);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    cfg.validate().map_err(usage)?;
    let (rt, rv, rs) = cfg.ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Failure::Usage("ratios must be non-negative and sum to 1".into()));
    }
    Ok(cfg)
}

fn cmd_search(a: SearchArgs) -> std::result::Result<(), Failure> {
    let cfg = run_config(&a)?;
    let dataset = a.input.load()?;
    let quiet = a.quiet;
    let mut progress = |it: &TraceIteration, step: &TraceStep| {
        if !quiet {
            eprintln!(
                "[{}.{}] f = {:.4} ({:?}) {}",
                it.iteration, step.step, step.value, step.status, it.description
            );
        }
    };
    let out = search::search(&cfg, &dataset, Some(&mut progress))?;
    out.report.write(&a.out)?;
    if let Some(path) = &a.model_out {
        out.model.save(path)?;
    }
    let r = &out.report;
    println!("best {}: {:.4} ({})", r.metric, r.best.value, r.best.description);
    println!("test {}: {:.4}", r.metric, r.test_metric);
    println!("report written to {}", a.out.display());
    Ok(())
}

/// Label 0 for `normal`, 1 for everything else.
fn binarize(dataset: &Dataset, normal: Option<i64>) -> Result<Dataset> {
    let normal = match normal {
        Some(c) => c,
        None => dataset.most_frequent_class().ok_or(Error::EmptyDataset)?,
    };
    let series = dataset
        .series
        .iter()
        .map(|s| TimeSeries {
            label: s.label.map(|l| i64::from(l != normal)),
            ..s.clone()
        })
        .collect();
    Ok(Dataset {
        series,
        ..dataset.clone()
    })
}

fn cmd_evaluate(a: EvaluateArgs) -> std::result::Result<(), Failure> {
    let sampler = SamplerConfig::new(a.beta, rng::derive(a.seed, "sample")).map_err(usage)?;
    let model = TrainedModel::load(&a.model)?;
    let mut ds = a.input.load()?;
    if !a.raw {
        ds = data::znormalize(&ds);
    }
    if a.beta > 0.0 {
        ds = data::irregular_sample_dataset(&ds, &sampler)?;
    }
    let task: Task = a.task.into();
    if task == Task::Anomaly {
        ds = binarize(&ds, a.normal_class)?;
    }
    let report = metrics::evaluate(&model, &ds, task, &ds.name)?;
    if let Some(path) = &a.out {
        metrics::write_scores_csv(path, &report.ids, &report.scores, &report.labels)?;
    }
    println!("{} = {:.6} over {} series", report.metric, report.value, report.ids.len());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> std::result::Result<(), Failure> {
    let sampler = SamplerConfig::new(a.beta, a.seed).map_err(usage)?;
    let ds = a.input.load()?;
    let out = data::irregular_sample_dataset(&ds, &sampler)?;
    data::write_multivariate(&out, &a.out)?;
    println!("{} series written to {}", out.len(), a.out.display());
    Ok(())
}

fn out_format(explicit: Option<FormatArg>, path: &Path) -> DataFormat {
    explicit.map_or_else(|| DataFormat::from_path(path), Into::into)
}

fn cmd_augment(a: AugmentArgs) -> std::result::Result<(), Failure> {
    if a.n > augment::N_AUG_MAX {
        return Err(Failure::Usage(format!("-n must be at most {}", augment::N_AUG_MAX)));
    }
    let ds = a.input.load()?;
    let h_tm = a
        .h_tm
        .unwrap_or_else(|| augment::time_warp_bounds(ds.min_len().max(1)).0);
    let params = AugmentParams {
        kind: a.kind.into(),
        n_aug: a.n,
        h_amp: a.h_amp,
        h_shift: a.h_shift,
        h_tm,
        seed: a.seed,
    };
    let all = augment::augment_dataset(&ds, &params)?;
    let copies = Dataset {
        series: all.series[ds.len()..].to_vec(),
        ..all
    };
    out_format(a.out_format, &a.out).write(&copies, &a.out)?;
    println!("{} augmented series written to {}", copies.len(), a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> std::result::Result<(), Failure> {
    let ds = data::make_synthetic_sine(a.normal, a.anomalous, a.length, (a.noise_span[0], a.noise_span[1]), a.seed)
        .map_err(usage)?;
    out_format(a.format, &a.out).write(&ds, &a.out)?;
    println!("{} series written to {}", ds.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors() {
        assert_eq!(run(["tsrep", "search"]), EXIT_USAGE);
        assert_eq!(run(["tsrep", "search", "--dataset", "x.tsv", "--beta", "1.0"]), EXIT_USAGE);
        assert_eq!(run(["tsrep", "search", "--dataset", "x.tsv", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["tsrep", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["tsrep", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_file_is_runtime() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.tsv");
        let out = dir.path().join("r.json");
        let argv: Vec<std::ffi::OsString> = vec![
            "tsrep".into(),
            "search".into(),
            "--dataset".into(),
            missing.into(),
            "--out".into(),
            out.into(),
        ];
        let code = run(argv);
        assert_eq!(code, EXIT_RUNTIME);
    }

    #[test]
    fn binarize_relabels() {
        let ds = data::make_synthetic_sine(3, 2, 8, (0.2, 0.3), 0).unwrap();
        let b = binarize(&ds, Some(1)).unwrap();
        assert_eq!(b.labels(), vec![Some(1), Some(1), Some(1), Some(0), Some(0)]);
    }
}
