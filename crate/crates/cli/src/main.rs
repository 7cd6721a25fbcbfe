use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pretext_select::analysis::{
    correlate, divisions_for_step, subsample_robustness, ternary_sweep, write_correlations, CorrelationRow,
    SubsampleMode,
};
use pretext_select::baselines::{SubsetSelection, DEFAULT_BINS};
use pretext_select::data::{parse_manifest, CiDataset};
use pretext_select::features::{ExtractionConfig, FrameConfig, MelConfig, PretextTask};
use pretext_select::hsic::{ClassKernels, SigmaChoice, WeightExponent};
use pretext_select::io::{write_atomic, write_json_atomic};
use pretext_select::kernels::{write_embedding_cache, DownsampleConfig};
use pretext_select::pipeline::{
    compute_ci, extract_all, load_dataset, select_mrmr, select_rfe, write_ci_report, DatasetSpec,
    EmbeddingConfig,
};
use pretext_select::weight_opt::{optimize_objective, GroupObjective, Init, Method, OptimizerConfig, WeightsManifest};
use pretext_select::{Error, Result};

const RUN_CONFIG: &str = "run_config.json";
const WEIGHTS: &str = "weights.json";
const SELECTION: &str = "selection.json";

#[derive(Parser, Serialize)]
#[command(name = "pretext-select", version, about = "Pretext-task label selection and weighting")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    #[serde(skip)]
    threads: Option<usize>,

    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Extract pretext labels and sample embeddings from audio.
    ExtractFeatures(DataArgs),
    /// Conditional independence estimate for each task.
    ComputeCi(CiArgs),
    /// Simplex weights over a task group.
    OptimizeWeights(OptimizeArgs),
    /// MRMR subset selection.
    SelectMrmr(MrmrArgs),
    /// Recursive feature elimination.
    SelectRfe(RfeArgs),
    /// Spearman and Kendall correlations of paired series.
    Correlate(CorrelateArgs),
    /// Objective over a grid of three-task weightings.
    SweepTernary(TernaryArgs),
    /// Estimates recomputed on random subsets.
    Subsample(SubsampleArgs),
}

#[derive(Args, Serialize, Clone)]
struct DataArgs {
    /// CSV with header id,audio_path,label.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated task ids (default: all).
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Precomputed feature table (id,label,<task>...).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Precomputed embedding cache.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Matrix-valued task from an embedding cache, as NAME=PATH.
    #[arg(long = "matrix-task", value_parser = parse_matrix_task)]
    matrix_tasks: Vec<(String, PathBuf)>,
    /// Use raw label values instead of standardized ones.
    #[arg(long)]
    raw: bool,
    /// Output frames T of the Gaussian downsampling.
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Gaussian width relative to the output frame spacing.
    #[arg(long, default_value_t = 0.5)]
    width_factor: f64,
    /// Mel bands.
    #[arg(long, default_value_t = 80)]
    mel_bands: usize,
    /// Analysis window in seconds.
    #[arg(long, default_value_t = 0.025)]
    window_s: f64,
    /// Analysis hop in seconds.
    #[arg(long, default_value_t = 0.010)]
    hop_s: f64,
    /// Lowest F0 searched, in Hz.
    #[arg(long, default_value_t = 60.0)]
    f0_min: f64,
    /// Highest F0 searched, in Hz.
    #[arg(long, default_value_t = 500.0)]
    f0_max: f64,
}

#[derive(Args, Serialize)]
struct SigmaArgs {
    /// Fixed RBF bandwidth instead of the median heuristic.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Serialize)]
struct CiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sigma: SigmaArgs,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Softmax,
    Sparsemax,
    /// Every task with weight 1.
    All,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    Uniform,
    SeededRandom,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sigma: SigmaArgs,
    #[arg(long, value_enum, default_value = "sparsemax")]
    method: MethodArg,
    /// Weight each distance by λ² instead of λ.
    #[arg(long)]
    squared_weights: bool,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    init: InitArg,
    /// Initial step of the backtracking line search.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Stop once an iteration improves the objective by less than this.
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

#[derive(Args, Serialize)]
struct MrmrArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sigma: SigmaArgs,
    /// Subset size.
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// Equal-frequency bins of the mutual information estimate.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Forward selection instead of exhaustive search.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args, Serialize)]
struct RfeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sigma: SigmaArgs,
    /// Features to keep.
    #[arg(long, default_value_t = 4)]
    p: usize,
}

#[derive(Args, Serialize)]
struct CorrelateArgs {
    /// CSV with columns x,y and optionally task_set.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Serialize)]
struct TernaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    sigma: SigmaArgs,
    /// Grid step; must divide 1 evenly.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long)]
    squared_weights: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    /// Draw whole classes.
    Classes,
    /// Draw a number of samples from every class.
    PerClass,
}

#[derive(Args, Serialize)]
struct SubsampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Comma-separated subset sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Replicates per size.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, value_enum, default_value = "classes")]
    mode: ModeArg,
}

fn parse_matrix_task(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), path.into())),
        _ => Err(format!("expected NAME=PATH, got '{s}'")),
    }
}

impl DataArgs {
    fn spec(&self) -> Result<DatasetSpec> {
        let frame = FrameConfig {
            window_s: self.window_s,
            hop_s: self.hop_s,
        };
        let extraction = ExtractionConfig {
            frame,
            f0_min_hz: self.f0_min,
            f0_max_hz: self.f0_max,
            ..Default::default()
        };
        let embedding = EmbeddingConfig {
            mel: MelConfig {
                bands: self.mel_bands,
                frame,
                ..Default::default()
            },
            downsample: DownsampleConfig {
                frames: self.frames,
                width_factor: self.width_factor,
            },
        };
        extraction.validate()?;
        embedding.downsample.validate()?;
        if self.mel_bands == 0 {
            return Err(Error::InvalidParameter("mel band count must be positive".into()));
        }
        if self.features.is_none() {
            for t in &self.tasks {
                t.parse::<PretextTask>()?;
            }
        }
        Ok(DatasetSpec {
            manifest: self.manifest.clone(),
            tasks: self.tasks.clone(),
            features: self.features.clone(),
            embeddings: self.embeddings.clone(),
            matrix_tasks: self.matrix_tasks.clone(),
            raw: self.raw,
            extraction,
            embedding,
        })
    }
}

impl SigmaArgs {
    fn choice(&self) -> Result<SigmaChoice> {
        match self.sigma {
            None => Ok(SigmaChoice::Median),
            Some(s) if s.is_finite() && s > 0.0 => Ok(SigmaChoice::Fixed(s)),
            Some(s) => Err(Error::InvalidParameter(format!("sigma must be positive, got {s}"))),
        }
    }

    fn fixed(&self) -> Result<Option<f64>> {
        Ok(match self.choice()? {
            SigmaChoice::Fixed(s) => Some(s),
            SigmaChoice::Median => None,
        })
    }
}

fn exponent(squared: bool) -> WeightExponent {
    if squared {
        WeightExponent::Squared
    } else {
        WeightExponent::Linear
    }
}

#[derive(Serialize)]
struct RunConfig<'a> {
    seed: u64,
    out_dir: &'a Path,
    #[serde(flatten)]
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<&'a DatasetSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<&'a OptimizerConfig>,
}

struct Outputs<'a> {
    cli: &'a Cli,
}

impl Outputs<'_> {
    fn dir(&self) -> &Path {
        &self.cli.out_dir
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(self.dir()).map_err(|e| Error::io(self.dir(), e))
    }

    fn run_config(&self, dataset: Option<&DatasetSpec>, optimizer: Option<&OptimizerConfig>) -> Result<()> {
        let config = RunConfig {
            seed: self.cli.seed,
            out_dir: &self.cli.out_dir,
            command: &self.cli.command,
            dataset,
            optimizer,
        };
        write_json_atomic(&self.dir().join(RUN_CONFIG), &config)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir().join(name)
    }
}

fn all_tasks(dataset: &CiDataset) -> Vec<String> {
    dataset.task_ids()
}

fn write_selection(out: &Outputs, dataset: &CiDataset, tasks: &[String], sel: &SubsetSelection, sigma: Option<f64>, seed: u64) -> Result<()> {
    let objective = GroupObjective::with_kernels(dataset, &ClassKernels::build(dataset)?, tasks, WeightExponent::Linear, sigma)?;
    let manifest = WeightsManifest::fixed(&objective, sel.indicator_weights(tasks), &sel.method, seed)?;
    sel.save(&out.path(SELECTION))?;
    manifest.save(&out.path(WEIGHTS))
}

type LabeledPairs = Vec<(String, Vec<f64>, Vec<f64>)>;

fn read_pairs(path: &Path) -> Result<LabeledPairs> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(xi), Some(yi)) = (col("x"), col("y")) else {
        return Err(Error::Malformed("pairs CSV needs 'x' and 'y' columns".into()));
    };
    let set_col = col("task_set");
    let mut sets: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let name = set_col.and_then(|i| record.get(i)).unwrap_or("all").to_string();
        let parse = |i: usize| {
            record
                .get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Malformed(format!("non-numeric pair at line {line}")))
        };
        let (x, y) = (parse(xi)?, parse(yi)?);
        match sets.iter_mut().find(|s| s.0 == name) {
            Some(s) => {
                s.1.push(x);
                s.2.push(y);
            }
            None => sets.push((name, vec![x], vec![y])),
        }
    }
    if sets.is_empty() {
        return Err(Error::Malformed("pairs CSV has no rows".into()));
    }
    Ok(sets)
}

fn csv_to_vec(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn run(cli: &Cli) -> Result<()> {
    let out = Outputs { cli };
    let seed = cli.seed;
    match &cli.command {
        Command::ExtractFeatures(args) => {
            let spec = args.spec()?;
            let manifest = parse_manifest(&spec.manifest)?;
            let tasks = if args.tasks.is_empty() {
                PretextTask::ALL.to_vec()
            } else {
                args.tasks.iter().map(|t| t.parse()).collect::<Result<Vec<_>>>()?
            };
            let (table, embeddings) = extract_all(&manifest, &tasks, &spec.extraction, &spec.embedding)?;
            out.prepare()?;
            let csv = csv_to_vec(|buf| table.to_writer(buf))?;
            write_atomic(&out.path("features.csv"), &csv)?;
            write_embedding_cache(&out.path("embeddings.gde"), &embeddings)?;
            out.run_config(Some(&spec), None)
        }
        Command::ComputeCi(args) => {
            let spec = args.data.spec()?;
            let sigma = args.sigma.choice()?;
            let dataset = load_dataset(&spec)?;
            let estimates = compute_ci(&dataset, &all_tasks(&dataset), sigma)?;
            out.prepare()?;
            write_ci_report(out.dir(), &estimates)?;
            out.run_config(Some(&spec), None)
        }
        Command::OptimizeWeights(args) => {
            let spec = args.data.spec()?;
            let sigma = args.sigma.fixed()?;
            let config = OptimizerConfig {
                max_iters: args.max_iters,
                init: match args.init {
                    InitArg::Uniform => Init::Uniform,
                    InitArg::SeededRandom => Init::SeededRandom,
                },
                step: args.step,
                tolerance: args.tolerance,
                restarts: args.restarts,
                seed,
            };
            config.validate()?;
            let dataset = load_dataset(&spec)?;
            let tasks = all_tasks(&dataset);
            let kernels = ClassKernels::build(&dataset)?;
            let objective =
                GroupObjective::with_kernels(&dataset, &kernels, &tasks, exponent(args.squared_weights), sigma)?;
            let manifest = match args.method {
                MethodArg::Softmax => WeightsManifest::from(&optimize_objective(&objective, Method::Softmax, &config)?),
                MethodArg::Sparsemax => {
                    WeightsManifest::from(&optimize_objective(&objective, Method::Sparsemax, &config)?)
                }
                MethodArg::All => WeightsManifest::fixed(&objective, vec![1.0; tasks.len()], "all", seed)?,
            };
            out.prepare()?;
            manifest.save(&out.path(WEIGHTS))?;
            out.run_config(Some(&spec), Some(&config))
        }
        Command::SelectMrmr(args) => {
            let spec = args.data.spec()?;
            let sigma = args.sigma.choice()?;
            let dataset = load_dataset(&spec)?;
            let tasks = all_tasks(&dataset);
            let sel = select_mrmr(&dataset, &tasks, args.p, args.bins, args.greedy, sigma)?;
            out.prepare()?;
            write_selection(&out, &dataset, &tasks, &sel, args.sigma.fixed()?, seed)?;
            out.run_config(Some(&spec), None)
        }
        Command::SelectRfe(args) => {
            let spec = args.data.spec()?;
            let sigma = args.sigma.fixed()?;
            let dataset = load_dataset(&spec)?;
            let tasks = all_tasks(&dataset);
            let sel = select_rfe(&dataset, &tasks, args.p)?;
            out.prepare()?;
            write_selection(&out, &dataset, &tasks, &sel, sigma, seed)?;
            out.run_config(Some(&spec), None)
        }
        Command::Correlate(args) => {
            let rows = read_pairs(&args.input)?
                .into_iter()
                .map(|(name, x, y)| correlate(&name, &x, &y))
                .collect::<Result<Vec<CorrelationRow>>>()?;
            out.prepare()?;
            let csv = csv_to_vec(|buf| write_correlations(buf, &rows))?;
            write_atomic(&out.path("correlations.csv"), &csv)?;
            out.run_config(None, None)
        }
        Command::SweepTernary(args) => {
            let spec = args.data.spec()?;
            let sigma = args.sigma.fixed()?;
            let divisions = divisions_for_step(args.step)?;
            let dataset = load_dataset(&spec)?;
            let tasks = all_tasks(&dataset);
            if tasks.len() != 3 {
                return Err(Error::InvalidParameter(format!(
                    "sweep-ternary needs exactly 3 tasks, got {}",
                    tasks.len()
                )));
            }
            let kernels = ClassKernels::build(&dataset)?;
            let objective =
                GroupObjective::with_kernels(&dataset, &kernels, &tasks, exponent(args.squared_weights), sigma)?;
            let grid = ternary_sweep(&objective, divisions)?;
            out.prepare()?;
            let csv = csv_to_vec(|buf| grid.write_csv(buf))?;
            write_atomic(&out.path(&grid.file_name()), &csv)?;
            out.run_config(Some(&spec), None)
        }
        Command::Subsample(args) => {
            let spec = args.data.spec()?;
            let mode = match args.mode {
                ModeArg::Classes => SubsampleMode::Classes,
                ModeArg::PerClass => SubsampleMode::PerClass,
            };
            let dataset = load_dataset(&spec)?;
            let report = subsample_robustness(&dataset, &all_tasks(&dataset), &args.sizes, args.reps, mode, seed)?;
            out.prepare()?;
            let csv = csv_to_vec(|buf| report.write_csv(buf))?;
            write_atomic(&out.path("robustness.csv"), &csv)?;
            out.run_config(Some(&spec), None)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
