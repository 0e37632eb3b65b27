//! `taskclust`: command-line front end for the task clustering pipeline.
//!
//! Failures print one JSON record `{"error": {"code", "message"}}` on
//! stderr. Exit codes: 0 success, 2 usage, configuration or input errors,
//! 3 numerical failures.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use taskclust::completion::{self, CompletionProblem};
use taskclust::data::{self, TaskDataset};
use taskclust::families;
use taskclust::filter::{self, FilterMode, PartialSimilarityMatrix};
use taskclust::learning::{self, EvaluationRecord, EvaluationReport, FewShotTask, ModelKind};
use taskclust::nn::TrainConfig;
use taskclust::pipeline::{self, EstimateParams};
use taskclust::seed::{self, stage};
use taskclust::spectral::TaskPartition;
use taskclust::synth::{self, SamplingMode, SweepSpec, TrialConfig};
use taskclust::transfer::TransferMatrix;
use taskclust::{Error, Execution};

use crate::config::{parse_grid, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "taskclust",
    version,
    about = "Robust task clustering by low-rank matrix completion"
)]
struct Cli {
    /// JSON experiment configuration with one section per stage.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate transfer scores on sampled task pairs.
    Estimate {
        /// Directory of task dataset JSON files.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of task pairs to evaluate (default: all).
        #[arg(long)]
        pair_budget: Option<usize>,
        /// Score the unmodified source model on the target instead of retraining a classifier.
        #[arg(long)]
        identical_labels: bool,
    },
    /// Turn transfer scores into a partial 0/1 similarity matrix.
    Filter {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        filter: FilterFlags,
    },
    /// Recover the full similarity matrix from a partial one.
    Complete {
        #[arg(long)]
        partial: PathBuf,
        /// Receives X.csv, E.csv and diagnostics.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Filter, complete and spectrally cluster a transfer-score matrix.
    Cluster {
        #[arg(long)]
        scores: PathBuf,
        /// Number of clusters.
        #[arg(short = 'k', long = "clusters")]
        k: Option<usize>,
        /// Receives partition.json, diagnostics.json, partial.csv and X.csv.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        filter: FilterFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Multi-task learning: one shared-encoder model per cluster.
    Mtl {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        /// Evaluation report (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the trained cluster models here.
        #[arg(long)]
        models_dir: Option<PathBuf>,
    },
    /// Few-shot learning on target tasks with a mixture of cluster models.
    Fsl {
        /// Training tasks the cluster models are fitted on.
        #[arg(long)]
        tasks: PathBuf,
        /// Target tasks: training split is the support set, test split the query set.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, required_unless_present = "no_clustering")]
        partition: Option<PathBuf>,
        /// One cluster per training task.
        #[arg(long, conflicts_with = "partition")]
        no_clustering: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Fall back to a single-task model when no cluster fits the support set.
        #[arg(long)]
        adaptive: bool,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Recovery probability over a grid of sampling and corruption rates.
    Sweep {
        #[arg(long)]
        n: Option<usize>,
        #[arg(short = 'k', long = "clusters")]
        k: Option<usize>,
        /// Observed fractions of the n^2 entries: `a,b,c` or `start:stop:count`.
        #[arg(long)]
        m1: Option<String>,
        /// Corrupted fractions of the observed entries, same syntax.
        #[arg(long)]
        m2: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic inputs.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Task datasets drawn from planted concept clusters.
    Tasks {
        #[arg(long)]
        out_dir: PathBuf,
        /// Write the planted membership as a partition file.
        #[arg(long)]
        membership_out: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        tasks_per_cluster: Option<usize>,
        /// Also write one few-shot target task per cluster here.
        #[arg(long)]
        targets_out: Option<PathBuf>,
        /// Support examples per label of each target task.
        #[arg(long, default_value_t = 2)]
        shots: usize,
    },
    /// Planted transfer-score matrix, plus the membership as a partition file.
    Scores {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        membership_out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(short = 'k', long = "clusters")]
        k: Option<usize>,
        #[arg(long)]
        pair_fraction: Option<f64>,
    },
    /// Planted block matrix with a corrupted partial observation of it.
    Planted {
        /// Receives x_star.csv, partial.csv and membership.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(short = 'k', long = "clusters")]
        k: usize,
        /// Observed entries (even, pairs are observed together).
        #[arg(long)]
        m1: usize,
        /// Flipped entries among the observed ones (even).
        #[arg(long, default_value_t = 0)]
        m2: usize,
    },
}

#[derive(Args)]
struct FilterFlags {
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    /// Use the disjunctive one-sided rule instead of the two-sided threshold.
    #[arg(long)]
    xl: bool,
}

#[derive(Args)]
struct SolverFlags {
    /// Weight of the sparse error term (default 1/sqrt(n)).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Metric,
    SharedClassifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PairAware,
    Uniform,
}

/// Error record printed on stderr.
#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

fn fail(code: &str, message: String, exit: u8) -> ExitCode {
    let record = ErrorRecord {
        error: ErrorBody { code, message },
    };
    eprintln!("{}", serde_json::to_string(&record).expect("serializable"));
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_owned(), 2),
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => return fail("invalid-argument", format!("thread pool: {e}"), 2),
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(
            e.code(),
            e.to_string(),
            if e.is_numerical() { 3 } else { 2 },
        ),
    }
}

struct Context {
    config: PipelineConfig,
    exec: Execution,
}

fn run(cli: &Cli) -> taskclust::Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let exec = if cli.threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let mut ctx = Context { config, exec };
    match &cli.command {
        Command::Estimate {
            tasks,
            out,
            pair_budget,
            identical_labels,
        } => cmd_estimate(&mut ctx, tasks, out, *pair_budget, *identical_labels),
        Command::Filter {
            scores,
            out,
            filter,
        } => {
            apply_filter_flags(&mut ctx.config, filter);
            let s = TransferMatrix::load(scores)?;
            write(out, &filter::filter(&s, &ctx.config.filter)?.to_csv())
        }
        Command::Complete {
            partial,
            out_dir,
            solver,
        } => {
            apply_solver_flags(&mut ctx.config, solver);
            cmd_complete(&ctx, partial, out_dir)
        }
        Command::Cluster {
            scores,
            k,
            out_dir,
            filter,
            solver,
        } => {
            apply_filter_flags(&mut ctx.config, filter);
            apply_solver_flags(&mut ctx.config, solver);
            if k.is_some() {
                ctx.config.cluster.k = *k;
            }
            cmd_cluster(&ctx, scores, out_dir)
        }
        Command::Mtl {
            tasks,
            partition,
            out,
            models_dir,
        } => cmd_mtl(&ctx, tasks, partition, out, models_dir.as_deref()),
        Command::Fsl {
            tasks,
            targets,
            partition,
            no_clustering,
            out,
            kind,
            adaptive,
            threshold,
        } => {
            let learn = &mut ctx.config.learn;
            if let Some(kind) = kind {
                learn.fsl_kind = match kind {
                    KindArg::Metric => ModelKind::MetricEncoder,
                    KindArg::SharedClassifier => ModelKind::SharedClassifier,
                };
            }
            learn.adaptive |= *adaptive;
            if let Some(t) = threshold {
                learn.threshold = *t;
            }
            let partition = if *no_clustering {
                None
            } else {
                partition.as_deref()
            };
            cmd_fsl(&ctx, tasks, targets, partition, out)
        }
        Command::Sweep {
            n,
            k,
            m1,
            m2,
            trials,
            mode,
            lambda,
            out,
        } => {
            let sweep = &mut ctx.config.sweep;
            if let Some(n) = n {
                sweep.n = *n;
            }
            if let Some(k) = k {
                sweep.k = *k;
            }
            if let Some(grid) = m1 {
                sweep.m1_fractions = parse_grid(grid)?;
            }
            if let Some(grid) = m2 {
                sweep.m2_fractions = parse_grid(grid)?;
            }
            if let Some(t) = trials {
                sweep.trials = *t;
            }
            if let Some(mode) = mode {
                sweep.mode = match mode {
                    ModeArg::PairAware => SamplingMode::PairAware,
                    ModeArg::Uniform => SamplingMode::Uniform,
                };
            }
            if lambda.is_some() {
                sweep.lambda = *lambda;
            }
            cmd_sweep(&ctx, out)
        }
        Command::Synth { what } => cmd_synth(&mut ctx, what),
    }
}

fn apply_filter_flags(config: &mut PipelineConfig, flags: &FilterFlags) {
    if let Some(p1) = flags.p1 {
        config.filter.p1 = p1;
    }
    if let Some(p2) = flags.p2 {
        config.filter.p2 = p2;
    }
    if flags.xl {
        config.filter.mode = FilterMode::Xl;
    }
}

fn apply_solver_flags(config: &mut PipelineConfig, flags: &SolverFlags) {
    let solver = &mut config.solver;
    if flags.lambda.is_some() {
        solver.lambda_override = flags.lambda;
    }
    if let Some(tol) = flags.tol {
        solver.tol = tol;
    }
    if let Some(m) = flags.max_iter {
        solver.max_iter = m;
    }
}

fn write(path: &Path, contents: &str) -> taskclust::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    taskclust::io::write(path, contents)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> taskclust::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn load_tasks(dir: &Path) -> taskclust::Result<Vec<TaskDataset>> {
    let tasks = data::load_task_dir(dir)?;
    if tasks.is_empty() {
        return Err(Error::MissingInput(format!(
            "no task files in {}",
            dir.display()
        )));
    }
    Ok(tasks)
}

fn cmd_estimate(
    ctx: &mut Context,
    tasks: &Path,
    out: &Path,
    pair_budget: Option<usize>,
    identical_labels: bool,
) -> taskclust::Result<()> {
    let tasks = load_tasks(tasks)?;
    let mut train = ctx.config.train;
    train.identical_labels |= identical_labels;
    let params = EstimateParams {
        train,
        pair_budget: pair_budget.or(ctx.config.estimate.pair_budget),
        seed: ctx.config.seed,
    };
    let s = pipeline::estimate(&tasks, &params, ctx.exec)?;
    log::info!(
        "estimated {} of {} pair scores",
        s.observed_count(),
        tasks.len() * tasks.len()
    );
    write(out, &s.to_csv())
}

fn cmd_complete(ctx: &Context, partial: &Path, out_dir: &Path) -> taskclust::Result<()> {
    let partial = PartialSimilarityMatrix::load(partial)?;
    let problem = CompletionProblem::from_partial(&partial)?;
    let result = completion::complete(&problem, &ctx.config.solver)?;
    write(
        &out_dir.join("X.csv"),
        &taskclust::io::dense_to_csv(&result.x),
    )?;
    write(
        &out_dir.join("E.csv"),
        &taskclust::io::dense_to_csv(&result.e),
    )?;
    write_json(&out_dir.join("diagnostics.json"), &result.diagnostics())
}

fn cmd_cluster(ctx: &Context, scores: &Path, out_dir: &Path) -> taskclust::Result<()> {
    let k = ctx.config.cluster.k.ok_or(Error::BadK)?;
    let s = TransferMatrix::load(scores)?;
    let outcome = pipeline::cluster_from_scores(
        &s,
        k,
        &ctx.config.filter,
        &ctx.config.solver,
        ctx.config.seed,
        ctx.exec,
    )?;
    write(&out_dir.join("partial.csv"), &outcome.partial.to_csv())?;
    write(
        &out_dir.join("X.csv"),
        &taskclust::io::dense_to_csv(&outcome.affinity),
    )?;
    write_json(
        &out_dir.join("diagnostics.json"),
        &outcome.completion.diagnostics(),
    )?;
    outcome.partition.save(&out_dir.join("partition.json"))
}

fn learn_config(ctx: &Context) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(ctx.config.seed, &[stage::LEARN]),
        ..ctx.config.train
    }
}

fn cmd_mtl(
    ctx: &Context,
    tasks: &Path,
    partition: &Path,
    out: &Path,
    models_dir: Option<&Path>,
) -> taskclust::Result<()> {
    let tasks = load_tasks(tasks)?;
    let partition = TaskPartition::load(partition)?;
    let models = learning::train_cluster_models(
        &tasks,
        &partition,
        ModelKind::SharedEncoderMultihead,
        &learn_config(ctx),
        ctx.exec,
    )?;
    if let Some(dir) = models_dir {
        std::fs::create_dir_all(dir)?;
        for m in &models {
            m.save(&dir.join(format!("cluster{:03}.json", m.cluster_id)))?;
        }
    }
    write_json(out, &learning::evaluate_mtl(&tasks, &partition, &models)?)
}

fn cmd_fsl(
    ctx: &Context,
    tasks: &Path,
    targets: &Path,
    partition: Option<&Path>,
    out: &Path,
) -> taskclust::Result<()> {
    let tasks = load_tasks(tasks)?;
    let targets = load_tasks(targets)?;
    let partition = match partition {
        Some(path) => TaskPartition::load(path)?,
        None => TaskPartition {
            n: tasks.len(),
            k: tasks.len(),
            assignment: (0..tasks.len()).collect(),
            seed: ctx.config.seed,
        },
    };
    let learn = &ctx.config.learn;
    let train = learn_config(ctx);
    let models =
        learning::train_cluster_models(&tasks, &partition, learn.fsl_kind, &train, ctx.exec)?;
    let records = ctx
        .exec
        .map_range(targets.len(), |t| -> taskclust::Result<EvaluationRecord> {
            let task = FewShotTask::from_dataset(&targets[t])?;
            let (method, accuracy, alpha) = if learn.adaptive {
                let fallback = TrainConfig {
                    seed: seed::derive(ctx.config.seed, &[stage::LEARN, u64::MAX, t as u64]),
                    ..ctx.config.train
                };
                let predictor = learning::adaptive_fsl(
                    &models,
                    &task,
                    learn.threshold,
                    &learn.combine,
                    &fallback,
                )?;
                let method = if predictor.is_fallback() {
                    "single-task-fallback"
                } else {
                    "adaptive-fsl"
                };
                (method, predictor.accuracy(&task.query), predictor.alpha())
            } else {
                let (weights, predictor) = learning::fsl_combine(&models, &task, &learn.combine)?;
                ("fsl", predictor.accuracy(&task.query), weights.alpha)
            };
            Ok(EvaluationRecord {
                task_id: task.task_id.clone(),
                method: method.into(),
                accuracy,
                alpha,
            })
        });
    let records = records.into_iter().collect::<taskclust::Result<Vec<_>>>()?;
    write_json(out, &EvaluationReport::new(records))
}

fn cmd_sweep(ctx: &Context, out: &Path) -> taskclust::Result<()> {
    let sweep = &ctx.config.sweep;
    let mut solver = ctx.config.solver;
    solver.lambda_override = None;
    let spec = SweepSpec {
        n: sweep.n,
        k: sweep.k,
        m1_fractions: sweep.m1_fractions.clone(),
        m2_fractions: sweep.m2_fractions.clone(),
        trials: sweep.trials,
        seed: ctx.config.seed,
        trial: TrialConfig {
            mode: sweep.mode,
            lambda: sweep.lambda,
            solver,
        },
    };
    write(
        out,
        &synth::sweep_csv(&synth::phase_sweep(&spec, ctx.exec)?),
    )
}

fn cmd_synth(ctx: &mut Context, what: &SynthCommand) -> taskclust::Result<()> {
    let master = ctx.config.seed;
    let synth_cfg = &mut ctx.config.synth;
    match what {
        SynthCommand::Tasks {
            out_dir,
            membership_out,
            clusters,
            tasks_per_cluster,
            targets_out,
            shots,
        } => {
            let spec = &mut synth_cfg.family;
            if let Some(c) = clusters {
                spec.clusters = *c;
                spec.subspaces = spec.subspaces.max(*c);
            }
            if let Some(t) = tasks_per_cluster {
                spec.tasks_per_cluster = *t;
            }
            let family = families::generate_family(spec, master)?;
            std::fs::create_dir_all(out_dir)?;
            for t in &family.tasks {
                t.save(&out_dir.join(format!("{}.json", t.task_id)))?;
            }
            if let Some(dir) = targets_out {
                std::fs::create_dir_all(dir)?;
                let mut rng = seed::rng(seed::derive(master, &[stage::SYNTH, 3]));
                for (c, concept) in family.concepts.iter().enumerate() {
                    let id = format!("target{c:03}");
                    let fs = concept.few_shot(id.clone(), spec, *shots, spec.test, &mut rng)?;
                    TaskDataset::new(id.clone(), fs.label_count, fs.support, Vec::new(), fs.query)
                        .save(&dir.join(format!("{id}.json")))?;
                }
            }
            match membership_out {
                Some(path) => write_json(
                    path,
                    &membership_partition(&family.membership, spec.clusters, master),
                ),
                None => Ok(()),
            }
        }
        SynthCommand::Scores {
            out,
            membership_out,
            n,
            k,
            pair_fraction,
        } => {
            let n = n.unwrap_or(synth_cfg.n);
            let k = k.unwrap_or(synth_cfg.k);
            let inst = synth::generate_planted(n, k, &synth::equal_sizes(n, k), master)?;
            let s = synth::planted_transfer_matrix(
                &inst.membership,
                synth_cfg.within,
                synth_cfg.cross,
                synth_cfg.noise,
                pair_fraction.unwrap_or(synth_cfg.pair_fraction),
                master,
            )?;
            write(out, &s.to_csv())?;
            match membership_out {
                Some(path) => write_json(path, &membership_partition(&inst.membership, k, master)),
                None => Ok(()),
            }
        }
        SynthCommand::Planted {
            out_dir,
            n,
            k,
            m1,
            m2,
        } => {
            let inst = synth::generate_planted(*n, *k, &synth::equal_sizes(*n, *k), master)?;
            let plan =
                synth::observe_and_corrupt(&inst, *m1, *m2, SamplingMode::PairAware, master)?;
            let mut partial = PartialSimilarityMatrix::new(*n);
            for &(i, j) in &plan.observed {
                if i < j {
                    partial.set(i, j, Some(plan.y[(i, j)] > 0.5));
                }
            }
            write(
                &out_dir.join("x_star.csv"),
                &taskclust::io::dense_to_csv(&inst.x_star),
            )?;
            write(&out_dir.join("partial.csv"), &partial.to_csv())?;
            write_json(
                &out_dir.join("membership.json"),
                &membership_partition(&inst.membership, *k, master),
            )
        }
    }
}

fn membership_partition(membership: &[usize], k: usize, seed: u64) -> TaskPartition {
    TaskPartition {
        n: membership.len(),
        k,
        assignment: membership.to_vec(),
        seed,
    }
}
