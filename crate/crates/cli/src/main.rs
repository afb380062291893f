mod io;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pcsma::bench::{self, SweepConfig};
use pcsma::data::{self, DatasetSpec, Labeler, TrainConfig};
use pcsma::gnn::{read_checkpoint, write_checkpoint, FeatureMode, LayerKind, Model, ModelConfig};
use pcsma::markov::{self, SolveOptions, DEFAULT_STATE_CAP};
use pcsma::numopt::{self, Backend, UtilityProblem};
use pcsma::{sim, CollisionMode, Error, ErrorClass, NetworkInstance, Result};
use serde::Serialize;
use serde_json::json;

use crate::io::{emit, parse_range, GraphArgs, Run};

#[derive(Parser)]
#[command(name = "pcsma", version, about = "Throughput analysis and surrogate models for p-persistent CSMA networks")]
struct Cli {
    /// Worker threads for generation, labeling and benchmarks; 1 gives bit-reproducible runs
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset CSV
    GenData(GenDataArgs),
    /// Exact stationary throughput of one instance
    Solve(SolveArgs),
    /// Monte Carlo throughput estimate of one instance
    Simulate(SimulateArgs),
    /// Train a surrogate on a dataset and write a checkpoint
    Train(TrainArgs),
    /// Report MSE, MAE and NMAE of a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Predict per-node throughput with a checkpoint
    Predict(PredictArgs),
    /// Maximize a weighted log utility by projected gradient ascent
    Optimize(OptimizeArgs),
    /// Time exact solves against surrogate inference over (n, T)
    Bench(BenchArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    #[arg(long = "t-list", value_delimiter = ',', required = true)]
    t_list: Vec<usize>,
    /// Samples per (n, T) cell
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0.5)]
    p_edge: f64,
    /// `mc` or `sim:L`
    #[arg(long, default_value = "mc")]
    labeler: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "timer-rule")]
    mode: String,
    /// Largest T^n the exact labeler accepts
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct InstanceArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Access probabilities, comma separated
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    p: Vec<f64>,
    /// Transmission duration in slots
    #[arg(long = "t", visible_alias = "T")]
    t: usize,
    #[arg(long, default_value = "timer-rule")]
    mode: String,
}

impl InstanceArgs {
    fn instance(&self) -> Result<NetworkInstance> {
        let g = if self.graph.is_given() {
            self.graph.load(self.p.len())?
        } else {
            pcsma::ConflictGraph::empty(self.p.len())?
        };
        NetworkInstance::new(g, self.p.clone(), self.t)
    }

    fn mode(&self) -> Result<CollisionMode> {
        self.mode.parse()
    }
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value_t = 1_000_000)]
    slots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    #[arg(long, default_value = "dgcn")]
    arch: String,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// `p` or `pT`
    #[arg(long, default_value = "p")]
    features: String,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    /// Train, validation and test fractions
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    split: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl SplitArgs {
    fn apply(&self, rows: &[data::DatasetRow]) -> Result<data::Split> {
        let f: [f64; 3] = self
            .split
            .clone()
            .try_into()
            .map_err(|_| Error::Parameter("--split takes three fractions".into()))?;
        data::split(rows, f, self.split_seed)
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Seeds weight initialization and batch shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.5)]
    plateau_factor: f64,
    #[arg(long, default_value_t = 1e-5)]
    min_lr: f64,
    /// Gradient shards per batch for deterministic data parallelism
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Print one line per epoch to stderr
    #[arg(long)]
    verbose: bool,
    /// Checkpoint path; the report goes to `<out>.report.json`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// `train`, `val`, `test` or `all`
    #[arg(long, default_value = "test")]
    part: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    inst: InstanceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    /// `mc-fd` or `dgcn-backprop`
    #[arg(long, default_value = "mc-fd")]
    backend: String,
    /// Required by the dgcn-backprop backend
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `chain3` or `bench10` instead of an explicit graph
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_delimiter = ',')]
    p_init: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long = "t", visible_alias = "T")]
    t: Option<usize>,
    #[arg(long, default_value_t = numopt::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = 250)]
    iters: usize,
    #[arg(long, default_value_t = numopt::DEFAULT_FD_STEP)]
    fd_step: f64,
    #[arg(long, default_value_t = numopt::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
    state_cap: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the flat `iter,J,p_0,…` table here
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    /// Surrogate to time; an untrained default D-GCN is used when absent
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `a..b` inclusive or a list
    #[arg(long, default_value = "5..9")]
    n_range: String,
    #[arg(long, default_value = "2..3")]
    t_range: String,
    /// Wall-clock budget per exact solve, seconds
    #[arg(long, default_value_t = 1000.0)]
    budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    p_edge: f64,
    #[arg(long, default_value_t = 5)]
    mc_reps: usize,
    #[arg(long, default_value_t = 21)]
    gnn_reps: usize,
    /// Also time both optimization backends for this many iterations on the ten-node instance
    #[arg(long)]
    backend_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<Model> {
    let f = File::open(path).map_err(|e| Error::Parameter(format!("cannot open checkpoint {}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(f))
}

fn load_rows(path: &Path) -> Result<Vec<data::DatasetRow>> {
    if !path.exists() {
        return Err(Error::Parameter(format!("dataset {} does not exist", path.display())));
    }
    data::load_dataset(path)
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let labeler: Labeler = a.labeler.parse()?;
    let spec = DatasetSpec {
        p_edge: a.p_edge,
        mode: a.mode.parse()?,
        state_cap: a.state_cap,
        ..DatasetSpec::new(a.n_list.clone(), a.t_list.clone(), a.count, labeler, a.seed)
    };
    let mut run = Run::new("gen-data", &spec);
    run.seed("seed", a.seed);
    let rows = data::generate_dataset_with(&spec, |n, t, k| eprintln!("cell n={n} T={t}: {k} rows"))?;
    data::save_dataset(&rows, &a.out)?;
    run.finish(&a.out)?;
    eprintln!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn solve(a: &SolveArgs) -> Result<()> {
    let inst = a.inst.instance()?;
    let opts = SolveOptions { state_cap: a.state_cap, ..SolveOptions::default().with_mode(a.inst.mode()?) };
    markov::check_state_cap(inst.n(), inst.t, a.state_cap)?;
    let started = Instant::now();
    let sol = markov::solve(&inst, &opts)?;
    let out = json!({
        "n": inst.n(),
        "T": inst.t,
        "edges": inst.graph.to_string(),
        "p": inst.p,
        "mode": sol.mode,
        "theta": sol.theta,
        "state_count": sol.state_count,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "damped": sol.damped,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    emit(Run::new("solve", a), a.out.as_deref(), &out)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let inst = a.inst.instance()?;
    let started = Instant::now();
    let r = sim::simulate(&inst, a.slots, a.seed, a.inst.mode()?)?;
    let out = json!({
        "n": inst.n(),
        "T": inst.t,
        "edges": inst.graph.to_string(),
        "p": inst.p,
        "mode": a.inst.mode()?,
        "theta": r.theta_hat,
        "standard_error": r.standard_errors(),
        "success_starts": r.success_starts,
        "slots": r.slots,
        "seed": r.seed,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    let mut run = Run::new("simulate", a);
    run.seed("seed", a.seed);
    emit(run, a.out.as_deref(), &out)
}

fn train(a: &TrainArgs) -> Result<()> {
    let rows = load_rows(&a.data)?;
    let split = a.split.apply(&rows)?;
    let config = ModelConfig {
        seed: a.seed,
        feature_mode: a.model.features.parse::<FeatureMode>()?,
        ..ModelConfig::sized(a.model.arch.parse::<LayerKind>()?, a.model.layers, a.model.hidden)
    };
    let hyper = TrainConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        clip_norm: a.clip_norm,
        plateau_factor: a.plateau_factor,
        patience: a.patience,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        min_lr: a.min_lr,
        seed: a.seed,
        shards: a.shards,
        ..TrainConfig::default()
    };
    let verbose = a.verbose;
    let (model, mut report) = data::train_with(Model::init(config)?, &split.train, &split.val, &hyper, |e| {
        if verbose {
            eprintln!("epoch {:>3}  train {:.3e}  val {:.3e}  lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
    })?;
    if !split.test.is_empty() {
        report.test = Some(data::evaluate(&model, &split.test)?);
    }
    write_checkpoint(&model, BufWriter::new(File::create(&a.out)?))?;
    let report_path = PathBuf::from(format!("{}.report.json", a.out.display()));
    io::write_json(&report_path, &report)?;
    let mut run = Run::new("train", a);
    run.seed("seed", a.seed);
    run.seed("split_seed", a.split.split_seed);
    run.input(&a.data);
    run.outputs.push(report_path.display().to_string());
    run.finish(&a.out)?;
    io::print_stdout(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let rows = load_rows(&a.data)?;
    let split = a.split.apply(&rows)?;
    let part = match a.part.as_str() {
        "train" => split.train,
        "val" => split.val,
        "test" => split.test,
        "all" => rows,
        other => return Err(Error::Parameter(format!("unknown split part {other:?}"))),
    };
    let m = data::evaluate(&model, &part)?;
    let out = json!({
        "part": a.part,
        "rows": part.len(),
        "nodes": part.iter().map(|r| r.n()).sum::<usize>(),
        "mse": m.mse,
        "mae": m.mae,
        "nmae": m.nmae,
    });
    let mut run = Run::new("eval", a);
    run.input(&a.checkpoint);
    run.input(&a.data);
    emit(run, a.out.as_deref(), &out)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let inst = a.inst.instance()?;
    let started = Instant::now();
    let theta = model.predict(&inst)?;
    let out = json!({
        "n": inst.n(),
        "T": inst.t,
        "edges": inst.graph.to_string(),
        "p": inst.p,
        "theta": theta,
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    let mut run = Run::new("predict", a);
    run.input(&a.checkpoint);
    emit(run, a.out.as_deref(), &out)
}

fn optimize(a: &OptimizeArgs) -> Result<()> {
    let mut prob = match a.preset.as_deref() {
        Some("chain3") => UtilityProblem::chain3(a.iters),
        Some("bench10") => numopt::bench10_problem(a.iters),
        Some(other) => return Err(Error::Parameter(format!("unknown preset {other:?}"))),
        None => {
            let p = a.p_init.clone().ok_or_else(|| Error::Parameter("--p-init is required without --preset".into()))?;
            let g = a.graph.load(p.len())?;
            let alpha = a.alpha.clone().unwrap_or_else(|| vec![1.0; p.len()]);
            let t = a.t.ok_or_else(|| Error::Parameter("--t is required without --preset".into()))?;
            UtilityProblem::new(g, t, alpha, p, a.iters)
        }
    };
    if let Some(p) = &a.p_init {
        prob.p_init = p.clone();
    }
    if let Some(al) = &a.alpha {
        prob.alpha = al.clone();
    }
    if let Some(t) = a.t {
        prob.t = t;
    }
    prob.lr = a.lr;
    prob.fd_step = a.fd_step;
    prob.eps = a.eps;
    prob.backend = a.backend.parse::<Backend>()?;
    prob.solve.state_cap = a.state_cap;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let traj = numopt::optimize(&prob, model.as_ref())?;
    let mut run = Run::new("optimize", a);
    if let Some(c) = &a.checkpoint {
        run.input(c);
    }
    if let Some(csv) = &a.csv {
        traj.write_csv(BufWriter::new(File::create(csv)?))?;
        run.outputs.push(csv.display().to_string());
    }
    eprintln!("J: {:.6} -> {:.6}", traj.initial_j(), traj.final_j);
    emit(run, a.out.as_deref(), &traj)
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let n_values = parse_range(&a.n_range).map_err(Error::Parameter)?;
    let t_values = parse_range(&a.t_range).map_err(Error::Parameter)?;
    let (model, model_source) = match &a.checkpoint {
        Some(p) => (load_model(p)?, p.display().to_string()),
        None => (Model::init(ModelConfig::default())?, "untrained default dgcn".to_string()),
    };
    let cfg = SweepConfig {
        seed: a.seed,
        p_edge: a.p_edge,
        mc_reps: a.mc_reps,
        gnn_reps: a.gnn_reps,
        ..SweepConfig::new(n_values, t_values, a.budget)
    };
    let rows = bench::timing_sweep(&cfg, &model, |r| {
        let mc = match r.mc.seconds() {
            Some(s) => format!("{s:.3e} s"),
            None => serde_json::to_string(&r.mc).unwrap_or_default(),
        };
        eprintln!("n={} T={}: exact {mc}, surrogate {:.3e} s", r.n, r.t, r.gnn_seconds);
    })?;
    let backends = match a.backend_iters {
        Some(k) => Some(numopt::bench_backends(&numopt::bench10_problem(k), &model)?),
        None => None,
    };
    let out = json!({
        "model": model_source,
        "config": cfg,
        "sweep": rows,
        "backends": backends,
    });
    let mut run = Run::new("bench", a);
    run.seed("seed", a.seed);
    emit(run, a.out.as_deref(), &out)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Resource => 4,
        ErrorClass::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot start {k} worker threads: {e}");
            return ExitCode::from(4);
        }
    }
    let res = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Optimize(a) => optimize(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
