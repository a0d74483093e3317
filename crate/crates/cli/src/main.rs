use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dfg_core::autodiff::{GradCheckOptions, ParamStore};
use dfg_core::detail::DegreeAssignment;
use dfg_core::graph::{build_global_graph, build_local_graph};
use dfg_core::io::{load_xyz, save_ply_scalars, save_xyz};
use dfg_core::metrics::{chamfer_l1_with, chamfer_l2_with, fidelity_with, MetricOptions};
use dfg_core::pipeline::{
    check_instance, complete, degree_map, gradcheck_instance, gradcheck_instance_with, init_params, train_toy,
    write_curve_csv, DegreeMode, ModelConfig, ToyTask, TrainConfig,
};
use dfg_core::sampling::canonical_start;
use dfg_core::PointCloud;

mod config;

use config::Config;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dfg", version, about = "Degree-flexible point cloud completion tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detail scores and per-point degrees of a cloud, as a PLY file.
    DegreeMap(DegreeMapArgs),
    /// Emit the local or global neighbour graph as JSON.
    BuildGraph(BuildGraphArgs),
    /// Run the completion model on a partial cloud.
    Complete(CompleteArgs),
    /// Train on a toy completion task.
    TrainToy(TrainToyArgs),
    /// Compare two clouds.
    Eval(EvalArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter checkpoint; random initialisation when absent.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Initialisation seed, overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DegreeMapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Local,
    Global,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    channel: ChannelArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-stage clouds and degree maps.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Sphere,
    Cube,
    Cylinder,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    #[value(name = "cd-l1")]
    CdL1,
    #[value(name = "cd-l2")]
    CdL2,
    Fd,
}

impl MetricArg {
    fn label(self) -> &'static str {
        match self {
            MetricArg::CdL1 => "cd-l1",
            MetricArg::CdL2 => "cd-l2",
            MetricArg::Fd => "fd",
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Report the value multiplied by 1000.
    #[arg(long)]
    x1000: bool,
    /// Halve the two-sided Chamfer sum.
    #[arg(long)]
    halved: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_adjoint_fault: bool,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

struct Model {
    cfg: ModelConfig,
    params: ParamStore,
}

fn load_model(args: &ModelArgs) -> Result<Model> {
    let file = load_config(args.config.as_deref())?;
    let cfg = file.model(ModelConfig::default())?;
    let seed = args.seed.or(file.seed()?).unwrap_or(0);
    let fresh = init_params(&cfg, seed);
    let params = match &args.ckpt {
        Some(path) => {
            let p = ParamStore::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            p.check_shapes(&fresh).context("checkpoint does not match the configuration")?;
            p
        }
        None => fresh,
    };
    Ok(Model { cfg, params })
}

fn load_cloud(path: &Path) -> Result<PointCloud> {
    load_xyz(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_degree_map(a: &DegreeMapArgs) -> Result<u8> {
    let cloud = load_cloud(&a.input)?;
    let m = load_model(&a.model)?;
    let map = degree_map(&cloud, &m.cfg, &m.params)?;
    let degrees: Vec<f64> = map.degrees.degrees.iter().map(|&d| d as f64).collect();
    save_ply_scalars(&cloud, &[("detail", &map.detail.values), ("degree", &degrees)], &a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "sum_detail={} budget={} sum_degree={} min_degree={} max_degree={}",
        map.detail.sum(),
        map.degrees.budget,
        map.degrees.total(),
        map.degrees.degrees.iter().min().unwrap(),
        map.degrees.degrees.iter().max().unwrap()
    );
    Ok(0)
}

fn cmd_build_graph(a: &BuildGraphArgs) -> Result<u8> {
    let cloud = load_cloud(&a.input)?;
    let m = load_model(&a.model)?;
    let n = cloud.len();
    let uniform = match m.cfg.block.degree_mode {
        DegreeMode::Uniform(k) => {
            if k > n.saturating_sub(1) {
                bail!("uniform degree {k} needs more than {n} points");
            }
            Some(DegreeAssignment::uniform(n, k))
        }
        DegreeMode::Flexible => None,
    };
    let graph = match a.channel {
        ChannelArg::Local => {
            let degrees = match uniform {
                Some(d) => d,
                None => degree_map(&cloud, &m.cfg, &m.params)?.degrees,
            };
            build_local_graph(&cloud, &degrees)?
        }
        ChannelArg::Global => {
            let map = degree_map(&cloud, &m.cfg, &m.params)?;
            let degrees = uniform.unwrap_or(map.degrees);
            build_global_graph(&cloud, &map.features, &degrees, m.cfg.block.anchor_count, canonical_start(&cloud))?.0
        }
    };
    graph.save_json(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("nodes={} edges={}", graph.n_nodes, graph.edge_count());
    Ok(0)
}

fn cmd_complete(a: &CompleteArgs) -> Result<u8> {
    let cloud = load_cloud(&a.input)?;
    let m = load_model(&a.model)?;
    let result = complete(&cloud, &m.cfg, &m.params)?;
    save_xyz(result.output(), &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(dir) = &a.diagnostics {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, stage) in result.stages.iter().enumerate() {
            save_xyz(stage, dir.join(format!("stage_{i}.xyz")))?;
        }
        for (i, b) in result.blocks.iter().enumerate() {
            let degrees: Vec<f64> = b.degrees.degrees.iter().map(|&d| d as f64).collect();
            save_ply_scalars(
                &result.stages[i],
                &[("detail", &b.detail.values), ("degree", &degrees)],
                dir.join(format!("degrees_{}.ply", i + 1)),
            )?;
        }
    }
    println!("points={}", result.output().len());
    Ok(0)
}

fn cmd_train_toy(a: &TrainToyArgs) -> Result<u8> {
    let file = load_config(a.config.as_deref())?;
    let cfg = file.model(ModelConfig::default())?;
    let mut train = file.train(TrainConfig::default())?;
    train.iters = a.iters;
    if let Some(s) = a.seed {
        train.seed = s;
    }
    let task = match a.task {
        TaskArg::Sphere => ToyTask::SphereMinusCap,
        TaskArg::Cube => ToyTask::CubeMinusFace,
        TaskArg::Cylinder => ToyTask::CylinderMinusHalf,
    };
    let out = train_toy(task, &cfg, &train)?;
    out.params.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let f = File::create(&a.curve).with_context(|| format!("writing {}", a.curve.display()))?;
    write_curve_csv(&out.curve, cfg.stage_sizes().len(), BufWriter::new(f))?;
    println!(
        "initial_loss={} final_loss={} initial_cd_l1={} final_cd_l1={}",
        out.initial.loss, out.last.loss, out.initial.cd_l1, out.last.cd_l1
    );
    Ok(0)
}

fn cmd_eval(a: &EvalArgs) -> Result<u8> {
    let pred = load_cloud(&a.pred)?;
    let gt = load_cloud(&a.gt)?;
    let opts = MetricOptions { halved: a.halved, scale_factor: if a.x1000 { 1e3 } else { 1.0 } };
    let m = match a.metric {
        MetricArg::CdL1 => chamfer_l1_with(&pred, &gt, &opts)?,
        MetricArg::CdL2 => chamfer_l2_with(&pred, &gt, &opts)?,
        MetricArg::Fd => fidelity_with(&gt, &pred, &opts)?,
    };
    println!("{}={:.9}", a.metric.label(), m.reported());
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let file = load_config(a.config.as_deref())?;
    let base = gradcheck_instance(a.seed).cfg;
    let inst = gradcheck_instance_with(file.model(base)?, a.seed);
    let opts = GradCheckOptions { seed: a.seed, inject_fault: a.inject_adjoint_fault, ..Default::default() };
    let report = check_instance(&inst, &opts)?;
    for (name, err) in &report.per_param {
        log::info!("{name}: {err:e}");
    }
    println!(
        "max_rel_error={:e} checked={} excluded={} tolerance={:e}",
        report.max_rel_error, report.checked, report.excluded, GRADCHECK_TOLERANCE
    );
    let ok = report.checked > 0 && report.max_rel_error.is_finite() && report.max_rel_error <= GRADCHECK_TOLERANCE;
    Ok(if ok { 0 } else { 2 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Command::DegreeMap(a) => cmd_degree_map(a),
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::Complete(a) => cmd_complete(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
