mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use gnnpcg::bench::{
    emit_tables, generalization_sweep, median_iterations, run_benchmark, summarize, BenchOptions, Method, TableFormat,
};
use gnnpcg::fem::{generate_dataset, load_dataset, save_dataset, DatasetTuple};
use gnnpcg::gnn::{GnnHyper, GnnModel};
use gnnpcg::mesh::{generate_disk, generate_unit_square, TriangleMesh};
use gnnpcg::pcg::{pcg_solve, SolveOptions};
use gnnpcg::precond::PreconditionerKind;
use gnnpcg::sparse::mtx;
use gnnpcg::train::{train, LossKind, Sample, Selection, TrainConfig};
use gnnpcg::{Error, Result};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "gnnpcg", version, about = "Learned and classic preconditioners for PCG")]
struct Cli {
    /// Seed for every randomized step; overrides seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training and benchmarks.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration file with a `schema_version` field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or inspect triangle meshes.
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Generate PDE datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a preconditioner network on a dataset.
    Train(TrainArgs),
    /// Benchmark preconditioners on a dataset.
    Bench(BenchArgs),
    /// Solve one Matrix Market system.
    Solve(SolveArgs),
    /// Benchmark a model on parameter-shifted test sets.
    Sweep(SweepArgs),
    /// Inspect model checkpoints.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Subcommand, Debug)]
enum MeshCommand {
    /// Write a generated mesh as OBJ.
    Gen(MeshGenArgs),
    /// Print mesh statistics.
    Info { path: PathBuf },
}

#[derive(Args, Debug)]
struct MeshGenArgs {
    /// `square` or `disk`.
    shape: String,
    /// Subdivisions per side of the unit square.
    #[arg(long, default_value_t = 22)]
    k: usize,
    /// Vertex counts of the disk rings, innermost first.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 24, 32, 48])]
    rings: Vec<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Simulate trajectories from the config's dataset section.
    Gen {
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum ModelCommand {
    Info { path: PathBuf },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `data gen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, model.json and loss_curve.csv.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `data` or `naive`.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Network size preset, `heat` or `poisson`; the config's model section
    /// takes precedence.
    #[arg(long, default_value = "heat")]
    preset: String,
    /// Add the initial-guess head.
    #[arg(long)]
    x0_head: bool,
    /// Keep the epoch that solves this many training systems fastest.
    #[arg(long)]
    select: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated: identity, jacobi, gauss_seidel, ic0, ic2, learned,
    /// learned+x0.
    #[arg(long, value_delimiter = ',', default_value = "jacobi,gauss_seidel,ic0,ic2")]
    methods: Vec<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// `test`, `train` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "csv")]
    format: TableFormat,
    /// Print one aggregate row per method instead of one row per system.
    #[arg(long)]
    summary: bool,
    /// Also compute condition numbers.
    #[arg(long)]
    kappa: bool,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Write the table here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    rhs: PathBuf,
    #[arg(long, default_value = "ic0")]
    method: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1e-8")]
    thresholds: Vec<f64>,
    /// Write the solution vector as Matrix Market.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Shifts in training standard deviations; overrides the config.
    #[arg(long, value_delimiter = ',')]
    shifts: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "jacobi,gauss_seidel,ic0,learned")]
    methods: Vec<String>,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    #[arg(long)]
    kappa: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::TooLarge { .. } => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config { schema_version: config::SCHEMA_VERSION, ..Config::default() },
    };
    match cli.command {
        Command::Mesh(MeshCommand::Gen(a)) => mesh_gen(&a),
        Command::Mesh(MeshCommand::Info { path }) => {
            print!("{}", mesh_summary(&TriangleMesh::load_obj_file(&path)?));
            Ok(())
        }
        Command::Data(DataCommand::Gen { out }) => data_gen(&config, cli.seed, &out),
        Command::Train(a) => train_cmd(&config, cli.seed, &a),
        Command::Bench(a) => bench_cmd(&config, cli.threads, &a),
        Command::Solve(a) => solve_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&config, cli.seed, cli.threads, &a),
        Command::Model(ModelCommand::Info { path }) => {
            print!("{}", model_summary(&GnnModel::load(&path)?));
            Ok(())
        }
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(Error::from)
}

fn mesh_gen(a: &MeshGenArgs) -> Result<()> {
    let mesh = match a.shape.as_str() {
        "square" => generate_unit_square(a.k)?,
        "disk" => generate_disk(&a.rings)?,
        other => return Err(Error::Config(format!("unknown mesh shape {other}; use square or disk"))),
    };
    write_out(&a.out, &mesh.to_obj())?;
    print!("{}", mesh_summary(&mesh));
    Ok(())
}

fn mesh_summary(mesh: &TriangleMesh) -> String {
    let (lo, hi) = mesh.bounding_box();
    format!(
        "vertices {}\ntriangles {}\nedges {}\nboundary loops {}\nboundary vertices {}\narea {:.6}\nbounding box [{}, {}] x [{}, {}]\n",
        mesh.n_vertices(),
        mesh.triangles().len(),
        mesh.edges().len(),
        mesh.boundary_loops().len(),
        mesh.boundary_vertices().len(),
        mesh.total_area(),
        lo[0],
        hi[0],
        lo[1],
        hi[1],
    )
}

fn data_gen(config: &Config, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = config.dataset()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate_dataset(&cfg)?;
    save_dataset(&ds, out)?;
    println!(
        "{}: {} train and {} test systems of size {} written to {}",
        ds.name,
        ds.train_tuples().len(),
        ds.test_tuples().len(),
        ds.train_tuples().first().or(ds.test_tuples().first()).map_or(0, |t| t.a.n()),
        out.display()
    );
    Ok(())
}

fn hyper_for(config: &Config, preset: &str, x0_head: bool) -> Result<GnnHyper> {
    let h = match (config.model, preset) {
        (Some(h), _) => h,
        (None, "heat") | (None, "wave") => GnnHyper::heat(),
        (None, "poisson") => GnnHyper::poisson(),
        (None, other) => return Err(Error::Config(format!("unknown preset {other}"))),
    };
    Ok(if x0_head { h.with_x0_head() } else { h })
}

fn train_cmd(config: &Config, seed: Option<u64>, a: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let mut tc: TrainConfig = config.train.clone().unwrap_or_default();
    if let Some(s) = seed {
        tc.seed = s;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        tc.batch_size = b;
    }
    if let Some(l) = a.loss {
        tc.objective.loss = l;
    }
    if let Some(p) = a.select {
        tc.selection = Some(Selection { probe: p, ..tc.selection.unwrap_or_default() });
    }
    tc.output_dir = Some(a.out.clone());
    tc.validate()?;
    let hyper = hyper_for(config, &a.preset, a.x0_head)?;
    let model = GnnModel::new(hyper, tc.seed)?;
    let samples: Vec<Sample> = ds.train_tuples().into_iter().map(Sample::from_tuple).collect::<Result<_>>()?;
    if samples.is_empty() {
        return Err(Error::Config("dataset has no training systems".into()));
    }
    let outcome = train(&model, &samples, &tc)?;
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.batch_loss);
    println!("trained {} steps, final batch loss {last:e}", outcome.curve.len());
    if let Some(e) = outcome.selected_epoch {
        println!("selected epoch {e}");
    }
    println!("model written to {}", a.out.join("model.json").display());
    Ok(())
}

fn parse_methods(names: &[String], model: Option<&Path>) -> Result<Vec<Method>> {
    let mut loaded: Option<Arc<GnnModel>> = None;
    let mut learned = |x0: bool| -> Result<Method> {
        let path = model.ok_or_else(|| Error::Config("learned methods need --model".into()))?;
        if loaded.is_none() {
            loaded = Some(Arc::new(GnnModel::load(path)?));
        }
        Ok(Method::Learned { model: loaded.clone().unwrap(), x0 })
    };
    names
        .iter()
        .map(|n| match n.trim() {
            "learned" => learned(false),
            "learned+x0" => learned(true),
            other => match other.parse::<PreconditionerKind>()? {
                PreconditionerKind::Learned => learned(false),
                k => Ok(Method::Classic(k)),
            },
        })
        .collect()
}

fn bench_options(config: &Config, threads: Option<usize>, kappa: bool) -> BenchOptions {
    let mut opts = config.bench.clone().unwrap_or_default();
    opts.kappa |= kappa;
    if threads.is_some() {
        opts.threads = threads;
    }
    opts
}

fn bench_cmd(config: &Config, threads: Option<usize>, a: &BenchArgs) -> Result<()> {
    let mut opts = bench_options(config, threads, a.kappa);
    if let Some(t) = &a.thresholds {
        opts.thresholds = t.clone();
    }
    if let Some(r) = a.repeats {
        opts.repeats = r;
    }
    SolveOptions::with_thresholds(&opts.thresholds).validate()?;
    let methods = parse_methods(&a.methods, a.model.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let tuples: Vec<&DatasetTuple> = match a.split.as_str() {
        "test" => ds.test_tuples(),
        "train" => ds.train_tuples(),
        "all" => ds.train_tuples().into_iter().chain(ds.test_tuples()).collect(),
        other => return Err(Error::Config(format!("unknown split {other}"))),
    };
    let records = run_benchmark(&ds.name, &tuples, &methods, &opts)?;
    let unconverged = records.iter().filter(|r| !r.converged()).count();
    if unconverged > 0 {
        log::warn!("{unconverged} of {} solves did not reach the smallest threshold", records.len());
    }
    let table = if a.summary { emit_tables(&summarize(&records), a.format) } else { emit_tables(&records, a.format) };
    match &a.out {
        Some(p) => write_out(p, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn solve_cmd(a: &SolveArgs) -> Result<()> {
    let m = mtx::read_matrix_file(&a.matrix)?;
    let b = mtx::read_vector_file(&a.rhs)?;
    let method = parse_methods(std::slice::from_ref(&a.method), a.model.as_deref())?.remove(0);
    let (p, start) = method.prepare(&m, &b)?;
    let opts = SolveOptions { thresholds: a.thresholds.clone(), x0: start, ..SolveOptions::default() };
    let (x, report) = pcg_solve(&m, &b, &p, &opts)?;
    for h in &report.hits {
        match h.iterations {
            Some(i) => println!("{:e}: {i} iterations", h.threshold),
            None => println!("{:e}: not reached", h.threshold),
        }
    }
    println!("true relative residual {:e}", report.true_residual);
    if let Some(out) = &a.out {
        write_out(out, &mtx::write_vector(&x))?;
    }
    if !report.converged {
        return Err(Error::NonConvergence(format!("{} iterations without reaching the threshold", report.iterations)));
    }
    Ok(())
}

fn sweep_cmd(config: &Config, seed: Option<u64>, threads: Option<usize>, a: &SweepArgs) -> Result<()> {
    let mut base = config.dataset()?;
    if let Some(s) = seed {
        base.seed = s;
    }
    let shifts = match (&a.shifts, &config.sweep) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => s.shifts.clone(),
        (None, None) => vec![0.0, 1.0, 3.0, 5.0],
    };
    let opts = bench_options(config, threads, a.kappa);
    let methods = parse_methods(&a.methods, Some(&a.model))?;
    let groups = generalization_sweep(&base, &shifts, &methods, &opts)?;
    let mut all = Vec::new();
    for (shift, records) in &groups {
        for m in &methods {
            let name = m.name();
            let rows: Vec<_> = records.iter().filter(|r| r.method == name).collect();
            let t = *opts.thresholds.last().unwrap_or(&1e-8);
            let med = median_iterations(&rows, t).map_or("-".to_string(), |v| v.to_string());
            let conv = rows.iter().filter(|r| r.converged()).count();
            eprintln!("shift {shift}: {name} converged {conv}/{} median iterations@{t:e} {med}", rows.len());
        }
        all.extend(summarize(records));
    }
    print!("{}", emit_tables(&all, a.format));
    Ok(())
}

fn model_summary(model: &GnnModel) -> String {
    let h = model.hyper();
    let mut s = format!(
        "parameters {}\nhidden layers {} width {}\nmessage passing rounds {} hidden layers {} width {}\ninitial-guess head {}\nstandardized inputs {}\n",
        model.n_parameters(),
        h.l,
        h.h,
        h.n_mp,
        h.l_mp,
        h.h_mp,
        model.has_x0_head(),
        model.normalize(),
    );
    for (name, t) in model.param_names().iter().zip(model.params()) {
        s.push_str(&format!("  {name} [{} x {}]\n", t.rows, t.cols));
    }
    s
}
