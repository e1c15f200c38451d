use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eikonal::bench::{
    extract_grid_isolines, extract_mesh_isolines, fit_order, isolines_to_csv, mean_absolute_error,
    relative_errors, run_benchmark, two_point_study, BenchConfig, LoadedSolver, SolverChoice,
};
use eikonal::dataset::{gen_grid_dataset, gen_mesh_corpus, train_on_dataset, Dataset, GridDatasetConfig, MeshCorpusConfig};
use eikonal::field::DistanceField;
use eikonal::grid::{GridDomain, SourceSet};
use eikonal::mesh::{load_mesh, make_sphere, perturb_vertices, MeshFormat, TriMesh};
use eikonal::nn::{MlpSpec, NetworkSpec, SetNetSpec, TrainConfig, DEFAULT_SENTINEL};
use eikonal::{Error, Result};

#[derive(Parser)]
#[command(name = "eikonal", version, about = "Fast-marching Eikonal solvers, training and benchmarks")]
struct Cli {
    /// TOML file of default flag values: top-level keys for every command,
    /// `[command-name]` tables for one command. Command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Upper bound on worker threads. Solves currently run on one thread.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve on a regular grid and write the field as CSV.
    SolveGrid(SolveGrid),
    /// Solve on a triangle mesh and write one value per vertex.
    SolveMesh(SolveMesh),
    /// Generate a training dataset (JSON lines).
    GenData(GenData),
    /// Train a network on a dataset and write a weights file.
    Train(Train),
    /// Run a benchmark config, or score a field against ground truth.
    Eval(Eval),
    /// Order-of-accuracy study on a grid benchmark.
    Ooa(Ooa),
    /// Extract iso-contours of a grid or mesh field.
    Isolines(Isolines),
    /// Write a subdivided unit sphere as OFF.
    MakeSphere(MakeSphere),
}

#[derive(Args)]
struct SolveGrid {
    /// Source file (`point x y`, `circle cx cy r`, `polyline x1 y1 ...`).
    #[arg(long)]
    sources: PathBuf,
    /// Points per side. Defaults to the unit square at spacing `--h`.
    #[arg(long, required_unless_present = "h")]
    n: Option<usize>,
    /// Grid spacing. Defaults to `1/(n-1)`.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value = "fmm2")]
    solver: String,
    /// Points within this distance of a source get exact values. Defaults to `h`.
    #[arg(long)]
    init_radius: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveMesh {
    /// OFF or OBJ file, chosen by extension.
    #[arg(long)]
    mesh: PathBuf,
    /// Source vertex indices.
    #[arg(long, value_delimiter = ',', required = true)]
    sources: Vec<usize>,
    #[arg(long, default_value = "kimmel-sethian")]
    solver: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Grid,
    Mesh,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Smallest grid resolution `1/h` (grid data).
    #[arg(long, default_value_t = 20)]
    n_min: usize,
    /// Largest grid resolution `1/h` (grid data).
    #[arg(long, default_value_t = 400)]
    n_max: usize,
    /// Sphere subdivision levels in the corpus (mesh data).
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    sphere_levels: Vec<u32>,
    /// Side lengths of jittered planar grids in the corpus (mesh data).
    #[arg(long, value_delimiter = ',', default_value = "17,33")]
    planar_sizes: Vec<usize>,
    /// Random sources drawn per corpus mesh (mesh data).
    #[arg(long, default_value_t = 16)]
    fields_per_mesh: usize,
    /// Skip the random rotation of mesh examples.
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = DEFAULT_SENTINEL, allow_negative_numbers = true)]
    sentinel: f64,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    arch: Kind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Learning-rate factor applied after every epoch.
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    /// Expand grid training examples with the 8 lattice symmetries.
    #[arg(long)]
    symmetries: bool,
}

#[derive(Args)]
struct Eval {
    /// Benchmark config (TOML); results go to `--out`.
    #[arg(long, conflicts_with_all = ["field", "gt"])]
    bench: Option<PathBuf>,
    /// Output directory for `--bench`.
    #[arg(long, requires = "bench")]
    out: Option<PathBuf>,
    /// Computed field: grid CSV or one value per line.
    #[arg(long, requires = "gt")]
    field: Option<PathBuf>,
    /// Ground truth in the same layout as `--field`.
    #[arg(long, requires = "field")]
    gt: Option<PathBuf>,
    /// Points with ground truth at or below this are skipped.
    #[arg(long, default_value_t = 0.0)]
    exclusion: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    TwoPoint,
}

#[derive(Args)]
struct Ooa {
    #[arg(long, value_enum, default_value = "two-point")]
    benchmark: Benchmark,
    /// Comma-separated solver names.
    #[arg(long, value_delimiter = ',', required = true)]
    solvers: Vec<String>,
    /// Number of resolutions, doubling from `--n0`.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=8))]
    levels: u32,
    #[arg(long, default_value_t = 25)]
    n0: usize,
    #[arg(long, default_value_t = eikonal::bench::DEFAULT_INIT_RADIUS)]
    init_radius: f64,
    /// Error exclusion radius in grid spacings.
    #[arg(long, default_value_t = eikonal::bench::DEFAULT_EXCLUSION)]
    exclusion: f64,
    /// CSV of `solver,n,h,epsilon,l1,linf`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the fitted slopes here (they are always printed).
    #[arg(long)]
    slopes: Option<PathBuf>,
}

#[derive(Args)]
struct Isolines {
    /// Grid CSV, or one value per vertex with `--mesh`.
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    levels: Vec<f64>,
    /// Series name prefix.
    #[arg(long, default_value = "u")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeSphere {
    #[arg(long)]
    level: u32,
    /// Gaussian vertex noise as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

const COMMANDS: [&str; 8] = [
    "solve-grid",
    "solve-mesh",
    "gen-data",
    "train",
    "eval",
    "ooa",
    "isolines",
    "make-sphere",
];

/// Inserts flags from the `--config` file that are not already given on the
/// command line, right after the subcommand name.
fn merge_config(argv: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut path = None;
    for (k, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(k + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(pos) = argv.iter().position(|a| COMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| format!("config {path}: {}", e.message()))?;
    let mut entries = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(section) if key == &argv[pos] => entries.extend(section.iter()),
            toml::Value::Table(_) => {}
            _ => entries.push((key, value)),
        }
    }
    let given = |flag: &str| argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
    let mut extra = Vec::new();
    for (key, value) in entries {
        let flag = format!("--{key}");
        if given(&flag) {
            continue;
        }
        let scalar = |v: &toml::Value| match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            _ => Err(format!("config key `{key}` has an unsupported value")),
        };
        match value {
            toml::Value::Boolean(true) => extra.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<std::result::Result<Vec<_>, _>>()?;
                extra.push(format!("{flag}={}", parts.join(",")));
            }
            v => extra.push(format!("{flag}={}", scalar(v)?)),
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, extra);
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Argument(format!("cannot write {}: {e}", path.display())))
}

fn read_mesh(path: &Path) -> Result<TriMesh> {
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("off") => MeshFormat::Off,
        Some("obj") => MeshFormat::Obj,
        _ => return Err(Error::Argument(format!("{}: expected an .off or .obj file", path.display()))),
    };
    let bytes = std::fs::read(path).map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))?;
    load_mesh(&bytes, format)
}

fn solve_grid(a: SolveGrid) -> Result<()> {
    let sources = SourceSet::parse(&read_text(&a.sources)?)?;
    let domain = match (a.n, a.h) {
        (Some(n), Some(h)) => GridDomain::new(n, n, h)?,
        (Some(n), None) => GridDomain::new(n, n, 1.0 / (n.max(2) - 1) as f64)?,
        (None, Some(h)) => GridDomain::unit_square(h)?,
        (None, None) => unreachable!("clap requires --n or --h"),
    };
    let solver = LoadedSolver::load(&SolverChoice::parse(&a.solver)?)?;
    let radius = a.init_radius.unwrap_or(domain.h());
    let seeds = domain.seed_points(&sources, radius);
    if seeds.is_empty() {
        return Err(Error::Argument(format!("no grid point within {radius} of a source")));
    }
    let start = Instant::now();
    let solution = solver.solve_grid(&domain, &seeds)?;
    write_file(&a.out, solution.field.to_grid_csv(&domain)?)?;
    println!(
        "solved {} points in {:.3} s",
        domain.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn solve_mesh(a: SolveMesh) -> Result<()> {
    let mesh = read_mesh(&a.mesh)?;
    let solver = LoadedSolver::load(&SolverChoice::parse(&a.solver)?)?;
    if let Some(&bad) = a.sources.iter().find(|&&v| v >= mesh.num_vertices()) {
        return Err(Error::Argument(format!(
            "source vertex {bad} out of range ({} vertices)",
            mesh.num_vertices()
        )));
    }
    let seeds: Vec<(usize, f64)> = a.sources.iter().map(|&v| (v, 0.0)).collect();
    let start = Instant::now();
    let solution = solver.solve_mesh(&mesh, &seeds)?;
    write_file(&a.out, solution.field.to_text())?;
    println!(
        "solved {} vertices in {:.3} s",
        mesh.num_vertices(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn gen_data(a: GenData, seed: u64) -> Result<()> {
    let data = match a.kind {
        Kind::Grid => gen_grid_dataset(
            a.count,
            &GridDatasetConfig {
                n_range: (a.n_min, a.n_max),
                sentinel: a.sentinel,
            },
            seed,
        )?,
        Kind::Mesh => gen_mesh_corpus(
            a.count,
            &MeshCorpusConfig {
                sphere_levels: a.sphere_levels,
                planar_sizes: a.planar_sizes,
                fields_per_mesh: a.fields_per_mesh,
                sentinel: a.sentinel,
                augment: !a.no_augment,
                ..MeshCorpusConfig::default()
            },
            seed,
        )?,
    };
    write_file(&a.out, data.to_jsonl())?;
    println!("wrote {} examples", data.examples.len());
    Ok(())
}

fn train(a: Train, seed: u64) -> Result<()> {
    let data = Dataset::parse_jsonl(&read_text(&a.data)?)?;
    let spec = match a.arch {
        Kind::Grid => NetworkSpec::Grid(MlpSpec::grid()),
        Kind::Mesh => NetworkSpec::Mesh(SetNetSpec::mesh()),
    };
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        learning_rate_decay: a.decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        validation_fraction: a.validation_fraction,
        ..TrainConfig::default()
    };
    let (weights, report) = train_on_dataset(&data, spec, &config, a.symmetries, seed)?;
    write_file(&a.out, weights.to_bytes())?;
    println!(
        "trained {} epochs, kept epoch {} with validation loss {:e}",
        report.train_loss.len(),
        report.best_epoch,
        report.best_validation_loss
    );
    Ok(())
}

fn read_field(path: &Path) -> Result<DistanceField> {
    let text = read_text(path)?;
    if text.starts_with("i,j,x,y,u") {
        Ok(DistanceField::parse_grid_csv(&text)?.1)
    } else {
        DistanceField::parse_text(&text)
    }
}

fn eval(a: Eval, seed: u64) -> Result<()> {
    if let Some(bench) = a.bench {
        let mut config = BenchConfig::parse(&read_text(&bench)?)?;
        config.seed = seed;
        let out = a.out.unwrap_or_else(|| PathBuf::from("."));
        let report = run_benchmark(&config, &out)?;
        print!("{}", report.to_json());
        return Ok(());
    }
    let (Some(field), Some(gt)) = (a.field, a.gt) else {
        return Err(Error::Argument("give --bench, or --field with --gt".into()));
    };
    let u = read_field(&field)?;
    let gt = read_field(&gt)?;
    let e = relative_errors(&u, &gt, a.exclusion)?;
    let mae = mean_absolute_error(&u, &gt, a.exclusion)?;
    println!("l1,linf,mae\n{},{},{}", e.l1, e.linf, mae);
    Ok(())
}

fn ooa(a: Ooa) -> Result<()> {
    let ns: Vec<usize> = (0..a.levels).map(|k| a.n0 << k).collect();
    let mut csv = String::from("solver,n,h,epsilon,l1,linf\n");
    let mut slopes = String::from("solver,order,constant\n");
    for name in &a.solvers {
        let choice = SolverChoice::parse(name)?;
        let solver = LoadedSolver::load(&choice)?;
        let rows = match a.benchmark {
            Benchmark::TwoPoint => two_point_study(&solver, &ns, a.init_radius, a.exclusion)?,
        };
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{},{},{}", choice.name(), r.n, r.h, r.mae, r.l1, r.linf);
        }
        let (order, constant) = fit_order(&rows.iter().map(|r| (r.h, r.mae)).collect::<Vec<_>>())?;
        let _ = writeln!(slopes, "{},{order},{constant}", choice.name());
    }
    write_file(&a.out, &csv)?;
    if let Some(path) = &a.slopes {
        write_file(path, &slopes)?;
    }
    print!("{slopes}");
    Ok(())
}

fn isolines(a: Isolines) -> Result<()> {
    let text = read_text(&a.field)?;
    let csv = match &a.mesh {
        Some(mesh) => {
            let mesh = read_mesh(mesh)?;
            let u = DistanceField::parse_text(&text)?;
            isolines_to_csv(&a.name, &extract_mesh_isolines(&mesh, &u, &a.levels)?, true)
        }
        None => {
            let (domain, u) = DistanceField::parse_grid_csv(&text)?;
            isolines_to_csv(&a.name, &extract_grid_isolines(&domain, &u, &a.levels)?, false)
        }
    };
    write_file(&a.out, csv)
}

fn make_sphere_cmd(a: MakeSphere, seed: u64) -> Result<()> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Error::Argument("noise must be non-negative".into()));
    }
    let mut mesh = make_sphere(a.level)?;
    if a.noise > 0.0 {
        let sigma = a.noise * mesh.bounding_box_diagonal();
        mesh = perturb_vertices(&mesh, sigma, seed)?;
    }
    write_file(&a.out, mesh.to_off())
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SolveGrid(a) => solve_grid(a),
        Command::SolveMesh(a) => solve_mesh(a),
        Command::GenData(a) => gen_data(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Ooa(a) => ooa(a),
        Command::Isolines(a) => isolines(a),
        Command::MakeSphere(a) => make_sphere_cmd(a, seed),
    }
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
