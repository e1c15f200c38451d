//! Error metrics, order-of-accuracy fits, iso-contours and the benchmark
//! runner that turns a config into a report plus CSV tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{solve, DijkstraSolver, Solution};
use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::grid::{GridDomain, SourceSet};
use crate::grid_solvers::{FirstOrderSolver, SecondOrderSolver};
use crate::mesh::{make_sphere, norm3, perturb_vertices, TriMesh, Vec3};
use crate::mesh_solver::KimmelSethianSolver;
use crate::neural::{NeuralGridSolver, NeuralMeshSolver};
use crate::nn::NetworkWeights;

/// Mean and maximum pointwise relative error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub l1: f64,
    pub linf: f64,
}

fn check_lengths(u: &DistanceField, gt: &DistanceField) -> Result<()> {
    if u.len() != gt.len() {
        return Err(Error::Domain(format!(
            "field has {} values, ground truth {}",
            u.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// `|u - u_gt| / u_gt` averaged (L1) and maximized (L∞) over points with
/// `u_gt > exclusion`.
pub fn relative_errors(u: &DistanceField, gt: &DistanceField, exclusion: f64) -> Result<ErrorPair> {
    check_lengths(u, gt)?;
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for (&a, &b) in u.values().iter().zip(gt.values()) {
        if b > exclusion && b > 0.0 {
            let e = ((a - b) / b).abs();
            sum += e;
            max = max.max(e);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no point outside the exclusion radius".into()));
    }
    Ok(ErrorPair {
        l1: sum / n as f64,
        linf: max,
    })
}

/// Mean of `|u - u_gt|` over points with `u_gt > exclusion`.
pub fn mean_absolute_error(u: &DistanceField, gt: &DistanceField, exclusion: f64) -> Result<f64> {
    check_lengths(u, gt)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (&a, &b) in u.values().iter().zip(gt.values()) {
        if b > exclusion {
            sum += (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no point outside the exclusion radius".into()));
    }
    Ok(sum / n as f64)
}

/// Least-squares line through `(log h, log ε)`: returns `(slope r, C)` with
/// `ε ≈ C h^r`.
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::Argument("need at least two (h, error) pairs".into()));
    }
    if pairs.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(Error::Argument("spacings and errors must be positive".into()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("all spacings are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let r = sxy / sxx;
    Ok((r, (my - r * mx).exp()))
}

/// Contour polylines of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolineSet {
    pub level: f64,
    pub polylines: Vec<Vec<Vec3>>,
}

type EdgeKey = (usize, usize);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    (a.min(b), a.max(b))
}

// Crossing of `level` on edge (a, b), where exactly one end is >= level.
fn crossing(pa: Vec3, pb: Vec3, va: f64, vb: f64, level: f64) -> Vec3 {
    let t = (level - va) / (vb - va);
    std::array::from_fn(|k| pa[k] + t * (pb[k] - pa[k]))
}

/// Joins segments that share an edge crossing into polylines. Open chains
/// come first, then closed loops (first point repeated at the end).
fn chain_segments(segments: &[[(EdgeKey, Vec3); 2]]) -> Vec<Vec<Vec3>> {
    let mut at: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for end in seg {
            at.entry(end.0).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let walk = |start: usize, from: EdgeKey, used: &mut Vec<bool>| -> Vec<Vec3> {
        let mut line = Vec::new();
        let (mut s, mut entry) = (start, from);
        loop {
            used[s] = true;
            let seg = &segments[s];
            let (first, second) = if seg[0].0 == entry { (seg[0], seg[1]) } else { (seg[1], seg[0]) };
            if line.is_empty() {
                line.push(first.1);
            }
            line.push(second.1);
            let next = at[&second.0].iter().copied().find(|&t| !used[t]);
            match next {
                Some(t) => {
                    s = t;
                    entry = second.0;
                }
                None => break,
            }
        }
        line
    };
    // Open chains start at crossings shared by a single segment.
    let mut starts: Vec<(EdgeKey, usize)> = at
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(k, v)| (*k, v[0]))
        .collect();
    starts.sort_unstable();
    for (key, s) in starts {
        if !used[s] {
            out.push(walk(s, key, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            out.push(walk(s, segments[s][0].0, &mut used));
        }
    }
    out
}

/// Marching-squares contours of a grid field. Ambiguous cells are resolved
/// by the mean of the four corners. Levels outside the value range give
/// empty sets.
pub fn extract_grid_isolines(domain: &GridDomain, field: &DistanceField, levels: &[f64]) -> Result<Vec<IsolineSet>> {
    if field.len() != domain.len() {
        return Err(Error::Domain(format!(
            "field has {} values for {} grid points",
            field.len(),
            domain.len()
        )));
    }
    let u = field.values();
    let pos = |k: usize| {
        let p = domain.position(k);
        [p[0], p[1], 0.0]
    };
    let mut sets = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut segments = Vec::new();
        for j in 0..domain.ny() - 1 {
            for i in 0..domain.nx() - 1 {
                // Corners counter-clockwise from (i, j).
                let c = [
                    domain.index(i, j),
                    domain.index(i + 1, j),
                    domain.index(i + 1, j + 1),
                    domain.index(i, j + 1),
                ];
                if c.iter().any(|&k| !u[k].is_finite()) {
                    continue;
                }
                let above: Vec<bool> = c.iter().map(|&k| u[k] >= level).collect();
                let mut hits = Vec::with_capacity(4);
                for e in 0..4 {
                    let (a, b) = (c[e], c[(e + 1) % 4]);
                    if above[e] != above[(e + 1) % 4] {
                        hits.push((edge_key(a, b), crossing(pos(a), pos(b), u[a], u[b], level)));
                    }
                }
                match hits.len() {
                    2 => segments.push([hits[0], hits[1]]),
                    4 => {
                        let center = c.iter().map(|&k| u[k]).sum::<f64>() / 4.0;
                        // hits are on edges 0..4 in order; pair them so the
                        // center's side stays connected.
                        if (center >= level) == above[0] {
                            segments.push([hits[0], hits[1]]);
                            segments.push([hits[2], hits[3]]);
                        } else {
                            segments.push([hits[3], hits[0]]);
                            segments.push([hits[1], hits[2]]);
                        }
                    }
                    _ => {}
                }
            }
        }
        sets.push(IsolineSet {
            level,
            polylines: chain_segments(&segments),
        });
    }
    Ok(sets)
}

/// Per-triangle linear contours of a vertex field, chained across edges.
pub fn extract_mesh_isolines(mesh: &TriMesh, field: &DistanceField, levels: &[f64]) -> Result<Vec<IsolineSet>> {
    if field.len() != mesh.num_vertices() {
        return Err(Error::Domain(format!(
            "field has {} values for {} vertices",
            field.len(),
            mesh.num_vertices()
        )));
    }
    let u = field.values();
    let v = mesh.vertices();
    let mut sets = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut segments = Vec::new();
        for f in mesh.faces() {
            if f.iter().any(|&k| !u[k].is_finite()) {
                continue;
            }
            let mut hits = Vec::with_capacity(2);
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                if (u[a] >= level) != (u[b] >= level) {
                    hits.push((edge_key(a, b), crossing(v[a], v[b], u[a], u[b], level)));
                }
            }
            if hits.len() == 2 {
                segments.push([hits[0], hits[1]]);
            }
        }
        sets.push(IsolineSet {
            level,
            polylines: chain_segments(&segments),
        });
    }
    Ok(sets)
}

/// Isolines as CSV rows `series,level,x,y[,z]`; each polyline is its own
/// series named `<name>:<k>`.
pub fn isolines_to_csv(name: &str, sets: &[IsolineSet], with_z: bool) -> String {
    let mut out = String::from(if with_z { "series,level,x,y,z\n" } else { "series,level,x,y\n" });
    let mut k = 0;
    for set in sets {
        for line in &set.polylines {
            for p in line {
                let _ = write!(out, "{name}:{k},{},{},{}", set.level, p[0], p[1]);
                if with_z {
                    let _ = write!(out, ",{}", p[2]);
                }
                out.push('\n');
            }
            k += 1;
        }
    }
    out
}

/// Local solver selection shared by the benchmark runner and the CLI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverChoice {
    Fmm1,
    Fmm2,
    KimmelSethian,
    Dijkstra,
    Neural(PathBuf),
}

impl SolverChoice {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "fmm1" => Self::Fmm1,
            "fmm2" => Self::Fmm2,
            "kimmel-sethian" | "ks" => Self::KimmelSethian,
            "dijkstra" => Self::Dijkstra,
            _ => match s.strip_prefix("neural:") {
                Some(path) if !path.is_empty() => Self::Neural(PathBuf::from(path)),
                _ => return Err(Error::Argument(format!("unknown solver {s:?}"))),
            },
        })
    }

    pub fn name(&self) -> String {
        match self {
            Self::Fmm1 => "fmm1".into(),
            Self::Fmm2 => "fmm2".into(),
            Self::KimmelSethian => "kimmel-sethian".into(),
            Self::Dijkstra => "dijkstra".into(),
            Self::Neural(p) => format!("neural:{}", p.display()),
        }
    }

    /// Short label for file names and tables.
    pub fn label(&self) -> String {
        match self {
            Self::Neural(p) => format!(
                "neural-{}",
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ),
            other => other.name(),
        }
    }
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Argument(format!("cannot read weights file {}: {e}", path.display())))?;
    NetworkWeights::from_bytes(&bytes)
}

/// A solver ready to run on grids or meshes.
pub enum LoadedSolver {
    Fmm1,
    Fmm2,
    KimmelSethian,
    Dijkstra,
    NeuralGrid(NeuralGridSolver),
    NeuralMesh(NeuralMeshSolver),
}

impl LoadedSolver {
    pub fn load(choice: &SolverChoice) -> Result<Self> {
        Ok(match choice {
            SolverChoice::Fmm1 => Self::Fmm1,
            SolverChoice::Fmm2 => Self::Fmm2,
            SolverChoice::KimmelSethian => Self::KimmelSethian,
            SolverChoice::Dijkstra => Self::Dijkstra,
            SolverChoice::Neural(path) => {
                let w = load_weights(path)?;
                match w.spec() {
                    crate::nn::NetworkSpec::Grid(_) => Self::NeuralGrid(NeuralGridSolver::new(w)?),
                    crate::nn::NetworkSpec::Mesh(_) => Self::NeuralMesh(NeuralMeshSolver::new(w)?),
                }
            }
        })
    }

    pub fn solve_grid(&self, domain: &GridDomain, seeds: &[(usize, f64)]) -> Result<Solution> {
        match self {
            Self::Fmm1 => solve(domain, seeds, &FirstOrderSolver),
            Self::Fmm2 => solve(domain, seeds, &SecondOrderSolver),
            Self::Dijkstra => solve(domain, seeds, &DijkstraSolver),
            Self::NeuralGrid(s) => solve(domain, seeds, s),
            Self::KimmelSethian => Err(Error::Argument("kimmel-sethian runs on meshes only".into())),
            Self::NeuralMesh(_) => Err(Error::Argument("mesh network cannot run on a grid".into())),
        }
    }

    pub fn solve_mesh(&self, mesh: &TriMesh, seeds: &[(usize, f64)]) -> Result<Solution> {
        match self {
            Self::KimmelSethian => solve(mesh, seeds, &KimmelSethianSolver),
            Self::Dijkstra => solve(mesh, seeds, &DijkstraSolver),
            Self::NeuralMesh(s) => solve(mesh, seeds, s),
            Self::Fmm1 | Self::Fmm2 => Err(Error::Argument("fmm1/fmm2 run on grids only".into())),
            Self::NeuralGrid(_) => Err(Error::Argument("grid network cannot run on a mesh".into())),
        }
    }
}

/// Sources of the two-point benchmark on the unit square.
pub fn two_point_sources() -> SourceSet {
    SourceSet::points(&[[0.25, 0.5], [0.75, 0.5]]).expect("valid sources")
}

/// Default radius of the exactly initialized disk around point sources.
pub const DEFAULT_INIT_RADIUS: f64 = 0.1;
/// Default error exclusion radius in grid spacings.
pub const DEFAULT_EXCLUSION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n: usize,
    pub h: f64,
    pub l1: f64,
    pub linf: f64,
    /// Mean absolute error, the quantity fitted for the order of accuracy.
    pub mae: f64,
}

/// Solves the two-point benchmark at `h = 1/n` for every `n` with exact
/// values inside `init_radius` of the sources and errors measured beyond
/// `exclusion · h`.
pub fn two_point_study(
    solver: &LoadedSolver,
    ns: &[usize],
    init_radius: f64,
    exclusion: f64,
) -> Result<Vec<GridRow>> {
    let sources = two_point_sources();
    ns.iter()
        .map(|&n| {
            let (domain, u, gt) = two_point_solution(solver, n, &sources, init_radius)?;
            let cut = exclusion * domain.h();
            let e = relative_errors(&u, &gt, cut)?;
            Ok(GridRow {
                n,
                h: domain.h(),
                l1: e.l1,
                linf: e.linf,
                mae: mean_absolute_error(&u, &gt, cut)?,
            })
        })
        .collect()
}

fn two_point_solution(
    solver: &LoadedSolver,
    n: usize,
    sources: &SourceSet,
    init_radius: f64,
) -> Result<(GridDomain, DistanceField, DistanceField)> {
    if n < GridDomain::MIN_POINTS {
        return Err(Error::Argument(format!("grid size {n} too small")));
    }
    let domain = GridDomain::unit_square(1.0 / n as f64)?;
    let seeds = domain.seed_points(sources, init_radius.max(domain.h()));
    let u = solver.solve_grid(&domain, &seeds)?.field;
    let gt = DistanceField::new((0..domain.len()).map(|k| sources.distance(domain.position(k))).collect())?;
    Ok((domain, u, gt))
}

/// Exact geodesic distance on the unit sphere from vertex 0 (the north pole)
/// to every vertex direction.
pub fn pole_distances(vertices: &[Vec3]) -> Vec<f64> {
    let pole = vertices[0];
    let pn = norm3(pole);
    vertices
        .iter()
        .map(|v| {
            let d = (v[0] * pole[0] + v[1] * pole[1] + v[2] * pole[2]) / (norm3(*v) * pn);
            d.clamp(-1.0, 1.0).acos()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRow {
    pub level: u32,
    pub vertices: usize,
    /// Median edge length, the spacing used for order fits.
    pub h: f64,
    pub l1: f64,
    pub linf: f64,
}

/// Default geodesic radius of the exactly initialized cap around the pole.
pub const DEFAULT_SPHERE_INIT_RADIUS: f64 = 0.5;

/// The pole plus every vertex within geodesic distance `radius` of it, with
/// exact values.
pub fn pole_seeds(gt: &[f64], radius: f64) -> Vec<(usize, f64)> {
    (0..gt.len())
        .filter(|&k| k == 0 || gt[k] <= radius)
        .map(|k| (k, if k == 0 { 0.0 } else { gt[k] }))
        .collect()
}

/// Pole-source solves on subdivided unit spheres, with exact values inside
/// the cap of geodesic radius `init_radius`.
pub fn sphere_study(solver: &LoadedSolver, levels: &[u32], init_radius: f64) -> Result<Vec<SphereRow>> {
    levels
        .iter()
        .map(|&level| {
            let mesh = make_sphere(level)?;
            let gt = DistanceField::new(pole_distances(mesh.vertices()))?;
            let u = solver.solve_mesh(&mesh, &pole_seeds(gt.values(), init_radius))?.field;
            let e = relative_errors(&u, &gt, 0.0)?;
            Ok(SphereRow {
                level,
                vertices: mesh.num_vertices(),
                h: mesh.median_edge_length(),
                l1: e.l1,
                linf: e.linf,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    /// Noise standard deviation as a fraction of the bounding-box diagonal.
    pub sigma: f64,
    pub l1: f64,
    /// `l1` divided by the noise-free `l1`.
    pub inflation: f64,
}

/// Solves on a sphere whose vertices carry Gaussian noise, scoring against
/// the exact distances of the clean sphere (which also seed the initial
/// cap). Inflation factors are relative to the noise-free solve.
pub fn noise_study(
    solver: &LoadedSolver,
    level: u32,
    sigmas: &[f64],
    init_radius: f64,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    let clean = make_sphere(level)?;
    let gt = DistanceField::new(pole_distances(clean.vertices()))?;
    let seeds = pole_seeds(gt.values(), init_radius);
    let diagonal = clean.bounding_box_diagonal();
    let score = |sigma: f64| -> Result<f64> {
        let mesh = perturb_vertices(&clean, sigma * diagonal, seed)?;
        let u = solver.solve_mesh(&mesh, &seeds)?.field;
        Ok(relative_errors(&u, &gt, 0.0)?.l1)
    };
    let base = score(0.0)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let l1 = if sigma == 0.0 { base } else { score(sigma)? };
            Ok(NoiseRow {
                sigma,
                l1,
                inflation: l1 / base,
            })
        })
        .collect()
}

/// Benchmark configuration (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<GridBench>,
    #[serde(default)]
    pub sphere: Option<SphereBench>,
}

fn default_name() -> String {
    "benchmark".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBench {
    pub solvers: Vec<String>,
    pub n: Vec<usize>,
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
    /// In grid spacings.
    #[serde(default = "default_exclusion")]
    pub exclusion: f64,
    /// Isoline levels, drawn on the grid of size `isoline_n`.
    #[serde(default)]
    pub isolines: Vec<f64>,
    #[serde(default)]
    pub isoline_n: Option<usize>,
}

fn default_init_radius() -> f64 {
    DEFAULT_INIT_RADIUS
}

fn default_sphere_init_radius() -> f64 {
    DEFAULT_SPHERE_INIT_RADIUS
}

fn default_exclusion() -> f64 {
    DEFAULT_EXCLUSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereBench {
    pub solvers: Vec<String>,
    pub levels: Vec<u32>,
    /// Geodesic radius of the exactly initialized cap around the pole.
    #[serde(default = "default_sphere_init_radius")]
    pub init_radius: f64,
    /// Noise levels as fractions of the bounding-box diagonal.
    #[serde(default)]
    pub noise: Vec<f64>,
    #[serde(default)]
    pub noise_level: Option<u32>,
    #[serde(default)]
    pub isolines: Vec<f64>,
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            for s in &g.solvers {
                SolverChoice::parse(s)?;
            }
            if g.n.iter().any(|&n| n < GridDomain::MIN_POINTS) {
                return Err(Error::Argument("grid sizes must be at least 5".into()));
            }
            if !(g.init_radius >= 0.0 && g.exclusion >= 0.0) {
                return Err(Error::Argument("radii must be non-negative".into()));
            }
        }
        if let Some(s) = &self.sphere {
            for name in &s.solvers {
                SolverChoice::parse(name)?;
            }
            if s.levels.iter().chain(&s.noise_level).any(|&l| l > crate::mesh::MAX_SPHERE_LEVEL) {
                return Err(Error::ResourceLimit("sphere level too high".into()));
            }
            if !(s.init_radius >= 0.0) {
                return Err(Error::Argument("radii must be non-negative".into()));
            }
            if s.noise.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Argument("noise levels must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub order: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSeries {
    pub solver: String,
    pub rows: Vec<GridRow>,
    pub fit: Option<OrderFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSeries {
    pub solver: String,
    pub rows: Vec<SphereRow>,
    pub fit: Option<OrderFit>,
    pub noise: Vec<NoiseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    /// The configuration as run, echoed for reproducibility.
    pub config: String,
    pub grid: Vec<GridSeries>,
    pub sphere: Vec<SphereSeries>,
    /// Files written next to the report, relative to the output directory.
    pub files: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }
}

fn fit_of(pairs: &[(f64, f64)]) -> Option<OrderFit> {
    fit_order(pairs).ok().map(|(order, constant)| OrderFit { order, constant })
}

/// Runs every study in `config`, writing `report.json`, one CSV per table,
/// isoline CSVs and `timings.json` (wall-clock seconds, kept apart so the
/// report itself is reproducible byte for byte) into `out_dir`.
pub fn run_benchmark(config: &BenchConfig, out_dir: &Path) -> Result<Report> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut timings = serde_json::Map::new();
    let write = |name: String, body: &str, files: &mut Vec<String>| -> Result<()> {
        std::fs::write(out_dir.join(&name), body)?;
        files.push(name);
        Ok(())
    };
    let mut grid = Vec::new();
    if let Some(g) = &config.grid {
        let sources = two_point_sources();
        for name in &g.solvers {
            let choice = SolverChoice::parse(name)?;
            let solver = LoadedSolver::load(&choice)?;
            let start = Instant::now();
            let rows = two_point_study(&solver, &g.n, g.init_radius, g.exclusion)?;
            timings.insert(format!("grid/{}", choice.label()), start.elapsed().as_secs_f64().into());
            let fit = fit_of(&rows.iter().map(|r| (r.h, r.mae)).collect::<Vec<_>>());
            let mut csv = String::from("n,h,l1,linf,mae\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.n, r.h, r.l1, r.linf, r.mae);
            }
            write(format!("grid_{}.csv", choice.label()), &csv, &mut files)?;
            if !g.isolines.is_empty() {
                let n = g.isoline_n.or(g.n.first().copied()).unwrap_or(50);
                let (domain, u, gt) = two_point_solution(&solver, n, &sources, g.init_radius)?;
                let mut text = isolines_to_csv(&choice.label(), &extract_grid_isolines(&domain, &u, &g.isolines)?, false);
                let exact = isolines_to_csv("exact", &extract_grid_isolines(&domain, &gt, &g.isolines)?, false);
                text.extend(exact.lines().skip(1).map(|l| format!("{l}\n")));
                write(format!("isolines_grid_{}.csv", choice.label()), &text, &mut files)?;
            }
            grid.push(GridSeries {
                solver: choice.name(),
                rows,
                fit,
            });
        }
    }
    let mut sphere = Vec::new();
    if let Some(s) = &config.sphere {
        for name in &s.solvers {
            let choice = SolverChoice::parse(name)?;
            let solver = LoadedSolver::load(&choice)?;
            let start = Instant::now();
            let rows = sphere_study(&solver, &s.levels, s.init_radius)?;
            let noise = if s.noise.is_empty() {
                Vec::new()
            } else {
                let level = s.noise_level.or(s.levels.last().copied()).unwrap_or(4);
                noise_study(&solver, level, &s.noise, s.init_radius, config.seed)?
            };
            timings.insert(format!("sphere/{}", choice.label()), start.elapsed().as_secs_f64().into());
            let fit = fit_of(&rows.iter().map(|r| (r.h, r.l1)).collect::<Vec<_>>());
            let mut csv = String::from("level,vertices,h,l1,linf\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.level, r.vertices, r.h, r.l1, r.linf);
            }
            write(format!("sphere_{}.csv", choice.label()), &csv, &mut files)?;
            if !noise.is_empty() {
                let mut csv = String::from("sigma,l1,inflation\n");
                for r in &noise {
                    let _ = writeln!(csv, "{},{},{}", r.sigma, r.l1, r.inflation);
                }
                write(format!("noise_{}.csv", choice.label()), &csv, &mut files)?;
            }
            if !s.isolines.is_empty() {
                let level = s.levels.last().copied().unwrap_or(3);
                let mesh = make_sphere(level)?;
                let seeds = pole_seeds(&pole_distances(mesh.vertices()), s.init_radius);
                let u = solver.solve_mesh(&mesh, &seeds)?.field;
                let text = isolines_to_csv(&choice.label(), &extract_mesh_isolines(&mesh, &u, &s.isolines)?, true);
                write(format!("isolines_sphere_{}.csv", choice.label()), &text, &mut files)?;
            }
            sphere.push(SphereSeries {
                solver: choice.name(),
                rows,
                fit,
                noise,
            });
        }
    }
    files.push("report.json".into());
    let report = Report {
        name: config.name.clone(),
        seed: config.seed,
        config: config.to_toml(),
        grid,
        sphere,
        files,
    };
    std::fs::write(out_dir.join("report.json"), report.to_json())?;
    let timings = serde_json::to_string_pretty(&serde_json::Value::Object(timings)).expect("serializable");
    std::fs::write(out_dir.join("timings.json"), timings + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(v: Vec<f64>) -> DistanceField {
        DistanceField::new(v).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        let gt = field(vec![0.0, 1.0, 2.0, 4.0]);
        assert_eq!(relative_errors(&gt, &gt, 0.0).unwrap(), ErrorPair { l1: 0.0, linf: 0.0 });
        let scaled = field(gt.values().iter().map(|v| v * 1.1).collect());
        let e = relative_errors(&scaled, &gt, 0.0).unwrap();
        assert!((e.l1 - 0.1).abs() < 1e-12 && (e.linf - 0.1).abs() < 1e-12);
        assert!(matches!(relative_errors(&field(vec![1.0]), &gt, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fit_order_examples() {
        let (r, _) = fit_order(&[(0.1, 0.01), (0.05, 0.005)]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let (r, c) = fit_order(&[(0.1, 0.01), (0.05, 0.0025)]).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);
        assert!(fit_order(&[(0.1, 0.0), (0.05, 0.1)]).is_err());
        assert!(fit_order(&[(0.1, 0.1)]).is_err());
    }

    #[test]
    fn fit_order_with_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let h = 0.1 / 2f64.powi(k);
                (h, 3.0 * h.powf(1.5) * (1.0 + rng.random_range(-0.01..0.01)))
            })
            .collect();
        let (r, _) = fit_order(&pairs).unwrap();
        assert!((1.4..=1.6).contains(&r));
    }

    #[test]
    fn linear_field_isoline_is_vertical() {
        let g = GridDomain::unit_square(0.1).unwrap();
        let u = field((0..g.len()).map(|k| g.position(k)[0]).collect());
        let sets = extract_grid_isolines(&g, &u, &[0.5, 0.55, -1.0]).unwrap();
        for set in &sets[..2] {
            assert_eq!(set.polylines.len(), 1);
            let line = &set.polylines[0];
            assert_eq!(line.len(), 11);
            assert!(line.iter().all(|p| (p[0] - set.level).abs() < 1e-12));
        }
        assert!(sets[2].polylines.is_empty());
    }

    #[test]
    fn point_source_isoline_is_circle() {
        let h = 0.02;
        let g = GridDomain::unit_square(h).unwrap();
        let c = [0.5, 0.5];
        let u = field((0..g.len()).map(|k| crate::grid::norm(crate::grid::sub(g.position(k), c))).collect());
        let sets = extract_grid_isolines(&g, &u, &[0.1, 0.2, 0.3]).unwrap();
        let mut prev_max = 0.0f64;
        for set in &sets {
            assert_eq!(set.polylines.len(), 1);
            let line = &set.polylines[0];
            assert_eq!(line.first(), line.last());
            let radii: Vec<f64> = line.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).collect();
            assert!(radii.iter().all(|r| (r - set.level).abs() <= h));
            let min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > prev_max, "isolines must be nested");
            prev_max = radii.iter().cloned().fold(0.0, f64::max);
        }
    }

    #[test]
    fn sphere_isolines_are_latitude_circles() {
        let m = make_sphere(3).unwrap();
        let u = field(pole_distances(m.vertices()));
        let sets = extract_mesh_isolines(&m, &u, &[1.0]).unwrap();
        assert_eq!(sets[0].polylines.len(), 1);
        for p in &sets[0].polylines[0] {
            // Interpolated along chords, so slightly inside the sphere.
            let angle = (p[2] / norm3(*p)).acos();
            assert!((angle - 1.0).abs() < 0.05);
        }
        let csv = isolines_to_csv("s", &sets, true);
        assert!(csv.starts_with("series,level,x,y,z\n"));
        assert!(csv.lines().nth(1).unwrap().starts_with("s:0,1,"));
    }

    #[test]
    fn solver_names_parse() {
        assert_eq!(SolverChoice::parse("fmm2").unwrap(), SolverChoice::Fmm2);
        assert_eq!(
            SolverChoice::parse("neural:w.deik").unwrap(),
            SolverChoice::Neural(PathBuf::from("w.deik"))
        );
        assert!(SolverChoice::parse("neural:").is_err());
        assert!(SolverChoice::parse("fmm3").is_err());
        let missing = LoadedSolver::load(&SolverChoice::Neural("/nonexistent/w.deik".into()));
        assert!(matches!(missing, Err(Error::Argument(_))));
    }

    #[test]
    fn config_round_trip_and_rejects_unknown_keys() {
        let text = "name = \"t\"\nseed = 3\n[grid]\nsolvers = [\"fmm1\"]\nn = [20, 40]\n";
        let cfg = BenchConfig::parse(text).unwrap();
        assert_eq!(cfg.grid.as_ref().unwrap().init_radius, DEFAULT_INIT_RADIUS);
        assert_eq!(BenchConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert!(BenchConfig::parse("bogus = 1").is_err());
        assert!(BenchConfig::parse("[grid]\nsolvers = [\"x\"]\nn = [20]").is_err());
    }

    #[test]
    fn small_benchmark_structure_and_determinism() {
        let cfg = BenchConfig::parse(
            "name = \"small\"\nseed = 1\n[grid]\nsolvers = [\"fmm1\"]\nn = [50]\nisolines = [0.2]\n\
             [sphere]\nsolvers = [\"kimmel-sethian\"]\nlevels = [1, 2]\nnoise = [0.0, 0.005, 0.01]\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = run_benchmark(&cfg, dir.path()).unwrap();
        assert_eq!(a.grid.len(), 1);
        assert_eq!(a.grid[0].rows.len(), 1);
        assert!(a.grid[0].fit.is_none());
        assert_eq!(a.sphere[0].noise.len(), 3);
        assert_eq!(a.sphere[0].noise[0].inflation, 1.0);
        let first = std::fs::read(dir.path().join("report.json")).unwrap();
        for f in &a.files {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let iso = std::fs::read_to_string(dir.path().join("isolines_grid_fmm1.csv")).unwrap();
        assert!(iso.lines().any(|l| l.starts_with("fmm1:")));
        assert!(iso.lines().any(|l| l.starts_with("exact:")));
        run_benchmark(&cfg, dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), first);
    }

    proptest! {
        #[test]
        fn relative_errors_scale_invariant(
            vals in proptest::collection::vec((0.1f64..10.0, 0.5f64..1.5), 1..30),
            lambda in 0.01f64..100.0,
        ) {
            let gt: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let u: Vec<f64> = vals.iter().map(|v| v.0 * v.1).collect();
            let a = relative_errors(&field(u.clone()), &field(gt.clone()), 0.0).unwrap();
            let b = relative_errors(
                &field(u.iter().map(|x| x * lambda).collect()),
                &field(gt.iter().map(|x| x * lambda).collect()),
                0.0,
            ).unwrap();
            prop_assert!((a.l1 - b.l1).abs() < 1e-12 * a.l1.max(1.0));
            prop_assert!((a.linf - b.linf).abs() < 1e-12 * a.linf.max(1.0));
        }

        #[test]
        fn fit_recovers_planted_slope(r in 0.5f64..3.0, c in 0.1f64..10.0) {
            let pairs: Vec<(f64, f64)> = (0..5).map(|k| { let h = 0.2 / 2f64.powi(k); (h, c * h.powf(r)) }).collect();
            let (fr, fc) = fit_order(&pairs).unwrap();
            prop_assert!((fr - r).abs() < 0.05);
            prop_assert!((fc - c).abs() < 1e-6 * c);
        }
    }
}
