//! Supervised examples for the local-solver networks.
//!
//! An example is a patch around a center point whose members are marked
//! visited exactly when their ground-truth distance is below the center's.
//! Visited values and geometry go through the same normalization as
//! inference; the target is the center's normalized ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, PatchMode, SourcePrimitive, SourceSet, PATCH_OFFSETS};
use crate::grid_solvers::{GridPatchView, Slot};
use crate::mesh::{norm3, sub3, MeshPatch, PatchMember, TriMesh};
use crate::neural::{mesh_rotation_augment, normalize_grid_patch, normalize_mesh_patch, NormalizationRecord};
use crate::nn::{train_with_validation, NetInput, NetworkSpec, NetworkWeights, TrainConfig, TrainReport};

pub const GENERATOR: &str = "eikonal-dataset";
pub const GENERATOR_VERSION: u32 = 1;

/// Tried before giving up on a stratum; far above what any family needs.
const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    Grid,
    Mesh,
}

/// Normalized member data: 12 value slots for grids, `(dx, dy, dz, u)`
/// rows for meshes. Non-visited slots hold the sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Members {
    Values(Vec<f64>),
    Rows(Vec<[f64; 4]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Source family name, e.g. `points`, `circle`, `polyline`, `sphere`.
    pub family: String,
    /// Source configuration id (grids: the example index; meshes: field index).
    pub config: u64,
    /// Center point id in its domain.
    pub center: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub kind: ExampleKind,
    pub members: Members,
    pub mask: Vec<bool>,
    /// Normalized grid spacing (grids only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub target: f64,
    pub bias: f64,
    pub scale: f64,
    pub provenance: Provenance,
}

impl TrainingExample {
    pub fn record(&self) -> NormalizationRecord {
        NormalizationRecord {
            bias: self.bias,
            scale: self.scale,
        }
    }

    pub fn visited_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn to_input(&self) -> NetInput {
        match &self.members {
            Members::Values(v) => {
                let mut x = v.clone();
                x.push(self.h.unwrap_or(0.0));
                NetInput::Vector(x)
            }
            Members::Rows(r) => NetInput::Set(r.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(m.to_string()));
        match (&self.kind, &self.members) {
            (ExampleKind::Grid, Members::Values(v)) => {
                if v.len() != 12 || self.mask.len() != 12 {
                    return bad("grid example needs 12 members");
                }
                if self.h.is_none() {
                    return bad("grid example without h");
                }
            }
            (ExampleKind::Mesh, Members::Rows(r)) => {
                if r.is_empty() || r.len() != self.mask.len() {
                    return bad("mesh example member/mask length mismatch");
                }
            }
            _ => return bad("members do not match example kind"),
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.target.is_finite() {
            return bad("invalid normalization");
        }
        if !self.mask.iter().any(|&m| m) {
            return bad("example without visited members");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub generator: String,
    pub version: u32,
    pub seed: u64,
    pub kind: ExampleKind,
    pub count: usize,
    pub sentinel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<TrainingExample>,
}

impl Dataset {
    fn new(kind: ExampleKind, seed: u64, sentinel: f64, examples: Vec<TrainingExample>) -> Self {
        Self {
            header: DatasetHeader {
                generator: GENERATOR.into(),
                version: GENERATOR_VERSION,
                seed,
                kind,
                count: examples.len(),
                sentinel,
            },
            examples,
        }
    }

    /// Header line followed by one JSON record per example.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("serializable");
        out.push('\n');
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "missing header line"))?;
        let header: DatasetHeader = serde_json::from_str(first).map_err(|e| Error::parse(1, e.to_string()))?;
        if header.generator != GENERATOR {
            return Err(Error::parse(1, format!("unknown generator {:?}", header.generator)));
        }
        let mut examples = Vec::with_capacity(header.count.min(1 << 20));
        for (k, line) in lines {
            let e: TrainingExample = serde_json::from_str(line).map_err(|e| Error::parse(k + 1, e.to_string()))?;
            if e.kind != header.kind {
                return Err(Error::parse(k + 1, "example kind differs from header"));
            }
            e.validate().map_err(|err| Error::parse(k + 1, err.to_string()))?;
            examples.push(e);
        }
        if examples.len() != header.count {
            return Err(Error::Format(format!(
                "header declares {} examples, found {}",
                header.count,
                examples.len()
            )));
        }
        Ok(Self { header, examples })
    }

    /// `(input, target)` pairs for training.
    pub fn pairs(&self) -> Vec<(NetInput, f64)> {
        self.examples.iter().map(|e| (e.to_input(), e.target)).collect()
    }
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDatasetConfig {
    /// Grid resolutions are drawn log-uniformly from `h = 1/n`, `n` in this range.
    pub n_range: (usize, usize),
    pub sentinel: f64,
}

impl Default for GridDatasetConfig {
    fn default() -> Self {
        Self {
            n_range: (20, 400),
            sentinel: crate::nn::DEFAULT_SENTINEL,
        }
    }
}

/// Samples one source configuration: 40% point sets (1 to 3 points), 30%
/// circles, 30% polylines (3 to 6 vertices), all inside the unit square.
pub fn sample_sources(rng: &mut ChaCha8Rng) -> (String, SourceSet) {
    let point = |rng: &mut ChaCha8Rng| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let pick: f64 = rng.random_range(0.0..1.0);
    let (family, prims) = if pick < 0.4 {
        let n = rng.random_range(1..=3);
        ("points", (0..n).map(|_| SourcePrimitive::Point(point(rng))).collect())
    } else if pick < 0.7 {
        let center = point(rng);
        let radius = log_uniform(rng, 0.05, 0.5);
        ("circle", vec![SourcePrimitive::Circle { center, radius }])
    } else {
        let n = rng.random_range(3..=6);
        ("polyline", vec![SourcePrimitive::Polyline((0..n).map(|_| point(rng)).collect())])
    };
    (family.to_string(), SourceSet::new(prims).expect("sampled sources are valid"))
}

// A point on a random primitive of the set.
fn point_on(rng: &mut ChaCha8Rng, sources: &SourceSet) -> [f64; 2] {
    let prims = sources.primitives();
    match &prims[rng.random_range(0..prims.len())] {
        SourcePrimitive::Point(p) => *p,
        SourcePrimitive::Circle { center, radius } => {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        }
        SourcePrimitive::Polyline(vs) => {
            let k = rng.random_range(0..vs.len() - 1);
            let t: f64 = rng.random_range(0.0..1.0);
            [vs[k][0] + t * (vs[k + 1][0] - vs[k][0]), vs[k][1] + t * (vs[k + 1][1] - vs[k][1])]
        }
    }
}

/// Visited-count requirement for example `index`: one in ten sparse
/// (at most 3 visited), one in ten dense (at least 9), the rest free.
fn stratum_accepts(index: usize, visited: usize) -> bool {
    match index % 10 {
        0 => visited <= 3,
        1 => visited >= 9,
        _ => true,
    }
}

/// One grid example from the exact distance field of `sources` at lattice
/// point `center` of `domain`. `None` when the center lies on a source.
pub fn grid_example(
    domain: &GridDomain,
    sources: &SourceSet,
    center: usize,
    sentinel: f64,
) -> Result<Option<(TrainingExample, f64)>> {
    let (i, j) = domain.ij(center);
    let members = domain.grid_patch(i, j, PatchMode::Masked)?;
    let u_center = sources.distance(domain.position(center));
    if !(u_center > 0.0) {
        return Ok(None);
    }
    let mut slots = [Slot::Absent; 12];
    for (slot, member) in slots.iter_mut().zip(members) {
        if let Some(q) = member {
            let u = sources.distance(domain.position(q));
            *slot = if u < u_center { Slot::Visited(u) } else { Slot::Unvisited };
        }
    }
    let view = GridPatchView { h: domain.h(), slots };
    if !slots.iter().any(|s| s.visited().is_some()) {
        return Ok(None);
    }
    let (input, record) = normalize_grid_patch(&view, sentinel)?;
    let example = TrainingExample {
        kind: ExampleKind::Grid,
        members: Members::Values(input[..12].to_vec()),
        mask: slots.iter().map(|s| s.visited().is_some()).collect(),
        h: Some(input[12]),
        target: record.normalize(u_center),
        bias: record.bias,
        scale: record.scale,
        provenance: Provenance {
            family: String::new(),
            config: 0,
            center: center as u64,
        },
    };
    Ok(Some((example, u_center)))
}

/// Grid examples from random source configurations on the unit square.
/// Half of the centers are uniform lattice points, half are placed at a
/// log-uniform distance from a source. Deterministic per seed and
/// independent of generation order.
pub fn gen_grid_dataset(count: usize, config: &GridDatasetConfig, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Argument("example count must be at least 1".into()));
    }
    let (lo, hi) = config.n_range;
    if lo < GridDomain::MIN_POINTS || hi < lo {
        return Err(Error::Argument(format!("invalid resolution range {lo}..{hi}")));
    }
    let examples = (0..count)
        .map(|k| grid_example_at(k, config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(ExampleKind::Grid, seed, config.sentinel, examples))
}

fn grid_example_at(k: usize, config: &GridDatasetConfig, seed: u64) -> Result<TrainingExample> {
    let mut rng = example_rng(seed, k);
    let (lo, hi) = config.n_range;
    for _ in 0..MAX_ATTEMPTS {
        let n = log_uniform(&mut rng, lo as f64, hi as f64 + 1.0).floor() as usize;
        let n = n.clamp(lo, hi);
        let domain = GridDomain::unit_square(1.0 / n as f64)?;
        let (family, sources) = sample_sources(&mut rng);
        let center = if rng.random_bool(0.5) {
            rng.random_range(0..domain.len())
        } else {
            let p = point_on(&mut rng, &sources);
            let d = log_uniform(&mut rng, domain.h(), 0.5);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let snap = |x: f64, m: usize| ((x / domain.h()).round().clamp(0.0, (m - 1) as f64)) as usize;
            domain.index(snap(p[0] + d * a.cos(), domain.nx()), snap(p[1] + d * a.sin(), domain.ny()))
        };
        let Some((mut example, _)) = grid_example(&domain, &sources, center, config.sentinel)? else {
            continue;
        };
        if !stratum_accepts(k, example.visited_count()) {
            continue;
        }
        example.provenance.family = family;
        example.provenance.config = k as u64;
        return Ok(example);
    }
    Err(Error::ResourceLimit(format!("no acceptable grid example for index {k}")))
}

/// Slot permutations of the eight grid symmetries (rotations and
/// reflections of the lattice), identity first. `perm[k]` is the slot that
/// slot `k` moves to.
pub fn grid_symmetries() -> [[usize; 12]; 8] {
    let maps: [fn(isize, isize) -> (isize, isize); 8] = [
        |x, y| (x, y),
        |x, y| (-y, x),
        |x, y| (-x, -y),
        |x, y| (y, -x),
        |x, y| (-x, y),
        |x, y| (x, -y),
        |x, y| (y, x),
        |x, y| (-y, -x),
    ];
    maps.map(|f| {
        std::array::from_fn(|k| {
            let (di, dj) = PATCH_OFFSETS[k];
            let t = f(di, dj);
            PATCH_OFFSETS.iter().position(|&o| o == t).expect("patch is symmetric")
        })
    })
}

/// The eight symmetric copies of a grid example; the target is unchanged
/// because the exact distance field transforms with the lattice.
pub fn grid_symmetric_copies(example: &TrainingExample) -> Vec<TrainingExample> {
    let Members::Values(v) = &example.members else {
        return vec![example.clone()];
    };
    grid_symmetries()
        .iter()
        .map(|perm| {
            let mut values = vec![0.0; 12];
            let mut mask = vec![false; 12];
            for k in 0..12 {
                values[perm[k]] = v[k];
                mask[perm[k]] = example.mask[k];
            }
            TrainingExample {
                members: Members::Values(values),
                mask,
                ..example.clone()
            }
        })
        .collect()
}

/// A mesh with one ground-truth distance field.
#[derive(Debug, Clone, Copy)]
pub struct MeshField<'a> {
    pub mesh: &'a TriMesh,
    pub distances: &'a [f64],
    pub family: &'a str,
}

/// One mesh example at `center`, or `None` when no two-ring member is closer
/// to the source than the center.
pub fn mesh_example(field: MeshField<'_>, center: usize, sentinel: f64) -> Result<Option<(TrainingExample, f64)>> {
    let mesh = field.mesh;
    let u = field.distances;
    if u.len() != mesh.num_vertices() {
        return Err(Error::Argument(format!(
            "field has {} values for {} vertices",
            u.len(),
            mesh.num_vertices()
        )));
    }
    let u_center = u[center];
    if !(u_center > 0.0) || !mesh.one_ring(center).iter().any(|&q| u[q] < u_center) {
        return Ok(None);
    }
    let c = mesh.vertices()[center];
    let patch = MeshPatch {
        center,
        members: mesh
            .two_ring(center)
            .iter()
            .map(|&q| PatchMember {
                vertex: q,
                offset: sub3(mesh.vertices()[q], c),
                value: u[q],
                visited: u[q] < u_center,
            })
            .collect(),
    };
    let (rows, record) = normalize_mesh_patch(&patch, sentinel)?;
    let example = TrainingExample {
        kind: ExampleKind::Mesh,
        members: Members::Rows(rows),
        mask: patch.members.iter().map(|m| m.visited).collect(),
        h: None,
        target: record.normalize(u_center),
        bias: record.bias,
        scale: record.scale,
        provenance: Provenance {
            family: field.family.to_string(),
            config: 0,
            center: center as u64,
        },
    };
    Ok(Some((example, u_center)))
}

/// Mesh examples drawn uniformly over fields and vertices, each rotated by
/// its own random rotation when `augment` is set.
pub fn gen_mesh_dataset(count: usize, fields: &[MeshField<'_>], sentinel: f64, augment: bool, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Argument("example count must be at least 1".into()));
    }
    if fields.is_empty() {
        return Err(Error::Argument("no meshes given".into()));
    }
    for f in fields {
        if f.distances.len() != f.mesh.num_vertices() {
            return Err(Error::Argument(format!(
                "field has {} values for {} vertices",
                f.distances.len(),
                f.mesh.num_vertices()
            )));
        }
    }
    let mut examples = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = example_rng(seed, k);
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let fi = rng.random_range(0..fields.len());
            let v = rng.random_range(0..fields[fi].mesh.num_vertices());
            if let Some((mut e, _)) = mesh_example(fields[fi], v, sentinel)? {
                e.provenance.config = fi as u64;
                found = Some(e);
                break;
            }
        }
        let mut e = found.ok_or_else(|| Error::ResourceLimit(format!("no acceptable mesh example for index {k}")))?;
        if augment {
            if let Members::Rows(rows) = &e.members {
                e.members = Members::Rows(mesh_rotation_augment(rows, rng.random()));
            }
        }
        examples.push(e);
    }
    Ok(Dataset::new(ExampleKind::Mesh, seed, sentinel, examples))
}

/// Random point source on the unit sphere and the exact distance of every vertex.
pub fn sphere_field(mesh: &TriMesh, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = norm3(p);
        if n > 0.1 && n <= 1.0 {
            break p.map(|c| c / n);
        }
    };
    mesh.vertices()
        .iter()
        .map(|v| {
            let n = norm3(*v);
            let d = (v[0] * s[0] + v[1] * s[1] + v[2] * s[2]) / n;
            d.clamp(-1.0, 1.0).acos()
        })
        .collect()
}

/// Random in-plane point source over the mesh's bounding box and the
/// Euclidean distance of every vertex.
pub fn planar_field(mesh: &TriMesh, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in mesh.vertices() {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let s: [f64; 2] = std::array::from_fn(|a| rng.random_range(lo[a]..=hi[a]));
    mesh.vertices()
        .iter()
        .map(|v| (v[0] - s[0]).hypot(v[1] - s[1]))
        .collect()
}

/// Trains on a dataset, holding out its first `validation_fraction` of
/// examples. With `symmetries`, every grid training example is expanded
/// into its 8 lattice-symmetric copies (the held-out part is left as is).
pub fn train_on_dataset(
    data: &Dataset,
    spec: NetworkSpec,
    config: &TrainConfig,
    symmetries: bool,
    seed: u64,
) -> Result<(NetworkWeights, TrainReport)> {
    let kind = match spec {
        NetworkSpec::Grid(_) => ExampleKind::Grid,
        NetworkSpec::Mesh(_) => ExampleKind::Mesh,
    };
    if data.header.kind != kind {
        return Err(Error::Argument(format!(
            "dataset holds {:?} examples but the network is for {kind:?}",
            data.header.kind
        )));
    }
    if symmetries && kind != ExampleKind::Grid {
        return Err(Error::Argument("lattice symmetries apply to grid data only".into()));
    }
    let n = data.examples.len();
    if n < 2 {
        return Err(Error::Argument("need at least two examples".into()));
    }
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let pair = |e: &TrainingExample| (e.to_input(), e.target);
    let validation: Vec<_> = data.examples[..n_val].iter().map(pair).collect();
    let training: Vec<_> = if symmetries {
        data.examples[n_val..].iter().flat_map(grid_symmetric_copies).map(|e| pair(&e)).collect()
    } else {
        data.examples[n_val..].iter().map(pair).collect()
    };
    let config = TrainConfig {
        sentinel: data.header.sentinel,
        ..config.clone()
    };
    train_with_validation(&training, &validation, spec, &config, seed)
}

/// Meshes and source fields behind a generated mesh dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshCorpusConfig {
    pub sphere_levels: Vec<u32>,
    /// Side lengths (in vertices) of jittered planar grids.
    pub planar_sizes: Vec<usize>,
    pub planar_jitter: f64,
    pub fields_per_mesh: usize,
    pub sentinel: f64,
    pub augment: bool,
}

impl Default for MeshCorpusConfig {
    fn default() -> Self {
        Self {
            sphere_levels: vec![2, 3],
            planar_sizes: vec![17, 33],
            planar_jitter: 0.2,
            fields_per_mesh: 16,
            sentinel: crate::nn::DEFAULT_SENTINEL,
            augment: true,
        }
    }
}

/// Builds the corpus meshes, draws `fields_per_mesh` random sources on each
/// and samples `count` examples from them.
pub fn gen_mesh_corpus(count: usize, config: &MeshCorpusConfig, seed: u64) -> Result<Dataset> {
    if config.fields_per_mesh == 0 {
        return Err(Error::Argument("need at least one field per mesh".into()));
    }
    let mut meshes = Vec::new();
    for &level in &config.sphere_levels {
        meshes.push((crate::mesh::make_sphere(level)?, "sphere"));
    }
    for (k, &n) in config.planar_sizes.iter().enumerate() {
        let mesh_seed = seed.wrapping_add(k as u64 + 1);
        meshes.push((crate::mesh::make_planar_grid(n, config.planar_jitter, mesh_seed)?, "plane"));
    }
    // Fields use their own stream so they do not shift the example draws.
    let mut rng = example_rng(seed, usize::MAX);
    let mut fields = Vec::new();
    for (mesh, family) in &meshes {
        for _ in 0..config.fields_per_mesh {
            let d = if *family == "sphere" {
                sphere_field(mesh, &mut rng)
            } else {
                planar_field(mesh, &mut rng)
            };
            fields.push((mesh, d, *family));
        }
    }
    let refs: Vec<MeshField<'_>> = fields
        .iter()
        .map(|(mesh, d, family)| MeshField {
            mesh,
            distances: d,
            family,
        })
        .collect();
    gen_mesh_dataset(count, &refs, config.sentinel, config.augment, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_planar_grid, make_sphere, sphere_geodesic_gt};

    #[test]
    fn center_next_to_point_source() {
        let g = GridDomain::unit_square(0.1).unwrap();
        let src = SourceSet::points(&[[0.4, 0.5]]).unwrap();
        let c = g.index(5, 5);
        let (e, u) = grid_example(&g, &src, c, -1.0).unwrap().unwrap();
        assert!((u - 0.1).abs() < 1e-15);
        // Only the member sitting on the source is strictly closer.
        let visited: Vec<usize> = (0..12).filter(|&k| e.mask[k]).collect();
        assert_eq!(visited.len(), 1);
        assert_eq!(PATCH_OFFSETS[visited[0]], (-1, 0));
        let Members::Values(v) = &e.members else { panic!() };
        assert_eq!(v[visited[0]], 0.0);
        assert!(v.iter().enumerate().all(|(k, &x)| e.mask[k] || x == -1.0));
    }

    #[test]
    fn center_on_source_rejected() {
        let g = GridDomain::unit_square(0.1).unwrap();
        let src = SourceSet::points(&[[0.5, 0.5]]).unwrap();
        assert!(grid_example(&g, &src, g.index(5, 5), -1.0).unwrap().is_none());
    }

    #[test]
    fn grid_examples_follow_visited_rule_and_denormalize() {
        let cfg = GridDatasetConfig::default();
        let data = gen_grid_dataset(300, &cfg, 4).unwrap();
        for (k, e) in data.examples.iter().enumerate() {
            let n = (1.0 / (e.h.unwrap() / e.scale)).round();
            let g = GridDomain::unit_square(1.0 / n).unwrap();
            let c = e.provenance.center as usize;
            // Rebuild the source configuration from the example stream.
            let (i, j) = g.ij(c);
            let members = g.grid_patch(i, j, PatchMode::Masked).unwrap();
            let Members::Values(v) = &e.members else { panic!() };
            for s in 0..12 {
                if e.mask[s] {
                    assert!(members[s].is_some());
                    let u = e.record().denormalize(v[s]);
                    assert!(u < e.record().denormalize(e.target), "example {k} slot {s}");
                }
            }
        }
    }

    #[test]
    fn dataset_matches_regenerated_ground_truth() {
        // Independent oracle: replay each example's sampling stream.
        let cfg = GridDatasetConfig::default();
        let data = gen_grid_dataset(60, &cfg, 9).unwrap();
        for (k, e) in data.examples.iter().enumerate() {
            assert_eq!(&grid_example_at(k, &cfg, 9).unwrap(), e);
        }
    }

    #[test]
    fn stratification_holds() {
        let data = gen_grid_dataset(500, &GridDatasetConfig::default(), 1).unwrap();
        let n = data.examples.len() as f64;
        let sparse = data.examples.iter().filter(|e| e.visited_count() <= 3).count() as f64;
        let dense = data.examples.iter().filter(|e| e.visited_count() >= 9).count() as f64;
        assert!(sparse / n >= 0.1);
        assert!(dense / n >= 0.1);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GridDatasetConfig::default();
        let a = gen_grid_dataset(50, &cfg, 3).unwrap().to_jsonl();
        let b = gen_grid_dataset(50, &cfg, 3).unwrap().to_jsonl();
        assert_eq!(a, b);
        assert_ne!(a, gen_grid_dataset(50, &cfg, 4).unwrap().to_jsonl());
    }

    #[test]
    fn jsonl_round_trip() {
        let data = gen_grid_dataset(20, &GridDatasetConfig::default(), 2).unwrap();
        let text = data.to_jsonl();
        let back = Dataset::parse_jsonl(&text).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.to_jsonl(), text);
        let m = make_sphere(2).unwrap();
        let u = sphere_field(&m, &mut ChaCha8Rng::seed_from_u64(0));
        let fields = [MeshField { mesh: &m, distances: &u, family: "sphere" }];
        let md = gen_mesh_dataset(10, &fields, -1.0, true, 5).unwrap();
        assert_eq!(Dataset::parse_jsonl(&md.to_jsonl()).unwrap(), md);
    }

    #[test]
    fn corrupt_records_report_line() {
        let data = gen_grid_dataset(3, &GridDatasetConfig::default(), 2).unwrap();
        let mut lines: Vec<String> = data.to_jsonl().lines().map(String::from).collect();
        lines[2] = "{\"kind\":\"grid\"}".into();
        match Dataset::parse_jsonl(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(Dataset::parse_jsonl("").is_err());
        let short: Vec<String> = data.to_jsonl().lines().take(2).map(String::from).collect();
        assert!(Dataset::parse_jsonl(&short.join("\n")).is_err());
    }

    #[test]
    fn sphere_equator_mask_by_arccos() {
        let m = make_sphere(3).unwrap();
        let pole = m.vertices()[0];
        let u: Vec<f64> = m.vertices().iter().map(|v| sphere_geodesic_gt(pole, *v).unwrap()).collect();
        let eq = (0..m.num_vertices())
            .min_by(|&a, &b| m.vertices()[a][2].abs().total_cmp(&m.vertices()[b][2].abs()))
            .unwrap();
        let f = MeshField { mesh: &m, distances: &u, family: "sphere" };
        let (e, ue) = mesh_example(f, eq, -1.0).unwrap().unwrap();
        for (k, &q) in m.two_ring(eq).iter().enumerate() {
            let closer = sphere_geodesic_gt(pole, m.vertices()[q]).unwrap() < ue;
            assert_eq!(e.mask[k], closer);
        }
        assert!((e.record().denormalize(e.target) - ue).abs() < 1e-12);
    }

    #[test]
    fn planar_mesh_target_is_euclidean() {
        let m = make_planar_grid(9, 0.2, 1).unwrap();
        let u = planar_field(&m, &mut ChaCha8Rng::seed_from_u64(3));
        let f = MeshField { mesh: &m, distances: &u, family: "plane" };
        let data = gen_mesh_dataset(40, &[f], -1.0, false, 2).unwrap();
        for e in &data.examples {
            let c = e.provenance.center as usize;
            assert!((e.record().denormalize(e.target) - u[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentation_keeps_target_and_mask() {
        let m = make_sphere(2).unwrap();
        let u = sphere_field(&m, &mut ChaCha8Rng::seed_from_u64(1));
        let f = [MeshField { mesh: &m, distances: &u, family: "sphere" }];
        let plain = gen_mesh_dataset(30, &f, -1.0, false, 8).unwrap();
        let rotated = gen_mesh_dataset(30, &f, -1.0, true, 8).unwrap();
        for (a, b) in plain.examples.iter().zip(&rotated.examples) {
            assert_eq!((a.target, &a.mask), (b.target, &b.mask));
            assert_ne!(a.members, b.members);
        }
    }

    #[test]
    fn symmetric_copies_match_transformed_sources() {
        // Oracle: mirror the source itself and rebuild the example.
        let g = GridDomain::unit_square(0.1).unwrap();
        let c = g.index(5, 5);
        let src = SourceSet::points(&[[0.23, 0.61]]).unwrap();
        let (e, _) = grid_example(&g, &src, c, -1.0).unwrap().unwrap();
        let copies = grid_symmetric_copies(&e);
        assert_eq!(copies.len(), 8);
        assert_eq!(copies[0], e);
        // Reflection x -> -x about the center is copy 4.
        let mirrored = SourceSet::points(&[[1.0 - 0.23, 0.61]]).unwrap();
        let (m, _) = grid_example(&g, &mirrored, c, -1.0).unwrap().unwrap();
        assert_eq!(copies[4].mask, m.mask);
        let (Members::Values(a), Members::Values(b)) = (&copies[4].members, &m.members) else { panic!() };
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((copies[4].target - m.target).abs() < 1e-12);
        // Rotation by 90 degrees: (x, y) -> (-y, x) about the center.
        let rotated = SourceSet::points(&[[0.5 - 0.11, 0.5 - 0.27]]).unwrap();
        let (r, _) = grid_example(&g, &rotated, c, -1.0).unwrap().unwrap();
        assert_eq!(copies[1].mask, r.mask);
    }

    #[test]
    fn mismatched_field_rejected() {
        let m = make_sphere(1).unwrap();
        let u = vec![0.0; 3];
        let f = [MeshField { mesh: &m, distances: &u, family: "sphere" }];
        assert!(matches!(gen_mesh_dataset(1, &f, -1.0, false, 0), Err(Error::Argument(_))));
    }
}
