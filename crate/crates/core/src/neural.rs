//! Trained networks as local solvers.
//!
//! Every patch goes through the same pipeline at training and inference
//! time: subtract the smallest visited value, scale so the visited values
//! have mean 0.5, scale the geometry by the same factor, and put the
//! sentinel in every slot that carries no distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Front, LocalSolver, Reach};
use crate::error::{Error, Result};
use crate::grid::GridDomain;
use crate::grid_solvers::{solve_second_order, GridPatchView, Slot};
use crate::mesh_solver::solve_vertex;
use crate::mesh::{norm3, second_ring_patch, MeshPatch, TriMesh, Vec3};
use crate::nn::{NetInput, NetworkSpec, NetworkWeights};

/// The scale denominator never drops below this multiple of the patch's
/// characteristic length (`h`, or the mean member distance on meshes).
/// Keeps single-visited patches finite and the pipeline scale-covariant.
pub const SCALE_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    /// The subtracted minimum visited value.
    pub bias: f64,
    pub scale: f64,
}

impl NormalizationRecord {
    // Sums run over sorted values so the record does not depend on member order.
    fn from_values(visited: impl Iterator<Item = f64>, length: f64) -> Result<Self> {
        let mut values: Vec<f64> = visited.collect();
        if values.is_empty() {
            return Err(Error::NotReady);
        }
        values.sort_by(f64::total_cmp);
        let bias = values[0];
        let mean = values.iter().map(|u| u - bias).sum::<f64>() / values.len() as f64;
        let denom = mean.max(SCALE_FLOOR * length);
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::DegenerateGeometry);
        }
        Ok(Self {
            bias,
            scale: 0.5 / denom,
        })
    }

    pub fn normalize(&self, u: f64) -> f64 {
        (u - self.bias) * self.scale
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v / self.scale + self.bias
    }
}

/// The 13 network inputs for a grid patch: the twelve value slots in
/// patch order followed by the normalized spacing.
pub fn normalize_grid_patch(view: &GridPatchView, sentinel: f64) -> Result<([f64; 13], NormalizationRecord)> {
    let visited = view.slots.iter().filter_map(|s| s.visited());
    let record = NormalizationRecord::from_values(visited, view.h)?;
    let mut input = [sentinel; 13];
    for (slot, x) in view.slots.iter().zip(input.iter_mut()) {
        if let Slot::Visited(u) = slot {
            *x = record.normalize(*u);
        }
    }
    input[12] = view.h * record.scale;
    Ok((input, record))
}

/// Member rows `(dx, dy, dz, value)` for a mesh patch, normalized.
pub fn normalize_mesh_patch(patch: &MeshPatch, sentinel: f64) -> Result<(Vec<[f64; 4]>, NormalizationRecord)> {
    if patch.members.is_empty() {
        return Err(Error::DegeneratePatch(patch.center));
    }
    let mut norms: Vec<f64> = patch.members.iter().map(|m| norm3(m.offset)).collect();
    norms.sort_by(f64::total_cmp);
    let length = norms.iter().sum::<f64>() / norms.len() as f64;
    let visited = patch.members.iter().filter(|m| m.visited).map(|m| m.value);
    let record = NormalizationRecord::from_values(visited, length)?;
    let s = record.scale;
    let rows = patch
        .members
        .iter()
        .map(|m| {
            let value = if m.visited { record.normalize(m.value) } else { sentinel };
            [m.offset[0] * s, m.offset[1] * s, m.offset[2] * s, value]
        })
        .collect();
    Ok((rows, record))
}

fn check_kind(weights: &NetworkWeights, grid: bool) -> Result<()> {
    match (weights.spec(), grid) {
        (NetworkSpec::Grid(m), true) if m.widths()[0] == 13 => Ok(()),
        (NetworkSpec::Mesh(s), false) if s.encoder()[0] == 4 => Ok(()),
        _ => Err(Error::Argument(format!(
            "weights are not a {} network",
            if grid { "13-input grid" } else { "4-feature mesh" }
        ))),
    }
}

/// Network estimate for a grid patch, back in physical units.
pub fn estimate_grid(weights: &NetworkWeights, view: &GridPatchView) -> Result<f64> {
    let (input, record) = normalize_grid_patch(view, weights.sentinel())?;
    let out = weights.forward(&NetInput::Vector(input.to_vec()))?;
    Ok(record.denormalize(out))
}

/// Network estimate for a mesh patch, back in physical units.
pub fn estimate_mesh(weights: &NetworkWeights, patch: &MeshPatch) -> Result<f64> {
    let (rows, record) = normalize_mesh_patch(patch, weights.sentinel())?;
    let out = weights.forward(&NetInput::Set(rows))?;
    Ok(record.denormalize(out))
}

/// Grid local solver backed by the 13-input MLP.
///
/// The front is ordered by the second-order upwind update; the network
/// assigns the final value when a point leaves the front. By then every
/// patch member nearer than the point is Visited, which is the situation
/// the network was trained on. Estimates from partially visited patches
/// would otherwise undershoot and finalize points too early.
#[derive(Debug, Clone)]
pub struct NeuralGridSolver {
    weights: NetworkWeights,
}

impl NeuralGridSolver {
    pub fn new(weights: NetworkWeights) -> Result<Self> {
        check_kind(&weights, true)?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }
}

impl LocalSolver<GridDomain> for NeuralGridSolver {
    fn reach(&self) -> Reach {
        Reach::Wide
    }

    fn estimate(&self, domain: &GridDomain, point: usize, front: Front<'_>) -> Result<f64> {
        solve_second_order(&GridPatchView::gather(domain, point, front))
    }

    fn finalize(&self, domain: &GridDomain, point: usize, front: Front<'_>) -> Result<Option<f64>> {
        let view = GridPatchView::gather(domain, point, front);
        if !view.has_visited_axis_neighbor() {
            return Ok(None);
        }
        estimate_grid(&self.weights, &view).map(Some)
    }
}

/// Mesh local solver backed by the set network over the two-ring patch,
/// with the front ordered by the planar triangle update (see
/// [`NeuralGridSolver`]).
#[derive(Debug, Clone)]
pub struct NeuralMeshSolver {
    weights: NetworkWeights,
}

impl NeuralMeshSolver {
    pub fn new(weights: NetworkWeights) -> Result<Self> {
        check_kind(&weights, false)?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }
}

impl LocalSolver<TriMesh> for NeuralMeshSolver {
    fn reach(&self) -> Reach {
        Reach::Wide
    }

    fn estimate(&self, mesh: &TriMesh, point: usize, front: Front<'_>) -> Result<f64> {
        solve_vertex(mesh, point, front)
    }

    fn finalize(&self, mesh: &TriMesh, point: usize, front: Front<'_>) -> Result<Option<f64>> {
        if !mesh.one_ring(point).iter().any(|&q| front.is_visited(q)) {
            return Ok(None);
        }
        let patch = second_ring_patch(mesh, point, front)?;
        estimate_mesh(&self.weights, &patch).map(Some)
    }
}

/// Uniformly distributed rotation matrix (unit quaternion from a Gaussian).
pub fn random_rotation(seed: u64) -> [[f64; 3]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, x, y, z) = loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(r: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

/// Applies a seeded random rotation to the coordinates of every member row;
/// values are untouched.
pub fn mesh_rotation_augment(rows: &[[f64; 4]], seed: u64) -> Vec<[f64; 4]> {
    let r = random_rotation(seed);
    rows.iter()
        .map(|m| {
            let p = rotate(&r, [m[0], m[1], m[2]]);
            [p[0], p[1], p[2], m[3]]
        })
        .collect()
}
