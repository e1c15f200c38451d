//! Wavefront propagation: points are tagged Visited / WaveFront / Unvisited,
//! the least distant front point is finalized, and its neighbors are
//! re-estimated by a pluggable local solver.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::field::DistanceField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Unvisited,
    WaveFront,
    Visited,
}

/// Size of the neighborhood a local solver reads. `Near` is the axis
/// stencil on grids and the one-ring on meshes; `Wide` is the `2h` disk on
/// grids and the second ring on meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reach {
    Near,
    Wide,
}

/// A discretized domain as seen by the engine.
pub trait Domain {
    fn num_points(&self) -> usize;

    /// Appends the points within `reach` of `p` (excluding `p`) to `out`.
    /// The relation must be symmetric.
    fn neighbors(&self, p: usize, reach: Reach, out: &mut Vec<usize>);

    /// Length of the direct edge between two `Near` neighbors.
    fn edge_length(&self, p: usize, q: usize) -> f64;
}

/// Read-only view of the front handed to local solvers.
#[derive(Debug, Clone, Copy)]
pub struct Front<'a> {
    values: &'a [f64],
    tags: &'a [Tag],
}

impl<'a> Front<'a> {
    pub fn new(values: &'a [f64], tags: &'a [Tag]) -> Self {
        assert_eq!(values.len(), tags.len());
        Self { values, tags }
    }

    pub fn is_visited(&self, q: usize) -> bool {
        self.tags[q] == Tag::Visited
    }

    /// The value of `q` if it is Visited.
    pub fn visited_value(&self, q: usize) -> Option<f64> {
        self.is_visited(q).then(|| self.values[q])
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn tags(&self) -> &'a [Tag] {
        self.tags
    }
}

/// Estimates the distance at one point from the Visited points around it.
///
/// Implementations must be pure functions of what they read through
/// [`Front`]. Returning [`Error::NotReady`] means there is nothing upwind to
/// estimate from; the engine leaves the point untouched.
pub trait LocalSolver<D: Domain + ?Sized>: Sync {
    fn reach(&self) -> Reach;

    fn estimate(&self, domain: &D, point: usize, front: Front<'_>) -> Result<f64>;

    /// Final value for `point` as it leaves the front, computed from the
    /// same neighborhood. `None` keeps the last estimate.
    fn finalize(&self, _domain: &D, _point: usize, _front: Front<'_>) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<D: Domain + ?Sized, S: LocalSolver<D> + ?Sized> LocalSolver<D> for &S {
    fn reach(&self) -> Reach {
        (**self).reach()
    }

    fn estimate(&self, domain: &D, point: usize, front: Front<'_>) -> Result<f64> {
        (**self).estimate(domain, point, front)
    }

    fn finalize(&self, domain: &D, point: usize, front: Front<'_>) -> Result<Option<f64>> {
        (**self).finalize(domain, point, front)
    }
}

/// Graph shortest-path update: `min u(q) + |pq|` over Visited `Near` neighbors.
#[derive(Debug, Clone, Copy, Default)]
pub struct DijkstraSolver;

impl<D: Domain + ?Sized> LocalSolver<D> for DijkstraSolver {
    fn reach(&self) -> Reach {
        Reach::Near
    }

    fn estimate(&self, domain: &D, point: usize, front: Front<'_>) -> Result<f64> {
        let mut nbrs = Vec::new();
        domain.neighbors(point, Reach::Near, &mut nbrs);
        nbrs.iter()
            .filter_map(|&q| front.visited_value(q).map(|u| u + domain.edge_length(point, q)))
            .reduce(f64::min)
            .ok_or(Error::NotReady)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub solver_calls: usize,
    pub heap_pushes: usize,
    pub heap_pops: usize,
    pub stale_pops: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: DistanceField,
    /// Points in the order they became Visited; seeds come first.
    pub order: Vec<usize>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    value: f64,
    point: usize,
    version: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Reversed so the max-heap pops the smallest value, lowest index first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.point.cmp(&self.point))
            .then_with(|| other.version.cmp(&self.version))
    }
}

/// Tags, tentative values and the lazily-invalidated priority queue of one solve.
#[derive(Debug, Clone)]
pub struct FrontState {
    tags: Vec<Tag>,
    values: Vec<f64>,
    versions: Vec<u32>,
    heap: BinaryHeap<HeapEntry>,
    order: Vec<usize>,
    stats: SolveStats,
    scratch: Vec<usize>,
}

impl FrontState {
    /// Marks every seed Visited with its value; all other points are
    /// Unvisited at `+∞`.
    pub fn new(num_points: usize, seeds: &[(usize, f64)]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Argument("no source points".into()));
        }
        let mut state = Self {
            tags: vec![Tag::Unvisited; num_points],
            values: vec![f64::INFINITY; num_points],
            versions: vec![0; num_points],
            heap: BinaryHeap::new(),
            order: Vec::with_capacity(num_points),
            stats: SolveStats::default(),
            scratch: Vec::new(),
        };
        for &(p, u) in seeds {
            if p >= num_points {
                return Err(Error::Argument(format!("source {p} outside domain of {num_points} points")));
            }
            if !(u >= 0.0 && u.is_finite()) {
                return Err(Error::Argument(format!("source value {u} at {p} must be finite and >= 0")));
            }
            state.values[p] = state.values[p].min(u);
            state.tags[p] = Tag::Visited;
        }
        let mut seeded: Vec<usize> = seeds.iter().map(|s| s.0).collect();
        seeded.sort_unstable();
        seeded.dedup();
        state.order.extend(seeded);
        Ok(state)
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn front(&self) -> Front<'_> {
        Front::new(&self.values, &self.tags)
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    /// Re-estimates every non-Visited point within the solver's reach of
    /// `point`. A fresh estimate replaces the stored one, clamped from below
    /// by the smallest Visited value the solver could see.
    pub fn update_neighbors<D, S>(&mut self, domain: &D, point: usize, solver: &S) -> Result<()>
    where
        D: Domain + ?Sized,
        S: LocalSolver<D> + ?Sized,
    {
        let reach = solver.reach();
        let mut nbrs = std::mem::take(&mut self.scratch);
        nbrs.clear();
        domain.neighbors(point, reach, &mut nbrs);
        let mut inner = Vec::new();
        let result = (|| {
            for &p in &nbrs {
                if self.tags[p] == Tag::Visited {
                    continue;
                }
                self.stats.solver_calls += 1;
                let estimate = match solver.estimate(domain, p, self.front()) {
                    Ok(u) => u,
                    Err(Error::NotReady) => continue,
                    Err(e) => return Err(e),
                };
                if !(estimate >= 0.0 && estimate.is_finite()) {
                    return Err(Error::SolverFault { point: p, value: estimate });
                }
                let value = self.clamp(domain, p, reach, estimate, &mut inner);
                self.values[p] = value;
                self.versions[p] = self.versions[p].wrapping_add(1);
                self.tags[p] = Tag::WaveFront;
                self.heap.push(HeapEntry {
                    value,
                    point: p,
                    version: self.versions[p],
                });
                self.stats.heap_pushes += 1;
            }
            Ok(())
        })();
        self.scratch = nbrs;
        result
    }

    // Lower clamp: the smallest Visited value within `reach` of `p`.
    fn clamp<D: Domain + ?Sized>(&self, domain: &D, p: usize, reach: Reach, estimate: f64, scratch: &mut Vec<usize>) -> f64 {
        scratch.clear();
        domain.neighbors(p, reach, scratch);
        let floor = scratch
            .iter()
            .filter(|&&q| self.tags[q] == Tag::Visited)
            .map(|&q| self.values[q])
            .fold(f64::INFINITY, f64::min);
        if floor.is_finite() {
            estimate.max(floor)
        } else {
            estimate
        }
    }

    /// Lets the solver replace the value of a just-finalized point. The
    /// replacement is clamped like any estimate.
    pub fn finalize_point<D, S>(&mut self, domain: &D, point: usize, solver: &S) -> Result<()>
    where
        D: Domain + ?Sized,
        S: LocalSolver<D> + ?Sized,
    {
        let value = match solver.finalize(domain, point, self.front()) {
            Ok(Some(v)) => v,
            Ok(None) | Err(Error::NotReady) => return Ok(()),
            Err(e) => return Err(e),
        };
        if value.is_nan() {
            return Err(Error::SolverFault { point, value });
        }
        let mut scratch = Vec::new();
        let clamped = self.clamp(domain, point, solver.reach(), value, &mut scratch);
        if !(clamped >= 0.0 && clamped.is_finite()) {
            return Err(Error::SolverFault { point, value });
        }
        self.values[point] = clamped;
        Ok(())
    }

    /// Finalizes the least distant WaveFront point, skipping stale entries.
    pub fn pop_next(&mut self) -> Option<usize> {
        while let Some(entry) = self.heap.pop() {
            self.stats.heap_pops += 1;
            if self.tags[entry.point] == Tag::Visited || entry.version != self.versions[entry.point] {
                self.stats.stale_pops += 1;
                continue;
            }
            self.tags[entry.point] = Tag::Visited;
            self.order.push(entry.point);
            return Some(entry.point);
        }
        None
    }

    fn into_solution(self) -> Result<Solution> {
        Ok(Solution {
            field: DistanceField::new(self.values)?,
            order: self.order,
            stats: self.stats,
        })
    }
}

/// Runs the full propagation from `seeds` (point, boundary value).
/// Points not connected to any seed stay at `+∞`.
pub fn solve<D, S>(domain: &D, seeds: &[(usize, f64)], solver: &S) -> Result<Solution>
where
    D: Domain + ?Sized,
    S: LocalSolver<D> + ?Sized,
{
    let mut state = FrontState::new(domain.num_points(), seeds)?;
    let initial: Vec<usize> = state.order.clone();
    for p in initial {
        state.update_neighbors(domain, p, solver)?;
    }
    while let Some(p) = state.pop_next() {
        state.finalize_point(domain, p, solver)?;
        state.update_neighbors(domain, p, solver)?;
    }
    state.into_solution()
}

/// Convenience wrapper: every listed point is a source at distance zero.
pub fn solve_from_sources<D, S>(domain: &D, sources: &[usize], solver: &S) -> Result<Solution>
where
    D: Domain + ?Sized,
    S: LocalSolver<D> + ?Sized,
{
    let seeds: Vec<(usize, f64)> = sources.iter().map(|&p| (p, 0.0)).collect();
    solve(domain, &seeds, solver)
}

/// Undirected graph with explicit non-negative edge weights. `Near` and
/// `Wide` reach are both the direct adjacency.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(num_points: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); num_points],
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize, weight: f64) -> Result<()> {
        let n = self.adjacency.len();
        if a >= n || b >= n || a == b {
            return Err(Error::Argument(format!("invalid edge ({a}, {b})")));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Argument(format!("invalid edge weight {weight}")));
        }
        if let Some(e) = self.adjacency[a].iter_mut().find(|e| e.0 == b) {
            e.1 = e.1.min(weight);
            let w = e.1;
            self.adjacency[b].iter_mut().find(|e| e.0 == a).expect("symmetric").1 = w;
        } else {
            self.adjacency[a].push((b, weight));
            self.adjacency[b].push((a, weight));
        }
        Ok(())
    }

    pub fn edges_of(&self, p: usize) -> &[(usize, f64)] {
        &self.adjacency[p]
    }
}

impl Domain for WeightedGraph {
    fn num_points(&self) -> usize {
        self.adjacency.len()
    }

    fn neighbors(&self, p: usize, _reach: Reach, out: &mut Vec<usize>) {
        out.extend(self.adjacency[p].iter().map(|e| e.0));
    }

    fn edge_length(&self, p: usize, q: usize) -> f64 {
        self.adjacency[p]
            .iter()
            .find(|e| e.0 == q)
            .map_or(f64::INFINITY, |e| e.1)
    }
}
