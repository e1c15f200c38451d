//! Upwind finite-difference local solvers on Cartesian grids.

use crate::engine::{Domain, Front, LocalSolver, Reach};
use crate::error::{Error, Result};
use crate::grid::{GridDomain, AXIS_SLOTS, FAR_AXIS_SLOTS};

/// State of one of the twelve patch slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// Off the grid.
    Absent,
    Unvisited,
    Visited(f64),
}

impl Slot {
    pub fn visited(self) -> Option<f64> {
        match self {
            Slot::Visited(u) => Some(u),
            _ => None,
        }
    }
}

/// The `2h` neighborhood of a grid point in `PATCH_OFFSETS` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPatchView {
    pub h: f64,
    pub slots: [Slot; 12],
}

impl GridPatchView {
    pub fn gather(domain: &GridDomain, point: usize, front: Front<'_>) -> Self {
        let members = domain.patch_of(point);
        let mut slots = [Slot::Absent; 12];
        for (slot, member) in slots.iter_mut().zip(members) {
            if let Some(q) = member {
                *slot = match front.visited_value(q) {
                    Some(u) => Slot::Visited(u),
                    None => Slot::Unvisited,
                };
            }
        }
        Self { h: domain.h(), slots }
    }

    pub fn has_visited_axis_neighbor(&self) -> bool {
        AXIS_SLOTS.iter().any(|&s| self.slots[s].visited().is_some())
    }

    fn axis_min(&self, axis: usize) -> f64 {
        let [lo, hi] = [AXIS_SLOTS[2 * axis], AXIS_SLOTS[2 * axis + 1]];
        let a = self.slots[lo].visited().unwrap_or(f64::INFINITY);
        let b = self.slots[hi].visited().unwrap_or(f64::INFINITY);
        a.min(b)
    }
}

/// First-order upwind update: the viscosity root of the two-axis quadratic,
/// or the one-sided update when only one axis is usable.
pub fn solve_first_order(patch: &GridPatchView) -> Result<f64> {
    let a = patch.axis_min(0);
    let b = patch.axis_min(1);
    let h = patch.h;
    if a.is_infinite() && b.is_infinite() {
        return Err(Error::NotReady);
    }
    if a.is_finite() && b.is_finite() && (a - b).abs() < h {
        let d = a - b;
        Ok(0.5 * (a + b + (2.0 * h * h - d * d).sqrt()))
    } else {
        Ok(a.min(b) + h)
    }
}

/// Two-point upwind update. On each axis the upwind neighbor is chosen and,
/// when its outer neighbor is also visited and not larger, the one-sided
/// second-order difference replaces the first-order one.
pub fn solve_second_order(patch: &GridPatchView) -> Result<f64> {
    let first = solve_first_order(patch)?;
    let h = patch.h;
    // (coefficient, effective known value) per usable axis
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(2);
    for axis in 0..2 {
        let mut best: Option<(f64, f64, f64)> = None; // (u1, coefficient, value)
        for side in 0..2 {
            let k = 2 * axis + side;
            let Some(u1) = patch.slots[AXIS_SLOTS[k]].visited() else {
                continue;
            };
            let (coef, value) = match patch.slots[FAR_AXIS_SLOTS[k]].visited() {
                Some(u2) if u2 <= u1 => (1.5 / h, (4.0 * u1 - u2) / 3.0),
                _ => (1.0 / h, u1),
            };
            let better = match best {
                None => true,
                Some((b1, bcoef, _)) => u1 < b1 || (u1 == b1 && coef > bcoef),
            };
            if better {
                best = Some((u1, coef, value));
            }
        }
        if let Some((_, coef, value)) = best {
            terms.push((coef, value));
        }
    }
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    while !terms.is_empty() {
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
        for &(coef, value) in &terms {
            let c2 = coef * coef;
            qa += c2;
            qb += c2 * value;
            qc += c2 * value * value;
        }
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return Ok(first);
        }
        let u = (qb + disc.sqrt()) / qa;
        let largest = terms.last().expect("non-empty").1;
        if u >= largest || terms.len() == 1 {
            return Ok(u);
        }
        // The root lies below the last axis' known value: that axis is downwind.
        terms.pop();
    }
    Ok(first)
}

impl Domain for GridDomain {
    fn num_points(&self) -> usize {
        self.len()
    }

    fn neighbors(&self, p: usize, reach: Reach, out: &mut Vec<usize>) {
        let patch = self.patch_of(p);
        match reach {
            Reach::Near => out.extend(AXIS_SLOTS.iter().filter_map(|&s| patch[s])),
            Reach::Wide => out.extend(patch.iter().flatten()),
        }
    }

    fn edge_length(&self, p: usize, q: usize) -> f64 {
        let (pi, pj) = self.ij(p);
        let (qi, qj) = self.ij(q);
        let di = pi as f64 - qi as f64;
        let dj = pj as f64 - qj as f64;
        self.h() * di.hypot(dj)
    }
}

/// Classic first-order fast marching local solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstOrderSolver;

impl LocalSolver<GridDomain> for FirstOrderSolver {
    fn reach(&self) -> Reach {
        Reach::Near
    }

    fn estimate(&self, domain: &GridDomain, point: usize, front: Front<'_>) -> Result<f64> {
        solve_first_order(&GridPatchView::gather(domain, point, front))
    }
}

/// Second-order fast marching local solver. Reads the full `2h` patch so
/// that points are re-estimated when their outer axis neighbors finalize.
#[derive(Debug, Clone, Copy, Default)]
pub struct SecondOrderSolver;

impl LocalSolver<GridDomain> for SecondOrderSolver {
    fn reach(&self) -> Reach {
        Reach::Wide
    }

    fn estimate(&self, domain: &GridDomain, point: usize, front: Front<'_>) -> Result<f64> {
        solve_second_order(&GridPatchView::gather(domain, point, front))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(h: f64, entries: &[(usize, f64)]) -> GridPatchView {
        let mut slots = [Slot::Unvisited; 12];
        for &(s, u) in entries {
            slots[s] = Slot::Visited(u);
        }
        GridPatchView { h, slots }
    }

    const MX: usize = AXIS_SLOTS[0];
    const PX: usize = AXIS_SLOTS[1];
    const MY: usize = AXIS_SLOTS[2];
    const MX2: usize = FAR_AXIS_SLOTS[0];
    const MY2: usize = FAR_AXIS_SLOTS[2];

    #[test]
    fn first_order_examples() {
        assert_eq!(solve_first_order(&view(1.0, &[(MX, 0.0)])).unwrap(), 1.0);
        let sym = solve_first_order(&view(1.0, &[(MX, 0.0), (MY, 0.0)])).unwrap();
        assert!((sym - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let u = solve_first_order(&view(1.0, &[(MX, 0.0), (MY, 0.9)])).unwrap();
        // residual of (u-a)^2 + (u-b)^2 = h^2
        let residual = u * u + (u - 0.9) * (u - 0.9) - 1.0;
        assert!(residual.abs() < 1e-12);
        assert!((u - (1.8 + 4.76f64.sqrt()) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn first_order_not_ready_without_axis_neighbor() {
        let p = view(1.0, &[(MX2, 0.0), (1, 0.5)]);
        assert!(matches!(solve_first_order(&p), Err(Error::NotReady)));
        assert!(matches!(solve_second_order(&p), Err(Error::NotReady)));
    }

    #[test]
    fn second_order_falls_back_without_far_neighbors() {
        let p = view(0.5, &[(MX, 0.3), (MY, 0.5)]);
        let (a, b) = (solve_second_order(&p).unwrap(), solve_first_order(&p).unwrap());
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn second_order_is_exact_on_linear_field() {
        let u = solve_second_order(&view(1.0, &[(MX, 1.0), (MX2, 0.0)])).unwrap();
        assert!((u - 2.0).abs() < 1e-15);
    }

    #[test]
    fn second_order_symmetric_quadratic() {
        let p = view(1.0, &[(MX, 1.0), (MX2, 0.0), (MY, 1.0), (MY2, 0.0)]);
        let u = solve_second_order(&p).unwrap();
        let expected = 4.0 / 3.0 + 2f64.sqrt() / 3.0;
        assert!((u - expected).abs() < 1e-14);
        let residual = 2.0 * 2.25 * (u - 4.0 / 3.0).powi(2) - 1.0;
        assert!(residual.abs() < 1e-12);
    }

    #[test]
    fn second_order_drops_downwind_axis() {
        // y neighbor far above the x-only answer must not pull the root.
        let p = view(1.0, &[(MX, 1.0), (MX2, 0.0), (MY, 5.0)]);
        assert!((solve_second_order(&p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_field_is_reproduced_by_first_order() {
        // u = x from a source along the left edge.
        let g = GridDomain::new(12, 9, 0.1).unwrap();
        let seeds: Vec<(usize, f64)> = (0..g.ny()).map(|j| (g.index(0, j), 0.0)).collect();
        let sol = crate::engine::solve(&g, &seeds, &FirstOrderSolver).unwrap();
        for k in 0..g.len() {
            let x = g.position(k)[0];
            assert!((sol.field.values()[k] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn one_sided_from_the_right() {
        assert!((solve_first_order(&view(1.0, &[(PX, 2.0)])).unwrap() - 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn first_order_bounds_and_monotone(
            a in 0.0f64..3.0, b in 0.0f64..3.0, h in 0.01f64..1.0,
            da in 0.0f64..0.5, db in 0.0f64..0.5,
        ) {
            let u = solve_first_order(&view(h, &[(MX, a), (MY, b)])).unwrap();
            prop_assert!(u >= a.min(b).max(0.0));
            prop_assert!(u <= a.min(b) + h + 1e-12);
            let ua = solve_first_order(&view(h, &[(MX, a + da), (MY, b)])).unwrap();
            let ub = solve_first_order(&view(h, &[(MX, a), (MY, b + db)])).unwrap();
            prop_assert!(ua >= u - 1e-12);
            prop_assert!(ub >= u - 1e-12);
        }

        #[test]
        fn second_order_never_below_upwind(
            a in 0.5f64..3.0, a2 in 0.0f64..3.0, b in 0.5f64..3.0, b2 in 0.0f64..3.0,
        ) {
            let u = solve_second_order(&view(1.0, &[(MX, a), (MX2, a2), (MY, b), (MY2, b2)])).unwrap();
            prop_assert!(u.is_finite());
            prop_assert!(u >= a.min(b) - 1e-12);
        }
    }
}
