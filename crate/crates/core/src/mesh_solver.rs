//! Planar-wavefront triangle update on meshes with edge fallback.

use crate::engine::{Front, LocalSolver, Reach};
use crate::error::{Error, Result};
use crate::mesh::{cross3, dot3, norm3, sub3, TriMesh, Vec3};

/// Triangles with area below this fraction of the squared longest edge are degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-12;

/// Estimates `u(p1)` from known `u2` at `p2` and `u3` at `p3` by fitting a
/// unit-slope planar front in the triangle's plane. When the front's
/// characteristic does not reach `p1` through the triangle, or the planar
/// value would not exceed both known values, the edge update
/// `min(u2 + |p1p2|, u3 + |p1p3|)` is returned instead.
pub fn solve_triangle(p1: Vec3, p2: Vec3, p3: Vec3, u2: f64, u3: f64) -> Result<f64> {
    let e2 = sub3(p2, p1);
    let e3 = sub3(p3, p1);
    let l2 = norm3(e2);
    let l3 = norm3(e3);
    let longest = l2.max(l3).max(norm3(sub3(p3, p2)));
    let area = 0.5 * norm3(cross3(e2, e3));
    if !(area > DEGENERATE_AREA_RATIO * longest * longest) {
        return Err(Error::DegenerateGeometry);
    }
    let fallback = (u2 + l2).min(u3 + l3);

    // Frame: e2 along x, e3 in the upper half plane.
    let a = l2;
    let c = dot3(e3, e2) / a;
    let d = 2.0 * area / a;

    // Gradient g(t) = g0 + t g1 solves E^T g = (u2 - t, u3 - t).
    let g0 = [u2 / a, (u3 - c * u2 / a) / d];
    let g1 = [-1.0 / a, (c / a - 1.0) / d];
    let qa = g1[0] * g1[0] + g1[1] * g1[1];
    let qb = g0[0] * g1[0] + g0[1] * g1[1];
    let qc = g0[0] * g0[0] + g0[1] * g0[1] - 1.0;
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return Ok(fallback);
    }
    let t = (-qb + disc.sqrt()) / qa;
    if t < u2.max(u3) {
        return Ok(fallback);
    }
    let g = [g0[0] + t * g1[0], g0[1] + t * g1[1]];
    // Upwind direction -g must lie in the cone spanned by e2 and e3.
    let beta = -g[1] / d;
    let alpha = (-g[0] - beta * c) / a;
    if alpha < 0.0 || beta < 0.0 {
        return Ok(fallback);
    }
    Ok(t.min(fallback))
}

/// Minimum over the triangles around `v` of the triangle update (both other
/// corners Visited) or the edge update (one corner Visited).
pub fn solve_vertex(mesh: &TriMesh, v: usize, front: Front<'_>) -> Result<f64> {
    let p = mesh.vertices()[v];
    let mut best = f64::INFINITY;
    for &fi in mesh.vertex_faces(v) {
        let f = mesh.faces()[fi];
        let k = f.iter().position(|&w| w == v).expect("incident face");
        let (a, b) = (f[(k + 1) % 3], f[(k + 2) % 3]);
        let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
        let candidate = match (front.visited_value(a), front.visited_value(b)) {
            (Some(ua), Some(ub)) => match solve_triangle(p, pa, pb, ua, ub) {
                Ok(u) => u,
                Err(Error::DegenerateGeometry) => {
                    (ua + norm3(sub3(pa, p))).min(ub + norm3(sub3(pb, p)))
                }
                Err(e) => return Err(e),
            },
            (Some(ua), None) => ua + norm3(sub3(pa, p)),
            (None, Some(ub)) => ub + norm3(sub3(pb, p)),
            (None, None) => continue,
        };
        best = best.min(candidate);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::NotReady)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KimmelSethianSolver;

impl LocalSolver<TriMesh> for KimmelSethianSolver {
    fn reach(&self) -> Reach {
        Reach::Near
    }

    fn estimate(&self, mesh: &TriMesh, point: usize, front: Front<'_>) -> Result<f64> {
        solve_vertex(mesh, point, front)
    }
}
