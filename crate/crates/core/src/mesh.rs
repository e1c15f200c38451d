//! Triangle meshes: validation, OFF/OBJ ingestion, ring neighborhoods,
//! subdivided spheres and vertex noise.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{Domain, Front, Reach};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

/// Manifold triangle mesh with precomputed one- and two-ring adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    one_ring: Vec<Vec<usize>>,
    two_ring: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
}

impl TriMesh {
    /// Validates indices, rejects repeated-index faces and edges used by more
    /// than two faces, and builds adjacency.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(k) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {k} has a non-finite coordinate")));
        }
        let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} references a vertex out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = edge_use
            .iter()
            .filter(|(_, &c)| c > 2)
            .map(|(&e, _)| e)
            .collect();
        if !bad.is_empty() {
            bad.sort_unstable();
            return Err(Error::NonManifold { edges: bad });
        }
        let mut one_ring = vec![Vec::new(); n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                vertex_faces[f[k]].push(fi);
                one_ring[f[k]].push(f[(k + 1) % 3]);
                one_ring[f[k]].push(f[(k + 2) % 3]);
            }
        }
        for ring in &mut one_ring {
            ring.sort_unstable();
            ring.dedup();
        }
        let two_ring = (0..n).map(|v| second_ring_members(&one_ring, v)).collect();
        Ok(Self {
            vertices,
            faces,
            one_ring,
            two_ring,
            vertex_faces,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn one_ring(&self, v: usize) -> &[usize] {
        &self.one_ring[v]
    }

    /// First and second ring of `v`, deduplicated, center excluded: the
    /// one-ring in ascending order followed by the remaining second-ring
    /// vertices in ascending order.
    pub fn two_ring(&self, v: usize) -> &[usize] {
        &self.two_ring[v]
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, ring) in self.one_ring.iter().enumerate() {
            out.extend(ring.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .into_iter()
            .map(|(a, b)| norm3(sub3(self.vertices[a], self.vertices[b])))
            .collect()
    }

    pub fn median_edge_length(&self) -> f64 {
        let mut l = self.edge_lengths();
        if l.is_empty() {
            return 0.0;
        }
        l.sort_by(f64::total_cmp);
        let m = l.len() / 2;
        if l.len() % 2 == 1 {
            l[m]
        } else {
            0.5 * (l[m - 1] + l[m])
        }
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        if self.vertices.is_empty() {
            0.0
        } else {
            norm3(sub3(hi, lo))
        }
    }

    /// Same connectivity with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        let mut out = self.clone();
        out.vertices = vertices;
        Ok(out)
    }

    pub fn to_off(&self) -> String {
        let mut out = format!("OFF\n{} {} 0\n", self.vertices.len(), self.faces.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
        }
        out
    }
}

fn second_ring_members(one_ring: &[Vec<usize>], v: usize) -> Vec<usize> {
    let first = &one_ring[v];
    let mut second: Vec<usize> = first
        .iter()
        .flat_map(|&w| one_ring[w].iter().copied())
        .filter(|&w| w != v && first.binary_search(&w).is_err())
        .collect();
    second.sort_unstable();
    second.dedup();
    let mut out = first.clone();
    out.extend(second);
    out
}

impl Domain for TriMesh {
    fn num_points(&self) -> usize {
        self.vertices.len()
    }

    fn neighbors(&self, p: usize, reach: Reach, out: &mut Vec<usize>) {
        match reach {
            Reach::Near => out.extend_from_slice(&self.one_ring[p]),
            Reach::Wide => out.extend_from_slice(&self.two_ring[p]),
        }
    }

    fn edge_length(&self, p: usize, q: usize) -> f64 {
        norm3(sub3(self.vertices[p], self.vertices[q]))
    }
}

/// Parses mesh bytes in the given format.
pub fn load_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::parse(line, "file is not valid UTF-8")
    })?;
    match format {
        MeshFormat::Off => parse_off(text),
        MeshFormat::Obj => parse_obj(text),
    }
}

// Fan-triangulates a polygon.
fn push_polygon(faces: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line_no, header) = lines.next().ok_or_else(|| Error::parse(1, "empty OFF file"))?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(Error::parse(line_no, "missing `OFF` header"));
    }
    let mut rest: Vec<&str> = header_tokens.collect();
    let mut count_line = line_no;
    if rest.is_empty() {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::parse(line_no, "missing element counts"))?;
        count_line = n;
        rest = l.split_whitespace().collect();
    }
    if rest.len() < 2 {
        return Err(Error::parse(count_line, "expected vertex and face counts"));
    }
    let count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(count_line, format!("invalid count `{s}`")))
    };
    let nv = count(rest[0])?;
    let nf = count(rest[1])?;

    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    for _ in 0..nv {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::parse(count_line, "unexpected end of file in vertex list"))?;
        let coords = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(n, format!("invalid coordinate `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if coords.len() != 3 {
            return Err(Error::parse(n, "vertex needs three coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse(n, "non-finite coordinate"));
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }
    let mut faces = Vec::with_capacity(nf.min(1 << 20));
    for _ in 0..nf {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::parse(count_line, "unexpected end of file in face list"))?;
        let mut tokens = l.split_whitespace();
        let k: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(n, "invalid face vertex count"))?;
        if k < 3 {
            return Err(Error::parse(n, "face needs at least three vertices"));
        }
        let poly = tokens
            .by_ref()
            .take(k)
            .map(|t| {
                let i: usize = t.parse().map_err(|_| Error::parse(n, format!("invalid index `{t}`")))?;
                if i >= nv {
                    return Err(Error::parse(n, format!("vertex index {i} out of range")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<usize>>>()?;
        if poly.len() != k {
            return Err(Error::parse(n, "face has fewer indices than declared"));
        }
        push_polygon(&mut faces, &poly);
    }
    TriMesh::new(vertices, faces)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords = tokens
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(line_no, format!("invalid coordinate `{t}`")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(line_no, "vertex needs three finite coordinates"));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let poly = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::parse(line_no, format!("invalid face index `{t}`")))?;
                        let resolved = match i {
                            0 => return Err(Error::parse(line_no, "OBJ indices are 1-based; found 0")),
                            i if i > 0 => i as usize - 1,
                            i => {
                                let back = i.unsigned_abs() as usize;
                                if back > vertices.len() {
                                    return Err(Error::parse(line_no, format!("relative index {i} out of range")));
                                }
                                vertices.len() - back
                            }
                        };
                        if resolved >= vertices.len() {
                            return Err(Error::parse(line_no, format!("vertex index {i} out of range")));
                        }
                        Ok(resolved)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                if poly.len() < 3 {
                    return Err(Error::parse(line_no, "face needs at least three vertices"));
                }
                push_polygon(&mut faces, &poly);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

/// Center vertex, members and their relative coordinates for a local solver.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshPatch {
    pub center: usize,
    pub members: Vec<PatchMember>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMember {
    pub vertex: usize,
    /// Member position minus center position.
    pub offset: Vec3,
    pub value: f64,
    pub visited: bool,
}

impl MeshPatch {
    pub fn visited_count(&self) -> usize {
        self.members.iter().filter(|m| m.visited).count()
    }
}

/// The two-ring patch of `v` with values and visited flags taken from `front`.
pub fn second_ring_patch(mesh: &TriMesh, v: usize, front: Front<'_>) -> Result<MeshPatch> {
    if v >= mesh.num_vertices() {
        return Err(Error::Argument(format!("vertex {v} out of range")));
    }
    let ring = mesh.two_ring(v);
    if ring.is_empty() {
        return Err(Error::DegeneratePatch(v));
    }
    let center = mesh.vertices[v];
    let members = ring
        .iter()
        .map(|&q| PatchMember {
            vertex: q,
            offset: sub3(mesh.vertices[q], center),
            value: front.values()[q],
            visited: front.is_visited(q),
        })
        .collect();
    Ok(MeshPatch { center: v, members })
}

/// Twelve-vertex icosahedron inscribed in the unit sphere with vertex 0 at
/// the north pole `(0, 0, 1)` and vertex 11 at the south pole.
pub fn icosahedron() -> TriMesh {
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 * z;
    let tau = std::f64::consts::TAU;
    let mut vertices = vec![[0.0, 0.0, 1.0]];
    for k in 0..5 {
        let a = tau * k as f64 / 5.0;
        vertices.push([r * a.cos(), r * a.sin(), z]);
    }
    for k in 0..5 {
        let a = tau * k as f64 / 5.0 + tau / 10.0;
        vertices.push([r * a.cos(), r * a.sin(), -z]);
    }
    vertices.push([0.0, 0.0, -1.0]);
    let mut faces = Vec::with_capacity(20);
    for k in 0..5 {
        let (u0, u1) = (1 + k, 1 + (k + 1) % 5);
        let (l0, l1) = (6 + k, 6 + (k + 1) % 5);
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([11, l1, l0]);
    }
    TriMesh::new(vertices, faces).expect("icosahedron is a valid mesh")
}

/// One step of Loop subdivision. Original vertices keep their indices;
/// edge vertices are appended.
pub fn loop_subdivide(mesh: &TriMesh) -> Result<TriMesh> {
    let n = mesh.num_vertices();
    // edge -> opposite vertices
    let mut opposite: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            opposite.entry((a.min(b), a.max(b))).or_default().push(c);
        }
    }
    let boundary_nbrs = |v: usize| -> Vec<usize> {
        mesh.one_ring[v]
            .iter()
            .copied()
            .filter(|&w| opposite.get(&(v.min(w), v.max(w))).is_some_and(|o| o.len() == 1))
            .collect()
    };

    let mut vertices = Vec::with_capacity(n + opposite.len());
    for v in 0..n {
        let p = mesh.vertices[v];
        let bnd = boundary_nbrs(v);
        let moved = if bnd.len() == 2 {
            add3(scale3(p, 0.75), scale3(add3(mesh.vertices[bnd[0]], mesh.vertices[bnd[1]]), 0.125))
        } else if mesh.one_ring[v].is_empty() || !bnd.is_empty() {
            p
        } else {
            let ring = &mesh.one_ring[v];
            let k = ring.len() as f64;
            let c = 0.375 + 0.25 * (std::f64::consts::TAU / k).cos();
            let beta = (0.625 - c * c) / k;
            let sum = ring.iter().fold([0.0; 3], |acc, &w| add3(acc, mesh.vertices[w]));
            add3(scale3(p, 1.0 - k * beta), scale3(sum, beta))
        };
        vertices.push(moved);
    }
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::with_capacity(opposite.len());
    for (&(a, b), opp) in &opposite {
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let p = if opp.len() == 2 {
            add3(
                scale3(add3(pa, pb), 0.375),
                scale3(add3(mesh.vertices[opp[0]], mesh.vertices[opp[1]]), 0.125),
            )
        } else {
            scale3(add3(pa, pb), 0.5)
        };
        edge_vertex.insert((a, b), vertices.len());
        vertices.push(p);
    }
    let mid = |a: usize, b: usize| edge_vertex[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for f in &mesh.faces {
        let (a, b, c) = (f[0], f[1], f[2]);
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }
    TriMesh::new(vertices, faces)
}

pub const MAX_SPHERE_LEVEL: u32 = 7;

/// Unit sphere: the icosahedron refined `level` times by Loop subdivision,
/// with vertices projected back onto the sphere after every step.
/// Has `10·4^level + 2` vertices; vertex 0 is the north pole.
pub fn make_sphere(level: u32) -> Result<TriMesh> {
    if level > MAX_SPHERE_LEVEL {
        return Err(Error::ResourceLimit(format!(
            "sphere level {level} exceeds the maximum of {MAX_SPHERE_LEVEL}"
        )));
    }
    let mut mesh = icosahedron();
    for _ in 0..level {
        mesh = loop_subdivide(&mesh)?;
        for v in &mut mesh.vertices {
            *v = scale3(*v, 1.0 / norm3(*v));
        }
    }
    Ok(mesh)
}

/// Planar triangulation of `[0, 1]²` (z = 0) with `n × n` vertices. Interior
/// vertices are displaced by up to `jitter` cell widths (uniform) and the
/// diagonal of each cell alternates, both driven by `seed`.
pub fn make_planar_grid(n: usize, jitter: f64, seed: u64) -> Result<TriMesh> {
    use rand::Rng;
    if n < 2 {
        return Err(Error::Argument("planar grid needs at least 2x2 vertices".into()));
    }
    if !(0.0..0.5).contains(&jitter) {
        return Err(Error::Argument("jitter must be in [0, 0.5)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let mut p = [i as f64 * h, j as f64 * h, 0.0];
            if i > 0 && j > 0 && i + 1 < n && j + 1 < n && jitter > 0.0 {
                p[0] += rng.random_range(-jitter..jitter) * h;
                p[1] += rng.random_range(-jitter..jitter) * h;
            }
            vertices.push(p);
        }
    }
    let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            let (b, c, d) = (a + 1, a + n, a + n + 1);
            if rng.random_bool(0.5) {
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            } else {
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
    }
    TriMesh::new(vertices, faces)
}

/// Great-circle distance between two unit vectors.
pub fn sphere_geodesic_gt(p: Vec3, q: Vec3) -> Result<f64> {
    for v in [p, q] {
        if (norm3(v) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("{v:?} is not a unit vector")));
        }
    }
    Ok(dot3(p, q).clamp(-1.0, 1.0).acos())
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma` to
/// every vertex coordinate. Connectivity is unchanged.
pub fn perturb_vertices(mesh: &TriMesh, sigma: f64, seed: u64) -> Result<TriMesh> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("noise level must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(mesh.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            let mut out = *v;
            for c in &mut out {
                *c += normal.sample(&mut rng);
            }
            out
        })
        .collect();
    mesh.with_vertices(vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tag;
    use std::collections::{BTreeSet, VecDeque};

    const TRIANGLE_OFF: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    fn bfs_depth2(mesh: &TriMesh, v: usize) -> BTreeSet<usize> {
        let mut depth = vec![usize::MAX; mesh.num_vertices()];
        depth[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(w) = queue.pop_front() {
            if depth[w] == 2 {
                continue;
            }
            for &x in mesh.one_ring(w) {
                if depth[x] == usize::MAX {
                    depth[x] = depth[w] + 1;
                    queue.push_back(x);
                }
            }
        }
        (0..mesh.num_vertices())
            .filter(|&w| w != v && depth[w] <= 2)
            .collect()
    }

    #[test]
    fn single_triangle_off() {
        let m = load_mesh(TRIANGLE_OFF.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.faces().len(), 1);
        for v in 0..3 {
            assert_eq!(m.two_ring(v).len(), 2);
        }
        assert_eq!(parse_off(&m.to_off()).unwrap(), m);
    }

    #[test]
    fn obj_zero_index_is_a_parse_error() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
        assert!(matches!(parse_obj(obj), Err(Error::Parse { line: 4, .. })));
        let ok = "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n";
        let m = parse_obj(ok).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn parse_errors_report_lines() {
        let bad = "OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n";
        assert!(matches!(parse_off(bad), Err(Error::Parse { line: 4, .. })));
        let range = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n";
        assert!(matches!(parse_off(range), Err(Error::Parse { line: 6, .. })));
        assert!(matches!(parse_off("PLY\n"), Err(Error::Parse { line: 1, .. })));
        assert!(load_mesh(&[0xff, 0xfe], MeshFormat::Obj).is_err());
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let verts = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let faces = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        match TriMesh::new(verts, faces) {
            Err(Error::NonManifold { edges }) => assert_eq!(edges, vec![(0, 1)]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn icosahedron_rings() {
        let m = make_sphere(0).unwrap();
        assert_eq!((m.num_vertices(), m.faces().len()), (12, 20));
        for v in 0..12 {
            assert_eq!(m.one_ring(v).len(), 5);
            // 5 neighbors, then 5 more at hop two; only the antipode is farther.
            assert_eq!(m.two_ring(v).len(), 10);
            let bfs = bfs_depth2(&m, v);
            let got: BTreeSet<usize> = m.two_ring(v).iter().copied().collect();
            assert_eq!(got, bfs);
        }
        let off = m.to_off();
        let reread = load_mesh(off.as_bytes(), MeshFormat::Off).unwrap();
        assert!(reread.one_ring(3).len() == 5);
        let lens = m.edge_lengths();
        for l in &lens {
            assert!((l - lens[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn icosahedron_faces_point_outward() {
        let m = icosahedron();
        for f in m.faces() {
            let [a, b, c] = f.map(|v| m.vertices()[v]);
            let n = cross3(sub3(b, a), sub3(c, a));
            let centroid = scale3(add3(add3(a, b), c), 1.0 / 3.0);
            assert!(dot3(n, centroid) > 0.0);
        }
    }

    #[test]
    fn sphere_counts_and_projection() {
        for level in 0..=3u32 {
            let m = make_sphere(level).unwrap();
            assert_eq!(m.num_vertices(), 10 * 4usize.pow(level) + 2);
            assert_eq!(m.faces().len(), 20 * 4usize.pow(level));
            for v in m.vertices() {
                assert!((norm3(*v) - 1.0).abs() < 1e-12);
            }
            let pole = m.vertices()[0];
            assert!(norm3(sub3(pole, [0.0, 0.0, 1.0])) < 1e-15);
        }
        assert_eq!(make_sphere(1).unwrap().num_vertices(), 42);
        assert!(matches!(make_sphere(8), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn sphere_edges_halve_per_level() {
        let mut prev = make_sphere(0).unwrap().median_edge_length();
        for level in 1..=4 {
            let cur = make_sphere(level).unwrap().median_edge_length();
            let ratio = cur / prev;
            assert!((0.45..=0.56).contains(&ratio), "level {level}: ratio {ratio}");
            prev = cur;
        }
    }

    #[test]
    fn second_ring_matches_bfs_on_test_meshes() {
        let meshes = [
            make_sphere(2).unwrap(),
            make_planar_grid(7, 0.2, 3).unwrap(),
            parse_off(TRIANGLE_OFF).unwrap(),
        ];
        for m in &meshes {
            for v in 0..m.num_vertices() {
                let got: BTreeSet<usize> = m.two_ring(v).iter().copied().collect();
                assert_eq!(got.len(), m.two_ring(v).len());
                assert_eq!(got, bfs_depth2(m, v));
            }
        }
    }

    #[test]
    fn patch_is_translation_invariant() {
        let m = make_planar_grid(6, 0.3, 11).unwrap();
        let shifted = m
            .with_vertices(m.vertices().iter().map(|v| add3(*v, [3.0, -2.0, 0.5])).collect())
            .unwrap();
        let values: Vec<f64> = (0..m.num_vertices()).map(|k| k as f64 * 0.01).collect();
        let tags: Vec<Tag> = (0..m.num_vertices())
            .map(|k| if k % 3 == 0 { Tag::Visited } else { Tag::Unvisited })
            .collect();
        let front = Front::new(&values, &tags);
        for v in [0, 14, 20] {
            let a = second_ring_patch(&m, v, front).unwrap();
            let b = second_ring_patch(&shifted, v, front).unwrap();
            assert_eq!(a.members.len(), b.members.len());
            for (x, y) in a.members.iter().zip(&b.members) {
                assert_eq!(x.vertex, y.vertex);
                assert_eq!(x.visited, y.visited);
                for k in 0..3 {
                    assert!((x.offset[k] - y.offset[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn isolated_vertex_patch_is_degenerate() {
        let m = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0; 3]], vec![[0, 1, 2]]).unwrap();
        let values = vec![0.0; 4];
        let tags = vec![Tag::Unvisited; 4];
        assert!(matches!(
            second_ring_patch(&m, 3, Front::new(&values, &tags)),
            Err(Error::DegeneratePatch(3))
        ));
    }

    #[test]
    fn geodesic_examples() {
        let pi = std::f64::consts::PI;
        assert_eq!(sphere_geodesic_gt([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!((sphere_geodesic_gt([0.0, 0.0, 1.0], [0.0, 0.0, -1.0]).unwrap() - pi).abs() < 1e-15);
        assert!((sphere_geodesic_gt([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap() - pi / 2.0).abs() < 1e-15);
        assert!(matches!(sphere_geodesic_gt([2.0, 0.0, 0.0], [0.0, 1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn perturbation_contract() {
        let m = make_sphere(2).unwrap();
        assert_eq!(perturb_vertices(&m, 0.0, 1).unwrap(), m);
        let a = perturb_vertices(&m, 0.01, 42).unwrap();
        let b = perturb_vertices(&m, 0.01, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, perturb_vertices(&m, 0.01, 43).unwrap());
        assert_eq!(a.faces(), m.faces());
        assert!(perturb_vertices(&m, -1.0, 1).is_err());
    }

    #[test]
    fn perturbation_mean_within_standard_error() {
        let n = 100_000;
        let m = TriMesh::new(vec![[0.0; 3]; n], Vec::new()).unwrap();
        let sigma = 0.5;
        let noisy = perturb_vertices(&m, sigma, 9).unwrap();
        for k in 0..3 {
            let mean = noisy.vertices().iter().map(|v| v[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 * sigma / (n as f64).sqrt(), "coord {k}: {mean}");
        }
    }
}
