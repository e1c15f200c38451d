//! Regularly sampled planar domain, source primitives and the exact
//! Euclidean distance to them.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Offsets `(di, dj)` of the twelve lattice points within `2h` of a grid
/// point, ordered row-major by `(dj, di)`.
pub const PATCH_OFFSETS: [(isize, isize); 12] = [
    (0, -2),
    (-1, -1),
    (0, -1),
    (1, -1),
    (-2, 0),
    (-1, 0),
    (1, 0),
    (2, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (0, 2),
];

/// Slots of `PATCH_OFFSETS` holding the four axis neighbors at distance `h`,
/// as `[-x, +x, -y, +y]`.
pub const AXIS_SLOTS: [usize; 4] = [5, 6, 2, 9];

/// Slots holding the axis neighbors at distance `2h`, paired with `AXIS_SLOTS`.
pub const FAR_AXIS_SLOTS: [usize; 4] = [4, 7, 0, 11];

/// How `grid_patch` treats lattice offsets that fall off the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatchMode {
    /// Only points at least two cells from every boundary are accepted.
    Strict,
    /// Off-grid offsets are reported as absent.
    #[default]
    Masked,
}

/// `nx × ny` points with uniform spacing `h`; point `(i, j)` sits at `(i·h, j·h)`
/// and has flat index `j·nx + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDomain {
    nx: usize,
    ny: usize,
    h: f64,
}

impl GridDomain {
    pub const MIN_POINTS: usize = 5;

    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        if nx < Self::MIN_POINTS || ny < Self::MIN_POINTS {
            return Err(Error::Domain(format!(
                "grid must be at least {0}x{0} points, got {nx}x{ny}",
                Self::MIN_POINTS
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
        }
        Ok(Self { nx, ny, h })
    }

    /// Square grid covering `[0, 1]²` with spacing `h` (`1/h` must be close to an integer).
    pub fn unit_square(h: f64) -> Result<Self> {
        let cells = (1.0 / h).round();
        if !(cells >= 1.0) || ((cells * h) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("1/h must be an integer, got h = {h}")));
        }
        let n = cells as usize + 1;
        Self::new(n, n, h)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn position(&self, index: usize) -> [f64; 2] {
        let (i, j) = self.ij(index);
        [i as f64 * self.h, j as f64 * self.h]
    }

    fn offset(&self, i: usize, j: usize, di: isize, dj: isize) -> Option<usize> {
        let ii = i as isize + di;
        let jj = j as isize + dj;
        if ii < 0 || jj < 0 || ii >= self.nx as isize || jj >= self.ny as isize {
            None
        } else {
            Some(self.index(ii as usize, jj as usize))
        }
    }

    /// The twelve points within `2h` of `(i, j)` in `PATCH_OFFSETS` order.
    /// In masked mode off-grid entries are `None`; in strict mode a point
    /// closer than two cells to the boundary is an error.
    pub fn grid_patch(&self, i: usize, j: usize, mode: PatchMode) -> Result<[Option<usize>; 12]> {
        if i >= self.nx || j >= self.ny {
            return Err(Error::Domain(format!(
                "index ({i}, {j}) outside {}x{} grid",
                self.nx, self.ny
            )));
        }
        if mode == PatchMode::Strict
            && (i < 2 || j < 2 || i + 2 >= self.nx || j + 2 >= self.ny)
        {
            return Err(Error::Domain(format!(
                "index ({i}, {j}) is within two cells of the boundary"
            )));
        }
        let mut out = [None; 12];
        for (slot, &(di, dj)) in out.iter_mut().zip(PATCH_OFFSETS.iter()) {
            *slot = self.offset(i, j, di, dj);
        }
        Ok(out)
    }

    pub(crate) fn patch_of(&self, index: usize) -> [Option<usize>; 12] {
        let (i, j) = self.ij(index);
        let mut out = [None; 12];
        for (slot, &(di, dj)) in out.iter_mut().zip(PATCH_OFFSETS.iter()) {
            *slot = self.offset(i, j, di, dj);
        }
        out
    }

    /// Points whose exact distance to `sources` is at most `radius` (and 0 for
    /// points lying on a source), paired with that distance. These initialize
    /// a solve as already-visited boundary data.
    pub fn seed_points(&self, sources: &SourceSet, radius: f64) -> Vec<(usize, f64)> {
        let tol = 1e-9 * self.h;
        (0..self.len())
            .filter_map(|k| {
                let u = sources.distance(self.position(k));
                (u <= radius + tol).then_some((k, if u <= tol * 1e-3 { 0.0 } else { u }))
            })
            .collect()
    }
}

/// One component of a source set.
#[derive(Debug, Clone, PartialEq)]
pub enum SourcePrimitive {
    Point([f64; 2]),
    Circle { center: [f64; 2], radius: f64 },
    Polyline(Vec<[f64; 2]>),
}

impl SourcePrimitive {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match self {
            SourcePrimitive::Point(s) => norm(sub(p, *s)),
            SourcePrimitive::Circle { center, radius } => (norm(sub(p, *center)) - radius).abs(),
            SourcePrimitive::Polyline(vs) => vs
                .windows(2)
                .map(|w| segment_distance(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |q: &[f64; 2]| q[0].is_finite() && q[1].is_finite();
        match self {
            SourcePrimitive::Point(p) if !finite(p) => {
                Err(Error::Argument("source point must be finite".into()))
            }
            SourcePrimitive::Circle { center, radius } => {
                if !finite(center) || !(*radius > 0.0 && radius.is_finite()) {
                    Err(Error::Argument(format!("circle radius must be positive, got {radius}")))
                } else {
                    Ok(())
                }
            }
            SourcePrimitive::Polyline(vs) => {
                if vs.len() < 2 {
                    Err(Error::Argument("polyline needs at least two vertices".into()))
                } else if !vs.iter().all(finite) {
                    Err(Error::Argument("polyline vertices must be finite".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Non-empty union of source primitives (the zero set of the distance function).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    primitives: Vec<SourcePrimitive>,
}

impl SourceSet {
    pub fn new(primitives: Vec<SourcePrimitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Argument("source set is empty".into()));
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { primitives })
    }

    pub fn points(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(points.iter().copied().map(SourcePrimitive::Point).collect())
    }

    pub fn primitives(&self) -> &[SourcePrimitive] {
        &self.primitives
    }

    /// Exact distance from `p` to the union of all primitives.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.primitives
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Parses the line-oriented source format (`point x y`, `circle cx cy r`,
    /// `polyline x1 y1 x2 y2 ...`). Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut prims = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap_or_default();
            let nums = tokens
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("invalid number `{t}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let prim = match (keyword, nums.len()) {
                ("point", 2) => SourcePrimitive::Point([nums[0], nums[1]]),
                ("circle", 3) => SourcePrimitive::Circle {
                    center: [nums[0], nums[1]],
                    radius: nums[2],
                },
                ("polyline", k) if k >= 4 && k % 2 == 0 => {
                    SourcePrimitive::Polyline(nums.chunks(2).map(|c| [c[0], c[1]]).collect())
                }
                ("point" | "circle" | "polyline", k) => {
                    return Err(Error::parse(
                        line_no,
                        format!("wrong number of values ({k}) for `{keyword}`"),
                    ))
                }
                _ => return Err(Error::parse(line_no, format!("unknown primitive `{keyword}`"))),
            };
            prim.validate()
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
            prims.push(prim);
        }
        if prims.is_empty() {
            return Err(Error::parse(0, "source file defines no primitives"));
        }
        Self::new(prims)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.primitives {
            match p {
                SourcePrimitive::Point([x, y]) => writeln!(out, "point {x} {y}"),
                SourcePrimitive::Circle { center, radius } => {
                    writeln!(out, "circle {} {} {radius}", center[0], center[1])
                }
                SourcePrimitive::Polyline(vs) => {
                    out.push_str("polyline");
                    for v in vs {
                        let _ = write!(out, " {} {}", v[0], v[1]);
                    }
                    writeln!(out)
                }
            }
            .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Exact distance from `p` to the nearest source (unsigned distance for circles).
pub fn euclidean_gt(sources: &SourceSet, p: [f64; 2]) -> f64 {
    sources.distance(p)
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return norm(ap);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}
