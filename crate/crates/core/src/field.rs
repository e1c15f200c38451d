//! Solver output: one distance per domain point, plus its text formats.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::GridDomain;

/// Distances indexed like the domain's points; `+∞` marks unreached points.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    values: Vec<f64>,
}

impl DistanceField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v < 0.0)
        {
            return Err(Error::Argument(format!("distance {v} at point {k} is not a valid distance")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One value per line in point order; unreached points are written as `inf`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 20);
        for v in &self.values {
            push_value(&mut out, *v);
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            values.push(parse_value(line, n + 1)?);
        }
        Self::new(values)
    }

    /// CSV with header `i,j,x,y,u`, one row per grid point in row-major order.
    pub fn to_grid_csv(&self, domain: &GridDomain) -> Result<String> {
        if domain.len() != self.values.len() {
            return Err(Error::Shape {
                expected: domain.len(),
                got: self.values.len(),
            });
        }
        let mut out = String::from("i,j,x,y,u\n");
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = domain.ij(k);
            let [x, y] = domain.position(k);
            let _ = write!(out, "{i},{j},{x},{y},");
            push_value(&mut out, *v);
            out.push('\n');
        }
        Ok(out)
    }

    /// Reads the grid CSV back. Rows may come in any order but must cover
    /// every point of the implied `nx × ny` lattice exactly once.
    pub fn parse_grid_csv(text: &str) -> Result<(GridDomain, Self)> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "i,j,x,y,u" => {}
            _ => return Err(Error::parse(1, "expected header `i,j,x,y,u`")),
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(Error::parse(line_no, "expected 5 columns"));
            }
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(line_no, format!("invalid index `{s}`")))
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("invalid number `{s}`")))
            };
            rows.push((idx(cols[0])?, idx(cols[1])?, num(cols[2])?, parse_value(cols[4], line_no)?));
        }
        let nx = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        let ny = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
        if nx.checked_mul(ny) != Some(rows.len()) {
            return Err(Error::parse(0, "rows do not form a complete lattice"));
        }
        let h = rows
            .iter()
            .find(|r| r.0 == 1)
            .map(|r| r.2)
            .ok_or_else(|| Error::parse(0, "cannot infer grid spacing"))?;
        let domain = GridDomain::new(nx, ny, h)?;
        let mut values = vec![f64::NAN; nx * ny];
        for (i, j, _, u) in rows {
            let slot = &mut values[domain.index(i, j)];
            if !slot.is_nan() {
                return Err(Error::parse(0, format!("duplicate row for ({i}, {j})")));
            }
            *slot = u;
        }
        Ok((domain, Self::new(values)?))
    }
}

fn push_value(out: &mut String, v: f64) {
    if v.is_infinite() {
        out.push_str("inf");
    } else {
        let _ = write!(out, "{v}");
    }
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    match s {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        _ => {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid distance `{s}`")))?;
            if v.is_nan() || v < 0.0 {
                return Err(Error::parse(line, format!("invalid distance `{s}`")));
            }
            Ok(v)
        }
    }
}
