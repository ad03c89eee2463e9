//! Grid geometry and catchment polygons in planar km coordinates.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Regular grid of square cells; sites are the cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    /// Cell side length in km.
    pub cell_size: f64,
    /// Offset of the grid's lower-left corner in km.
    pub origin: (f64, f64),
}

impl GridGeometry {
    pub fn new(nx: usize, ny: usize, cell_size: f64, origin: (f64, f64)) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter(
                "grid must have at least one cell in each direction".into(),
            ));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        Ok(GridGeometry {
            nx,
            ny,
            cell_size,
            origin,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.nx * self.ny
    }

    /// Site index for (row, col); row-major with row = y direction.
    pub fn site_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.ny && col < self.nx);
        row * self.nx + col
    }

    pub fn row_col(&self, site: usize) -> (usize, usize) {
        (site / self.nx, site % self.nx)
    }

    /// Cell-center coordinates in km.
    pub fn site_coords(&self, site: usize) -> (f64, f64) {
        let (row, col) = self.row_col(site);
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.site_coords(a);
        let (bx, by) = self.site_coords(b);
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// All pairwise distances, site-major; 8 bytes x S^2.
    pub fn distance_matrix(&self) -> Vec<f64> {
        let s = self.n_sites();
        let coords: Vec<(f64, f64)> = (0..s).map(|i| self.site_coords(i)).collect();
        let mut d = vec![0.0; s * s];
        for i in 0..s {
            for j in (i + 1)..s {
                let v = ((coords[i].0 - coords[j].0).powi(2)
                    + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
                d[i * s + j] = v;
                d[j * s + i] = v;
            }
        }
        d
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Up to four orthogonal grid neighbors of a site.
    pub fn neighbors4(&self, site: usize) -> Vec<usize> {
        let (row, col) = self.row_col(site);
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            out.push(self.site_index(row - 1, col));
        }
        if row + 1 < self.ny {
            out.push(self.site_index(row + 1, col));
        }
        if col > 0 {
            out.push(self.site_index(row, col - 1));
        }
        if col + 1 < self.nx {
            out.push(self.site_index(row, col + 1));
        }
        out
    }
}

/// Closed polygon in km coordinates; the boundary counts as inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchmentPolygon {
    vertices: Vec<(f64, f64)>,
}

impl CatchmentPolygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let mut v = vertices;
        // Accept an explicitly closed ring by dropping the repeated vertex.
        if v.len() > 1 && v.first() == v.last() {
            v.pop();
        }
        if v.len() < 3 {
            return Err(Error::InvalidParameter(
                "polygon needs at least 3 vertices".into(),
            ));
        }
        let poly = CatchmentPolygon { vertices: v };
        if poly.self_intersects() {
            return Err(Error::InvalidParameter(
                "polygon is self-intersecting".into(),
            ));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn self_intersects(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share an endpoint).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_properly_intersect(edges[i], edges[j]) {
                    return true;
                }
            }
        }
        false
    }

    /// Point-in-polygon test; points on the boundary are inside.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        for (a, b) in self.edges() {
            if point_on_segment(p, a, b) {
                return true;
            }
        }
        // Even-odd ray casting with a half-open vertical rule.
        let mut inside = false;
        for (a, b) in self.edges() {
            let crosses = (a.1 > p.1) != (b.1 > p.1);
            if crosses {
                let x_at = a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
                if p.0 < x_at {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Sites of a grid whose centers fall inside the polygon.
    pub fn sites_inside(&self, geometry: &GridGeometry) -> Vec<usize> {
        (0..geometry.n_sites())
            .filter(|&s| self.contains(geometry.site_coords(s)))
            .collect()
    }

    /// Parse from text: one "x y" pair per line, `#` comments allowed.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let x: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: "expected x coordinate".into(),
                })?;
            let y: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: "expected y coordinate".into(),
                })?;
            vertices.push((x, y));
        }
        CatchmentPolygon::new(vertices)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (x, y) in &self.vertices {
            s.push_str(&format!("{x} {y}\n"));
        }
        s
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn point_on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let tol = 1e-9 * len.max(1.0);
    if cross(a, b, p).abs() > tol {
        return false;
    }
    p.0 >= a.0.min(b.0) - tol
        && p.0 <= a.0.max(b.0) + tol
        && p.1 >= a.1.min(b.1) - tol
        && p.1 <= a.1.max(b.1) + tol
}

fn segments_properly_intersect(
    (a, b): ((f64, f64), (f64, f64)),
    (c, d): ((f64, f64), (f64, f64)),
) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
