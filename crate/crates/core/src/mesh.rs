//! Uniform 2-D point clouds, interaction families and the Gaussian influence
//! function.
//!
//! Points are stored row-major with `x` varying fastest: the point at grid
//! column `i` and row `j` has index `j * nx + i`. A family is the square
//! stencil of half-width `h` around its center, truncated at the domain
//! boundary. Member 0 is always the center; the remaining members follow the
//! stencil in raster order (rows bottom to top, columns left to right).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest family that still determines the six-term quadratic moment system.
pub const MIN_FAMILY_MEMBERS: usize = 6;

/// Where grid points sit inside the domain rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLayout {
    /// Points on the lattice nodes, corners included.
    #[default]
    Nodes,
    /// Points at the centers of `nx * ny` equal cells.
    CellCenters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 2]>,
    areas: Vec<f64>,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    origin: [f64; 2],
    width: f64,
    height: f64,
}

/// A point, the members it interacts with, and their influence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFamily {
    pub center: usize,
    /// Point indices; `members[0] == center`.
    pub members: Vec<usize>,
    /// Relative positions `x_member - x_center` in meters.
    pub xi: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Cell area of each member in m^2.
    pub areas: Vec<f64>,
    pub horizon: f64,
    /// Full stencil, slot 0 is the center; `None` marks a slot outside the domain.
    pub slots: Vec<Option<usize>>,
}

impl PointFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }
}

/// Builds an `nx * ny` uniform grid on `[0, width] x [0, height]`.
pub fn build_grid(nx: usize, ny: usize, width: f64, height: f64) -> Result<PointCloud> {
    build_grid_with_layout(nx, ny, width, height, GridLayout::Nodes)
}

pub fn build_grid_with_layout(
    nx: usize,
    ny: usize,
    width: f64,
    height: f64,
    layout: GridLayout,
) -> Result<PointCloud> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid(format!(
            "grid needs at least 2 points per direction, got {nx} x {ny}"
        )));
    }
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {width} x {height}"
        )));
    }
    let (dx, dy, x0, y0) = match layout {
        GridLayout::Nodes => (width / (nx - 1) as f64, height / (ny - 1) as f64, 0.0, 0.0),
        GridLayout::CellCenters => {
            let dx = width / nx as f64;
            let dy = height / ny as f64;
            (dx, dy, 0.5 * dx, 0.5 * dy)
        }
    };
    let mut points = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            points.push([x0 + i as f64 * dx, y0 + j as f64 * dy]);
        }
    }
    Ok(PointCloud {
        areas: vec![dx * dy; points.len()],
        points,
        nx,
        ny,
        dx,
        dy,
        origin: [0.0, 0.0],
        width,
        height,
    })
}

impl PointCloud {
    /// Recovers the grid structure of a point list produced in row-major
    /// order over a uniform lattice (as written by the field file format).
    pub fn from_grid_points(points: &[[f64; 2]]) -> Result<Self> {
        let xs = distinct_sorted(points.iter().map(|p| p[0]));
        let ys = distinct_sorted(points.iter().map(|p| p[1]));
        let (nx, ny) = (xs.len(), ys.len());
        if nx < 2 || ny < 2 || nx * ny != points.len() {
            return Err(Error::invalid(format!(
                "{} points do not form a uniform grid ({} distinct x, {} distinct y)",
                points.len(),
                nx,
                ny
            )));
        }
        let dx = (xs[nx - 1] - xs[0]) / (nx - 1) as f64;
        let dy = (ys[ny - 1] - ys[0]) / (ny - 1) as f64;
        let tol = 1e-9;
        for (k, p) in points.iter().enumerate() {
            let (i, j) = (k % nx, k / nx);
            let expect = [xs[0] + i as f64 * dx, ys[0] + j as f64 * dy];
            if (p[0] - expect[0]).abs() > tol * dx || (p[1] - expect[1]).abs() > tol * dy {
                return Err(Error::invalid(format!(
                    "point {k} at ({}, {}) breaks the row-major uniform grid",
                    p[0], p[1]
                )));
            }
        }
        Ok(PointCloud {
            points: points.to_vec(),
            areas: vec![dx * dy; points.len()],
            nx,
            ny,
            dx,
            dy,
            origin: [xs[0], ys[0]],
            width: xs[nx - 1] - xs[0],
            height: ys[ny - 1] - ys[0],
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Nominal grid spacing, the larger of the two directions.
    pub fn spacing(&self) -> f64 {
        self.dx.max(self.dy)
    }

    pub fn spacing_xy(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    /// Domain rectangle as `(origin, [width, height])`.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.origin, [self.width, self.height])
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    v
}

/// Gaussian influence function `exp(-4 |xi|^2 / delta^2)`.
pub fn weight_of(xi_norm: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!(
            "horizon must be positive, got {delta}"
        )));
    }
    if !(xi_norm >= 0.0) {
        return Err(Error::invalid(format!(
            "separation must be non-negative, got {xi_norm}"
        )));
    }
    Ok((-4.0 * xi_norm * xi_norm / (delta * delta)).exp())
}

/// Stencil offsets in slot order: the center first, then raster order.
pub fn stencil_offsets(halfwidth: usize) -> Vec<(isize, isize)> {
    let h = halfwidth as isize;
    let mut offsets = Vec::with_capacity((2 * halfwidth + 1).pow(2));
    offsets.push((0, 0));
    for dj in -h..=h {
        for di in -h..=h {
            if (di, dj) != (0, 0) {
                offsets.push((di, dj));
            }
        }
    }
    offsets
}

/// Builds the square-stencil family of every point, with horizon
/// `delta_factor * spacing`.
pub fn build_families(
    cloud: &PointCloud,
    stencil_halfwidth: usize,
    delta_factor: f64,
) -> Result<Vec<PointFamily>> {
    if stencil_halfwidth < 1 {
        return Err(Error::invalid("stencil half-width must be at least 1"));
    }
    if !(delta_factor > 0.0) {
        return Err(Error::invalid(format!(
            "delta factor must be positive, got {delta_factor}"
        )));
    }
    let delta = delta_factor * cloud.spacing();
    let offsets = stencil_offsets(stencil_halfwidth);
    let (nx, ny) = cloud.dims();
    let mut families = Vec::with_capacity(cloud.len());
    for center in 0..cloud.len() {
        let (ci, cj) = ((center % nx) as isize, (center / nx) as isize);
        let xc = cloud.point(center);
        let mut fam = PointFamily {
            center,
            members: Vec::new(),
            xi: Vec::new(),
            weights: Vec::new(),
            areas: Vec::new(),
            horizon: delta,
            slots: Vec::with_capacity(offsets.len()),
        };
        for &(di, dj) in &offsets {
            let (i, j) = (ci + di, cj + dj);
            if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                fam.slots.push(None);
                continue;
            }
            let m = cloud.index(i as usize, j as usize);
            let xm = cloud.point(m);
            let xi = [xm[0] - xc[0], xm[1] - xc[1]];
            let w = if m == center {
                1.0
            } else {
                weight_of((xi[0] * xi[0] + xi[1] * xi[1]).sqrt(), delta)?
            };
            fam.slots.push(Some(fam.members.len()));
            fam.members.push(m);
            fam.xi.push(xi);
            fam.weights.push(w);
            fam.areas.push(cloud.areas()[m]);
        }
        if fam.members.len() < MIN_FAMILY_MEMBERS {
            return Err(Error::OperatorUnderdetermined {
                point: center,
                members: fam.members.len(),
            });
        }
        families.push(fam);
    }
    Ok(families)
}
