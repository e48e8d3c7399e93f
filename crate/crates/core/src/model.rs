//! Images as histograms.
//!
//! An `M x M` image is a table of counts `Y(s_i)` over pixel sites. Dividing by
//! the total mass and multiplying by the number of sites `D = M^2` gives a
//! piecewise-constant density on the unit square, which is the object every
//! estimator in this crate works with.
//!
//! Pixels are addressed row-major as `(row, col)`. When a pixel is embedded on
//! the torus, its column becomes the `z` angle and its row the `w` angle, so the
//! first template coordinate measures horizontal displacement.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance between `total` and the sum of counts.
const TOTAL_REL_TOL: f64 = 1e-9;

/// Nonnegative pixel counts `Y(s_i)` on an `M x M` grid together with their total `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageHistogram {
    counts: Array2<f64>,
    total: f64,
}

impl ImageHistogram {
    pub fn new(counts: Array2<f64>) -> Result<Self> {
        let (rows, cols) = counts.dim();
        if rows == 0 || rows != cols {
            return Err(Error::InvalidInput(format!(
                "histogram must be square and nonempty, got {rows}x{cols}"
            )));
        }
        if let Some(bad) = counts.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "counts must be finite and nonnegative, found {bad}"
            )));
        }
        let total: f64 = counts.sum();
        if total <= 0.0 {
            return Err(Error::EmptyHistogram);
        }
        Ok(Self { counts, total })
    }

    /// Builds a histogram from raw intensities, clamping negative values to zero.
    pub fn from_intensities(values: Array2<f64>) -> Result<Self> {
        Self::new(values.mapv(|v| if v.is_nan() { v } else { v.max(0.0) }))
    }

    /// Side length `M`.
    pub fn size(&self) -> usize {
        self.counts.nrows()
    }

    /// Number of pixel sites `D = M^2`.
    pub fn sites(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub(crate) fn check_total(&self) -> bool {
        (self.counts.sum() - self.total).abs() <= TOTAL_REL_TOL * self.total
    }
}

/// A piecewise-constant function on the `M x M` pixel grid.
///
/// When it represents a probability density, `sum(values) / M^2 == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    values: Array2<f64>,
}

impl DensityGrid {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || rows != cols {
            return Err(Error::InvalidInput(format!(
                "density grid must be square and nonempty, got {rows}x{cols}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("density grid has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            values: Array2::zeros((size, size)),
        }
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// Spatial bandwidth of a single pixel, `h_1 = 1/M`.
    pub fn cell_width(&self) -> f64 {
        1.0 / self.size() as f64
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Integral over the unit square, `sum(values) / M^2`.
    pub fn integral(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }

    /// Per-pixel probability masses `value / M^2`.
    pub fn cell_masses(&self) -> Array2<f64> {
        let d = self.values.len() as f64;
        self.values.mapv(|v| v / d)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    /// Rescales so the grid integrates to one. Fails on zero mass.
    pub fn normalized(&self) -> Result<Self> {
        if !self.is_nonnegative() {
            return Err(Error::InvalidInput("cannot normalize a grid with negative values".into()));
        }
        let integral = self.integral();
        if integral <= 0.0 {
            return Err(Error::EmptyHistogram);
        }
        Ok(Self {
            values: self.values.mapv(|v| v / integral),
        })
    }

    pub(crate) fn check_size(&self, expected: usize) -> Result<()> {
        if self.size() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.size(),
            });
        }
        Ok(())
    }
}

/// Empirical histogram density `(D/T) * Y(s_i)`.
pub fn empirical_density(h: &ImageHistogram) -> Result<DensityGrid> {
    if h.total() <= 0.0 || !h.check_total() {
        return Err(Error::EmptyHistogram);
    }
    let scale = h.sites() as f64 / h.total();
    DensityGrid::new(h.counts().mapv(|y| y * scale))
}

/// A point `(z, w)` of the torus, stored as angles in `[0, 2pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPoint {
    z_angle: f64,
    w_angle: f64,
}

impl TorusPoint {
    pub fn new(z_angle: f64, w_angle: f64) -> Self {
        Self {
            z_angle: wrap_unsigned(z_angle),
            w_angle: wrap_unsigned(w_angle),
        }
    }

    pub fn z_angle(&self) -> f64 {
        self.z_angle
    }

    pub fn w_angle(&self) -> f64 {
        self.w_angle
    }

    /// Group product on the torus.
    pub fn mul(self, other: TorusPoint) -> TorusPoint {
        TorusPoint::new(self.z_angle + other.z_angle, self.w_angle + other.w_angle)
    }

    /// Inverse, which on the torus equals the complex conjugate.
    pub fn inverse(self) -> TorusPoint {
        TorusPoint::new(-self.z_angle, -self.w_angle)
    }

    /// The group metric `sqrt(|z1 conj(z2) - 1|^2 + |w1 conj(w2) - 1|^2)`.
    pub fn distance(self, other: TorusPoint) -> f64 {
        let chord = |a: f64| 2.0 * (a / 2.0).sin().abs();
        let q = self.mul(other.inverse());
        chord(q.z_angle).hypot(chord(q.w_angle))
    }
}

fn wrap_unsigned(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2pi for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Wraps an angle into `(-pi, pi]`. An angle of exactly `pi` stays at `pi`.
pub(crate) fn wrap_signed(angle: f64) -> f64 {
    let a = wrap_unsigned(angle);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Maps pixel `(row, col)` of an `M x M` grid to the arc-center root of unity
/// `omega_{2M}^{2k+1}` in each coordinate (column to `z`, row to `w`).
pub fn pixel_to_torus(row: usize, col: usize, size: usize) -> Result<TorusPoint> {
    if row >= size || col >= size {
        return Err(Error::IndexOutOfRange { row, col, size });
    }
    Ok(TorusPoint::new(arc_center(col, size), arc_center(row, size)))
}

pub(crate) fn arc_center(index: usize, size: usize) -> f64 {
    PI * (2 * index + 1) as f64 / size as f64
}

/// Template statistic `T(omega * omega0^{-1})`: the signed angular displacement
/// of `omega` from `omega0` in each coordinate, wrapped into `(-pi, pi]`.
pub fn template_statistic(omega: TorusPoint, omega0: TorusPoint) -> [f64; 2] {
    [
        wrap_signed(omega.z_angle - omega0.z_angle),
        wrap_signed(omega.w_angle - omega0.w_angle),
    ]
}
