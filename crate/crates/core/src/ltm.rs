//! Local Template Model.
//!
//! On an `m x m` window centred at `omega0` the model density at pixel `omega` is
//!
//! ```text
//! p(omega) = exp{ b'T + eta |b'T| - d(b, eta) } * rho(omega),   T = T(omega omega0^-1)
//! ```
//!
//! where `rho` is the window's support function and `d` normalizes over the
//! window pixels. `eta = 0` gives a smooth log-linear tilt; `eta != 0` puts a
//! crease along the line `b'T = 0`, which is what the edge test looks for.

use ndarray::Array2;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{pixel_to_torus, template_statistic, ImageHistogram, TorusPoint};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// `eta` is clamped to `[-ETA_BOUND, ETA_BOUND]` during fitting.
pub const ETA_BOUND: f64 = 10.0;

/// Below this norm the fitted direction is treated as zero and `eta` reported as 0.
pub const BETA_ZERO_TOL: f64 = 1e-6;

const BETA_STARTS: [[f64; 2]; 5] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]];
const ETA_STARTS: [f64; 3] = [0.0, 0.5, -0.5];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LtmParams {
    pub beta: [f64; 2],
    pub eta: f64,
}

impl LtmParams {
    pub fn new(beta: [f64; 2], eta: f64) -> Self {
        Self { beta, eta }
    }

    pub fn null() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|b| b.is_finite()) && self.eta.is_finite()
    }

    /// Log-density kernel `b'T + eta |b'T|` at a template statistic.
    #[inline]
    pub fn exponent(&self, t: [f64; 2]) -> f64 {
        let a = self.beta[0] * t[0] + self.beta[1] * t[1];
        a + self.eta * a.abs()
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta[0].hypot(self.beta[1])
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LtmFit {
    pub params: LtmParams,
    /// `d(beta, eta)`.
    pub normalizer: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// A window of an image histogram together with its support function.
#[derive(Debug, Clone)]
pub struct Window {
    center: (usize, usize),
    half_width: usize,
    grid_size: usize,
    counts: Array2<f64>,
    rho: Array2<f64>,
    /// Template statistic of every window pixel relative to the centre.
    stats: Array2<[f64; 2]>,
}

impl Window {
    /// A window over an `grid_size x grid_size` torus. `counts` and `rho` are
    /// `m x m` with `m = 2 * half_width + 1`.
    pub fn new(
        center: (usize, usize),
        half_width: usize,
        grid_size: usize,
        counts: Array2<f64>,
        rho: Array2<f64>,
    ) -> Result<Self> {
        let m = 2 * half_width + 1;
        if counts.dim() != (m, m) || rho.dim() != (m, m) {
            return Err(Error::InvalidInput(format!(
                "window arrays must be {m}x{m}, got counts {:?} and rho {:?}",
                counts.dim(),
                rho.dim()
            )));
        }
        if m > grid_size {
            return Err(Error::InvalidInput(format!(
                "a {m}x{m} window does not fit a {grid_size}x{grid_size} grid"
            )));
        }
        if center.0 >= grid_size || center.1 >= grid_size {
            return Err(Error::IndexOutOfRange {
                row: center.0,
                col: center.1,
                size: grid_size,
            });
        }
        if rho.iter().chain(counts.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "window counts and support must be finite and nonnegative".into(),
            ));
        }
        let stats = window_statistics(center, half_width, grid_size)?;
        Ok(Self {
            center,
            half_width,
            grid_size,
            counts,
            rho,
            stats,
        })
    }

    /// Restricts `h` to the window centred at `center`. The window must lie
    /// entirely inside the image.
    pub fn extract(
        h: &ImageHistogram,
        center: (usize, usize),
        half_width: usize,
        rho: &Array2<f64>,
    ) -> Result<Self> {
        let size = h.size();
        let (r, c) = center;
        if r < half_width || c < half_width || r + half_width >= size || c + half_width >= size {
            return Err(Error::InvalidInput(format!(
                "window of half-width {half_width} at ({r}, {c}) leaves the {size}x{size} image"
            )));
        }
        let counts = h
            .counts()
            .slice(ndarray::s![
                r - half_width..=r + half_width,
                c - half_width..=c + half_width
            ])
            .to_owned();
        Self::new(center, half_width, size, counts, rho.clone())
    }

    pub fn center(&self) -> (usize, usize) {
        self.center
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn rho(&self) -> &Array2<f64> {
        &self.rho
    }

    /// Template statistic `T(omega_i omega0^-1)` for window pixel `(i, j)`.
    pub fn statistic(&self, i: usize, j: usize) -> [f64; 2] {
        self.stats[[i, j]]
    }

    /// Weighted mass `S = sum Y rho`.
    pub fn weighted_mass(&self) -> f64 {
        self.counts.iter().zip(&self.rho).map(|(y, r)| y * r).sum()
    }

    /// Kish effective sample size `S^2 / sum Y rho^2` of the weighted counts.
    pub fn effective_size(&self) -> f64 {
        let s = self.weighted_mass();
        let s2: f64 = self.counts.iter().zip(&self.rho).map(|(y, r)| y * r * r).sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }

    pub fn torus_center(&self) -> TorusPoint {
        pixel_to_torus(self.center.0, self.center.1, self.grid_size)
            .expect("centre validated at construction")
    }
}

fn window_statistics(
    center: (usize, usize),
    half_width: usize,
    grid_size: usize,
) -> Result<Array2<[f64; 2]>> {
    let m = 2 * half_width + 1;
    let origin = pixel_to_torus(center.0, center.1, grid_size)?;
    let wrap = |base: usize, offset: usize| {
        (base + grid_size + offset - half_width) % grid_size
    };
    let mut stats = Array2::from_elem((m, m), [0.0, 0.0]);
    for i in 0..m {
        for j in 0..m {
            let p = pixel_to_torus(wrap(center.0, i), wrap(center.1, j), grid_size)?;
            stats[[i, j]] = template_statistic(p, origin);
        }
    }
    Ok(stats)
}

/// Per-pixel terms of the weighted likelihood, restricted to `rho > 0`.
struct Objective {
    stats: Vec<[f64; 2]>,
    log_rho: Vec<f64>,
    weights: Vec<f64>,
}

impl Objective {
    fn new(w: &Window) -> Result<Self> {
        let s = w.weighted_mass();
        if !(s > 0.0) {
            return Err(Error::EmptyWindow(s));
        }
        Ok(Self::with_mass(w, s))
    }

    fn support_only(w: &Window) -> Result<Self> {
        let obj = Self::with_mass(w, 1.0);
        if obj.stats.is_empty() {
            return Err(Error::DegenerateSupport);
        }
        Ok(obj)
    }

    fn with_mass(w: &Window, s: f64) -> Self {
        let mut obj = Objective {
            stats: Vec::new(),
            log_rho: Vec::new(),
            weights: Vec::new(),
        };
        for ((idx, &rho), &y) in w.rho.indexed_iter().zip(&w.counts) {
            if rho > 0.0 {
                obj.stats.push(w.stats[idx]);
                obj.log_rho.push(rho.ln());
                obj.weights.push(y * rho / s);
            }
        }
        obj
    }

    fn normalizer(&self, p: &LtmParams) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (t, lr) in self.stats.iter().zip(&self.log_rho) {
            max = max.max(p.exponent(*t) + lr);
        }
        let sum: f64 = self
            .stats
            .iter()
            .zip(&self.log_rho)
            .map(|(t, lr)| (p.exponent(*t) + lr - max).exp())
            .sum();
        max + sum.ln()
    }

    fn loglik(&self, p: &LtmParams) -> (f64, f64) {
        let d = self.normalizer(p);
        let fit: f64 = self
            .stats
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| p.exponent(*t) * w)
            .sum();
        (fit - d, d)
    }
}

/// Log-normalizer `d(beta, eta) = log sum_i rho_i exp{b'T_i + eta |b'T_i|}`.
pub fn ltm_normalizer(w: &Window, p: &LtmParams) -> Result<f64> {
    Ok(Objective::support_only(w)?.normalizer(p))
}

/// Log of the model probability of a single pixel.
pub fn ltm_log_density(
    omega: TorusPoint,
    omega0: TorusPoint,
    p: &LtmParams,
    normalizer: f64,
    rho_at_omega: f64,
) -> Result<f64> {
    if !(rho_at_omega > 0.0) {
        return Err(Error::OutsideSupport);
    }
    Ok(p.exponent(template_statistic(omega, omega0)) - normalizer + rho_at_omega.ln())
}

/// Model probabilities over the window pixels; sums to one.
pub fn ltm_window_density(w: &Window, p: &LtmParams) -> Result<Array2<f64>> {
    let d = ltm_normalizer(w, p)?;
    let mut out = Array2::zeros(w.rho.dim());
    for ((idx, &rho), o) in w.rho.indexed_iter().zip(out.iter_mut()) {
        if rho > 0.0 {
            *o = (p.exponent(w.stats[idx]) - d).exp() * rho;
        }
    }
    Ok(out)
}

/// Weighted log-likelihood `sum_i (b'T_i + eta|b'T_i|) Y_i rho_i / S - d(beta, eta)`,
/// without the additive constant.
pub fn weighted_loglik(w: &Window, p: &LtmParams) -> Result<f64> {
    Ok(Objective::new(w)?.loglik(p).0)
}

/// Maximum likelihood fit over `(beta, eta)`, or over `beta` with `eta = 0`.
pub fn fit_mle(w: &Window, eta_free: bool) -> Result<LtmFit> {
    let obj = Objective::new(w)?;
    let null = fit_with(&obj, false, &[]);
    if eta_free {
        // the null optimum seeds the free fit, so the nested model can never win
        Ok(fit_with(&obj, true, &[null.params]))
    } else {
        Ok(null)
    }
}

fn fit_with(obj: &Objective, eta_free: bool, extra_starts: &[LtmParams]) -> LtmFit {
    let opts = NelderMeadOptions::default();
    let clamp = |eta: f64| eta.clamp(-ETA_BOUND, ETA_BOUND);
    let neg_loglik = |x: &[f64]| {
        let eta = if eta_free { clamp(x[2]) } else { 0.0 };
        -obj.loglik(&LtmParams::new([x[0], x[1]], eta)).0
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    for beta in BETA_STARTS {
        if eta_free {
            for eta in ETA_STARTS {
                starts.push(vec![beta[0], beta[1], eta]);
            }
        } else {
            starts.push(beta.to_vec());
        }
    }
    for p in extra_starts {
        let mut v = p.beta.to_vec();
        if eta_free {
            v.push(p.eta);
        }
        starts.push(v);
    }

    let mut best: Option<(f64, Vec<f64>, bool, usize)> = None;
    for start in &starts {
        let m = nelder_mead(neg_loglik, start, opts);
        let better = best.as_ref().is_none_or(|(v, ..)| m.value < *v);
        if better {
            best = Some((m.value, m.point, m.converged, m.iterations));
        }
    }
    let (_, point, mut converged, iterations) = best.expect("at least one start");

    let mut eta = if eta_free { clamp(point[2]) } else { 0.0 };
    if eta_free && eta.abs() >= ETA_BOUND {
        converged = false;
    }
    let beta = [point[0], point[1]];
    if beta[0].hypot(beta[1]) < BETA_ZERO_TOL {
        eta = 0.0;
    }
    let params = LtmParams::new(beta, eta);
    let (loglik, normalizer) = obj.loglik(&params);
    LtmFit {
        params,
        normalizer,
        loglik,
        converged,
        iterations,
    }
}

/// Outcome of the likelihood-ratio test for `eta = 0` on one window.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EdgeTest {
    pub pvalue: f64,
    /// `2 n_eff (l1 - l0)`.
    pub statistic: f64,
    pub alternative: LtmFit,
    pub null: LtmFit,
}

/// Likelihood-ratio test of `eta = 0` against `eta != 0`.
///
/// The weighted log-likelihoods are per unit of weighted mass, so their
/// difference is scaled by the Kish effective sample size of the weighted
/// counts and referred to a chi-square with one degree of freedom.
pub fn edge_test(w: &Window) -> Result<EdgeTest> {
    let obj = Objective::new(w)?;
    let null = fit_with(&obj, false, &[]);
    let alternative = fit_with(&obj, true, &[null.params]);
    let gain = alternative.loglik - null.loglik;
    let (statistic, pvalue) = if gain > 0.0 {
        let stat = 2.0 * w.effective_size() * gain;
        (stat, chi2_one_sf(stat))
    } else {
        (0.0, 1.0)
    };
    Ok(EdgeTest {
        pvalue,
        statistic,
        alternative,
        null,
    })
}

pub fn lrt_pvalue(w: &Window) -> Result<f64> {
    Ok(edge_test(w)?.pvalue)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_one_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
    }
}
