//! Fourier-domain thin plate spline smoothing on the torus.
//!
//! Pixel `(r, c)` sits at the arc centres `z = exp(i pi (2c+1)/M)`,
//! `w = exp(i pi (2r+1)/M)`. The coefficient `u_{k,l}` pairs the column angle
//! with `k` and the row angle with `l`:
//!
//! ```text
//! u_{k,l} = M^-2 sum_{r,c} g[r,c] z_c^-k w_r^-l,     g[r,c] = sum_{k,l} u_{k,l} z_c^k w_r^l
//! ```
//!
//! with `k, l` in `-floor(M/2) ..= ceil(M/2) - 1`.

use std::io::Write;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DensityGrid;

/// Hermitian deviation tolerated by [`inverse_transform`].
pub const HERMITIAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    size: usize,
    /// `coeffs[[k - kmin, l - kmin]]`.
    coeffs: Array2<Complex64>,
}

impl SpectralField {
    /// Coefficients laid out as `coeffs[[k - kmin, l - kmin]]`.
    pub fn new(coeffs: Array2<Complex64>) -> Result<Self> {
        let (a, b) = coeffs.dim();
        if a != b || a == 0 {
            return Err(Error::InvalidInput(format!("coefficient grid must be square, got {a}x{b}")));
        }
        Ok(Self { size: a, coeffs })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn min_freq(&self) -> i64 {
        -((self.size / 2) as i64)
    }

    pub fn max_freq(&self) -> i64 {
        self.size.div_ceil(2) as i64 - 1
    }

    pub fn frequencies(&self) -> impl Iterator<Item = i64> {
        self.min_freq()..=self.max_freq()
    }

    pub fn raw(&self) -> &Array2<Complex64> {
        &self.coeffs
    }

    /// `u_{k,l}` for any integers; out-of-band frequencies alias with the sign
    /// flip `u_{k+M,l} = -u_{k,l}` that comes from the half-cell offset.
    pub fn coeff(&self, k: i64, l: i64) -> Complex64 {
        let (ik, sk) = self.reduce(k);
        let (il, sl) = self.reduce(l);
        let v = self.coeffs[[ik, il]];
        if sk ^ sl {
            -v
        } else {
            v
        }
    }

    pub fn set(&mut self, k: i64, l: i64, value: Complex64) {
        let (ik, sk) = self.reduce(k);
        let (il, sl) = self.reduce(l);
        self.coeffs[[ik, il]] = if sk ^ sl { -value } else { value };
    }

    /// Index into the stored band and whether an odd number of periods was removed.
    fn reduce(&self, k: i64) -> (usize, bool) {
        let m = self.size as i64;
        let shifted = k - self.min_freq();
        let q = shifted.div_euclid(m);
        (shifted.rem_euclid(m) as usize, q.rem_euclid(2) == 1)
    }

    /// Largest `|u_{-k,-l} - conj(u_{k,l})|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for k in self.frequencies() {
            for l in self.frequencies() {
                dev = dev.max((self.coeff(-k, -l) - self.coeff(k, l).conj()).norm());
            }
        }
        dev
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Thin plate spline penalty `sum (k^2 + l^2)^2 |u_{k,l}|^2`.
    pub fn tps_penalty(&self) -> f64 {
        let kmin = self.min_freq();
        self.coeffs
            .indexed_iter()
            .map(|((a, b), c)| tps_weight(a as i64 + kmin, b as i64 + kmin) * c.norm_sqr())
            .sum()
    }

    /// Writes `k,l,re,im` rows in increasing `(k, l)` order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,l,re,im")?;
        for k in self.frequencies() {
            for l in self.frequencies() {
                let c = self.coeff(k, l);
                writeln!(out, "{k},{l},{:e},{:e}", c.re, c.im)?;
            }
        }
        Ok(())
    }
}

/// `(k^2 + l^2)^2`, which reduces to `k^4` and `l^4` on the axes.
pub fn tps_weight(k: i64, l: i64) -> f64 {
    let r = (k * k + l * l) as f64;
    r * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpsConfig {
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
}

impl Default for TpsConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            lambda_grid: default_lambda_grid(),
        }
    }
}

impl TpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidInput("lambda grid is empty".into()));
        }
        if !(self.lambda_grid[0] >= 0.0) || self.lambda_grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("lambda grid must be finite and nonnegative".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("lambda grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 1e2, 32)
}

fn fft2(data: &mut Array2<Complex64>, inverse: bool) {
    let n = data.nrows();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut row in data.rows_mut() {
        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
        fft.process(&mut buf);
        row.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
    }
    for mut col in data.columns_mut() {
        buf.iter_mut().zip(col.iter()).for_each(|(b, v)| *b = *v);
        fft.process(&mut buf);
        col.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
    }
}

/// `exp(-i pi (k + l) / M)`, the offset of arc centres from the DFT nodes.
fn half_cell_phase(k: i64, l: i64, m: usize, sign: f64) -> Complex64 {
    Complex64::from_polar(1.0, sign * std::f64::consts::PI * (k + l) as f64 / m as f64)
}

pub fn forward_transform(g: &DensityGrid) -> SpectralField {
    let m = g.size();
    let mut data = g.values().mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut data, false);
    // data[[r_freq, c_freq]]: rows carry l, columns carry k
    let kmin = -((m / 2) as i64);
    let scale = 1.0 / (m * m) as f64;
    let coeffs = Array2::from_shape_fn((m, m), |(a, b)| {
        let (k, l) = (a as i64 + kmin, b as i64 + kmin);
        let src = data[[l.rem_euclid(m as i64) as usize, k.rem_euclid(m as i64) as usize]];
        src * half_cell_phase(k, l, m, -1.0) * scale
    });
    SpectralField { size: m, coeffs }
}

/// Divides every coefficient by `1 + lambda (k^2 + l^2)^2`.
pub fn tps_filter(u: &SpectralField, lambda: f64) -> Result<SpectralField> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    let kmin = u.min_freq();
    let coeffs = Array2::from_shape_fn(u.coeffs.dim(), |(a, b)| {
        let w = tps_weight(a as i64 + kmin, b as i64 + kmin);
        u.coeffs[[a, b]] / (1.0 + lambda * w)
    });
    Ok(SpectralField { size: u.size, coeffs })
}

pub fn inverse_transform(u: &SpectralField) -> Result<DensityGrid> {
    let dev = u.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    DensityGrid::new(inverse_real(u))
}

fn inverse_real(u: &SpectralField) -> Array2<f64> {
    let m = u.size;
    let kmin = u.min_freq();
    let mut data = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
    for ((a, b), c) in u.coeffs.indexed_iter() {
        let (k, l) = (a as i64 + kmin, b as i64 + kmin);
        data[[l.rem_euclid(m as i64) as usize, k.rem_euclid(m as i64) as usize]] =
            c * half_cell_phase(k, l, m, 1.0);
    }
    fft2(&mut data, true);
    data.mapv(|c| c.re)
}

/// Filters at `lambda`, inverts and clamps negative values to zero.
pub fn smooth_estimate(masked: &DensityGrid, lambda: f64) -> Result<DensityGrid> {
    smooth_from_spectrum(&forward_transform(masked), lambda)
}

fn smooth_from_spectrum(u: &SpectralField, lambda: f64) -> Result<DensityGrid> {
    let g = inverse_transform(&tps_filter(u, lambda)?)?;
    DensityGrid::new(g.into_values().mapv(|v| v.max(0.0)))
}

/// Picks the grid value of lambda.
///
/// With `truth`, the one whose smoothed estimate is closest to it in mean
/// squared error. Without, the minimizer of Stein's unbiased risk estimate for
/// the linear shrinkage, with the noise power read off the highest frequencies.
/// Ties go to the smaller lambda.
pub fn select_lambda(masked: &DensityGrid, truth: Option<&DensityGrid>, cfg: &TpsConfig) -> Result<f64> {
    cfg.validate()?;
    let u = forward_transform(masked);
    let scores: Vec<f64> = match truth {
        Some(t) => {
            if t.size() != masked.size() {
                return Err(Error::DimensionMismatch {
                    expected: masked.size(),
                    found: t.size(),
                });
            }
            cfg.lambda_grid
                .iter()
                .map(|&lam| {
                    let est = smooth_from_spectrum(&u, lam)?;
                    Ok(mean_squared_error(est.values(), t.values()))
                })
                .collect::<Result<_>>()?
        }
        None => {
            let sigma2 = noise_power(&u);
            cfg.lambda_grid.iter().map(|&lam| sure_risk(&u, lam, sigma2)).collect()
        }
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(cfg.lambda_grid[best])
}

pub fn mean_squared_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Noise power per coefficient: median `|u|^2` over the outer tenth of radial
/// frequencies, rescaled from median to mean of an exponential variable.
pub fn noise_power(u: &SpectralField) -> f64 {
    let kmin = u.min_freq();
    let mut radial: Vec<(f64, f64)> = u
        .coeffs
        .indexed_iter()
        .map(|((a, b), c)| {
            let (k, l) = ((a as i64 + kmin) as f64, (b as i64 + kmin) as f64);
            (k.hypot(l), c.norm_sqr())
        })
        .collect();
    radial.sort_by(|x, y| x.0.total_cmp(&y.0));
    let cut = radial[((radial.len() as f64) * 0.9) as usize].0;
    let mut power: Vec<f64> = radial.iter().filter(|(r, _)| *r >= cut).map(|(_, p)| *p).collect();
    power.sort_by(f64::total_cmp);
    let n = power.len();
    let median = if n % 2 == 1 {
        power[n / 2]
    } else {
        0.5 * (power[n / 2 - 1] + power[n / 2])
    };
    median / std::f64::consts::LN_2
}

/// `sum (1 - s)^2 |u|^2 + sigma2 (2 s - 1)` with `s = 1 / (1 + lambda w)`.
pub fn sure_risk(u: &SpectralField, lambda: f64, sigma2: f64) -> f64 {
    let kmin = u.min_freq();
    u.coeffs
        .indexed_iter()
        .map(|((a, b), c)| {
            let s = 1.0 / (1.0 + lambda * tps_weight(a as i64 + kmin, b as i64 + kmin));
            (1.0 - s).powi(2) * c.norm_sqr() + sigma2 * (2.0 * s - 1.0)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_grid(m: usize, seed: u64) -> DensityGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DensityGrid::new(Array2::from_shape_fn((m, m), |_| rng.gen_range(0.0..2.0))).unwrap()
    }

    fn angle(i: usize, m: usize) -> f64 {
        PI * (2 * i + 1) as f64 / m as f64
    }

    fn naive_dft(g: &DensityGrid, k: i64, l: i64) -> Complex64 {
        let m = g.size();
        let mut acc = Complex64::new(0.0, 0.0);
        for ((r, c), v) in g.values().indexed_iter() {
            let phase = -(k as f64 * angle(c, m) + l as f64 * angle(r, m));
            acc += Complex64::from_polar(*v, phase);
        }
        acc / (m * m) as f64
    }

    #[test]
    fn matches_direct_summation() {
        for m in [7, 8] {
            let g = random_grid(m, m as u64);
            let u = forward_transform(&g);
            for k in u.frequencies() {
                for l in u.frequencies() {
                    assert!((u.coeff(k, l) - naive_dft(&g, k, l)).norm() < 1e-9);
                }
            }
            // aliases outside the band follow the same summation
            assert!((u.coeff(m as i64, 1) - naive_dft(&g, m as i64, 1)).norm() < 1e-9);
            assert!((u.coeff(-3, 2 * m as i64 + 1) - naive_dft(&g, -3, 2 * m as i64 + 1)).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_grid() {
        let g = DensityGrid::new(Array2::from_elem((6, 6), 2.5)).unwrap();
        let u = forward_transform(&g);
        for k in u.frequencies() {
            for l in u.frequencies() {
                let expect = if k == 0 && l == 0 { 2.5 } else { 0.0 };
                assert_abs_diff_eq!(u.coeff(k, l).re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(u.coeff(k, l).im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pure_tone_has_two_coefficients() {
        let m = 16;
        let g = DensityGrid::new(Array2::from_shape_fn((m, m), |(_, c)| (3.0 * angle(c, m)).cos())).unwrap();
        let u = forward_transform(&g);
        for k in u.frequencies() {
            for l in u.frequencies() {
                let expect = if l == 0 && k.abs() == 3 { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(u.coeff(k, l).norm(), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_coefficient_inverts_to_cosine() {
        let m = 10;
        let mut u = SpectralField::new(Array2::from_elem((m, m), Complex64::new(0.0, 0.0))).unwrap();
        u.set(0, 1, Complex64::new(1.0, 0.0));
        u.set(0, -1, Complex64::new(1.0, 0.0));
        let g = inverse_transform(&u).unwrap();
        for ((r, _), v) in g.values().indexed_iter() {
            assert_abs_diff_eq!(*v, 2.0 * angle(r, m).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        for m in [5, 8, 13] {
            let g = random_grid(m, 7);
            let u = forward_transform(&g);
            assert!(u.hermitian_deviation() < 1e-12);
            let back = inverse_transform(&u).unwrap();
            for (a, b) in back.values().iter().zip(g.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
            let space: f64 = g.values().iter().map(|v| v * v).sum::<f64>() / (m * m) as f64;
            assert_abs_diff_eq!(space, u.energy(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut u = SpectralField::new(Array2::from_elem((4, 4), Complex64::new(0.0, 0.0))).unwrap();
        u.set(1, 0, Complex64::new(1.0, 0.0));
        assert!(matches!(inverse_transform(&u), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn filter_divisors() {
        let g = random_grid(8, 3);
        let u = forward_transform(&g);
        let same = tps_filter(&u, 0.0).unwrap();
        assert_eq!(same, u);
        let f = tps_filter(&u, 1.0).unwrap();
        assert!((f.coeff(1, 0) - u.coeff(1, 0) / 2.0).norm() < 1e-15);
        assert!((f.coeff(0, 0) - u.coeff(0, 0)).norm() < 1e-15);
        let f = tps_filter(&u, 0.25).unwrap();
        assert!((f.coeff(1, 1) - u.coeff(1, 1) / 2.0).norm() < 1e-15);
        assert!((f.coeff(1, -1) - u.coeff(1, -1) / 2.0).norm() < 1e-15);
        assert!(tps_filter(&u, -1.0).is_err());
        assert!(f.hermitian_deviation() < 1e-12);
    }

    #[test]
    fn filter_shrinks_monotonically() {
        let u = forward_transform(&random_grid(9, 11));
        let mut prev = tps_filter(&u, 0.0).unwrap();
        for lam in [1e-4, 1e-2, 1.0, 100.0] {
            let next = tps_filter(&u, lam).unwrap();
            for (a, b) in next.raw().iter().zip(prev.raw()) {
                assert!(a.norm() <= b.norm() + 1e-15);
            }
            assert!(next.tps_penalty() <= prev.tps_penalty());
            assert_eq!(next.coeff(0, 0), u.coeff(0, 0));
            prev = next;
        }
    }

    #[test]
    fn large_lambda_flattens() {
        let g = random_grid(12, 5);
        let s = smooth_estimate(&g, 1e12).unwrap();
        let mean = g.values().mean().unwrap();
        for v in s.values() {
            assert_abs_diff_eq!(*v, mean, epsilon = 1e-9);
        }
        let s = smooth_estimate(&g, 0.0).unwrap();
        for (a, b) in s.values().iter().zip(g.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_clamps_negatives() {
        let mut v = Array2::zeros((16, 16));
        v[[8, 8]] = 100.0;
        let s = smooth_estimate(&DensityGrid::new(v).unwrap(), 1e-3).unwrap();
        assert!(s.is_nonnegative());
    }

    #[test]
    fn selection_with_exact_truth_picks_smallest() {
        let g = random_grid(16, 9);
        let cfg = TpsConfig::default();
        assert_eq!(select_lambda(&g, Some(&g), &cfg).unwrap(), cfg.lambda_grid[0]);
    }

    #[test]
    fn selection_under_heavy_noise_picks_largest() {
        let truth = DensityGrid::new(Array2::from_elem((32, 32), 1.0)).unwrap();
        let noisy = random_grid(32, 21);
        let cfg = TpsConfig::default();
        let last = *cfg.lambda_grid.last().unwrap();
        assert_eq!(select_lambda(&noisy, Some(&truth), &cfg).unwrap(), last);
        assert_eq!(select_lambda(&noisy, None, &cfg).unwrap(), last);
        assert_eq!(
            select_lambda(&noisy, None, &cfg).unwrap(),
            select_lambda(&noisy, None, &cfg).unwrap()
        );
    }

    #[test]
    fn unbiased_risk_tracks_true_risk() {
        // smooth signal plus white noise of known power
        let m = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean = Array2::from_shape_fn((m, m), |(r, c)| 1.0 + 0.5 * (angle(c, m)).cos() * (angle(r, m)).sin());
        let sd = 0.3;
        let noisy = clean.mapv(|v| v + sd * (rng.gen::<f64>() - 0.5) * 12f64.sqrt());
        let truth = DensityGrid::new(clean).unwrap();
        let noisy = DensityGrid::new(noisy).unwrap();
        let cfg = TpsConfig::default();
        let a = select_lambda(&noisy, Some(&truth), &cfg).unwrap();
        let b = select_lambda(&noisy, None, &cfg).unwrap();
        let ia = cfg.lambda_grid.iter().position(|v| *v == a).unwrap() as i64;
        let ib = cfg.lambda_grid.iter().position(|v| *v == b).unwrap() as i64;
        assert!((ia - ib).abs() <= 3, "oracle {a}, unbiased risk {b}");
        assert_abs_diff_eq!(noise_power(&forward_transform(&noisy)), sd * sd / (m * m) as f64, epsilon = 0.5 * sd * sd / (m * m) as f64);
    }

    #[test]
    fn csv_layout() {
        let u = forward_transform(&random_grid(3, 1));
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,l,re,im");
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("-1,-1,"));
        assert!(lines[2].starts_with("-1,0,"));
        assert!(lines[9].starts_with("1,1,"));
    }

    #[test]
    fn config_validation() {
        assert!(TpsConfig::default().validate().is_ok());
        let bad = TpsConfig { lambda: 0.0, lambda_grid: vec![1.0, 0.5] };
        assert!(bad.validate().is_err());
        let bad = TpsConfig { lambda: 0.0, lambda_grid: vec![] };
        assert!(bad.validate().is_err());
        let grid = default_lambda_grid();
        assert_eq!(grid.len(), 32);
        assert_abs_diff_eq!(grid[0], 1e-8, epsilon = 1e-20);
        assert_abs_diff_eq!(grid[31], 1e2, epsilon = 1e-10);
    }
}
