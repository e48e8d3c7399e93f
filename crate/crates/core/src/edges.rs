//! Window scan, Holm step-down testing and edge-line rendering.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ltm::{edge_test, LtmFit, LtmParams, Window, BETA_ZERO_TOL};
use crate::model::{pixel_to_torus, template_statistic, DensityGrid, ImageHistogram};
use crate::partition::SupportFunction;

/// P-values and alternative fits for every window placement on the stride lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub centers: Vec<(usize, usize)>,
    pub pvalues: Vec<f64>,
    pub fits: Vec<LtmFit>,
    /// Windows with zero weighted mass; their p-value is 1.
    pub degenerate: Vec<bool>,
    pub stride: usize,
    pub window_half_width: usize,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub rejected_centers: Vec<(usize, usize)>,
    pub alpha: f64,
    pub edge_mask: Array2<bool>,
}

/// Centre coordinates along one axis: `t, t + s, ...` while the window fits.
pub fn lattice(size: usize, half_width: usize, stride: usize) -> Vec<usize> {
    if stride == 0 || size < 2 * half_width + 1 {
        return Vec::new();
    }
    (half_width..size - half_width).step_by(stride).collect()
}

/// Tests every window placement for an edge.
pub fn scan(
    h: &ImageHistogram,
    half_width: usize,
    stride: usize,
    rho: &SupportFunction,
) -> Result<ScanResult> {
    let size = h.size();
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    if size <= 2 * half_width + 1 {
        return Err(Error::InvalidInput(format!(
            "a {size}x{size} image is too small for windows of half-width {half_width}"
        )));
    }
    if rho.half_width() != half_width {
        return Err(Error::InvalidInput(format!(
            "support is {0}x{0} but the window is {1}x{1}",
            rho.window_size(),
            2 * half_width + 1
        )));
    }
    let axis = lattice(size, half_width, stride);
    let centers: Vec<(usize, usize)> = axis
        .iter()
        .flat_map(|&r| axis.iter().map(move |&c| (r, c)))
        .collect();

    let outcomes: Vec<(f64, LtmFit, bool)> = centers
        .par_iter()
        .map(|&c| {
            let w = Window::extract(h, c, half_width, rho.values())?;
            if !(w.weighted_mass() > 0.0) {
                return Ok((1.0, degenerate_fit(), true));
            }
            let test = edge_test(&w)?;
            Ok((test.pvalue, test.alternative, false))
        })
        .collect::<Result<_>>()?;

    let mut pvalues = Vec::with_capacity(outcomes.len());
    let mut fits = Vec::with_capacity(outcomes.len());
    let mut degenerate = Vec::with_capacity(outcomes.len());
    for (p, f, d) in outcomes {
        pvalues.push(p);
        fits.push(f);
        degenerate.push(d);
    }
    Ok(ScanResult {
        centers,
        pvalues,
        fits,
        degenerate,
        stride,
        window_half_width: half_width,
    })
}

fn degenerate_fit() -> LtmFit {
    LtmFit {
        params: LtmParams::null(),
        normalizer: f64::NAN,
        loglik: f64::NAN,
        converged: false,
        iterations: 0,
    }
}

/// Holm's step-down procedure. Flags are returned in input order.
///
/// `alpha = 0` is accepted and rejects nothing.
pub fn holm_adjust(pvalues: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let n = pvalues.len();
    if alpha == 0.0 {
        return Ok(vec![false; n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut flags = vec![false; n];
    for (k, &i) in order.iter().enumerate() {
        if pvalues[i] <= alpha / (n - k) as f64 {
            flags[i] = true;
        } else {
            break;
        }
    }
    Ok(flags)
}

/// Marks, inside each rejected window, the pixels on the fitted edge line,
/// keeps those where `P_e` exceeds `threshold`, and adds the image border.
///
/// A pixel lies on the line when `|beta'T| <= (pi / M) max(|beta_1|, |beta_2|)`,
/// i.e. within half a pixel of the zero set measured along the dominant axis.
pub fn render_edge_lines(
    scan: &ScanResult,
    rejects: &[bool],
    alpha: f64,
    p_e: &DensityGrid,
    threshold: f64,
) -> Result<EdgeSet> {
    if rejects.len() != scan.len() {
        return Err(Error::InvalidInput(format!(
            "{} reject flags for {} windows",
            rejects.len(),
            scan.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let size = p_e.size();
    let t = scan.window_half_width;
    let mut mask = Array2::from_elem((size, size), false);
    let mut rejected_centers = Vec::new();

    for ((&c, fit), _) in scan
        .centers
        .iter()
        .zip(&scan.fits)
        .zip(rejects)
        .filter(|(_, &r)| r)
    {
        rejected_centers.push(c);
        let beta = fit.params.beta;
        if beta[0].hypot(beta[1]) < BETA_ZERO_TOL {
            if p_e.values()[c] > threshold {
                mask[c] = true;
            }
            continue;
        }
        let origin = pixel_to_torus(c.0, c.1, size)?;
        let bound = std::f64::consts::PI / size as f64 * beta[0].abs().max(beta[1].abs());
        for r in c.0.saturating_sub(t)..=(c.0 + t).min(size - 1) {
            for col in c.1.saturating_sub(t)..=(c.1 + t).min(size - 1) {
                let stat = template_statistic(pixel_to_torus(r, col, size)?, origin);
                let v = beta[0] * stat[0] + beta[1] * stat[1];
                if v.abs() <= bound * (1.0 + 1e-9) && p_e.values()[[r, col]] > threshold {
                    mask[[r, col]] = true;
                }
            }
        }
    }
    mark_border(&mut mask);
    Ok(EdgeSet {
        rejected_centers,
        alpha,
        edge_mask: mask,
    })
}

fn mark_border(mask: &mut Array2<bool>) {
    let n = mask.nrows();
    if n == 0 {
        return;
    }
    for k in 0..n {
        mask[[0, k]] = true;
        mask[[n - 1, k]] = true;
        mask[[k, 0]] = true;
        mask[[k, n - 1]] = true;
    }
}
