//! End-to-end restoration: scan for edges, fit them locally, smooth the rest.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::edges::{holm_adjust, render_edge_lines, scan, EdgeSet, ScanResult};
use crate::error::{Error, Result, Stage};
use crate::ltm::{ltm_window_density, Window};
use crate::model::{empirical_density, DensityGrid, ImageHistogram};
use crate::partition::{
    assemble_fields, build_support_sized, solve_partition_lp, Partition, SupportFunction,
};
use crate::spectral::{
    default_lambda_grid, forward_transform, select_lambda, smooth_estimate, tps_filter,
    SpectralField, TpsConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_half_width: usize,
    pub stride: usize,
    pub alpha: f64,
    pub tau: f64,
    pub edge_threshold: f64,
    pub lambda_grid: Vec<f64>,
    /// Fixed smoothing parameter; skips the grid search when set.
    pub lambda: Option<f64>,
    pub t_grid_step: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_half_width: 5,
            stride: 3,
            alpha: 0.01,
            tau: 5.0,
            edge_threshold: 0.8,
            lambda_grid: default_lambda_grid(),
            lambda: None,
            t_grid_step: 0.005,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.window_half_width < 2 {
            return bad(format!("window half-width must be at least 2, got {}", self.window_half_width));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return bad(format!("edge threshold must lie in (0, 1), got {}", self.edge_threshold));
        }
        if !(self.t_grid_step > 0.0 && self.t_grid_step <= 1.0) {
            return bad(format!("t grid step must lie in (0, 1], got {}", self.t_grid_step));
        }
        self.tps().validate()
    }

    fn tps(&self) -> TpsConfig {
        TpsConfig {
            lambda: self.lambda.unwrap_or(0.0),
            lambda_grid: self.lambda_grid.clone(),
        }
    }
}

/// Edge detection output shared by `detect` and `restore`.
#[derive(Debug, Clone)]
pub struct Detection {
    pub support: SupportFunction,
    pub scan: ScanResult,
    pub rejects: Vec<bool>,
    pub partition: Partition,
    pub edge_set: EdgeSet,
}

#[derive(Debug, Clone)]
pub struct RestorationResult {
    /// Sum over rejected windows of `alpha_i * S_i * p_i`, the local edge fits.
    pub edge_estimate: DensityGrid,
    pub smooth_estimate: DensityGrid,
    /// `edge_estimate + smooth_estimate`.
    pub combined: DensityGrid,
    pub detection: Detection,
    /// Filtered spectrum of the smooth part, before clamping.
    pub spectral: SpectralField,
    pub selected_lambda: f64,
}

impl RestorationResult {
    pub fn edge_set(&self) -> &EdgeSet {
        &self.detection.edge_set
    }

    pub fn partition(&self) -> &Partition {
        &self.detection.partition
    }
}

pub fn detect(h: &ImageHistogram, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    let t = cfg.window_half_width;
    if h.size() <= 2 * t + 2 {
        return Err(Error::InvalidInput(format!(
            "image must be larger than {0}x{0} for half-width {t}",
            2 * t + 2
        )));
    }
    let support = build_support_sized(t, cfg.tau).map_err(Error::at(Stage::Support))?;
    let scan = scan(h, t, cfg.stride, &support).map_err(Error::at(Stage::Scan))?;
    let rejects = holm_adjust(&scan.pvalues, cfg.alpha).map_err(Error::at(Stage::Scan))?;

    let centers: Vec<(usize, usize)> = scan
        .centers
        .iter()
        .zip(&rejects)
        .filter_map(|(c, r)| r.then_some(*c))
        .collect();
    let partition = if centers.is_empty() {
        Partition::empty(h.size())
    } else {
        let supports = vec![support.clone(); centers.len()];
        let solution = solve_partition_lp(&centers, &supports, h.size(), cfg.t_grid_step)
            .map_err(Error::at(Stage::Partition))?;
        assemble_fields(&solution, &supports, h.size()).map_err(Error::at(Stage::Partition))?
    };
    let edge_set = render_edge_lines(&scan, &rejects, cfg.alpha, &partition.p_e, cfg.edge_threshold)
        .map_err(Error::at(Stage::Partition))?;
    Ok(Detection {
        support,
        scan,
        rejects,
        partition,
        edge_set,
    })
}

/// Restores `h`, choosing lambda by the unbiased risk estimate (or using the
/// fixed value in `cfg`).
pub fn restore(h: &ImageHistogram, cfg: &PipelineConfig) -> Result<RestorationResult> {
    restore_impl(h, cfg, None)
}

/// Restores `h`, choosing lambda so the smooth part is closest to
/// `truth - edge_estimate`.
pub fn restore_with_truth(
    h: &ImageHistogram,
    cfg: &PipelineConfig,
    truth: &DensityGrid,
) -> Result<RestorationResult> {
    truth.check_size(h.size())?;
    restore_impl(h, cfg, Some(truth))
}

fn restore_impl(
    h: &ImageHistogram,
    cfg: &PipelineConfig,
    truth: Option<&DensityGrid>,
) -> Result<RestorationResult> {
    let detection = detect(h, cfg)?;
    let f_emp = empirical_density(h)?;
    let edge_estimate =
        edge_fits(h, &f_emp, &detection, cfg).map_err(Error::at(Stage::EdgeFit))?;

    let masked = DensityGrid::new(f_emp.values() * detection.partition.p_s.values())?;
    let smoothing = || -> Result<(f64, SpectralField, DensityGrid)> {
        let lambda = match (cfg.lambda, truth) {
            (Some(l), _) => l,
            (None, Some(t)) => {
                let target = DensityGrid::new(t.values() - edge_estimate.values())?;
                select_lambda(&masked, Some(&target), &cfg.tps())?
            }
            (None, None) => select_lambda(&masked, None, &cfg.tps())?,
        };
        let spectral = tps_filter(&forward_transform(&masked), lambda)?;
        Ok((lambda, spectral, smooth_estimate(&masked, lambda)?))
    };
    let (selected_lambda, spectral, smooth) = smoothing().map_err(Error::at(Stage::Smoothing))?;

    let combined = DensityGrid::new(edge_estimate.values() + smooth.values())?;
    Ok(RestorationResult {
        edge_estimate,
        smooth_estimate: smooth,
        combined,
        detection,
        spectral,
        selected_lambda,
    })
}

fn edge_fits(
    h: &ImageHistogram,
    f_emp: &DensityGrid,
    detection: &Detection,
    cfg: &PipelineConfig,
) -> Result<DensityGrid> {
    let size = h.size();
    let t = cfg.window_half_width;
    let rho = detection.support.values();
    let mut g = Array2::<f64>::zeros((size, size));
    let part = &detection.partition;
    for (&center, &alpha) in part.centers.iter().zip(&part.alphas) {
        let k = detection
            .scan
            .centers
            .iter()
            .position(|c| *c == center)
            .expect("partition centres come from the scan");
        let window = Window::extract(h, center, t, rho)?;
        let p = ltm_window_density(&window, &detection.scan.fits[k].params)?;
        let local = f_emp
            .values()
            .slice(ndarray::s![center.0 - t..=center.0 + t, center.1 - t..=center.1 + t]);
        let mass: f64 = local.iter().zip(rho).map(|(f, r)| f * r).sum();
        let mut target = g.slice_mut(ndarray::s![center.0 - t..=center.0 + t, center.1 - t..=center.1 + t]);
        target.zip_mut_with(&p, |gv, pv| *gv += alpha * mass * pv);
    }
    DensityGrid::new(g)
}

/// Spectral smoothing of the whole empirical density, with no edge handling.
pub fn spectral_baseline(
    h: &ImageHistogram,
    cfg: &PipelineConfig,
    truth: Option<&DensityGrid>,
) -> Result<(DensityGrid, f64)> {
    cfg.validate()?;
    let f_emp = empirical_density(h)?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => select_lambda(&f_emp, truth, &cfg.tps())?,
    };
    Ok((smooth_estimate(&f_emp, lambda)?, lambda))
}
