//! Sampling-noise experiments: Gibbs draws from an image-as-density and the
//! replicate error metrics.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensityGrid, ImageHistogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GibbsConfig {
    /// `m` in `T = m * M^2`.
    pub sample_size_multiplier: u32,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            sample_size_multiplier: 50,
            burn_in: 1000,
            thinning: 1,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size_multiplier == 0 {
            return Err(Error::InvalidInput("sample size multiplier must be positive".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidInput("thinning must be positive".into()));
        }
        Ok(())
    }
}

/// Random source for one replicate: the master seed on its own stream.
pub fn replicate_rng(seed: u64, multiplier: u32, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((multiplier as u64) << 32) | replicate as u64);
    rng
}

/// Draws `m * M^2` points from `truth` with a systematic-scan Gibbs sampler
/// (row given column, then column given row) and bins them.
pub fn gibbs_sample(truth: &DensityGrid, cfg: &GibbsConfig) -> Result<ImageHistogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gibbs_sample_with(truth, cfg, &mut rng)
}

pub fn gibbs_sample_with<R: Rng>(truth: &DensityGrid, cfg: &GibbsConfig, rng: &mut R) -> Result<ImageHistogram> {
    cfg.validate()?;
    let v = truth.values();
    if v.iter().any(|x| *x < 0.0) {
        return Err(Error::InvalidInput("truth density has negative values".into()));
    }
    let m = truth.size();
    // cumulative weights of each column (over rows) and each row (over columns)
    let cum = |line: ndarray::ArrayView1<f64>| {
        let mut acc = 0.0;
        line.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let by_col: Vec<Vec<f64>> = v.columns().into_iter().map(cum).collect();
    let by_row: Vec<Vec<f64>> = v.rows().into_iter().map(cum).collect();

    let (mut r, mut c) = argmax(v).ok_or(Error::EmptyHistogram)?;
    let draws = cfg.sample_size_multiplier as usize * m * m;
    let mut counts = Array2::<f64>::zeros((m, m));
    let step = |r: &mut usize, c: &mut usize, rng: &mut R| {
        *r = draw(&by_col[*c], rng);
        *c = draw(&by_row[*r], rng);
    };
    for _ in 0..cfg.burn_in {
        step(&mut r, &mut c, rng);
    }
    for _ in 0..draws {
        for _ in 0..cfg.thinning {
            step(&mut r, &mut c, rng);
        }
        counts[[r, c]] += 1.0;
    }
    ImageHistogram::new(counts)
}

fn argmax(v: &Array2<f64>) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (idx, &x) in v.indexed_iter() {
        if x > 0.0 && best.is_none_or(|(_, b)| x > b) {
            best = Some((idx, x));
        }
    }
    best.map(|(idx, _)| idx)
}

/// Index drawn proportionally to the increments of `cum`, whose last entry is positive.
fn draw<R: Rng>(cum: &[f64], rng: &mut R) -> usize {
    let total = *cum.last().expect("nonempty line");
    let u = rng.gen::<f64>() * total;
    let i = cum.partition_point(|&x| x <= u);
    // guard against u landing on the total through rounding
    let mut i = i.min(cum.len() - 1);
    while i > 0 && cum[i] == cum[i - 1] {
        i -= 1;
    }
    i
}

fn check_sizes(truth_size: usize, grids: &[DensityGrid]) -> Result<()> {
    for g in grids {
        if g.size() != truth_size {
            return Err(Error::DimensionMismatch {
                expected: truth_size,
                found: g.size(),
            });
        }
    }
    Ok(())
}

/// `(1/h_1)` times the replicate average of `sum_i (mass_hat_i - mass_i)^2`.
pub fn dmse(truth: &DensityGrid, replicates: &[DensityGrid]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::TooFewReplicates { needed: 1, got: 0 });
    }
    check_sizes(truth.size(), replicates)?;
    let target = truth.cell_masses();
    let total: f64 = replicates
        .iter()
        .map(|g| {
            g.cell_masses()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / replicates.len() as f64 / truth.cell_width())
}

/// `(1/h_1)` times the sum over cells of the across-replicate sample variance
/// (divisor `N - 1`) of the cell masses.
pub fn within_sample_variance(replicates: &[DensityGrid]) -> Result<f64> {
    let n = replicates.len();
    if n < 2 {
        return Err(Error::TooFewReplicates { needed: 2, got: n });
    }
    check_sizes(replicates[0].size(), replicates)?;
    let masses: Vec<Array2<f64>> = replicates.iter().map(|g| g.cell_masses()).collect();
    let mut mean = Array2::<f64>::zeros(masses[0].dim());
    for m in &masses {
        mean += m;
    }
    mean /= n as f64;
    let ss: f64 = masses
        .iter()
        .map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(ss / (n - 1) as f64 / replicates[0].cell_width())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub m: u32,
    pub dmse: f64,
    /// `None` when a single replicate was run.
    pub within_var: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub replicates: usize,
    /// One row per multiplier, sorted by `m`.
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn dmse_by_m(&self) -> Vec<(u32, f64)> {
        self.rows.iter().map(|r| (r.m, r.dmse)).collect()
    }

    pub fn ratio_by_m(&self) -> Vec<(u32, Option<f64>)> {
        self.rows.iter().map(|r| (r.m, r.ratio)).collect()
    }

    /// `m,dmse,within_var,ratio`; unavailable values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,dmse,within_var,ratio\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.10e},{},{}\n",
                r.m,
                r.dmse,
                opt(r.within_var),
                opt(r.ratio)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// For each multiplier, draws `replicates` noisy histograms from `truth`,
/// restores each with `pipeline`, and scores the restorations against the
/// normalized truth. Replicates run in parallel; results are identical to a
/// sequential run.
pub fn run_experiment<F>(
    truth: &DensityGrid,
    multipliers: &[u32],
    replicates: usize,
    base: &GibbsConfig,
    pipeline: F,
) -> Result<ExperimentReport>
where
    F: Fn(&ImageHistogram) -> Result<DensityGrid> + Sync,
{
    if replicates == 0 {
        return Err(Error::TooFewReplicates { needed: 1, got: 0 });
    }
    let truth = truth.normalized()?;
    let mut ms = multipliers.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let mut rows = Vec::with_capacity(ms.len());
    for &m in &ms {
        let cfg = GibbsConfig {
            sample_size_multiplier: m,
            ..base.clone()
        };
        cfg.validate()?;
        let estimates: Vec<DensityGrid> = (0..replicates)
            .into_par_iter()
            .map(|i| {
                let wrap = |e: Error| Error::Replicate {
                    multiplier: m,
                    replicate: i,
                    source: Box::new(e),
                };
                let mut rng = replicate_rng(base.seed, m, i);
                let h = gibbs_sample_with(&truth, &cfg, &mut rng).map_err(wrap)?;
                pipeline(&h).map_err(wrap)
            })
            .collect::<Result<_>>()?;
        let d = dmse(&truth, &estimates)?;
        let within_var = within_sample_variance(&estimates).ok();
        rows.push(ExperimentRow {
            m,
            dmse: d,
            within_var,
            ratio: within_var.map(|v| d / v),
        });
    }
    Ok(ExperimentReport { replicates, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::empirical_density;
    use approx::assert_abs_diff_eq;

    fn grid(v: Array2<f64>) -> DensityGrid {
        DensityGrid::new(v).unwrap()
    }

    #[test]
    fn uniform_two_by_two() {
        let truth = grid(Array2::ones((2, 2)));
        let mut passes = 0;
        for seed in 0..20 {
            let cfg = GibbsConfig {
                sample_size_multiplier: 10_000,
                seed,
                ..Default::default()
            };
            let h = gibbs_sample(&truth, &cfg).unwrap();
            assert_eq!(h.total(), 40_000.0);
            let sd = (40_000.0f64 * 0.25 * 0.75).sqrt();
            if h.counts().iter().all(|c| (c - 10_000.0).abs() <= 3.0 * sd) {
                passes += 1;
            }
        }
        assert!(passes >= 19);
    }

    #[test]
    fn point_mass() {
        let mut v = Array2::zeros((5, 5));
        v[[3, 1]] = 2.0;
        let h = gibbs_sample(&grid(v), &GibbsConfig { sample_size_multiplier: 4, ..Default::default() }).unwrap();
        assert_eq!(h.counts()[[3, 1]], 100.0);
        assert_eq!(h.total(), 100.0);
    }

    #[test]
    fn zero_truth_is_an_error() {
        assert!(gibbs_sample(&DensityGrid::zeros(3), &GibbsConfig::default()).is_err());
    }

    #[test]
    fn long_run_frequencies() {
        let v = Array2::from_shape_fn((4, 4), |(r, c)| 1.0 + (r * 4 + c) as f64);
        let truth = grid(v.clone());
        let cfg = GibbsConfig {
            sample_size_multiplier: 62_500,
            seed: 3,
            ..Default::default()
        };
        let h = gibbs_sample(&truth, &cfg).unwrap();
        let t = h.total();
        let s = v.sum();
        let tv: f64 = 0.5 * h.counts().iter().zip(&v).map(|(c, p)| (c / t - p / s).abs()).sum::<f64>();
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn never_visits_empty_rows() {
        let mut v = Array2::ones((4, 4));
        v.row_mut(2).fill(0.0);
        let h = gibbs_sample(&grid(v), &GibbsConfig { sample_size_multiplier: 50, ..Default::default() }).unwrap();
        assert!(h.counts().row(2).iter().all(|c| *c == 0.0));
    }

    #[test]
    fn seeds_are_reproducible() {
        let truth = grid(Array2::from_shape_fn((6, 6), |(r, c)| (r + c + 1) as f64));
        let cfg = GibbsConfig { sample_size_multiplier: 20, seed: 77, ..Default::default() };
        assert_eq!(gibbs_sample(&truth, &cfg).unwrap(), gibbs_sample(&truth, &cfg).unwrap());
        let a = gibbs_sample_with(&truth, &cfg, &mut replicate_rng(1, 20, 0)).unwrap();
        let b = gibbs_sample_with(&truth, &cfg, &mut replicate_rng(1, 20, 1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dmse_cases() {
        let truth = grid(Array2::ones((4, 4)));
        assert_eq!(dmse(&truth, &[truth.clone(), truth.clone()]).unwrap(), 0.0);
        // move mass delta between two cells: values shift by delta * M^2
        let delta = 0.01;
        let mut v = Array2::ones((4, 4));
        v[[0, 0]] += delta * 16.0;
        v[[1, 2]] -= delta * 16.0;
        let d = dmse(&truth, &[grid(v)]).unwrap();
        assert_abs_diff_eq!(d, 4.0 * 2.0 * delta * delta, epsilon = 1e-15);
        assert!(dmse(&truth, &[]).is_err());
        assert!(dmse(&truth, &[DensityGrid::zeros(3)]).is_err());
    }

    #[test]
    fn dmse_matches_straight_loop() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 7;
        let truth = grid(Array2::from_shape_fn((m, m), |_| rng.gen::<f64>()));
        let reps: Vec<DensityGrid> = (0..5)
            .map(|_| grid(Array2::from_shape_fn((m, m), |_| rng.gen::<f64>())))
            .collect();
        let mut acc = 0.0;
        for g in &reps {
            for r in 0..m {
                for c in 0..m {
                    let e = g.values()[[r, c]] / (m * m) as f64 - truth.values()[[r, c]] / (m * m) as f64;
                    acc += e * e;
                }
            }
        }
        let expect = acc / reps.len() as f64 * m as f64;
        assert_abs_diff_eq!(dmse(&truth, &reps).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn within_variance_cases() {
        let a = grid(Array2::ones((3, 3)));
        assert_eq!(within_sample_variance(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert!(matches!(
            within_sample_variance(std::slice::from_ref(&a)),
            Err(Error::TooFewReplicates { needed: 2, got: 1 })
        ));
        // masses differ by +-delta/2 around their mean in one cell
        let delta = 0.02;
        let mut hi = Array2::ones((3, 3));
        hi[[1, 1]] += delta / 2.0 * 9.0;
        let mut lo = Array2::ones((3, 3));
        lo[[1, 1]] -= delta / 2.0 * 9.0;
        let v = within_sample_variance(&[grid(hi), grid(lo)]).unwrap();
        // sample variance of {+d/2, -d/2} is d^2 / 2
        assert_abs_diff_eq!(v, 3.0 * delta * delta / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ratio_reflects_bias_and_variance() {
        use rand_distr::{Distribution, Normal};
        let m = 10;
        let truth = grid(Array2::ones((m, m)));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // per-cell mass bias b and standard deviation s
        let (b, s) = (0.002, 0.001);
        let cells = (m * m) as f64;
        let noise = Normal::new(0.0, s * cells).unwrap();
        let reps: Vec<DensityGrid> = (0..4000)
            .map(|_| grid(Array2::from_shape_fn((m, m), |_| 1.0 + b * cells + noise.sample(&mut rng))))
            .collect();
        let ratio = dmse(&truth, &reps).unwrap() / within_sample_variance(&reps).unwrap();
        let expect = 1.0 + b * b / (s * s);
        assert!((ratio - expect).abs() < 0.1, "{ratio} vs {expect}");
    }

    #[test]
    fn identity_pipeline_improves_with_sample_size() {
        let truth = grid(Array2::from_shape_fn((8, 8), |(r, c)| 1.0 + ((r + 2 * c) % 5) as f64));
        let base = GibbsConfig { seed: 5, ..Default::default() };
        let report = run_experiment(&truth, &[20, 10, 100, 50], 6, &base, empirical_density).unwrap();
        let ms: Vec<u32> = report.rows.iter().map(|r| r.m).collect();
        assert_eq!(ms, vec![10, 20, 50, 100]);
        for w in report.rows.windows(2) {
            assert!(w[1].dmse < w[0].dmse);
        }
        for r in &report.rows {
            assert_abs_diff_eq!(r.ratio.unwrap(), r.dmse / r.within_var.unwrap(), epsilon = 1e-12);
        }
        let again = run_experiment(&truth, &[20, 10, 100, 50], 6, &base, empirical_density).unwrap();
        assert_eq!(report, again);
        assert!(report.to_csv().starts_with("m,dmse,within_var,ratio\n10,"));
    }

    #[test]
    fn single_replicate_has_no_variance() {
        let truth = grid(Array2::ones((4, 4)));
        let report = run_experiment(&truth, &[10], 1, &GibbsConfig::default(), empirical_density).unwrap();
        assert!(report.rows[0].within_var.is_none());
        assert!(report.rows[0].ratio.is_none());
        assert!(report.to_csv().ends_with(",,\n"));
    }

    #[test]
    fn failures_name_the_replicate() {
        let truth = grid(Array2::ones((4, 4)));
        let err = run_experiment(&truth, &[10], 3, &GibbsConfig::default(), |_| {
            Err(Error::InvalidInput("boom".into()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Replicate { multiplier: 10, .. }));
    }
}
