//! Partition of unity over detected edge windows.
//!
//! Every detected window carries a copy of the support function `rho`, a
//! centre-peaked bump obtained by convolving a trapezoid with a tan-tapered
//! product kernel. The bumps are scaled by weights `alpha_i` chosen by a linear
//! program that makes the edge field `P_e = sum alpha_i rho_i` as large as
//! possible at every detected centre while keeping it at most one.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DensityGrid;

/// Grid spacing of the achievable level `t`.
pub const DEFAULT_T_STEP: f64 = 0.005;

/// Numerical slack tolerated above one before `P_e` is considered invalid.
pub const OVERFLOW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportFunction {
    values: Array2<f64>,
    tau: f64,
}

impl SupportFunction {
    /// Wraps an arbitrary odd-sized nonnegative weight grid.
    pub fn from_values(values: Array2<f64>, tau: f64) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "support must be square with odd side, got {r}x{c}"
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("support values must be finite and nonnegative".into()));
        }
        Ok(Self { values, tau })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn window_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn half_width(&self) -> usize {
        self.values.nrows() / 2
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn center_value(&self) -> f64 {
        let h = self.half_width();
        self.values[[h, h]]
    }

    /// Value at image pixel `(row, col)` when the bump is centred at `center`.
    pub fn value_at(&self, center: (usize, usize), pixel: (usize, usize)) -> f64 {
        let h = self.half_width() as isize;
        let di = pixel.0 as isize - center.0 as isize + h;
        let dj = pixel.1 as isize - center.1 as isize + h;
        let m = self.window_size() as isize;
        if (0..m).contains(&di) && (0..m).contains(&dj) {
            self.values[[di as usize, dj as usize]]
        } else {
            0.0
        }
    }

    /// Nonzero values of the bump centred at `center`, clipped to the image.
    pub fn embed(
        &self,
        center: (usize, usize),
        grid_size: usize,
    ) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let h = self.half_width() as isize;
        self.values.indexed_iter().filter_map(move |((i, j), &v)| {
            let r = center.0 as isize + i as isize - h;
            let c = center.1 as isize + j as isize - h;
            let inside = (0..grid_size as isize).contains(&r) && (0..grid_size as isize).contains(&c);
            (inside && v > 0.0).then_some(((r as usize, c as usize), v))
        })
    }
}

/// Trapezoid on an `n x n` grid (1-based): zero on the outer frame, one half on
/// the next frame in, one inside.
pub fn trapezoid(n: usize, k1: usize, k2: usize) -> f64 {
    let inside = |k: usize| (1..=n).contains(&k);
    if !inside(k1) || !inside(k2) {
        return 0.0;
    }
    let outer = |k: usize| k == 1 || k == n;
    let frame = |k: usize| k == 2 || k + 1 == n;
    if outer(k1) || outer(k2) {
        0.0
    } else if frame(k1) || frame(k2) {
        0.5
    } else {
        1.0
    }
}

/// Tan-tapered bump on an `n x n` grid (1-based) centred at `((n+1)/2, (n+1)/2)`.
pub fn tan_taper(n: usize, tau: f64, k1: usize, k2: usize) -> f64 {
    let inside = |k: usize| (1..=n).contains(&k);
    if !inside(k1) || !inside(k2) {
        return 0.0;
    }
    let c = (n as f64 + 1.0) / 2.0;
    taper_factor(k1 as f64 - c, tau) * taper_factor(k2 as f64 - c, tau)
}

/// `exp{-tan(pi x / (2 tau))^2}`.
pub fn taper_factor(offset: f64, tau: f64) -> f64 {
    (-(PI * offset / (2.0 * tau)).tan().powi(2)).exp()
}

/// The 11x11 support used with the default window.
pub fn build_support(tau: f64) -> Result<SupportFunction> {
    build_support_sized(5, tau)
}

/// Support for a `(2t+1) x (2t+1)` window: the full 2-D convolution of a
/// trapezoid and a tan-taper, each on a `(t+1) x (t+1)` grid, shifted so the
/// peak lands on the window centre.
pub fn build_support_sized(half_width: usize, tau: f64) -> Result<SupportFunction> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if half_width < 2 {
        return Err(Error::InvalidInput(format!(
            "support needs half-width at least 2, got {half_width}"
        )));
    }
    let n = half_width + 1;
    let m = 2 * half_width + 1;
    let h1 = Array2::from_shape_fn((n, n), |(a, b)| trapezoid(n, a + 1, b + 1));
    let h2 = Array2::from_shape_fn((n, n), |(a, b)| tan_taper(n, tau, a + 1, b + 1));

    // full convolution indices run over 2..=2n; window position p (1-based) is index p + 1
    let mut values = Array2::zeros((m, m));
    for ((a1, a2), &x) in h1.indexed_iter() {
        if x == 0.0 {
            continue;
        }
        for ((b1, b2), &y) in h2.indexed_iter() {
            let q1 = a1 + b1; // 0-based full-conv index, 0..=2n-2
            let q2 = a2 + b2;
            values[[q1, q2]] += x * y;
        }
    }
    SupportFunction::from_values(values, tau)
}

/// Scaling weights and the achieved level of the edge-field LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    /// Distinct centres, duplicates merged, in input order.
    pub centers: Vec<(usize, usize)>,
    pub alphas: Vec<f64>,
    /// Largest `t` on the grid `0, step, 2 step, ..., 1` that the weights attain.
    pub t_star: f64,
    pub t_step: f64,
}

/// Assembled partition of unity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub centers: Vec<(usize, usize)>,
    pub alphas: Vec<f64>,
    pub t_star: f64,
    pub p_e: DensityGrid,
    pub p_s: DensityGrid,
}

impl Partition {
    /// The partition with no detected windows: `P_e = 0`, `P_s = 1`.
    pub fn empty(grid_size: usize) -> Self {
        Self {
            centers: Vec::new(),
            alphas: Vec::new(),
            t_star: 1.0,
            p_e: DensityGrid::zeros(grid_size),
            p_s: DensityGrid::new(Array2::ones((grid_size, grid_size))).expect("finite"),
        }
    }

    /// True when the LP could not lift every centre above zero.
    pub fn is_degenerate(&self) -> bool {
        !self.centers.is_empty() && self.t_star <= 0.0
    }
}

/// Solves
///
/// ```text
/// maximize t  s.t.  sum_i alpha_i rho_i(c_j) >= t   for every centre c_j
///                   sum_i alpha_i rho_i(s)   <= 1   for every covered pixel s
///                   alpha_i >= 0
/// ```
///
/// and reports `t` rounded down to the `t_step` grid. Overlap components are
/// solved independently; the overall level is the minimum over components.
pub fn solve_partition_lp(
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    grid_size: usize,
    t_step: f64,
) -> Result<LpSolution> {
    if centers.len() != supports.len() {
        return Err(Error::InvalidInput(format!(
            "{} centres but {} supports",
            centers.len(),
            supports.len()
        )));
    }
    if !(t_step > 0.0 && t_step <= 1.0) {
        return Err(Error::InvalidInput(format!("t grid step must lie in (0, 1], got {t_step}")));
    }
    let (centers, supports) = merge_duplicates(centers, supports);
    for (c, s) in centers.iter().zip(&supports) {
        if c.0 >= grid_size || c.1 >= grid_size {
            return Err(Error::IndexOutOfRange {
                row: c.0,
                col: c.1,
                size: grid_size,
            });
        }
        if !(s.center_value() > 0.0) {
            return Err(Error::DegenerateSupport);
        }
    }
    if centers.is_empty() {
        return Ok(LpSolution {
            centers,
            alphas: Vec::new(),
            t_star: 1.0,
            t_step,
        });
    }

    let mut alphas = vec![0.0; centers.len()];
    let mut t_exact: f64 = 1.0;
    for component in overlap_components(&centers, &supports, grid_size) {
        let (t, local) = solve_component(&component, &centers, &supports, grid_size)?;
        for (&i, a) in component.iter().zip(local) {
            alphas[i] = a;
        }
        t_exact = t_exact.min(t);
    }

    let achieved = center_levels(&centers, &supports, &alphas)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .min(t_exact + 1e-9);
    let mut steps = ((achieved + 1e-9) / t_step).floor();
    while steps > 0.0 && steps * t_step > achieved + 1e-12 {
        steps -= 1.0;
    }
    let t_star = (steps * t_step).clamp(0.0, 1.0);
    Ok(LpSolution {
        centers,
        alphas,
        t_star,
        t_step,
    })
}

/// Whether some `alpha >= 0` reaches level `t` at every centre with the field
/// kept at most one on covered pixels.
pub fn lp_feasible(
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    grid_size: usize,
    t: f64,
) -> Result<bool> {
    let (centers, supports) = merge_duplicates(centers, supports);
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..centers.len())
        .map(|_| problem.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let all: Vec<usize> = (0..centers.len()).collect();
    for (row, ge) in constraint_rows(&all, &centers, &supports, grid_size) {
        let expr: Vec<_> = row.iter().map(|&(k, v)| (vars[k], v)).collect();
        if ge {
            problem.add_constraint(expr.as_slice(), ComparisonOp::Ge, t);
        }
        problem.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
    }
    match problem.solve() {
        Ok(_) => Ok(true),
        Err(microlp::Error::Infeasible) => Ok(false),
        Err(e) => Err(Error::LinearProgram(e.to_string())),
    }
}

/// `sum_i alpha_i rho_i(c_j)` at every centre.
pub fn center_levels(
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    alphas: &[f64],
) -> Vec<f64> {
    centers
        .iter()
        .map(|&cj| {
            centers
                .iter()
                .zip(supports)
                .zip(alphas)
                .map(|((&ci, s), a)| a * s.value_at(ci, cj))
                .sum()
        })
        .collect()
}

/// Edge field `P_e = sum alpha_i rho_i` and its complement `P_s = 1 - P_e`.
pub fn assemble_fields(
    solution: &LpSolution,
    supports: &[SupportFunction],
    grid_size: usize,
) -> Result<Partition> {
    let (_, supports) = merge_duplicates_for(&solution.centers, supports);
    if supports.len() != solution.centers.len() || solution.alphas.len() != supports.len() {
        return Err(Error::InvalidInput(
            "partition weights, centres and supports disagree in length".into(),
        ));
    }
    let mut p_e = Array2::<f64>::zeros((grid_size, grid_size));
    for ((&c, s), &a) in solution.centers.iter().zip(&supports).zip(&solution.alphas) {
        for ((r, col), v) in s.embed(c, grid_size) {
            p_e[[r, col]] += a * v;
        }
    }
    for ((r, c), v) in p_e.indexed_iter_mut() {
        if *v > 1.0 + OVERFLOW_TOL {
            return Err(Error::PartitionOverflow { value: *v, row: r, col: c });
        }
        *v = v.clamp(0.0, 1.0);
    }
    let p_s = p_e.mapv(|v| 1.0 - v);
    Ok(Partition {
        centers: solution.centers.clone(),
        alphas: solution.alphas.clone(),
        t_star: solution.t_star,
        p_e: DensityGrid::new(p_e)?,
        p_s: DensityGrid::new(p_s)?,
    })
}

fn merge_duplicates(
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
) -> (Vec<(usize, usize)>, Vec<SupportFunction>) {
    let mut seen = HashSet::new();
    let mut out_c = Vec::new();
    let mut out_s = Vec::new();
    for (c, s) in centers.iter().zip(supports) {
        if seen.insert(*c) {
            out_c.push(*c);
            out_s.push(s.clone());
        }
    }
    (out_c, out_s)
}

/// Supports matching already-merged centres. Accepts either the merged list or
/// the original one with duplicates.
fn merge_duplicates_for(
    merged: &[(usize, usize)],
    supports: &[SupportFunction],
) -> (Vec<(usize, usize)>, Vec<SupportFunction>) {
    if supports.len() == merged.len() {
        return (merged.to_vec(), supports.to_vec());
    }
    if supports.len() == 1 {
        return (merged.to_vec(), vec![supports[0].clone(); merged.len()]);
    }
    (merged.to_vec(), supports.to_vec())
}

fn overlap_components(
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    grid_size: usize,
) -> Vec<Vec<usize>> {
    // union-find over windows sharing a covered pixel
    let mut parent: Vec<usize> = (0..centers.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, (c, s)) in centers.iter().zip(supports).enumerate() {
        for (pixel, _) in s.embed(*c, grid_size) {
            if let Some(&j) = owner.get(&pixel) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            } else {
                owner.insert(pixel, i);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..centers.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Sparse rows `(terms, is_center)` of the LP restricted to `members`; the
/// terms index into `members`.
fn constraint_rows(
    members: &[usize],
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    grid_size: usize,
) -> Vec<(Vec<(usize, f64)>, bool)> {
    let center_set: HashSet<(usize, usize)> = members.iter().map(|&i| centers[i]).collect();
    let mut rows: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (k, &i) in members.iter().enumerate() {
        for (pixel, v) in supports[i].embed(centers[i], grid_size) {
            rows.entry(pixel).or_default().push((k, v));
        }
    }
    rows.into_iter()
        .map(|(pixel, terms)| (terms, center_set.contains(&pixel)))
        .collect()
}

fn solve_component(
    members: &[usize],
    centers: &[(usize, usize)],
    supports: &[SupportFunction],
    grid_size: usize,
) -> Result<(f64, Vec<f64>)> {
    if members.len() == 1 {
        // the bump peaks at its own centre, so scaling the peak to one is optimal
        let s = &supports[members[0]];
        let peak = s.values().iter().cloned().fold(0.0, f64::max);
        let alpha = 1.0 / peak;
        return Ok(((alpha * s.center_value()).min(1.0), vec![alpha]));
    }
    let rows = constraint_rows(members, centers, supports, grid_size);
    // The simplex occasionally hits a singular basis on the many near-duplicate
    // pixel rows; the centre rows alone are a much smaller, better-posed problem
    // whose solution is then scaled back under one.
    let mut alphas = match lp_weights(members.len(), &rows, false) {
        Ok(a) => a,
        Err(_) => lp_weights(members.len(), &rows, true)?,
    };

    // remove solver slack so the field never exceeds one
    let peak = rows
        .iter()
        .map(|(row, _)| row.iter().map(|&(k, x)| alphas[k] * x).sum::<f64>())
        .fold(0.0, f64::max);
    if peak > 1.0 {
        alphas.iter_mut().for_each(|a| *a /= peak);
    }
    let local_centers: Vec<_> = members.iter().map(|&i| centers[i]).collect();
    let local_supports: Vec<_> = members.iter().map(|&i| supports[i].clone()).collect();
    let level = center_levels(&local_centers, &local_supports, &alphas)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok((level.max(0.0), alphas))
}

fn lp_weights(n: usize, rows: &[(Vec<(usize, f64)>, bool)], centers_only: bool) -> Result<Vec<f64>> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n).map(|_| problem.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let t = problem.add_var(1.0, (0.0, 1.0));
    for (row, is_center) in rows {
        if centers_only && !is_center {
            continue;
        }
        let mut expr: Vec<_> = row.iter().map(|&(k, v)| (vars[k], v)).collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
        if *is_center {
            expr.push((t, -1.0));
            problem.add_constraint(expr.as_slice(), ComparisonOp::Ge, 0.0);
        }
    }
    let solution = problem
        .solve()
        .map_err(|e| Error::LinearProgram(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::LinearProgram("solver interrupted before a solution".into()))?;
    Ok(vars.iter().map(|&v| solution.var_value(v).max(0.0)).collect())
}
