//! Derivative-free Nelder-Mead minimization.

#[derive(Debug, Clone, Copy)]
pub(crate) struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop once the largest pairwise vertex distance falls below this.
    pub diameter_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            diameter_tol: 1e-6,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn nelder_mead<F>(mut f: F, start: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        order(&mut simplex, &mut values);
        if diameter(&simplex) < opts.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |out: &mut Vec<f64>, coef: f64| {
            for i in 0..n {
                out[i] = centroid[i] + coef * (worst[i] - centroid[i]);
            }
        };

        along(&mut trial, -1.0);
        let reflected = eval(&trial);
        if reflected < values[0] {
            along(&mut trial2, -2.0);
            let expanded = eval(&trial2);
            if expanded < reflected {
                simplex[n].copy_from_slice(&trial2);
                values[n] = expanded;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = reflected;
            }
            continue;
        }
        if reflected < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = reflected;
            continue;
        }
        let (coef, threshold) = if reflected < values[n] {
            (-0.5, reflected)
        } else {
            (0.5, values[n])
        };
        along(&mut trial2, coef);
        let contracted = eval(&trial2);
        if contracted < threshold {
            simplex[n].copy_from_slice(&trial2);
            values[n] = contracted;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for k in 1..=n {
            for i in 0..n {
                simplex[k][i] = best[i] + 0.5 * (simplex[k][i] - best[i]);
            }
            values[k] = eval(&simplex[k]);
        }
    }
    order(&mut simplex, &mut values);
    Minimum {
        point: simplex.swap_remove(0),
        value: values[0],
        iterations,
        converged,
    }
}

fn order(simplex: &mut [Vec<f64>], values: &mut [f64]) {
    // insertion sort; stable, and the simplex has at most a handful of vertices
    for i in 1..values.len() {
        let mut j = i;
        while j > 0 && values[j] < values[j - 1] {
            values.swap(j, j - 1);
            simplex.swap(j, j - 1);
            j -= 1;
        }
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in simplex.iter().enumerate() {
        for b in &simplex[i + 1..] {
            let dist = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            d = d.max(dist);
        }
    }
    d
}
