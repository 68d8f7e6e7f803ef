//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.
//!
//! The normal equations are solved in Jacobi-scaled form,
//! `(D^-1 JtJ D^-1 + lambda I) D d = -D^-1 Jt r` with `D = sqrt(diag(JtJ))`,
//! which makes the iteration invariant to affine rescaling of parameters.
//! Damping drops by 10x after an accepted step and rises 10x after a
//! rejected one; only steps that strictly lower the cost are accepted.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem {
    fn param_names(&self) -> Vec<String>;

    fn n_residuals(&self) -> usize;

    /// `out[i] = model_i(x) - data_i`
    fn residuals(&self, x: &[f64], out: &mut [f64]);

    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>);

    /// Typical magnitude of each parameter near `x`. Used for the relative
    /// step test and for judging identifiability.
    fn scales(&self, x: &[f64]) -> Vec<f64>;

    /// `(gate, dependents)`: parameters that carry no information once the
    /// gate parameter is zero, like the center and width of a peak whose
    /// amplitude vanished.
    fn gated_params(&self) -> Vec<(usize, Vec<usize>)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when max_i |dx_i| / (|x_i| + scale_i) falls below this.
    pub step_tol: f64,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub cost_tol: f64,
    pub initial_damping: f64,
    /// Smallest allowed eigenvalue ratio of the scale-normalized JtJ.
    pub min_eigen_ratio: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tol: 1e-8,
            cost_tol: 1e-10,
            initial_damping: 1e-3,
            min_eigen_ratio: 1e-12,
        }
    }
}

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    /// sqrt(cost / (m - n))
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// max_i |(Jt r)_i| / (|J_i| |r|): cosine between the residual and each
    /// Jacobian column, zero at a stationary point.
    pub gradient_cosine: f64,
    /// Cost after the initial guess and after every accepted step.
    pub cost_history: Vec<f64>,
}

pub fn solve<P: LeastSquaresProblem>(
    problem: &P,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<Solution> {
    let n = x0.len();
    let m = problem.n_residuals();
    if m <= n {
        return Err(Error::InsufficientData {
            needed: n + 1,
            got: m,
        });
    }

    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    problem.residuals(&x, &mut r);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::invalid(
            "initial guess",
            "model is not finite at the starting point",
        ));
    }
    let mut cost = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    problem.jacobian(&x, &mut jac);

    let mut lambda = opts.initial_damping;
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    let mut x_trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    while iterations < opts.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&DVector::from_column_slice(&r));
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let v = jtj[(i, i)].sqrt();
                if v > 0.0 && v.is_finite() {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let scaled = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] / (d[i] * d[j]));
        let g = DVector::from_fn(n, |i, _| -jtr[i] / d[i]);

        let mut accepted = false;
        let mut first_attempt = true;
        while lambda <= MAX_DAMPING {
            let mut a = scaled.clone();
            for i in 0..n {
                a[(i, i)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step_scaled = chol.solve(&g);
            let step: Vec<f64> = (0..n).map(|i| step_scaled[i] / d[i]).collect();
            let scales = problem.scales(&x);
            let rel_step = (0..n)
                .map(|i| step[i].abs() / (x[i].abs() + scales[i].abs()).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            // Even the least damped step is negligible: take it if it helps,
            // then stop.
            let negligible = first_attempt && rel_step < opts.step_tol;
            first_attempt = false;
            for i in 0..n {
                x_trial[i] = x[i] + step[i];
            }
            problem.residuals(&x_trial, &mut r_trial);
            let trial_cost = sum_sq(&r_trial);
            if negligible && !(trial_cost.is_finite() && trial_cost < cost) {
                converged = true;
                break;
            }
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_cost = (cost - trial_cost) / cost;
                std::mem::swap(&mut x, &mut x_trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                history.push(cost);
                problem.jacobian(&x, &mut jac);
                lambda = (lambda / 10.0).max(MIN_DAMPING);
                accepted = true;
                if rel_step < opts.step_tol || rel_cost < opts.cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No damping yields descent: stationary to working precision.
            converged = true;
            break;
        }
    }

    let grad_cos = gradient_cosine(&jac, &r);

    let jtj = jac.tr_mul(&jac);
    let sigma2 = cost / (m - n) as f64;
    let names = problem.param_names();
    let scales = problem.scales(&x);
    let all: Vec<usize> = (0..n).collect();
    let covariance = match check_identifiable(&names, &scales, &jtj, &all, opts.min_eigen_ratio) {
        Ok(()) => covariance(&names, &jtj, &all, sigma2)?,
        Err(e) => null_gate_covariance(problem, &x, &jtj, sigma2, opts.min_eigen_ratio).ok_or(e)?,
    };
    let sigmas = (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();

    Ok(Solution {
        x,
        sigmas,
        covariance,
        cost,
        residual_rms: sigma2.sqrt(),
        iterations,
        converged,
        gradient_cosine: grad_cos,
        cost_history: history,
    })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn gradient_cosine(jac: &DMatrix<f64>, r: &[f64]) -> f64 {
    let rn = sum_sq(r).sqrt();
    if rn == 0.0 {
        return 0.0;
    }
    let rv = DVector::from_column_slice(r);
    let g = jac.tr_mul(&rv);
    (0..jac.ncols())
        .map(|i| {
            let cn = jac.column(i).norm();
            if cn == 0.0 {
                0.0
            } else {
                g[i].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Rejects solutions whose scale-normalized normal matrix, restricted to
/// `keep`, is numerically singular, naming the two parameters that dominate
/// the null direction.
fn check_identifiable(
    names: &[String],
    scales: &[f64],
    jtj: &DMatrix<f64>,
    keep: &[usize],
    min_ratio: f64,
) -> Result<()> {
    let k = keep.len();
    let g = DMatrix::from_fn(k, k, |a, b| {
        let (i, j) = (keep[a], keep[b]);
        jtj[(i, j)] * scales[i].abs() * scales[j].abs()
    });
    let eig = SymmetricEigen::new(g);
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |a, (i, &v)| if v < a.1 { (i, v) } else { a },
        );
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let finite = eig.eigenvalues.iter().all(|v| v.is_finite());
    if finite && lmax > 0.0 && lmin > min_ratio * lmax {
        return Ok(());
    }
    let v = eig.eigenvectors.column(imin);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
    let first = names[keep[idx[0]]].clone();
    let second = names[keep[*idx.get(1).unwrap_or(&idx[0])]].clone();
    Err(Error::IllConditioned { first, second })
}

/// Full-size covariance with entries only for `keep`; every other parameter
/// gets infinite variance.
fn covariance(
    names: &[String],
    jtj: &DMatrix<f64>,
    keep: &[usize],
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    let n = jtj.nrows();
    let k = keep.len();
    let d: Vec<f64> = keep.iter().map(|&i| jtj[(i, i)].sqrt()).collect();
    let singular = || {
        let a = d
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
            .unwrap_or(0);
        let b = if a + 1 < k {
            a + 1
        } else {
            a.saturating_sub(1)
        };
        Error::IllConditioned {
            first: names[keep[a]].clone(),
            second: names[keep[b]].clone(),
        }
    };
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(singular());
    }
    let scaled = DMatrix::from_fn(k, k, |a, b| jtj[(keep[a], keep[b])] / (d[a] * d[b]));
    let inv = scaled.cholesky().ok_or_else(singular)?.inverse();
    let mut cov = DMatrix::from_element(n, n, f64::NAN);
    for i in 0..n {
        cov[(i, i)] = f64::INFINITY;
    }
    for a in 0..k {
        for b in 0..k {
            cov[(keep[a], keep[b])] = sigma2 * inv[(a, b)] / (d[a] * d[b]);
        }
    }
    Ok(cov)
}

/// A singular normal matrix is acceptable when it comes only from gated
/// parameters whose gate is statistically zero (|gate| <= 3 sigma with the
/// dependents removed). Tries every subset of gates, smallest first.
fn null_gate_covariance<P: LeastSquaresProblem>(
    problem: &P,
    x: &[f64],
    jtj: &DMatrix<f64>,
    sigma2: f64,
    min_ratio: f64,
) -> Option<DMatrix<f64>> {
    let gates = problem.gated_params();
    if gates.is_empty() || gates.len() > 16 {
        return None;
    }
    let names = problem.param_names();
    let scales = problem.scales(x);
    let mut subsets: Vec<u32> = (1..(1u32 << gates.len())).collect();
    subsets.sort_by_key(|m| m.count_ones());
    for mask in subsets {
        let chosen: Vec<&(usize, Vec<usize>)> = (0..gates.len())
            .filter(|g| mask >> g & 1 == 1)
            .map(|g| &gates[g])
            .collect();
        let keep: Vec<usize> = (0..x.len())
            .filter(|i| !chosen.iter().any(|(_, deps)| deps.contains(i)))
            .collect();
        if check_identifiable(&names, &scales, jtj, &keep, min_ratio).is_err() {
            continue;
        }
        let Ok(cov) = covariance(&names, jtj, &keep, sigma2) else {
            continue;
        };
        // The floor admits exactly fitted null data, where sigma is zero.
        let null =
            |g: usize| x[g].abs() <= 3.0 * cov[(g, g)].max(0.0).sqrt() + 1e-12 * scales[g].abs();
        if chosen.iter().all(|(gate, _)| null(*gate)) {
            return Some(cov);
        }
    }
    None
}
