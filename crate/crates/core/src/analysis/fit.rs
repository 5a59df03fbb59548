//! Bounded Levenberg–Marquardt for weighted nonlinear least squares.

use nalgebra::{DMatrix, DVector};

/// A weighted least-squares problem: minimise `Σ rᵢ(θ)²`.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Weighted residuals `(model − data) / σ`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Jacobian of the residuals; central differences unless overridden.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) {
        let m = self.n_residuals();
        let mut p = params.to_vec();
        let mut hi = vec![0.0; m];
        let mut lo = vec![0.0; m];
        for j in 0..params.len() {
            let h = 1e-6 * params[j].abs().max(1e-6);
            p[j] = params[j] + h;
            self.residuals(&p, &mut hi);
            p[j] = params[j] - h;
            self.residuals(&p, &mut lo);
            p[j] = params[j];
            for i in 0..m {
                out[(i, j)] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    /// Relative parameter-step tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl LmOptions {
    pub fn unbounded(n: usize) -> Self {
        LmOptions {
            tolerance: 1e-8,
            max_iterations: 200,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            fixed: vec![false; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Full-size covariance, zero rows and columns for fixed parameters.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LmFit {
    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof.max(1) as f64
    }
}

fn clamp(p: &mut [f64], opts: &LmOptions) {
    for (i, v) in p.iter_mut().enumerate() {
        *v = v.clamp(opts.lower[i], opts.upper[i]);
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Damped Gauss–Newton with multiplicative damping updates. Steps leaving
/// the box are projected back onto it.
pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(problem: &P, init: &[f64], opts: &LmOptions) -> LmFit {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let free: Vec<usize> = (0..n).filter(|&i| !opts.fixed[i]).collect();
    let k = free.len();

    let mut params = init.to_vec();
    clamp(&mut params, opts);
    let mut r = vec![0.0; m];
    problem.residuals(&params, &mut r);
    let mut chi2 = sum_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    while iterations < opts.max_iterations && k > 0 {
        iterations += 1;
        if chi2 == 0.0 {
            converged = true;
            break;
        }
        problem.jacobian(&params, &mut jac);
        let jf = DMatrix::from_fn(m, k, |i, j| jac[(i, free[j])]);
        let jtj = jf.transpose() * &jf;
        let grad = jf.transpose() * DVector::from_column_slice(&r);

        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            trial.copy_from_slice(&params);
            for (d, &i) in free.iter().enumerate() {
                trial[i] += step[d];
            }
            clamp(&mut trial, opts);
            problem.residuals(&trial, &mut r_trial);
            let chi2_trial = sum_sq(&r_trial);
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let rel_step = free
                    .iter()
                    .map(|&i| (trial[i] - params[i]).abs() / (params[i].abs() + 1e-12))
                    .fold(0.0, f64::max);
                let rel_chi2 = (chi2 - chi2_trial) / chi2.max(1e-300);
                params.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                chi2 = chi2_trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel_step < opts.tolerance || rel_chi2 < opts.tolerance * opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = grad.norm() <= 1e-6 * (1.0 + chi2);
            break;
        }
    }

    problem.jacobian(&params, &mut jac);
    let jf = DMatrix::from_fn(m, k, |i, j| jac[(i, free[j])]);
    let inv = (jf.transpose() * &jf)
        .pseudo_inverse(1e-300)
        .unwrap_or_else(|_| DMatrix::from_element(k, k, f64::NAN));
    let mut covariance = DMatrix::zeros(n, n);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            covariance[(i, j)] = inv[(a, b)];
        }
    }
    LmFit {
        params,
        covariance,
        chi2,
        dof: m.saturating_sub(k),
        iterations,
        converged,
    }
}
