//! Dense Levenberg–Marquardt for problems with a handful of parameters.
//!
//! Parameter counts are const generics, so normal equations live on the
//! stack; only the residual vector and Jacobian rows are heap allocated.

use alloc::vec;
use alloc::vec::Vec;

/// A nonlinear least-squares problem `min Σ r_i(θ)²`.
pub trait LeastSquares<const P: usize> {
    fn residual_count(&self) -> usize;

    /// Writes `r(θ)` into `residuals` and, when requested, `∂r_i/∂θ_j`
    /// into `jacobian[i][j]`.
    fn evaluate(&self, params: &[f64; P], residuals: &mut [f64], jacobian: Option<&mut [[f64; P]]>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative change of the sum of squares below which the fit stops.
    pub rel_tolerance: f64,
    /// Sum of squares treated as an exact fit.
    pub abs_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-10,
            abs_tolerance: 1e-30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport<const P: usize> {
    pub params: [f64; P],
    pub sum_squares: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    /// `(JᵀJ)⁻¹` at the solution, absent when singular.
    pub jtj_inverse: Option<[[f64; P]; P]>,
}

const LAMBDA_MAX: f64 = 1e16;

const MIN_ALPHA: f64 = 0.05;
const MAX_ALPHA: f64 = 8.0;

pub fn minimize<const P: usize, L: LeastSquares<P>>(problem: &L, init: [f64; P], opts: &LmOptions) -> LmReport<P> {
    let m = problem.residual_count();
    let mut params = init;
    let mut r = vec![0.0; m];
    let mut jac = vec![[0.0; P]; m];
    let mut trial_r = vec![0.0; m];

    problem.evaluate(&params, &mut r, Some(&mut jac));
    let mut sum_sq = sum_squares(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    if !sum_sq.is_finite() {
        return finish(params, r, jac, sum_sq, 0, false);
    }

    while iterations < opts.max_iterations {
        if sum_sq <= opts.abs_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let (a, g) = normal_equations(&jac, &r);
        let diag_floor = (0..P).map(|i| a[i][i]).fold(0.0_f64, f64::max) * 1e-12;

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = a;
            for i in 0..P {
                damped[i][i] += lambda * a[i][i].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            let neg_g = g.map(|v| -v);
            let Some(step) = solve(damped, neg_g) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = params;
            for i in 0..P {
                trial[i] += step[i];
            }
            problem.evaluate(&trial, &mut trial_r, None);
            let mut trial_sq = sum_squares(&trial_r);
            let slope: f64 = (0..P).map(|i| 2.0 * g[i] * step[i]).sum();
            // quadratic interpolation along the step; Gauss-Newton curvature is only approximate
            let curvature = trial_sq - sum_sq - slope;
            if trial_sq.is_finite() && curvature > 0.0 && slope < 0.0 {
                let alpha = (-slope / (2.0 * curvature)).clamp(MIN_ALPHA, MAX_ALPHA);
                if (alpha - 1.0).abs() > 0.05 {
                    let mut other = params;
                    for i in 0..P {
                        other[i] += alpha * step[i];
                    }
                    problem.evaluate(&other, &mut trial_r, None);
                    let other_sq = sum_squares(&trial_r);
                    if other_sq.is_finite() && other_sq < trial_sq {
                        trial = other;
                        trial_sq = other_sq;
                    }
                }
            }
            if trial_sq.is_finite() && trial_sq < sum_sq {
                let actual = sum_sq - trial_sq;
                let small_change = actual <= opts.rel_tolerance * sum_sq && -slope <= opts.rel_tolerance * sum_sq;
                params = trial;
                sum_sq = trial_sq;
                problem.evaluate(&params, &mut r, Some(&mut jac));
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if small_change || sum_sq <= opts.abs_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction at any damping: stationary up to round-off.
            converged = true;
        }
        if converged {
            break;
        }
    }
    finish(params, r, jac, sum_sq, iterations, converged)
}

fn finish<const P: usize>(
    params: [f64; P],
    residuals: Vec<f64>,
    jac: Vec<[f64; P]>,
    sum_squares: f64,
    iterations: usize,
    converged: bool,
) -> LmReport<P> {
    let (a, _) = normal_equations(&jac, &residuals);
    LmReport {
        params,
        sum_squares,
        iterations,
        converged,
        residuals,
        jtj_inverse: invert(a),
    }
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn normal_equations<const P: usize>(jac: &[[f64; P]], r: &[f64]) -> ([[f64; P]; P], [f64; P]) {
    let mut a = [[0.0; P]; P];
    let mut g = [0.0; P];
    for (row, &ri) in jac.iter().zip(r) {
        for i in 0..P {
            g[i] += row[i] * ri;
            for j in 0..P {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    (a, g)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve<const P: usize>(mut a: [[f64; P]; P], mut b: [f64; P]) -> Option<[f64; P]> {
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for col in 0..P {
        let pivot = (col..P).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-300 * scale.max(1.0) || a[pivot][col].abs() < scale * 1e-15 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..P {
            let f = a[row][col] / a[col][col];
            for k in col..P {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; P];
    for row in (0..P).rev() {
        let mut acc = b[row];
        for k in row + 1..P {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

pub(crate) fn invert<const P: usize>(a: [[f64; P]; P]) -> Option<[[f64; P]; P]> {
    let mut inv = [[0.0; P]; P];
    for col in 0..P {
        let mut e = [0.0; P];
        e[col] = 1.0;
        let x = solve(a, e)?;
        for row in 0..P {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exponential {
        ts: Vec<f64>,
        ys: Vec<f64>,
    }

    impl LeastSquares<2> for Exponential {
        fn residual_count(&self) -> usize {
            self.ts.len()
        }
        fn evaluate(&self, p: &[f64; 2], r: &mut [f64], jac: Option<&mut [[f64; 2]]>) {
            for (i, (&t, &y)) in self.ts.iter().zip(&self.ys).enumerate() {
                r[i] = p[0] * (p[1] * t).exp() - y;
            }
            if let Some(j) = jac {
                for (i, &t) in self.ts.iter().enumerate() {
                    let e = (p[1] * t).exp();
                    j[i] = [e, p[0] * t * e];
                }
            }
        }
    }

    #[test]
    fn recovers_exponential() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys = ts.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let p = Exponential { ts, ys };
        let rep = minimize(&p, [1.0, 0.0], &LmOptions::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 2.5).abs() < 1e-10);
        assert!((rep.params[1] + 1.3).abs() < 1e-10);
        assert!(rep.jtj_inverse.is_some());
    }

    #[test]
    fn rosenbrock_as_residuals() {
        struct Rosen;
        impl LeastSquares<2> for Rosen {
            fn residual_count(&self) -> usize {
                2
            }
            fn evaluate(&self, p: &[f64; 2], r: &mut [f64], jac: Option<&mut [[f64; 2]]>) {
                r[0] = 10.0 * (p[1] - p[0] * p[0]);
                r[1] = 1.0 - p[0];
                if let Some(j) = jac {
                    j[0] = [-20.0 * p[0], 10.0];
                    j[1] = [-1.0, 0.0];
                }
            }
        }
        let rep = minimize(&Rosen, [-1.2, 1.0], &LmOptions::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 1.0).abs() < 1e-8 && (rep.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn singular_solve() {
        assert!(solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 2.0]).is_none());
        let x = solve([[0.0, 1.0], [1.0, 0.0]], [3.0, 4.0]).unwrap();
        assert_eq!(x, [4.0, 3.0]);
    }
}
