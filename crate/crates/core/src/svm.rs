//! The PAR max-margin program and the hard-margin dual solver behind it.
//!
//! With every w-neuron classifying like `w*` and every u-neuron like `-w*`, the
//! limiting neuron directions solve
//!
//! ```text
//! min ||w||^2 + ||u||^2
//!   s.t.  w.x - alpha u.x >= 1   for positive x
//!         u.x - alpha w.x >= 1   for negative x
//! ```
//!
//! which is a hard-margin SVM over the feature map
//! `phi(x) = [sigma'(w*.x) x, -sigma'(-w*.x) x]`.
//!
//! Both this program and the min-norm separating direction used by the
//! symmetry check share one shape: `min 1/2 ||theta||^2` subject to
//! `z_i . theta >= 1`. We solve its dual
//! `max sum(lambda) - 1/2 ||Z^T lambda||^2, lambda >= 0` by accelerated
//! projected gradient ascent with step `1/L`, recovering `theta = Z^T lambda`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, normalized};
use crate::network::{activation_slope, ActivationConfig, Label, LabeledPoint, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for all three KKT residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Dual norm beyond which the primal is declared infeasible.
    pub divergence_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            divergence_cap: 1e8,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||theta - sum_i lambda_i z_i||`.
    pub stationarity: f64,
    /// Most-violated constraint slack `min_i (z_i . theta - 1)`; feasible when `>= -tol`.
    pub feasibility: f64,
    /// `max_i |lambda_i * slack_i|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.stationarity < tol && self.feasibility >= -tol && self.complementarity < tol
    }
}

/// Solution of the PAR program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSolution {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    /// Multipliers of the `1/2 ||.||^2` form of the program: `[w; u] = sum_i lambda_i g_i`.
    pub lambda: Vec<f64>,
    /// `||w||^2 + ||u||^2`.
    pub objective: f64,
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
    pub kkt_complementarity: f64,
    pub alpha: f64,
    pub iterations: usize,
}

impl SvmSolution {
    /// Normal of the predicted linear decision boundary. A perfectly clustered
    /// network with neuron directions `w` and `u` has sign `sign((w - u) . x)`.
    pub fn boundary_normal(&self) -> Vec<f64> {
        self.w.iter().zip(&self.u).map(|(a, b)| a - b).collect()
    }
}

/// `[sigma'(w*.x) x, -sigma'(-w*.x) x]`.
pub fn feature_map(x: &[f64], w_star: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let act = ActivationConfig::new(alpha)?;
    let s = dot(w_star, x);
    if s == 0.0 {
        return Err(Error::OnBoundary);
    }
    let a = activation_slope(s, act);
    let b = activation_slope(-s, act);
    Ok(x.iter().map(|xi| a * xi).chain(x.iter().map(|xi| -b * xi)).collect())
}

/// `sum_{y in {-1,1}} sigma'(y w*.x) sigma'(y w*.x') (x . x')`.
pub fn kernel(x: &[f64], x2: &[f64], w_star: &[f64], alpha: f64) -> Result<f64> {
    let act = ActivationConfig::new(alpha)?;
    let s1 = dot(w_star, x);
    let s2 = dot(w_star, x2);
    if s1 == 0.0 || s2 == 0.0 {
        return Err(Error::OnBoundary);
    }
    let slopes = activation_slope(s1, act) * activation_slope(s2, act)
        + activation_slope(-s1, act) * activation_slope(-s2, act);
    Ok(slopes * dot(x, x2))
}

/// Constraint gradient `y * phi(x)` of one data point in `(w, u)` space.
fn par_constraint(p: &LabeledPoint, alpha: f64) -> Vec<f64> {
    match p.y {
        Label::Positive => p.x.iter().copied().chain(p.x.iter().map(|xi| -alpha * xi)).collect(),
        Label::Negative => p.x.iter().map(|xi| -alpha * xi).chain(p.x.iter().copied()).collect(),
    }
}

pub(crate) enum DualRun {
    Solved {
        lambda: Vec<f64>,
        theta: Vec<f64>,
        kkt: KktResiduals,
        iterations: usize,
    },
    Infeasible {
        iterations: usize,
        lambda_norm: f64,
    },
    /// Early exit: the min-norm solution provably has norm above the threshold.
    AboveThreshold,
    /// Early exit: a feasible point with norm at most the threshold was found.
    BelowThreshold,
}

/// `min 1/2 ||theta||^2  s.t.  z_i . theta >= 1`.
pub(crate) struct HardMarginQp<'a> {
    rows: &'a [Vec<f64>],
    dim: usize,
}

impl<'a> HardMarginQp<'a> {
    pub(crate) fn new(rows: &'a [Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Input("hard-margin problem needs at least one constraint".into()))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.len() });
        }
        Ok(Self { rows, dim })
    }

    fn theta(&self, lambda: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim];
        for (l, z) in lambda.iter().zip(self.rows) {
            if *l != 0.0 {
                axpy(*l, z, &mut theta);
            }
        }
        theta
    }

    /// Upper bound on the spectral norm of the Gram matrix `Z Z^T`, via power
    /// iteration on `Z^T Z` padded by the final residual, capped by the trace.
    fn lipschitz(&self) -> f64 {
        let trace: f64 = self.rows.iter().map(|z| dot(z, z)).sum();
        if trace == 0.0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..self.dim).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut rho = 0.0;
        let mut resid = f64::INFINITY;
        for _ in 0..200 {
            let nv = norm(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let mut next = vec![0.0; self.dim];
            for z in self.rows {
                axpy(dot(z, &v), z, &mut next);
            }
            rho = dot(&v, &next);
            resid = next.iter().zip(&v).map(|(a, b)| (a - rho * b).powi(2)).sum::<f64>().sqrt();
            v = next;
            if resid <= 1e-12 * rho {
                break;
            }
        }
        (1.01 * rho + resid).min(trace)
    }

    fn residuals(&self, lambda: &[f64], theta: &[f64]) -> KktResiduals {
        let recomputed = self.theta(lambda);
        let stationarity = theta.iter().zip(&recomputed).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut feasibility = f64::INFINITY;
        let mut complementarity = 0.0f64;
        for (l, z) in lambda.iter().zip(self.rows) {
            let slack = dot(z, theta) - 1.0;
            feasibility = feasibility.min(slack);
            complementarity = complementarity.max((l * slack).abs());
        }
        KktResiduals {
            stationarity,
            feasibility,
            complementarity,
        }
    }

    /// Runs the dual ascent. With `threshold = Some(t)` the run stops as soon
    /// as it can certify whether the optimal `||theta||` is above or below `t`.
    pub(crate) fn solve(&self, opts: &SolverOptions, threshold: Option<f64>) -> Result<DualRun> {
        let n = self.rows.len();
        let lip = self.lipschitz();
        if lip == 0.0 {
            // every constraint reads 0 >= 1
            return Ok(DualRun::Infeasible {
                iterations: 0,
                lambda_norm: f64::INFINITY,
            });
        }
        let step = 1.0 / lip;
        let mut lambda = vec![0.0; n];
        let mut y = lambda.clone();
        let mut t = 1.0f64;
        let mut next = vec![0.0; n];
        let mut last = KktResiduals {
            stationarity: f64::INFINITY,
            feasibility: f64::NEG_INFINITY,
            complementarity: f64::INFINITY,
        };

        for iter in 1..=opts.max_iter {
            let theta_y = self.theta(&y);
            for i in 0..n {
                let grad = 1.0 - dot(&self.rows[i], &theta_y);
                next[i] = (y[i] + step * grad).max(0.0);
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let restart = y
                .iter()
                .zip(&next)
                .zip(&lambda)
                .map(|((yi, ni), li)| (yi - ni) * (ni - li))
                .sum::<f64>()
                > 0.0;
            if restart {
                t = 1.0;
                y.copy_from_slice(&next);
            } else {
                let mom = (t - 1.0) / t_next;
                for i in 0..n {
                    y[i] = (next[i] + mom * (next[i] - lambda[i])).max(0.0);
                }
                t = t_next;
            }
            std::mem::swap(&mut lambda, &mut next);

            let lambda_norm = norm(&lambda);
            if !lambda_norm.is_finite() || lambda_norm > opts.divergence_cap {
                return Ok(DualRun::Infeasible { iterations: iter, lambda_norm });
            }

            if iter % 10 == 0 || iter == opts.max_iter {
                let theta = self.theta(&lambda);
                if let Some(limit) = threshold {
                    let theta_sq = dot(&theta, &theta);
                    let dual_value = lambda.iter().sum::<f64>() - 0.5 * theta_sq;
                    // weak duality: dual value <= 1/2 ||theta*||^2
                    if dual_value > 0.5 * limit * limit {
                        return Ok(DualRun::AboveThreshold);
                    }
                    let min_dot = self.rows.iter().map(|z| dot(z, &theta)).fold(f64::INFINITY, f64::min);
                    if min_dot > 0.0 && theta_sq.sqrt() / min_dot <= limit {
                        return Ok(DualRun::BelowThreshold);
                    }
                }
                last = self.residuals(&lambda, &theta);
                if last.satisfied(opts.tol) {
                    return Ok(DualRun::Solved {
                        lambda,
                        theta,
                        kkt: last,
                        iterations: iter,
                    });
                }
            }
        }
        Err(Error::Solver {
            reason: "iteration cap reached".into(),
            iterations: opts.max_iter,
            stationarity: last.stationarity,
            feasibility: last.feasibility,
            complementarity: last.complementarity,
        })
    }
}

/// Solves the PAR program for `data` with leak `alpha`.
pub fn solve_par_svm(data: &[LabeledPoint], alpha: f64, opts: &SolverOptions) -> Result<SvmSolution> {
    ActivationConfig::new(alpha)?;
    if data.is_empty() {
        return Err(Error::Input("PAR program needs at least one point".into()));
    }
    let d = data[0].x.len();
    let rows: Vec<Vec<f64>> = data.iter().map(|p| par_constraint(p, alpha)).collect();
    match HardMarginQp::new(&rows)?.solve(opts, None)? {
        DualRun::Solved {
            lambda,
            theta,
            kkt,
            iterations,
        } => {
            let (w, u) = theta.split_at(d);
            let objective = dot(w, w) + dot(u, u);
            Ok(SvmSolution {
                w: w.to_vec(),
                u: u.to_vec(),
                lambda,
                objective,
                kkt_stationarity: kkt.stationarity,
                kkt_feasibility: kkt.feasibility,
                kkt_complementarity: kkt.complementarity,
                alpha,
                iterations,
            })
        }
        DualRun::Infeasible { iterations, lambda_norm } => Err(Error::Solver {
            reason: format!("constraints infeasible (dual norm {lambda_norm:.3e} past cap)"),
            iterations,
            stationarity: f64::NAN,
            feasibility: f64::NAN,
            complementarity: f64::NAN,
        }),
        DualRun::AboveThreshold | DualRun::BelowThreshold => unreachable!("no threshold given"),
    }
}

/// Min-norm `v` with `v . x >= 1` for every point, and its unit-direction
/// margin `1 / ||v||`. `None` when no such `v` exists.
pub fn min_norm_direction(points: &[Vec<f64>], opts: &SolverOptions) -> Result<Option<(Vec<f64>, f64)>> {
    match HardMarginQp::new(points)?.solve(opts, None)? {
        DualRun::Solved { theta, .. } => {
            let margin = 1.0 / norm(&theta);
            Ok(Some((theta, margin)))
        }
        DualRun::Infeasible { .. } => Ok(None),
        DualRun::AboveThreshold | DualRun::BelowThreshold => unreachable!("no threshold given"),
    }
}

/// Whether some unit direction `v` has `v . x >= beta` for every point.
pub(crate) fn direction_with_margin_exists(points: &[Vec<f64>], beta: f64, opts: &SolverOptions) -> Result<bool> {
    let limit = 1.0 / beta;
    Ok(match HardMarginQp::new(points)?.solve(opts, Some(limit))? {
        DualRun::Solved { theta, .. } => norm(&theta) <= limit,
        DualRun::Infeasible { .. } | DualRun::AboveThreshold => false,
        DualRun::BelowThreshold => true,
    })
}

/// Cosines between the mean normalized w-neuron and `sol.w`, and between the
/// mean normalized u-neuron and `sol.u`.
pub fn compare_directions(params: &NetworkParams, sol: &SvmSolution) -> Result<(f64, f64)> {
    let w_hat = normalized(&sol.w).ok_or_else(|| Error::Degenerate("SVM w is zero".into()))?;
    let u_hat = normalized(&sol.u).ok_or_else(|| Error::Degenerate("SVM u is zero".into()))?;
    let mean_dir = |rows: Vec<&[f64]>| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; params.d()];
        for r in &rows {
            let unit = normalized(r).ok_or_else(|| Error::Degenerate("zero-norm neuron".into()))?;
            axpy(1.0 / rows.len() as f64, &unit, &mut acc);
        }
        normalized(&acc).ok_or_else(|| Error::Degenerate("neuron directions cancel out".into()))
    };
    if sol.w.len() != params.d() {
        return Err(Error::Dimension {
            expected: params.d(),
            got: sol.w.len(),
        });
    }
    let mw = mean_dir(params.w_neurons().collect())?;
    let mu = mean_dir(params.u_neurons().collect())?;
    Ok((dot(&mw, &w_hat), dot(&mu, &u_hat)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: &[f64], y: i64) -> LabeledPoint {
        LabeledPoint::new(x.to_vec(), Label::try_from(y).unwrap())
    }

    #[test]
    fn feature_map_by_label() {
        let x = [1.0, -2.0];
        let ws = [1.0, 0.0];
        assert_eq!(feature_map(&x, &ws, 0.5).unwrap(), vec![1.0, -2.0, -0.5, 1.0]);
        let xn = [-1.0, 2.0];
        assert_eq!(feature_map(&xn, &ws, 0.5).unwrap(), vec![-0.5, 1.0, 1.0, -2.0]);
        assert!(matches!(feature_map(&[0.0, 3.0], &ws, 0.5), Err(Error::OnBoundary)));
    }

    #[test]
    fn kernel_hand_values() {
        let ws = [1.0, 0.0];
        let k = kernel(&[1.0, 1.0], &[2.0, 0.5], &ws, 0.5).unwrap();
        assert!((k - 1.25 * 2.5).abs() < 1e-15);
        let k = kernel(&[1.0, 1.0], &[-2.0, 0.5], &ws, 0.5).unwrap();
        assert!((k - (-1.5)).abs() < 1e-15);
        assert!(matches!(kernel(&[1.0, 1.0], &[0.0, 1.0], &ws, 0.5), Err(Error::OnBoundary)));
    }

    #[test]
    fn orthogonal_inputs_have_zero_kernel() {
        assert_eq!(kernel(&[1.0, 1.0], &[1.0, -1.0], &[1.0, 0.0], 0.3).unwrap(), 0.0);
    }

    #[test]
    fn two_point_instance_is_eight_ninths() {
        let data = [pt(&[1.0, 0.0], 1), pt(&[-1.0, 0.0], -1)];
        let sol = solve_par_svm(&data, 0.5, &SolverOptions::default()).unwrap();
        assert!((sol.objective - 8.0 / 9.0).abs() < 1e-7, "{}", sol.objective);
        assert!((sol.w[0] - 2.0 / 3.0).abs() < 1e-7);
        assert!((sol.u[0] + 2.0 / 3.0).abs() < 1e-7);
        assert!(sol.w[1].abs() < 1e-9 && sol.u[1].abs() < 1e-9);
        assert!(sol.lambda.iter().all(|l| *l >= 0.0));
        assert!(sol.kkt_stationarity < 1e-8 && sol.kkt_feasibility >= -1e-8 && sol.kkt_complementarity < 1e-8);
    }

    #[test]
    fn small_leak_decouples() {
        let data = [pt(&[1.0, 0.0], 1), pt(&[-1.0, 0.0], -1)];
        let sol = solve_par_svm(&data, 1e-9, &SolverOptions::default()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-6, "{}", sol.objective);
    }

    #[test]
    fn duplicates_do_not_move_the_solution() {
        let data = vec![pt(&[1.0, 0.3], 1), pt(&[-0.8, 0.5], -1), pt(&[0.6, -1.0], 1)];
        let mut dup = data.clone();
        dup.push(data[1].clone());
        dup.push(data[1].clone());
        let opts = SolverOptions::default();
        let a = solve_par_svm(&data, 0.3, &opts).unwrap();
        let b = solve_par_svm(&dup, 0.3, &opts).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-7 * a.objective);
        for (x, y) in a.w.iter().chain(&a.u).zip(b.w.iter().chain(&b.u)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn scaling_data_scales_solution_inversely() {
        let data = vec![pt(&[1.0, 0.3], 1), pt(&[-0.8, 0.5], -1), pt(&[0.6, -1.0], 1)];
        let c = 3.0;
        let scaled: Vec<_> = data.iter().map(|p| pt(&[p.x[0] * c, p.x[1] * c], i64::from(p.y))).collect();
        let opts = SolverOptions::default();
        let a = solve_par_svm(&data, 0.4, &opts).unwrap();
        let b = solve_par_svm(&scaled, 0.4, &opts).unwrap();
        assert!((b.objective - a.objective / (c * c)).abs() < 1e-6 * a.objective);
        for (x, y) in a.w.iter().chain(&a.u).zip(b.w.iter().chain(&b.u)) {
            assert!((y - x / c).abs() < 1e-6);
        }
    }

    #[test]
    fn infeasible_par_program_reports_solver_error() {
        // x and -x both positive: w.x - a u.x >= 1 and its negation cannot both hold
        let data = [pt(&[1.0, 0.0], 1), pt(&[-1.0, 0.0], 1)];
        let err = solve_par_svm(&data, 0.5, &SolverOptions::default());
        assert!(matches!(err, Err(Error::Solver { .. })), "{err:?}");
        assert!(matches!(solve_par_svm(&[], 0.5, &SolverOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn min_norm_single_point() {
        let (v, margin) = min_norm_direction(&[vec![0.0, 2.0]], &SolverOptions::default()).unwrap().unwrap();
        assert!((v[0]).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-9);
        assert!((margin - 2.0).abs() < 1e-8);
    }

    #[test]
    fn min_norm_contradictory_is_none() {
        let r = min_norm_direction(&[vec![1.0, 0.5], vec![-1.0, -0.5]], &SolverOptions::default()).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn min_norm_open_halfspace_is_feasible() {
        let pts = vec![vec![1.0, 0.2], vec![0.5, -0.7], vec![2.0, 1.5], vec![0.1, 0.05]];
        let (v, margin) = min_norm_direction(&pts, &SolverOptions::default()).unwrap().unwrap();
        assert!(margin > 0.0);
        for x in &pts {
            assert!(dot(&v, x) >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn threshold_decisions_agree_with_exact_margin() {
        let pts = vec![vec![1.0, 0.2], vec![0.5, -0.7]];
        let (_, margin) = min_norm_direction(&pts, &SolverOptions::default()).unwrap().unwrap();
        let opts = SolverOptions::default();
        assert!(direction_with_margin_exists(&pts, 0.9 * margin, &opts).unwrap());
        assert!(!direction_with_margin_exists(&pts, 1.1 * margin, &opts).unwrap());
        assert!(!direction_with_margin_exists(&[vec![1.0], vec![-1.0]], 0.01, &opts).unwrap());
    }

    #[test]
    fn compare_directions_signs() {
        let act = ActivationConfig::new(0.5).unwrap();
        let sol = SvmSolution {
            w: vec![0.6, 0.8],
            u: vec![-1.0, 0.0],
            lambda: vec![],
            objective: 2.0,
            kkt_stationarity: 0.0,
            kkt_feasibility: 0.0,
            kkt_complementarity: 0.0,
            alpha: 0.5,
            iterations: 0,
        };
        let p = NetworkParams::from_groups(&[vec![3.0, 4.0], vec![0.3, 0.4]], &[vec![2.0, 0.0], vec![1.0, 0.0]], 1.0, act).unwrap();
        let (cw, cu) = compare_directions(&p, &sol).unwrap();
        assert!((cw - 1.0).abs() < 1e-12);
        assert!((cu + 1.0).abs() < 1e-12);
        let z = NetworkParams::zeros(1, 2, 1.0, act).unwrap();
        assert!(matches!(compare_directions(&z, &sol), Err(Error::Degenerate(_))));
    }
}
