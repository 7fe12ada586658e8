//! Cross-entropy loss, hand-written gradients, epoch SGD and full-batch GD,
//! and the closed-form update budget `M(n, eps)`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::geometry::cluster_report;
use crate::linalg::{dot, norm};
use crate::network::{activation_slope, leaky_relu, ActivationConfig, LabeledPoint, NetworkParams};
use crate::regimes::{regime_report, DEFAULT_BETA};
use crate::rng::{stream_rng, Stream};
use crate::trace::{Checkpoint, EpochBoundSummary, TrainTrace};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// `log(1 + e^{-q})`, total and overflow-free.
pub fn cross_entropy(q: f64) -> f64 {
    if q >= 0.0 {
        (-q).exp().ln_1p()
    } else {
        -q + q.exp().ln_1p()
    }
}

/// `|l'(q)| = 1 / (1 + e^q)`.
pub fn loss_slope(q: f64) -> f64 {
    if q >= 0.0 {
        let t = (-q).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + q.exp())
    }
}

pub fn cross_entropy_point(params: &NetworkParams, p: &LabeledPoint) -> Result<f64> {
    Ok(cross_entropy(params.point_margin(p)?))
}

pub fn mean_loss(params: &NetworkParams, data: &[LabeledPoint]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("mean loss of an empty dataset".into()));
    }
    let total: f64 = data
        .iter()
        .map(|p| cross_entropy_point(params, p))
        .sum::<Result<f64>>()?;
    Ok(total / data.len() as f64)
}

/// Adds `scale * dl/dW` at margin `q` for point `p` into `grad` (flat, 2k x d).
fn accumulate_gradient(params: &NetworkParams, p: &LabeledPoint, q: f64, scale: f64, grad: &mut [f64]) {
    let d = params.d();
    let coef = scale * params.v() * p.y.sign() * loss_slope(q);
    for i in 0..2 * params.k() {
        let row = params.row(i);
        let slope = activation_slope(dot(row, &p.x), params.act());
        // w-rows descend along +y x, u-rows along -y x
        let c = -params.row_sign(i) * coef * slope;
        for (g, xm) in grad[i * d..(i + 1) * d].iter_mut().zip(&p.x) {
            *g += c * xm;
        }
    }
}

/// Gradient of the point loss with respect to `W`, flattened row-major (2k x d).
pub fn point_gradient(params: &NetworkParams, p: &LabeledPoint) -> Result<Vec<f64>> {
    let q = params.point_margin(p)?;
    let mut grad = vec![0.0; params.weights().len()];
    accumulate_gradient(params, p, q, 1.0, &mut grad);
    Ok(grad)
}

fn apply_step(params: &mut NetworkParams, grad: &[f64], eta: f64) {
    for (w, g) in params.weights_mut().iter_mut().zip(grad) {
        *w -= eta * g;
    }
}

/// One SGD step on a single point: `W - eta * point_gradient`.
pub fn sgd_update(params: &NetworkParams, p: &LabeledPoint, eta: f64) -> Result<NetworkParams> {
    if !(eta > 0.0) {
        return Err(Error::Input(format!("learning rate must be positive, got {eta}")));
    }
    let grad = point_gradient(params, p)?;
    let mut next = params.clone();
    apply_step(&mut next, &grad, eta);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// One point per update, each epoch a fresh permutation.
    SgdEpoch,
    /// Each update uses the mean gradient over all points.
    FullBatchGd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub k: usize,
    pub d: usize,
    pub v: f64,
    pub alpha: f64,
    pub init_std: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub max_updates: u64,
    pub checkpoint_every: u64,
    pub mode: TrainMode,
    /// Margin used for the NAR/PAR flags recorded at checkpoints.
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            k: 5,
            d: 2,
            v: 1.0,
            alpha: 0.3,
            init_std: 1e-3,
            seed: 0,
            epsilon: 0.1,
            max_updates: 1_000_000,
            checkpoint_every: 100,
            mode: TrainMode::SgdEpoch,
            beta: DEFAULT_BETA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.k == 0 || self.d == 0 {
            return bad("k and d must be positive".into());
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return bad(format!("v must be positive, got {}", self.v));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be nonnegative, got {}", self.init_std));
        }
        if self.max_updates == 0 || self.checkpoint_every == 0 {
            return bad("max_updates and checkpoint_every must be at least 1".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        ActivationConfig::new(self.alpha)?;
        Ok(())
    }

    pub fn activation(&self) -> Result<ActivationConfig> {
        ActivationConfig::new(self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    /// Largest row norm of `W` at initialization.
    pub r0: f64,
}

/// Gaussian initialization from the init stream of `cfg.seed`.
pub fn init_params(cfg: &TrainConfig) -> Result<(NetworkParams, InitRecord)> {
    cfg.validate()?;
    let act = cfg.activation()?;
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    let len = 2 * cfg.k * cfg.d;
    let weights: Vec<f64> = if cfg.init_std == 0.0 {
        vec![0.0; len]
    } else {
        (0..len)
            .map(|_| cfg.init_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    };
    let params = NetworkParams::new(cfg.k, cfg.d, weights, cfg.v, act)?;
    let r0 = params.max_row_norm();
    Ok((params, InitRecord { r0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub a: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub n: f64,
    pub total: f64,
}

/// Number of SGD updates after which the mean loss is guaranteed to have
/// dropped below `eps` on data with `y w*.x >= 1` and `||x|| <= rx`.
pub fn convergence_bound(
    n: usize,
    eps: f64,
    rx: f64,
    r0: f64,
    cfg: &TrainConfig,
    w_star_norm: f64,
) -> Result<BoundTerms> {
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    let (k, eta, v, alpha) = (cfg.k as f64, cfg.eta, cfg.v, cfg.alpha);
    let nf = n as f64;
    let a = 1.0 + (1.0 + 2.0 * v * v * rx * rx * eta * k * nf) / eps;
    let ws = w_star_norm;
    let term1 = (rx * rx / (alpha * alpha) + 1.0 / (k * eta * v * v * alpha * alpha)) * ws * ws * nf * nf * a * a;
    let term2 = (r0 * (8.0 * k * k * eta * eta * v * v * rx * rx + 8.0 * k * eta)).sqrt()
        * ws.powf(1.5)
        * nf.powf(1.5)
        * a.powf(1.5)
        / (2.0 * k * (eta * v * alpha).powf(1.5));
    let term3 = 2.0 * r0 * ws * nf * a / (eta * v * alpha);
    Ok(BoundTerms {
        a,
        term1,
        term2,
        term3,
        n: nf,
        total: term1 + term2 + term3 + nf,
    })
}

/// Training state shared by both modes: the parameters, every neuron's
/// pre-activation on every point, and the resulting margins and mean loss.
struct Run<'a> {
    cfg: &'a TrainConfig,
    data: &'a [LabeledPoint],
    xs: Vec<Vec<f64>>,
    params: NetworkParams,
    /// `z[i * n + j] = row_i . x_j`.
    z: Vec<f64>,
    margins: Vec<f64>,
    loss: f64,
}

impl<'a> Run<'a> {
    fn refresh(&mut self, update: u64) -> Result<()> {
        let n = self.data.len();
        let k = self.params.k();
        let act = self.params.act();
        for i in 0..2 * k {
            let row = self.params.row(i);
            for (zij, p) in self.z[i * n..(i + 1) * n].iter_mut().zip(self.data) {
                *zij = dot(row, &p.x);
            }
        }
        // same accumulation order as NetworkParams::forward
        let v = self.params.v();
        for (j, (q, p)) in self.margins.iter_mut().zip(self.data).enumerate() {
            let mut pos = 0.0;
            let mut neg = 0.0;
            for i in 0..2 * k {
                let a = leaky_relu(self.z[i * n + j], act);
                if i < k {
                    pos += a;
                } else {
                    neg += a;
                }
            }
            *q = p.y.sign() * (v * pos - v * neg);
        }
        self.loss = self.margins.iter().map(|&q| cross_entropy(q)).sum::<f64>() / n as f64;
        if !self.loss.is_finite() || self.loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { update, loss: self.loss });
        }
        Ok(())
    }

    /// Mean gradient over all points from the cached pre-activations.
    fn batch_gradient(&self, grad: &mut [f64]) {
        let n = self.data.len();
        let d = self.params.d();
        let act = self.params.act();
        let scale = 1.0 / n as f64;
        let coef: Vec<f64> = self
            .data
            .iter()
            .zip(&self.margins)
            .map(|(p, &q)| scale * self.params.v() * p.y.sign() * loss_slope(q))
            .collect();
        grad.fill(0.0);
        for i in 0..2 * self.params.k() {
            let s = -self.params.row_sign(i);
            let g = &mut grad[i * d..(i + 1) * d];
            for (j, p) in self.data.iter().enumerate() {
                let c = s * coef[j] * activation_slope(self.z[i * n + j], act);
                for (gm, xm) in g.iter_mut().zip(&p.x) {
                    *gm += c * xm;
                }
            }
        }
    }

    fn checkpoint(&self, update: u64, epoch: u64) -> Result<Checkpoint> {
        let p = &self.params;
        let report = cluster_report(p, &self.xs);
        let regime = regime_report(p, self.data, self.cfg.beta)?;
        let defined = p.norm() > 0.0;
        Ok(Checkpoint {
            update,
            epoch,
            mean_loss: self.loss,
            min_point_margin: self.margins.iter().copied().fold(f64::INFINITY, f64::min),
            normalized_margin: if defined { Some(p.normalized_margin(self.data)?) } else { None },
            smoothed_margin: if defined { p.smoothed_margin(self.data).ok() } else { None },
            cluster_radius: report.radius_r,
            cluster_ratio: report.ratio,
            max_angle_w: report.max_angle_w,
            max_angle_u: report.max_angle_u,
            nonlinear_fraction: report.nonlinear_fraction,
            nar_flag: regime.in_nar,
            par_flag: regime.in_par,
            par_w_ratio: regime.par_w_ratio,
            par_u_ratio: regime.par_u_ratio,
            n_diff_w: regime.n_diff_w,
            n_diff_u: regime.n_diff_u,
        })
    }
}

/// Trains from a fresh initialization until the mean loss first drops below
/// `cfg.epsilon` or `cfg.max_updates` updates have been applied.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<(NetworkParams, TrainTrace)> {
    cfg.validate()?;
    let data = &ds.points;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(p) = data.iter().find(|p| p.x.len() != cfg.d) {
        return Err(Error::Dimension { expected: cfg.d, got: p.x.len() });
    }
    let n = data.len();
    let (params, init) = init_params(cfg)?;
    let bound = convergence_bound(n, cfg.epsilon, ds.r_x, init.r0, cfg, norm(&ds.w_star))?;

    let mut run = Run {
        cfg,
        data,
        xs: data.iter().map(|p| p.x.clone()).collect(),
        params,
        z: vec![0.0; 2 * cfg.k * n],
        margins: vec![0.0; n],
        loss: 0.0,
    };
    run.refresh(0)?;

    let mut checkpoints = vec![run.checkpoint(0, 0)?];
    let mut converged_at = (run.loss < cfg.epsilon).then_some(0);
    let mut update = 0u64;
    let mut epoch_bound = match cfg.mode {
        TrainMode::SgdEpoch => Some(EpochBoundSummary::default()),
        TrainMode::FullBatchGd => None,
    };
    let growth = 1.0 + 2.0 * cfg.v * cfg.v * ds.r_x * ds.r_x * cfg.eta * cfg.k as f64 * n as f64;

    let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; run.params.weights().len()];

    'outer: while converged_at.is_none() && update < cfg.max_updates {
        match cfg.mode {
            TrainMode::SgdEpoch => {
                order.shuffle(&mut shuffle);
                let mut max_sampled = 0.0f64;
                for &i in &order {
                    let q = run.margins[i];
                    max_sampled = max_sampled.max(cross_entropy(q));
                    grad.fill(0.0);
                    accumulate_gradient(&run.params, &data[i], q, 1.0, &mut grad);
                    apply_step(&mut run.params, &grad, cfg.eta);
                    update += 1;
                    run.refresh(update)?;
                    let epoch = update / n as u64;
                    if run.loss < cfg.epsilon {
                        converged_at = Some(update);
                    }
                    if update.is_multiple_of(cfg.checkpoint_every) {
                        checkpoints.push(run.checkpoint(update, epoch)?);
                    }
                    if converged_at.is_some() || update >= cfg.max_updates {
                        break 'outer;
                    }
                }
                // Full epoch: every point was sampled with loss <= max_sampled.
                let end_max = run.margins.iter().map(|&q| cross_entropy(q)).fold(0.0, f64::max);
                if let Some(summary) = epoch_bound.as_mut() {
                    summary.record(end_max, max_sampled * growth);
                }
            }
            TrainMode::FullBatchGd => {
                run.batch_gradient(&mut grad);
                apply_step(&mut run.params, &grad, cfg.eta);
                update += 1;
                run.refresh(update)?;
                if run.loss < cfg.epsilon {
                    converged_at = Some(update);
                }
                if update.is_multiple_of(cfg.checkpoint_every) {
                    checkpoints.push(run.checkpoint(update, update)?);
                }
            }
        }
    }

    if checkpoints.last().map(|c| c.update) != Some(update) {
        let epoch = match cfg.mode {
            TrainMode::SgdEpoch => update / n as u64,
            TrainMode::FullBatchGd => update,
        };
        checkpoints.push(run.checkpoint(update, epoch)?);
    }

    let trace = TrainTrace {
        config: cfg.clone(),
        r0: init.r0,
        r_x: ds.r_x,
        w_star_norm: norm(&ds.w_star),
        beta: cfg.beta,
        updates_run: update,
        final_loss: run.loss,
        converged_at,
        bound_m: bound.total,
        bound,
        epoch_bound,
        checkpoints,
    };
    Ok((run.params, trace))
}
