//! The two-layer Leaky-ReLU network with a fixed second layer.
//!
//! The first layer holds `2k` neurons. Rows `0..k` are the *w-neurons*, which
//! feed the output with weight `+v`; rows `k..2k` are the *u-neurons*, with
//! weight `-v`:
//!
//! ```text
//! N(x) = v * sum_i sigma(w_i . x) - v * sum_i sigma(u_i . x)
//! ```
//!
//! Only the first layer is trained, so the parameter norm is the Frobenius
//! norm of `W` alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::training::cross_entropy;

/// Leak slope of the activation, `0 < alpha < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ActivationConfig {
    alpha: f64,
}

impl ActivationConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(Error::Input(format!("leak slope must lie in (0,1), got {alpha}")))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl TryFrom<f64> for ActivationConfig {
    type Error = Error;
    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<ActivationConfig> for f64 {
    fn from(a: ActivationConfig) -> f64 {
        a.alpha
    }
}

/// `max(z, alpha * z)`.
#[inline]
pub fn leaky_relu(z: f64, act: ActivationConfig) -> f64 {
    if z > 0.0 {
        z
    } else {
        act.alpha * z
    }
}

/// Derivative of [`leaky_relu`], with the convention `sigma'(0) = alpha`.
#[inline]
pub fn activation_slope(z: f64, act: ActivationConfig) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        act.alpha
    }
}

/// Binary label. Serialized as the integer `-1` or `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn from_sign(z: f64) -> Option<Self> {
        if z > 0.0 {
            Some(Label::Positive)
        } else if z < 0.0 {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::Input(format!("label must be -1 or 1, got {other}"))),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        match l {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: Label,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Self { x, y }
    }
}

/// First-layer weights plus the fixed output scale and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct NetworkParams {
    k: usize,
    d: usize,
    /// Row-major `2k x d`.
    weights: Vec<f64>,
    v: f64,
    act: ActivationConfig,
}

impl NetworkParams {
    pub fn new(k: usize, d: usize, weights: Vec<f64>, v: f64, act: ActivationConfig) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::Input(format!("k and d must be positive (k={k}, d={d})")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Input(format!("output scale v must be positive, got {v}")));
        }
        if weights.len() != 2 * k * d {
            return Err(Error::Dimension {
                expected: 2 * k * d,
                got: weights.len(),
            });
        }
        Ok(Self { k, d, weights, v, act })
    }

    pub fn zeros(k: usize, d: usize, v: f64, act: ActivationConfig) -> Result<Self> {
        Self::new(k, d, vec![0.0; 2 * k * d], v, act)
    }

    /// Builds parameters from explicit w- and u-neuron lists.
    pub fn from_groups(w: &[Vec<f64>], u: &[Vec<f64>], v: f64, act: ActivationConfig) -> Result<Self> {
        if w.len() != u.len() || w.is_empty() {
            return Err(Error::Input(format!(
                "need the same positive number of w- and u-neurons (got {} and {})",
                w.len(),
                u.len()
            )));
        }
        let d = w[0].len();
        let mut weights = Vec::with_capacity(2 * w.len() * d);
        for row in w.iter().chain(u) {
            if row.len() != d {
                return Err(Error::Dimension { expected: d, got: row.len() });
            }
            weights.extend_from_slice(row);
        }
        Self::new(w.len(), d, weights, v, act)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn act(&self) -> ActivationConfig {
        self.act
    }

    pub fn alpha(&self) -> f64 {
        self.act.alpha
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Row `i` of `W`, `0 <= i < 2k`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.weights[i * self.d..(i + 1) * self.d]
    }

    pub fn w_neurons(&self) -> impl Iterator<Item = &[f64]> {
        self.weights[..self.k * self.d].chunks_exact(self.d)
    }

    pub fn u_neurons(&self) -> impl Iterator<Item = &[f64]> {
        self.weights[self.k * self.d..].chunks_exact(self.d)
    }

    /// Output sign attached to row `i`: `+1` for w-neurons, `-1` for u-neurons.
    #[inline]
    pub fn row_sign(&self, i: usize) -> f64 {
        if i < self.k {
            1.0
        } else {
            -1.0
        }
    }

    /// Frobenius norm of `W`; `v` is fixed and not part of the parameter.
    pub fn norm(&self) -> f64 {
        norm(&self.weights)
    }

    pub fn max_row_norm(&self) -> f64 {
        self.weights
            .chunks_exact(self.d)
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// Copy with `W` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.d {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            })
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// [`forward`](Self::forward) without the dimension check.
    pub fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (i, row) in self.weights.chunks_exact(self.d).enumerate() {
            let a = leaky_relu(dot(row, x), self.act);
            if i < self.k {
                pos += a;
            } else {
                neg += a;
            }
        }
        self.v * pos - self.v * neg
    }

    /// `q = y * N(x)`.
    pub fn point_margin(&self, p: &LabeledPoint) -> Result<f64> {
        Ok(p.y.sign() * self.forward(&p.x)?)
    }

    fn margins(&self, data: &[LabeledPoint]) -> Result<Vec<f64>> {
        data.iter().map(|p| self.point_margin(p)).collect()
    }

    /// `min_i q_i / ||W||`.
    pub fn normalized_margin(&self, data: &[LabeledPoint]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("normalized margin needs at least one point".into()));
        }
        let theta = self.norm();
        if theta == 0.0 {
            return Err(Error::Degenerate("parameter norm is zero".into()));
        }
        let q_min = self.margins(data)?.into_iter().fold(f64::INFINITY, f64::min);
        Ok(q_min / theta)
    }

    /// `log(1 / (exp(n L) - 1)) / ||W||`, evaluated in the log domain.
    pub fn smoothed_margin(&self, data: &[LabeledPoint]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Input("smoothed margin needs at least one point".into()));
        }
        let theta = self.norm();
        if theta == 0.0 {
            return Err(Error::Degenerate("parameter norm is zero".into()));
        }
        let margins = self.margins(data)?;
        let q_min = margins.iter().copied().fold(f64::INFINITY, f64::min);
        // prod(1 + e^{-q_i}) - 1 >= e^{-q_min}, so the gap below the
        // normalized margin is nonnegative; clamping absorbs rounding.
        let gap = (log_expm1_total_loss(&margins) + q_min).max(0.0);
        let value = (q_min - gap) / theta;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NumericOverflow(format!("smoothed margin evaluated to {value}")))
        }
    }
}

/// `ln(ln(1 + e^{-q}))` without underflow for large `q`.
fn ln_point_loss(q: f64) -> f64 {
    if q > 30.0 {
        // ln(1 + t) = t (1 - t/2 + ...), t = e^{-q}
        let t = (-q).exp();
        -q + (-0.5 * t).ln_1p()
    } else {
        cross_entropy(q).ln()
    }
}

/// `ln(exp(sum_i ln(1 + e^{-q_i})) - 1)`, i.e. `ln(prod_i (1 + e^{-q_i}) - 1)`.
fn log_expm1_total_loss(margins: &[f64]) -> f64 {
    // s = n * L, accumulated through its logarithm so that tiny losses survive.
    let logs: Vec<f64> = margins.iter().map(|&q| ln_point_loss(q)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let ln_s = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let s = ln_s.exp();
    if ln_s < -20.0 {
        // expm1(s) = s (1 + s/2 + ...)
        ln_s + (0.5 * s).ln_1p()
    } else if s < 30.0 {
        s.exp_m1().ln()
    } else {
        s + (-(-s).exp()).ln_1p()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    k: usize,
    d: usize,
    v: f64,
    alpha: f64,
    /// Rows `0..k` are w-neurons, rows `k..2k` are u-neurons.
    weights: Vec<Vec<f64>>,
}

impl TryFrom<ParamsRepr> for NetworkParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        if r.weights.len() != 2 * r.k {
            return Err(Error::Dimension {
                expected: 2 * r.k,
                got: r.weights.len(),
            });
        }
        let mut flat = Vec::with_capacity(2 * r.k * r.d);
        for row in &r.weights {
            if row.len() != r.d {
                return Err(Error::Dimension { expected: r.d, got: row.len() });
            }
            flat.extend_from_slice(row);
        }
        NetworkParams::new(r.k, r.d, flat, r.v, ActivationConfig::new(r.alpha)?)
    }
}

impl From<NetworkParams> for ParamsRepr {
    fn from(p: NetworkParams) -> Self {
        ParamsRepr {
            k: p.k,
            d: p.d,
            v: p.v,
            alpha: p.act.alpha,
            weights: p.weights.chunks_exact(p.d).map(<[f64]>::to_vec).collect(),
        }
    }
}
