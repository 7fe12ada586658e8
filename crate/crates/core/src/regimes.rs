//! Agreement regimes of the neuron groups.
//!
//! A network is in the neural agreement regime (NAR) with parameters
//! `(beta, c_w, c_u)` when every unit-normalized w-neuron satisfies
//! `c_w[i] * (w_hat . x_i) >= beta` on every training point, and likewise for
//! the u-neurons with `c_u`. The perfect agreement regime (PAR) is the NAR with
//! `c_w = y` and `c_u = -y`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sign};
use crate::network::{Label, LabeledPoint, NetworkParams};
use crate::svm::{direction_with_margin_exists, SolverOptions};

/// Default margin used to detect regime membership.
pub const DEFAULT_BETA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarSpec {
    pub beta: f64,
    pub c_w: Vec<Label>,
    pub c_u: Vec<Label>,
}

impl NarSpec {
    pub fn new(beta: f64, c_w: Vec<Label>, c_u: Vec<Label>) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Input(format!("beta must be positive, got {beta}")));
        }
        if c_w.len() != c_u.len() {
            return Err(Error::Input("agreement vectors differ in length".into()));
        }
        Ok(Self { beta, c_w, c_u })
    }

    /// The PAR parameters `(beta, y, -y)`.
    pub fn par(beta: f64, data: &[LabeledPoint]) -> Result<Self> {
        Self::new(
            beta,
            data.iter().map(|p| p.y).collect(),
            data.iter().map(|p| p.y.flipped()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub beta: f64,
    pub in_nar: bool,
    pub inferred_c_w: Option<Vec<Label>>,
    pub inferred_c_u: Option<Vec<Label>>,
    /// Largest beta for which some NAR holds, when the groups agree in sign.
    pub max_feasible_beta: Option<f64>,
    pub in_par: bool,
    pub par_w_ratio: f64,
    pub par_u_ratio: f64,
    pub n_diff_w: usize,
    pub n_diff_u: usize,
    pub margin_condition_met: bool,
    pub symmetry_holds: Option<bool>,
    /// Zero-norm neurons; any such neuron puts the network outside every regime.
    pub degenerate_neurons: usize,
}

/// Unit-normalized projections `w_hat . x_i` for one group, neuron-major.
fn projections<'a>(
    neurons: impl Iterator<Item = &'a [f64]>,
    data: &[LabeledPoint],
) -> Result<Vec<Vec<f64>>> {
    neurons
        .map(|row| {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Degenerate("zero-norm neuron has no direction".into()));
            }
            Ok(data.iter().map(|p| dot(row, &p.x) / n).collect())
        })
        .collect()
}

fn check_dims(params: &NetworkParams, data: &[LabeledPoint]) -> Result<()> {
    match data.iter().find(|p| p.x.len() != params.d()) {
        Some(p) => Err(Error::Dimension {
            expected: params.d(),
            got: p.x.len(),
        }),
        None => Ok(()),
    }
}

fn group_agrees(proj: &[Vec<f64>], c: &[Label], beta: f64) -> bool {
    proj.iter()
        .all(|row| row.iter().zip(c).all(|(z, ci)| ci.sign() * z >= beta))
}

pub fn check_nar(params: &NetworkParams, data: &[LabeledPoint], spec: &NarSpec) -> Result<bool> {
    check_dims(params, data)?;
    if spec.c_w.len() != data.len() {
        return Err(Error::Input(format!(
            "agreement vectors have length {}, data has {} points",
            spec.c_w.len(),
            data.len()
        )));
    }
    let pw = projections(params.w_neurons(), data)?;
    let pu = projections(params.u_neurons(), data)?;
    Ok(group_agrees(&pw, &spec.c_w, spec.beta) && group_agrees(&pu, &spec.c_u, spec.beta))
}

fn first_neuron_signs(proj: &[Vec<f64>]) -> Option<Vec<Label>> {
    proj[0].iter().map(|&z| Label::from_sign(z)).collect()
}

/// Label vectors `(c_w, c_u)` for which the network is in the NAR at `beta`.
pub fn infer_nar(params: &NetworkParams, data: &[LabeledPoint], beta: f64) -> Result<Option<(Vec<Label>, Vec<Label>)>> {
    check_dims(params, data)?;
    let pw = projections(params.w_neurons(), data)?;
    let pu = projections(params.u_neurons(), data)?;
    let (Some(c_w), Some(c_u)) = (first_neuron_signs(&pw), first_neuron_signs(&pu)) else {
        return Ok(None);
    };
    Ok((group_agrees(&pw, &c_w, beta) && group_agrees(&pu, &c_u, beta)).then_some((c_w, c_u)))
}

/// Largest `beta` at which [`infer_nar`] succeeds: the smallest absolute
/// normalized projection, provided every group agrees in sign on every point.
pub fn max_feasible_beta(params: &NetworkParams, data: &[LabeledPoint]) -> Result<Option<f64>> {
    check_dims(params, data)?;
    let mut best = f64::INFINITY;
    for proj in [projections(params.w_neurons(), data)?, projections(params.u_neurons(), data)?] {
        let Some(c) = first_neuron_signs(&proj) else {
            return Ok(None);
        };
        for row in &proj {
            for (z, ci) in row.iter().zip(&c) {
                let m = ci.sign() * z;
                if m <= 0.0 {
                    return Ok(None);
                }
                best = best.min(m);
            }
        }
    }
    Ok(best.is_finite().then_some(best))
}

/// Fraction of w-neurons with `sign(w . x_i) = y_i` on every point, and of
/// u-neurons with `sign(u . x_i) = -y_i`. `sign(0)` matches no label.
pub fn par_ratios(params: &NetworkParams, data: &[LabeledPoint]) -> (f64, f64) {
    let ratio = |rows: Vec<&[f64]>, flip: f64| {
        let hits = rows
            .iter()
            .filter(|row| {
                data.iter()
                    .all(|p| f64::from(sign(dot(row, &p.x))) == flip * p.y.sign())
            })
            .count();
        hits as f64 / rows.len() as f64
    };
    (
        ratio(params.w_neurons().collect(), 1.0),
        ratio(params.u_neurons().collect(), -1.0),
    )
}

fn group_disagreement(rows: Vec<&[f64]>, data: &[LabeledPoint]) -> usize {
    let signs: Vec<Vec<i8>> = rows
        .iter()
        .map(|r| data.iter().map(|p| sign(dot(r, &p.x))).collect())
        .collect();
    let mut worst = 0;
    for (a, sa) in signs.iter().enumerate() {
        for sb in &signs[a + 1..] {
            worst = worst.max(sa.iter().zip(sb).filter(|(x, y)| x != y).count());
        }
    }
    worst
}

/// For each group, the max over neuron pairs of the number of points on which
/// the pair's signs differ.
pub fn max_disagreement(params: &NetworkParams, data: &[LabeledPoint]) -> (usize, usize) {
    (
        group_disagreement(params.w_neurons().collect(), data),
        group_disagreement(params.u_neurons().collect(), data),
    )
}

/// `smoothed_margin > sqrt(k) * alpha * v * max_i ||x_i||`.
pub fn margin_condition(params: &NetworkParams, data: &[LabeledPoint]) -> Result<bool> {
    let smoothed = params.smoothed_margin(data)?;
    let rx = data.iter().map(|p| norm(&p.x)).fold(0.0, f64::max);
    Ok(smoothed > (params.k() as f64).sqrt() * params.alpha() * params.v() * rx)
}

/// True iff both `V_beta^+` and `V_beta^-` are empty: no unit direction
/// classifies one whole class at margin `beta` while also capturing an
/// opposite-class point at margin `beta`.
pub fn symmetry_check(data: &[LabeledPoint], beta: f64, opts: &SolverOptions) -> Result<bool> {
    if !(beta > 0.0) {
        return Err(Error::Input(format!("beta must be positive, got {beta}")));
    }
    let pos: Vec<Vec<f64>> = data.iter().filter(|p| p.y == Label::Positive).map(|p| p.x.clone()).collect();
    let neg: Vec<Vec<f64>> = data.iter().filter(|p| p.y == Label::Negative).map(|p| p.x.clone()).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("symmetry check needs both labels present".into()));
    }
    Ok(set_is_empty(&pos, &neg, beta, opts)? && set_is_empty(&neg, &pos, beta, opts)?)
}

/// Whether no direction covers all of `own` plus one of `other` at margin `beta`.
fn set_is_empty(own: &[Vec<f64>], other: &[Vec<f64>], beta: f64, opts: &SolverOptions) -> Result<bool> {
    if !direction_with_margin_exists(own, beta, opts)? {
        return Ok(true);
    }
    let witnesses = other
        .par_iter()
        .map(|x| {
            let mut rows = own.to_vec();
            rows.push(x.clone());
            direction_with_margin_exists(&rows, beta, opts)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(!witnesses.into_iter().any(|w| w))
}

/// Regime diagnostics at detection margin `beta`. The symmetry check is left
/// unset; it depends on the data only and is computed separately.
pub fn regime_report(params: &NetworkParams, data: &[LabeledPoint], beta: f64) -> Result<RegimeReport> {
    check_dims(params, data)?;
    let degenerate_neurons = (0..2 * params.k()).filter(|&i| norm(params.row(i)) == 0.0).count();
    let (par_w_ratio, par_u_ratio) = par_ratios(params, data);
    let (n_diff_w, n_diff_u) = max_disagreement(params, data);
    let margin_condition_met = params.norm() > 0.0 && margin_condition(params, data).unwrap_or(false);

    let (inferred, in_par, max_beta) = if degenerate_neurons > 0 {
        (None, false, None)
    } else {
        (
            infer_nar(params, data, beta)?,
            check_nar(params, data, &NarSpec::par(beta, data)?)?,
            max_feasible_beta(params, data)?,
        )
    };
    let (inferred_c_w, inferred_c_u) = match inferred {
        Some((w, u)) => (Some(w), Some(u)),
        None => (None, None),
    };
    Ok(RegimeReport {
        beta,
        in_nar: inferred_c_w.is_some(),
        inferred_c_w,
        inferred_c_u,
        max_feasible_beta: max_beta,
        in_par,
        par_w_ratio,
        par_u_ratio,
        n_diff_w,
        n_diff_u,
        margin_condition_met,
        symmetry_holds: None,
        degenerate_neurons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ActivationConfig;

    fn act() -> ActivationConfig {
        ActivationConfig::new(0.3).unwrap()
    }

    fn pt(x: &[f64], y: i64) -> LabeledPoint {
        LabeledPoint::new(x.to_vec(), Label::try_from(y).unwrap())
    }

    fn net(w: &[Vec<f64>], u: &[Vec<f64>]) -> NetworkParams {
        NetworkParams::from_groups(w, u, 1.0, act()).unwrap()
    }

    #[test]
    fn orthogonal_u_neuron_breaks_nar() {
        let p = net(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let data = [pt(&[1.0, 0.0], 1)];
        let spec = NarSpec::new(1e-6, vec![Label::Positive], vec![Label::Positive]).unwrap();
        assert!(!check_nar(&p, &data, &spec).unwrap());
        let spec = NarSpec::new(1e-6, vec![Label::Positive], vec![Label::Negative]).unwrap();
        assert!(!check_nar(&p, &data, &spec).unwrap());
        assert!(infer_nar(&p, &data, 1e-6).unwrap().is_none());
    }

    #[test]
    fn aligned_neurons_are_in_nar_and_scale_free() {
        let data = [pt(&[2.0, 0.0], 1), pt(&[-1.0, 0.5], -1)];
        let p = net(&[vec![1.0, 0.0], vec![3.0, 0.1]], &[vec![-1.0, 0.0], vec![-2.0, 0.2]]);
        let spec = NarSpec::par(0.5, &data).unwrap();
        assert!(check_nar(&p, &data, &spec).unwrap());
        assert!(check_nar(&p.scaled(1e-4), &data, &spec).unwrap());
        assert!(check_nar(&p.scaled(1e4), &data, &spec).unwrap());
        let (cw, cu) = infer_nar(&p, &data, 0.5).unwrap().unwrap();
        assert_eq!(cw, vec![Label::Positive, Label::Negative]);
        assert_eq!(cu, vec![Label::Negative, Label::Positive]);
    }

    #[test]
    fn zero_neuron_is_degenerate() {
        let p = net(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]);
        let data = [pt(&[1.0, 0.0], 1)];
        assert!(matches!(infer_nar(&p, &data, 0.1), Err(Error::Degenerate(_))));
        let rep = regime_report(&p, &data, 0.1).unwrap();
        assert!(!rep.in_nar && !rep.in_par);
        assert_eq!(rep.degenerate_neurons, 1);
    }

    #[test]
    fn beta_above_smallest_margin_rejects_nar() {
        // normalized projection of the w-neuron on the second point is 0.1
        let data = [pt(&[1.0, 0.0], 1), pt(&[0.1, 1.0], 1)];
        let p = net(&[vec![1.0, 0.0]], &[vec![-1.0, 0.0]]);
        assert!(infer_nar(&p, &data, 0.2).unwrap().is_none());
        assert!(infer_nar(&p, &data, 0.05).unwrap().is_some());
        assert!((max_feasible_beta(&p, &data).unwrap().unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sign_disagreement_rejects_nar() {
        let data = [pt(&[1.0, 1.0], 1)];
        let p = net(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[vec![-1.0, -1.0], vec![-1.0, -1.0]]);
        assert!(infer_nar(&p, &data, 1e-9).unwrap().is_none());
        assert!(max_feasible_beta(&p, &data).unwrap().is_none());
    }

    #[test]
    fn par_ratio_cases() {
        let data = [pt(&[1.0, 0.2], 1), pt(&[-1.0, 0.3], -1)];
        let ws = vec![1.0, 0.0];
        let p = net(&[ws.clone(), ws.clone()], &[vec![-1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(par_ratios(&p, &data), (1.0, 1.0));
        let z = NetworkParams::zeros(2, 2, 1.0, act()).unwrap();
        assert_eq!(par_ratios(&z, &data), (0.0, 0.0));
        let half = net(&[ws.clone(), vec![-1.0, 0.0]], &[vec![-1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(par_ratios(&half, &data).0, 0.5);
    }

    #[test]
    fn disagreement_counts() {
        let data: Vec<_> = (1..=10).map(|i| pt(&[i as f64, 0.5], 1)).collect();
        let same = net(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert_eq!(max_disagreement(&same, &data), (0, 0));
        let opposite = net(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert_eq!(max_disagreement(&opposite, &data).0, 10);
    }

    #[test]
    fn disagreement_matches_independent_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.random_range(1..5);
            let d = rng.random_range(1..4);
            let w: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let u: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let data: Vec<_> = (0..rng.random_range(1..8))
                .map(|_| pt(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), 1))
                .collect();
            let brute = |g: &[Vec<f64>]| {
                let mut best = 0;
                for a in g {
                    for b in g {
                        let mut c = 0;
                        for p in &data {
                            let sa: f64 = a.iter().zip(&p.x).map(|(x, y)| x * y).sum();
                            let sb: f64 = b.iter().zip(&p.x).map(|(x, y)| x * y).sum();
                            if sa.signum() != sb.signum() || (sa == 0.0) != (sb == 0.0) {
                                c += 1;
                            }
                        }
                        best = best.max(c);
                    }
                }
                best
            };
            let p = net(&w, &u);
            assert_eq!(max_disagreement(&p, &data), (brute(&w), brute(&u)));
        }
    }

    #[test]
    fn margin_condition_constructed() {
        // k = 1, alpha = 0.01, one point with ||x|| = 1; w = (c, 0), u = 0
        let act = ActivationConfig::new(0.01).unwrap();
        let data = [pt(&[1.0, 0.0], 1)];
        let p = NetworkParams::from_groups(&[vec![10.0, 0.0]], &[vec![0.0, 0.0]], 1.0, act).unwrap();
        // smoothed = (q - 0) / 10 with q = 10 up to e^{-10} corrections: ~1
        assert!(p.smoothed_margin(&data).unwrap() > 0.5);
        assert!(margin_condition(&p, &data).unwrap());
    }

    #[test]
    fn margin_condition_false_near_init() {
        let p = net(&[vec![1e-3, -2e-3]], &[vec![5e-4, 1e-3]]);
        let data = [pt(&[1.0, 0.0], 1), pt(&[-1.0, 0.2], -1)];
        assert!(p.smoothed_margin(&data).unwrap() < 0.0);
        assert!(!margin_condition(&p, &data).unwrap());
    }

    #[test]
    fn margin_condition_is_strict() {
        // u = 0 and w.x > 0 on both points, so the smoothed margin does not
        // depend on alpha; with max ||x|| = 1, k = v = 1 the threshold is alpha.
        let data = [pt(&[1.0, 0.0], 1), pt(&[0.5, 0.0], 1)];
        let w = [vec![5.0, 0.0]];
        let u = [vec![0.0, 0.0]];
        let s = net(&w, &u).smoothed_margin(&data).unwrap();
        assert!(s > 0.0 && s < 1.0);
        let at = NetworkParams::from_groups(&w, &u, 1.0, ActivationConfig::new(s).unwrap()).unwrap();
        assert_eq!(at.smoothed_margin(&data).unwrap(), s);
        assert!(!margin_condition(&at, &data).unwrap());
        let below = NetworkParams::from_groups(&w, &u, 1.0, ActivationConfig::new(s * 0.999).unwrap()).unwrap();
        assert!(margin_condition(&below, &data).unwrap());
    }

    #[test]
    fn symmetry_antipodal_and_witness() {
        let opts = SolverOptions::default();
        let anti = [pt(&[1.0, 0.2], 1), pt(&[-1.0, -0.2], -1), pt(&[0.5, -0.7], 1), pt(&[-0.5, 0.7], -1)];
        for beta in [0.01, 0.1, 0.5] {
            assert!(symmetry_check(&anti, beta, &opts).unwrap());
        }
        let witness = [pt(&[1.0, 0.0], 1), pt(&[0.9, 0.1], -1)];
        assert!(!symmetry_check(&witness, 0.5, &opts).unwrap());
        assert!(matches!(symmetry_check(&witness[..1], 0.5, &opts), Err(Error::Input(_))));
    }

    #[test]
    fn symmetry_invariant_under_rescaling() {
        let opts = SolverOptions::default();
        let witness = [pt(&[1.0, 0.0], 1), pt(&[0.9, 0.1], -1), pt(&[-1.0, 0.3], -1)];
        for beta in [0.05, 0.5, 2.0] {
            let a = symmetry_check(&witness, beta, &opts).unwrap();
            let c = 4.0;
            let scaled: Vec<_> = witness.iter().map(|p| pt(&[p.x[0] * c, p.x[1] * c], i64::from(p.y))).collect();
            let b = symmetry_check(&scaled, beta * c, &opts).unwrap();
            assert_eq!(a, b, "beta {beta}");
        }
    }
}
