//! Clustering statistics of the learned neurons and the linear-region test.
//!
//! If every w-neuron lies within distance `r` of the w-centroid and likewise
//! for the u-neurons, then for every input with
//! `|(w_bar - u_bar) . x| >= 2 r ||x||` the network's sign equals the sign of
//! the linear classifier `(w_bar - u_bar) . x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{angle, dot, norm, scale, sign, sub};
use crate::network::NetworkParams;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub w_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    /// Max distance of any neuron to its group centroid.
    pub radius_r: f64,
    /// `||w_bar - u_bar||`.
    pub sep_norm: f64,
    /// `radius_r / sep_norm`; `None` when `sep_norm == 0`.
    pub ratio: Option<f64>,
    /// Max pairwise angle among w-neurons, radians.
    pub max_angle_w: f64,
    pub max_angle_u: f64,
    /// Number of zero-norm neurons skipped by the angle computation.
    pub zero_norm_neurons: usize,
    /// Fraction of evaluated points outside the linear region.
    pub nonlinear_fraction: f64,
}

impl ClusterReport {
    /// `w_bar - u_bar`.
    pub fn separator(&self) -> Vec<f64> {
        sub(&self.w_bar, &self.u_bar)
    }
}

fn centroid<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d];
    let mut count = 0usize;
    for row in rows {
        for (ci, ri) in c.iter_mut().zip(row) {
            *ci += ri;
        }
        count += 1;
    }
    c.iter_mut().for_each(|ci| *ci /= count as f64);
    c
}

fn max_pairwise_angle(rows: &[&[f64]]) -> (f64, usize) {
    let zero = rows.iter().filter(|r| norm(r) == 0.0).count();
    let mut best = 0.0f64;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            if let Some(t) = angle(a, b) {
                best = best.max(t);
            }
        }
    }
    (best, zero)
}

pub fn cluster_report(params: &NetworkParams, eval_points: &[Vec<f64>]) -> ClusterReport {
    let d = params.d();
    let w_bar = centroid(params.w_neurons(), d);
    let u_bar = centroid(params.u_neurons(), d);
    let radius_r = params
        .w_neurons()
        .map(|w| norm(&sub(w, &w_bar)))
        .chain(params.u_neurons().map(|u| norm(&sub(u, &u_bar))))
        .fold(0.0, f64::max);
    let sep_norm = norm(&sub(&w_bar, &u_bar));
    let ratio = (sep_norm > 0.0).then(|| radius_r / sep_norm);

    let ws: Vec<&[f64]> = params.w_neurons().collect();
    let us: Vec<&[f64]> = params.u_neurons().collect();
    let (max_angle_w, zw) = max_pairwise_angle(&ws);
    let (max_angle_u, zu) = max_pairwise_angle(&us);

    let mut report = ClusterReport {
        w_bar,
        u_bar,
        radius_r,
        sep_norm,
        ratio,
        max_angle_w,
        max_angle_u,
        zero_norm_neurons: zw + zu,
        nonlinear_fraction: 0.0,
    };
    report.nonlinear_fraction = nonlinear_fraction(&report, eval_points);
    report
}

/// Fraction of `points` outside the linear region of `report`; 0 for no points.
pub fn nonlinear_fraction(report: &ClusterReport, points: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sep = report.separator();
    let outside = points
        .iter()
        .filter(|x| !linear_region_with(&sep, report.radius_r, x))
        .count();
    outside as f64 / points.len() as f64
}

#[inline]
fn linear_region_with(sep: &[f64], r: f64, x: &[f64]) -> bool {
    dot(sep, x).abs() >= 2.0 * r * norm(x)
}

/// `|(w_bar - u_bar) . x| >= 2 r ||x||`; the boundary counts as inside.
pub fn in_linear_region(report: &ClusterReport, x: &[f64]) -> bool {
    linear_region_with(&report.separator(), report.radius_r, x)
}

/// `sign((w_bar - u_bar) . x)`, zero only for an exactly zero product.
pub fn surrogate_classifier(report: &ClusterReport, x: &[f64]) -> i8 {
    sign(dot(&report.separator(), x))
}

/// A probe where the network sign disagrees with the linear surrogate inside
/// the linear region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: Vec<f64>,
    pub network_output: f64,
    pub surrogate: i8,
}

/// Checks sign agreement on every probe inside the linear region. Probes
/// outside the region, or where either side is exactly zero, are skipped.
pub fn linear_region_violations(params: &NetworkParams, probes: &[Vec<f64>]) -> Vec<Violation> {
    let report = cluster_report(params, &[]);
    let sep = report.separator();
    let r = report.radius_r;
    probes
        .par_iter()
        .filter_map(|x| {
            if x.len() != params.d() || !linear_region_with(&sep, r, x) {
                return None;
            }
            let surrogate = sign(dot(&sep, x));
            let out = params.forward_unchecked(x);
            let net = sign(out);
            (surrogate != 0 && net != 0 && net != surrogate).then(|| Violation {
                x: x.clone(),
                network_output: out,
                surrogate,
            })
        })
        .collect()
}

/// `count` points drawn uniformly from the unit sphere in dimension `d`.
pub fn sphere_probes(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream_rng(seed, Stream::Data);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&g);
        if n > 0.0 {
            out.push(scale(&g, 1.0 / n));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ActivationConfig;
    use std::f64::consts::FRAC_PI_2;

    fn act() -> ActivationConfig {
        ActivationConfig::new(0.2).unwrap()
    }

    fn report_with(sep: Vec<f64>, r: f64) -> ClusterReport {
        let d = sep.len();
        ClusterReport {
            w_bar: sep,
            u_bar: vec![0.0; d],
            radius_r: r,
            sep_norm: 0.0,
            ratio: None,
            max_angle_w: 0.0,
            max_angle_u: 0.0,
            zero_norm_neurons: 0,
            nonlinear_fraction: 0.0,
        }
    }

    #[test]
    fn single_neuron_groups_have_zero_radius() {
        let p = NetworkParams::from_groups(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 1.0, act()).unwrap();
        let rep = cluster_report(&p, &[]);
        assert_eq!(rep.radius_r, 0.0);
        assert_eq!(rep.max_angle_w, 0.0);
        assert_eq!(rep.max_angle_u, 0.0);
    }

    #[test]
    fn hand_computed_report() {
        let p = NetworkParams::from_groups(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
            act(),
        )
        .unwrap();
        let rep = cluster_report(&p, &[vec![1.0, 1.0]]);
        assert_eq!(rep.w_bar, vec![0.5, 0.5]);
        assert!((rep.radius_r - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((rep.max_angle_w - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(rep.max_angle_u, 0.0);
        assert_eq!(rep.zero_norm_neurons, 2);
        // |(0.5,0.5).(1,1)| = 1 < 2 * 0.7071 * 1.414 = 2
        assert_eq!(rep.nonlinear_fraction, 1.0);
    }

    #[test]
    fn duplicating_neurons_leaves_report_unchanged() {
        let w = vec![vec![1.0, 0.5], vec![0.2, -1.0]];
        let u = vec![vec![-1.0, 0.0], vec![0.3, 0.3]];
        let probes = vec![vec![1.0, 0.0], vec![0.1, 1.0], vec![-2.0, 0.4]];
        let a = cluster_report(&NetworkParams::from_groups(&w, &u, 1.0, act()).unwrap(), &probes);
        let w2: Vec<_> = w.iter().chain(&w).cloned().collect();
        let u2: Vec<_> = u.iter().chain(&u).cloned().collect();
        let b = cluster_report(&NetworkParams::from_groups(&w2, &u2, 1.0, act()).unwrap(), &probes);
        // centroids may differ in the last bit from the longer summation
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-14 * (1.0 + x.abs());
        assert!(a.w_bar.iter().zip(&b.w_bar).all(|(x, y)| close(*x, *y)));
        assert!(a.u_bar.iter().zip(&b.u_bar).all(|(x, y)| close(*x, *y)));
        assert!(close(a.radius_r, b.radius_r) && close(a.sep_norm, b.sep_norm));
        assert!(close(a.ratio.unwrap(), b.ratio.unwrap()));
        assert!(close(a.max_angle_w, b.max_angle_w) && close(a.max_angle_u, b.max_angle_u));
        assert_eq!(a.zero_norm_neurons, b.zero_norm_neurons);
        assert_eq!(a.nonlinear_fraction, b.nonlinear_fraction);
    }

    #[test]
    fn linear_region_hand_cases() {
        let rep = report_with(vec![1.0, 0.0], 0.25);
        assert!(in_linear_region(&rep, &[1.0, 1.0]));
        assert!(!in_linear_region(&rep, &[0.1, 1.0]));
        assert!(in_linear_region(&rep, &[0.0, 0.0]));
        let rep0 = report_with(vec![1.0, -2.0], 0.0);
        assert!(in_linear_region(&rep0, &[0.3, 7.0]));
    }

    #[test]
    fn boundary_counts_as_linear() {
        // |(1,0).(1,0)| = 1 = 2 * 0.5 * 1
        let rep = report_with(vec![1.0, 0.0], 0.5);
        assert!(in_linear_region(&rep, &[1.0, 0.0]));
    }

    #[test]
    fn surrogate_signs() {
        let rep = report_with(vec![1.0, 0.0], 0.0);
        assert_eq!(surrogate_classifier(&rep, &[2.0, 5.0]), 1);
        assert_eq!(surrogate_classifier(&rep, &[0.0, 5.0]), 0);
        assert_eq!(surrogate_classifier(&rep, &[-1.0, 0.0]), -1);
    }

    #[test]
    fn perfectly_clustered_has_no_violations_and_no_nonlinear_points() {
        let w = vec![vec![0.7, -0.2]; 3];
        let u = vec![vec![-0.1, 0.9]; 3];
        let p = NetworkParams::from_groups(&w, &u, 1.0, act()).unwrap();
        let probes: Vec<Vec<f64>> = (0..360)
            .map(|deg| {
                let t = (deg as f64).to_radians();
                vec![t.cos(), t.sin()]
            })
            .collect();
        assert!(linear_region_violations(&p, &probes).is_empty());
        assert_eq!(cluster_report(&p, &probes).nonlinear_fraction, 0.0);
    }

    #[test]
    fn probes_outside_region_are_skipped() {
        // Two spread-out w-neurons; a probe orthogonal-ish to the separator is
        // outside the region and must not be reported even if signs disagree.
        let p = NetworkParams::from_groups(
            &[vec![1.0, 3.0], vec![1.0, -3.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
            act(),
        )
        .unwrap();
        let rep = cluster_report(&p, &[]);
        let x = vec![-0.05, 1.0];
        assert!(!in_linear_region(&rep, &x));
        assert!(linear_region_violations(&p, &[x]).is_empty());
    }

    #[test]
    fn scale_invariance() {
        let w = vec![vec![1.0, 0.4], vec![0.8, 0.1]];
        let u = vec![vec![-1.0, 0.2], vec![-0.6, -0.3]];
        let p = NetworkParams::from_groups(&w, &u, 1.0, act()).unwrap();
        let probes = vec![vec![1.0, 0.2], vec![0.05, 1.0], vec![-0.3, -0.9]];
        let a = cluster_report(&p, &probes);
        let b = cluster_report(&p.scaled(7.5), &probes);
        assert!((b.radius_r - 7.5 * a.radius_r).abs() < 1e-12);
        assert!((b.sep_norm - 7.5 * a.sep_norm).abs() < 1e-12);
        assert!((b.ratio.unwrap() - a.ratio.unwrap()).abs() < 1e-12);
        assert!((b.max_angle_w - a.max_angle_w).abs() < 1e-12);
        assert_eq!(a.nonlinear_fraction, b.nonlinear_fraction);
    }

    #[test]
    fn nonlinear_fraction_shrinks_with_radius() {
        let points: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.0628;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let mut last = f64::INFINITY;
        for r in [1.0, 0.5, 0.25, 0.1, 0.01, 0.0] {
            let f = nonlinear_fraction(&report_with(vec![1.0, 0.5], r), &points);
            assert!(f <= last);
            last = f;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn sphere_probes_are_unit_and_seeded() {
        let a = sphere_probes(3, 100, 1);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|x| (norm(x) - 1.0).abs() < 1e-12));
        assert_eq!(a, sphere_probes(3, 100, 1));
    }
}
