//! Synthetic linearly separable datasets, margin normalization and CSV I/O.
//!
//! On disk a dataset is a CSV file with header `y,x1,...,xd` plus a sidecar
//! JSON file (same stem, `.json` extension) holding
//! `{"w_star": [...], "r_x": f64, "margin_normalized": bool, "meta": {...}}`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, scale};
use crate::network::{Label, LabeledPoint};
use crate::rng::{stream_rng, Stream};
use crate::svm::{min_norm_direction, SolverOptions};

pub const DEFAULT_MEAN_SEP: f64 = 4.0;
pub const DEFAULT_STD: f64 = 1.0;
pub const DEFAULT_MARGIN_GAP: f64 = 0.5;
pub const DEFAULT_D: usize = 2;
pub const DEFAULT_N: usize = 400;

/// Rejection sampling gives up once this many draws have been made with more
/// than 99% of them rejected.
const STUCK_MIN_ATTEMPTS: u64 = 10_000;
const OUTLIER_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<LabeledPoint>,
    pub w_star: Vec<f64>,
    pub r_x: f64,
    pub margin_normalized: bool,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    w_star: Vec<f64>,
    r_x: f64,
    margin_normalized: bool,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn max_norm(points: &[LabeledPoint]) -> f64 {
    points.iter().map(|p| norm(&p.x)).fold(0.0, f64::max)
}

/// Every point has its negation, with the opposite label, in the set.
pub fn is_antipodal(points: &[LabeledPoint]) -> bool {
    points.iter().all(|p| {
        points
            .iter()
            .any(|q| q.y == p.y.flipped() && q.x.iter().zip(&p.x).all(|(a, b)| *a == -*b))
    })
}

/// Min-norm `v` with `y v.x >= 1` on every point, if one exists.
pub fn separability_witness(points: &[LabeledPoint]) -> Result<Option<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| scale(&p.x, p.y.sign())).collect();
    Ok(min_norm_direction(&rows, &SolverOptions::default())?.map(|(v, _)| v))
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(self.w_star.len(), |p| p.x.len())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.x.clone()).collect()
    }

    /// `min_i y_i w*.x_i`.
    pub fn min_margin(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.y.sign() * dot(&self.w_star, &p.x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Appends a constant coordinate 1 to every point, which lets a homogeneous
    /// network emulate first-layer biases. `w*` gets a zero coordinate so every
    /// margin is unchanged.
    pub fn append_one(&self) -> Dataset {
        let points: Vec<LabeledPoint> = self
            .points
            .iter()
            .map(|p| {
                let mut x = p.x.clone();
                x.push(1.0);
                LabeledPoint::new(x, p.y)
            })
            .collect();
        let mut w_star = self.w_star.clone();
        w_star.push(0.0);
        let mut meta = self.meta.clone();
        if let Some(obj) = meta.as_object_mut() {
            obj.insert("append_one".into(), json!(true));
        }
        Dataset {
            r_x: max_norm(&points),
            points,
            w_star,
            margin_normalized: self.margin_normalized,
            meta,
        }
    }
}

/// Rescales `w_star` (never the points) so that `min_i y_i w*.x_i = 1`.
pub fn rescale_to_unit_margin(points: Vec<LabeledPoint>, w_star: &[f64], meta: serde_json::Value) -> Result<Dataset> {
    if points.is_empty() {
        return Err(Error::Input("dataset has no points".into()));
    }
    if let Some(p) = points.iter().find(|p| p.x.len() != w_star.len()) {
        return Err(Error::Dimension { expected: w_star.len(), got: p.x.len() });
    }
    let m = points
        .iter()
        .map(|p| p.y.sign() * dot(w_star, &p.x))
        .fold(f64::INFINITY, f64::min);
    if !(m > 0.0) {
        return Err(Error::NotSeparable(format!("smallest margin under w* is {m}")));
    }
    Ok(Dataset {
        r_x: max_norm(&points),
        w_star: scale(w_star, 1.0 / m),
        points,
        margin_normalized: true,
        meta,
    })
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize, std: f64) -> Vec<f64> {
    (0..d)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Rejection sampler shared by the generators.
struct Sampler {
    attempts: u64,
    rejected: u64,
}

impl Sampler {
    fn new() -> Self {
        Self { attempts: 0, rejected: 0 }
    }

    fn draw<R: Rng>(&mut self, rng: &mut R, mut make: impl FnMut(&mut R) -> Option<Vec<f64>>) -> Result<Vec<f64>> {
        loop {
            self.attempts += 1;
            if let Some(x) = make(rng) {
                return Ok(x);
            }
            self.rejected += 1;
            if self.attempts >= STUCK_MIN_ATTEMPTS && self.rejected as f64 > 0.99 * self.attempts as f64 {
                return Err(Error::Generator(format!(
                    "rejection sampler stuck: {} of {} draws rejected",
                    self.rejected, self.attempts
                )));
            }
        }
    }
}

/// One draw from the Gaussian centred at `sign * mean_sep/2 * e1`, kept only
/// if `|x1| >= margin_gap` and `x1 != 0`.
fn filtered_gaussian<R: Rng>(rng: &mut R, d: usize, sign: f64, mean_sep: f64, std: f64, margin_gap: f64) -> Option<Vec<f64>> {
    let mut x = gaussian_vec(rng, d, std);
    x[0] += sign * mean_sep / 2.0;
    (x[0].abs() >= margin_gap && x[0] != 0.0).then_some(x)
}

fn e1(d: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    w[0] = 1.0;
    w
}

fn label_by_e1(x: Vec<f64>) -> LabeledPoint {
    let y = if x[0] > 0.0 { Label::Positive } else { Label::Negative };
    LabeledPoint::new(x, y)
}

/// Two isotropic Gaussians at `+-(mean_sep/2) e1`, half the points from each
/// (the extra point of an odd `n` comes from the positive one), with the slab
/// `|x1| < margin_gap` excluded and labels given by the sign of `x1`.
pub fn gen_two_gaussians(d: usize, n: usize, mean_sep: f64, std: f64, margin_gap: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::Input("d and n must be positive".into()));
    }
    if !(mean_sep > 0.0) || !(margin_gap >= 0.0) || !(std >= 0.0) {
        return Err(Error::Input(format!(
            "need mean_sep > 0, std >= 0, margin_gap >= 0; got {mean_sep}, {std}, {margin_gap}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let mut sampler = Sampler::new();
    let n_pos = n.div_ceil(2);
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let sign = if i < n_pos { 1.0 } else { -1.0 };
        let x = sampler.draw(&mut rng, |r| filtered_gaussian(r, d, sign, mean_sep, std, margin_gap))?;
        points.push(label_by_e1(x));
    }
    let meta = json!({
        "generator": "two_gaussians",
        "seed": seed,
        "d": d,
        "n": n,
        "mean_sep": mean_sep,
        "std": std,
        "margin_gap": margin_gap,
    });
    rescale_to_unit_margin(points, &e1(d), meta)
}

/// `n/2` standard Gaussian points labelled by a random unit teacher (those
/// within 0.1 of its hyperplane are resampled), each followed by its negation
/// with the opposite label.
pub fn gen_antipodal(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d == 0 || n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Input(format!("antipodal data needs d >= 1 and a positive even n, got d={d}, n={n}")));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let teacher = loop {
        let t = gaussian_vec(&mut rng, d, 1.0);
        let nt = norm(&t);
        if nt > 0.0 {
            break scale(&t, 1.0 / nt);
        }
    };
    let mut sampler = Sampler::new();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let x = sampler.draw(&mut rng, |r| {
            let x = gaussian_vec(r, d, 1.0);
            (dot(&teacher, &x).abs() >= 0.1).then_some(x)
        })?;
        let y = if dot(&teacher, &x) > 0.0 { Label::Positive } else { Label::Negative };
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        points.push(LabeledPoint::new(x, y));
        points.push(LabeledPoint::new(neg, y.flipped()));
    }
    let meta = json!({ "generator": "antipodal", "seed": seed, "d": d, "n": n, "gap": 0.1 });
    rescale_to_unit_margin(points, &teacher, meta)
}

/// Symmetric two-Gaussian data (default parameters, each positive draw paired
/// with its negation) plus one positive outlier in a random direction, kept
/// only if the whole set stays linearly separable.
pub fn gen_outlier_variant(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d == 0 || n < 3 {
        return Err(Error::Input(format!("outlier data needs d >= 1 and n >= 3, got d={d}, n={n}")));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let mut sampler = Sampler::new();
    let base = n - 1;
    let mut points = Vec::with_capacity(n);
    for _ in 0..base / 2 {
        let x = sampler.draw(&mut rng, |r| filtered_gaussian(r, d, 1.0, DEFAULT_MEAN_SEP, DEFAULT_STD, DEFAULT_MARGIN_GAP))?;
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        points.push(label_by_e1(x));
        points.push(label_by_e1(neg));
    }
    if base % 2 == 1 {
        let x = sampler.draw(&mut rng, |r| filtered_gaussian(r, d, 1.0, DEFAULT_MEAN_SEP, DEFAULT_STD, DEFAULT_MARGIN_GAP))?;
        points.push(label_by_e1(x));
    }

    for attempt in 0..OUTLIER_ATTEMPTS {
        let dir = gaussian_vec(&mut rng, d, 1.0);
        let nd = norm(&dir);
        if nd == 0.0 {
            continue;
        }
        let outlier = scale(&dir, DEFAULT_MEAN_SEP / 2.0 / nd);
        let mut candidate = points.clone();
        candidate.push(LabeledPoint::new(outlier.clone(), Label::Positive));
        if candidate.iter().any(|p| p.y == Label::Negative && p.x.iter().zip(&outlier).all(|(a, b)| *a == -*b)) {
            continue;
        }
        // The axis teacher still separates everything when the outlier has
        // x1 > 0; otherwise ask the solver, and treat an undecided run like a
        // failed placement.
        let teacher = if outlier[0] > 0.0 {
            e1(d)
        } else {
            match separability_witness(&candidate) {
                Ok(Some(witness)) => witness,
                Ok(None) | Err(Error::Solver { .. }) => continue,
                Err(e) => return Err(e),
            }
        };
        let meta = json!({
            "generator": "outlier",
            "seed": seed,
            "d": d,
            "n": n,
            "mean_sep": DEFAULT_MEAN_SEP,
            "std": DEFAULT_STD,
            "margin_gap": DEFAULT_MARGIN_GAP,
            "outlier": outlier,
            "outlier_attempt": attempt,
        });
        return rescale_to_unit_margin(candidate, &teacher, meta);
    }
    Err(Error::Generator(format!(
        "no separable outlier placement found in {OUTLIER_ATTEMPTS} attempts"
    )))
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV file and its JSON sidecar.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let d = ds.dim();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = std::iter::once("y".to_string()).chain((1..=d).map(|i| format!("x{i}"))).collect();
    w.write_record(&header)?;
    for p in &ds.points {
        let row: Vec<String> = std::iter::once(i64::from(p.y).to_string())
            .chain(p.x.iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    let side = Sidecar {
        w_star: ds.w_star.clone(),
        r_x: ds.r_x,
        margin_normalized: ds.margin_normalized,
        meta: ds.meta.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

/// Reads a dataset CSV. Without a sidecar, `w*` is estimated as the min-norm
/// separating direction and the dataset is marked as not margin-normalized.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("y".to_string()).chain((1..=d).map(|i| format!("x{i}"))).collect();
    if d == 0 || header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, format!("header must be y,x1,...,xd; got {:?}", header.iter().collect::<Vec<_>>())));
    }

    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let y_raw = rec[0].trim();
        let y = match y_raw.parse::<f64>() {
            Ok(v) if v == 1.0 => Label::Positive,
            Ok(v) if v == -1.0 => Label::Negative,
            _ => return Err(parse_err(line, format!("label must be -1 or 1, got {y_raw:?}"))),
        };
        let x = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        points.push(LabeledPoint::new(x, y));
    }
    if points.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let r_x = max_norm(&points);

    let side = sidecar_path(path);
    if side.exists() {
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        if s.w_star.len() != d {
            return Err(Error::Dimension { expected: d, got: s.w_star.len() });
        }
        return Ok(Dataset {
            points,
            w_star: s.w_star,
            r_x,
            margin_normalized: s.margin_normalized,
            meta: s.meta,
        });
    }
    let w_star = separability_witness(&points)?
        .ok_or_else(|| Error::NotSeparable(format!("{} admits no homogeneous separator", path.display())))?;
    Ok(Dataset {
        points,
        w_star,
        r_x,
        margin_normalized: false,
        meta: json!({ "source": path.display().to_string(), "w_star": "estimated" }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussians_zero_std_sit_on_means() {
        let ds = gen_two_gaussians(3, 10, 4.0, 0.0, 0.5, 1).unwrap();
        for p in &ds.points {
            assert_eq!(p.x, vec![2.0 * p.y.sign(), 0.0, 0.0]);
        }
        assert_eq!(ds.w_star, vec![0.5, 0.0, 0.0]);
        assert_eq!(ds.min_margin(), 1.0);
    }

    #[test]
    fn gaussians_are_normalized_and_deterministic() {
        let a = gen_two_gaussians(2, 400, 4.0, 1.0, 0.5, 7).unwrap();
        let b = gen_two_gaussians(2, 400, 4.0, 1.0, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.margin_normalized);
        assert!((a.min_margin() - 1.0).abs() < 1e-9);
        assert!(a.points.iter().all(|p| p.x[0].abs() >= 0.5));
        assert_eq!(a.r_x, max_norm(&a.points));
        assert_ne!(a, gen_two_gaussians(2, 400, 4.0, 1.0, 0.5, 8).unwrap());
    }

    #[test]
    fn impossible_gap_reports_stuck_generator() {
        assert!(matches!(gen_two_gaussians(2, 10, 4.0, 0.0, 3.0, 1), Err(Error::Generator(_))));
        assert!(matches!(gen_two_gaussians(2, 10, 0.0, 1.0, 0.5, 1), Err(Error::Input(_))));
    }

    #[test]
    fn antipodal_structure() {
        let ds = gen_antipodal(4, 30, 3).unwrap();
        assert!(is_antipodal(&ds.points));
        let pos = ds.points.iter().filter(|p| p.y == Label::Positive).count();
        assert_eq!(pos, 15);
        assert!((ds.min_margin() - 1.0).abs() < 1e-9);
        assert!(separability_witness(&ds.points).unwrap().is_some());
        assert!(matches!(gen_antipodal(2, 7, 1), Err(Error::Input(_))));
    }

    #[test]
    fn outlier_variant_is_separable_and_not_antipodal() {
        for seed in 0..5 {
            let ds = gen_outlier_variant(2, 41, seed).unwrap();
            assert_eq!(ds.len(), 41);
            assert!(!is_antipodal(&ds.points));
            assert!(separability_witness(&ds.points).unwrap().is_some());
            assert!(ds.min_margin() > 0.0);
        }
        assert!(matches!(gen_outlier_variant(2, 2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn rescale_cases() {
        let pts = vec![
            LabeledPoint::new(vec![4.0, 0.0], Label::Positive),
            LabeledPoint::new(vec![-8.0, 1.0], Label::Negative),
        ];
        let ds = rescale_to_unit_margin(pts.clone(), &[1.0, 0.0], json!({})).unwrap();
        assert_eq!(ds.w_star, vec![0.25, 0.0]);
        assert_eq!(ds.min_margin(), 1.0);
        let again = rescale_to_unit_margin(pts.clone(), &ds.w_star, json!({})).unwrap();
        assert_eq!(again.w_star, ds.w_star);
        assert!(matches!(rescale_to_unit_margin(pts, &[-1.0, 0.0], json!({})), Err(Error::NotSeparable(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let ds = gen_two_gaussians(3, 25, 4.0, 1.0, 0.5, 11).unwrap();
        save_csv(&ds, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load_csv(&path).unwrap(), ds);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("y,x1,x2,x3\n"));
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "y,x1\n1,0.5\n2,0.5\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "y,x1\n1,0.5\n-1,abc\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 3, .. })));
        fs::write(&path, "y,x1\n1,0.5,3\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
        fs::write(&path, "label,a\n1,0.5\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn external_csv_without_sidecar_estimates_teacher() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.csv");
        fs::write(&path, "y,x1,x2\n1,2,1\n1,3,-1\n-1,-2,0.5\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert!(!ds.margin_normalized);
        assert!(ds.min_margin() > 0.0);
        assert!((ds.min_margin() - 1.0).abs() < 1e-6);
        assert_eq!(ds.r_x, 10f64.sqrt());

        fs::write(&path, "y,x1\n1,1\n-1,1\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::NotSeparable(_))));
    }

    #[test]
    fn append_one_keeps_margins() {
        let ds = gen_two_gaussians(2, 12, 4.0, 1.0, 0.5, 2).unwrap();
        let b = ds.append_one();
        assert_eq!(b.dim(), 3);
        assert!(b.points.iter().all(|p| p.x[2] == 1.0));
        assert_eq!(b.min_margin(), ds.min_margin());
        assert_eq!(b.r_x, max_norm(&b.points));
    }
}
