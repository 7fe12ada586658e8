use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use ltl_core::datagen::{self, Dataset};
use ltl_core::geometry::{cluster_report, in_linear_region, linear_region_violations, nonlinear_fraction, sphere_probes, surrogate_classifier};
use ltl_core::linalg::{dot, sign};
use ltl_core::network::{leaky_relu, ActivationConfig, NetworkParams};
use ltl_core::regimes::{symmetry_check, regime_report};
use ltl_core::svm::{compare_directions, solve_par_svm, SolverOptions, SvmSolution};
use ltl_core::training::{convergence_bound, train as run_training, TrainConfig, TrainMode};
use ltl_core::{Error, TrainTrace};

use crate::manifest::{DatasetRef, Outputs};
use crate::{exit, AnalyzeArgs, BoundArgs, GenArgs, Kind, Mode, SvmArgs, TrainArgs};

/// A bad flag combination detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    datagen::load_csv(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_params(path: &Path) -> anyhow::Result<NetworkParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let params = serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))?;
    Ok(params)
}

pub fn gen(a: &GenArgs) -> anyhow::Result<u8> {
    let ds = match a.kind {
        Kind::Gaussians => datagen::gen_two_gaussians(a.d, a.n, a.mean_sep, a.std, a.margin_gap, a.seed)?,
        Kind::Antipodal => datagen::gen_antipodal(a.d, a.n, a.seed)?,
        Kind::Outlier => datagen::gen_outlier_variant(a.d, a.n, a.seed)?,
    };
    let ds = if a.append_one { ds.append_one() } else { ds };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::ensure_dir(dir)?;
    }
    datagen::save_csv(&ds, &a.out)?;
    println!(
        "wrote {} and {} ({} points, d = {}, R_x = {})",
        a.out.display(),
        datagen::sidecar_path(&a.out).display(),
        ds.len(),
        ds.dim(),
        ds.r_x
    );
    Ok(exit::OK)
}

fn train_config(a: &TrainArgs, d: usize, init_std: f64) -> TrainConfig {
    TrainConfig {
        eta: a.eta,
        k: a.k,
        d,
        v: a.v,
        alpha: a.alpha,
        init_std,
        seed: a.seed,
        epsilon: a.eps,
        max_updates: a.max_updates,
        checkpoint_every: a.checkpoint_every,
        mode: match a.mode {
            Mode::Sgd => TrainMode::SgdEpoch,
            Mode::Gd => TrainMode::FullBatchGd,
        },
        beta: a.beta,
    }
}

/// Trains one configuration into `dir` and returns the trace.
fn train_one(cfg: &TrainConfig, ds: &Dataset, data_path: &Path, dir: &Path) -> anyhow::Result<TrainTrace> {
    let (params, trace) = run_training(cfg, ds)?;
    let mut out = Outputs::new(dir)?;
    trace.save_csv(&out.path("trace.csv"))?;
    out.record("trace.csv");
    trace.save_json(&out.path("trace.json"))?;
    out.record("trace.json");
    out.json("params.json", &params)?;
    out.finish("train", serde_json::to_value(cfg)?, Some(DatasetRef::hash(data_path)?))?;
    Ok(trace)
}

fn describe(trace: &TrainTrace) -> String {
    let last = trace.checkpoints.last().expect("trace has a final checkpoint");
    let status = match trace.converged_at {
        Some(t) => format!("converged at update {t}"),
        None => format!("not converged after {} updates", trace.updates_run),
    };
    format!(
        "{status}; loss {:.3e}; M(n, eps) = {:.6e}; r = {:.4e}; nonlinear fraction {}; PAR ratios ({}, {})",
        trace.final_loss, trace.bound_m, last.cluster_radius, last.nonlinear_fraction, last.par_w_ratio, last.par_u_ratio
    )
}

fn sweep_threads() -> anyhow::Result<Option<usize>> {
    match std::env::var("LTL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(usage(format!("LTL_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn train(a: &TrainArgs) -> anyhow::Result<u8> {
    let ds = load_dataset(&a.data)?;
    let d = ds.dim();

    let Some(scales) = &a.sweep else {
        let cfg = train_config(a, d, a.init_std);
        let trace = train_one(&cfg, &ds, &a.data, &a.out_dir)?;
        println!("{}", describe(&trace));
        return Ok(if trace.converged_at.is_some() { exit::OK } else { exit::BUDGET });
    };
    if scales.is_empty() {
        return Err(usage("--sweep needs at least one init scale"));
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = sweep_threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let runs: Vec<(String, anyhow::Result<TrainTrace>)> = pool.install(|| {
        scales
            .par_iter()
            .map(|&s| {
                let name = format!("init_std_{s}");
                let cfg = train_config(a, d, s);
                let r = train_one(&cfg, &ds, &a.data, &a.out_dir.join(&name));
                (name, r)
            })
            .collect()
    });

    let mut code = exit::OK;
    let mut summary = Vec::new();
    for (name, r) in &runs {
        match r {
            Ok(trace) => {
                println!("{name}: {}", describe(trace));
                if trace.converged_at.is_none() {
                    code = code.max(exit::BUDGET);
                }
                let last = trace.checkpoints.last().expect("final checkpoint");
                summary.push(json!({
                    "run": name,
                    "init_std": trace.config.init_std,
                    "converged_at": trace.converged_at,
                    "final_loss": trace.final_loss,
                    "nonlinear_fraction": last.nonlinear_fraction,
                    "cluster_radius": last.cluster_radius,
                }));
            }
            Err(e) => {
                eprintln!("{name}: error: {e:#}");
                code = code.max(crate::exit_code_for(e));
                summary.push(json!({ "run": name, "error": format!("{e:#}") }));
            }
        }
    }
    let mut out = Outputs::new(&a.out_dir)?;
    for (name, r) in &runs {
        if r.is_ok() {
            for f in ["trace.csv", "trace.json", "params.json", "manifest.json"] {
                out.record(&format!("{name}/{f}"));
            }
        }
    }
    out.json("sweep.json", &summary)?;
    let base = train_config(a, d, a.init_std);
    out.finish(
        "train --sweep",
        json!({ "base": base, "init_std": scales }),
        Some(DatasetRef::hash(&a.data)?),
    )?;
    Ok(code)
}

#[derive(Serialize)]
struct Analysis {
    cluster: ltl_core::ClusterReport,
    regime: ltl_core::RegimeReport,
    nonlinear_fraction_train: f64,
    nonlinear_fraction_test: Option<f64>,
    nonlinear_fraction_all: f64,
    normalized_margin: Option<f64>,
    smoothed_margin: Option<f64>,
    probes: usize,
    violations: usize,
}

pub fn analyze(a: &AnalyzeArgs) -> anyhow::Result<u8> {
    let params = load_params(&a.params)?;
    let ds = load_dataset(&a.data)?;
    if ds.dim() != params.d() {
        return Err(Error::Dimension { expected: params.d(), got: ds.dim() }.into());
    }
    let test = a.test.as_deref().map(load_dataset).transpose()?;
    if let Some(t) = &test {
        if t.dim() != params.d() {
            return Err(Error::Dimension { expected: params.d(), got: t.dim() }.into());
        }
    }
    if a.grid < 2 {
        return Err(usage("--grid needs at least 2 points per axis"));
    }

    let train_x = ds.xs();
    let cluster = cluster_report(&params, &train_x);
    let mut regime = regime_report(&params, &ds.points, a.beta)?;
    if a.symmetry {
        regime.symmetry_holds = Some(symmetry_check(&ds.points, a.beta, &SolverOptions::default())?);
    }
    let test_x = test.as_ref().map(Dataset::xs);
    let all_x: Vec<Vec<f64>> = train_x.iter().chain(test_x.iter().flatten()).cloned().collect();
    let probes = sphere_probes(params.d(), a.probes, a.seed);
    let violations = linear_region_violations(&params, &probes);
    let defined = params.norm() > 0.0;

    let analysis = Analysis {
        nonlinear_fraction_train: cluster.nonlinear_fraction,
        nonlinear_fraction_test: test_x.as_ref().map(|x| nonlinear_fraction(&cluster, x)),
        nonlinear_fraction_all: nonlinear_fraction(&cluster, &all_x),
        normalized_margin: if defined { Some(params.normalized_margin(&ds.points)?) } else { None },
        smoothed_margin: if defined { params.smoothed_margin(&ds.points).ok() } else { None },
        probes: probes.len(),
        violations: violations.len(),
        cluster,
        regime,
    };

    let mut out = Outputs::new(&a.out_dir)?;
    out.json("analysis.json", &analysis)?;
    out.json("violations.json", &violations)?;
    if params.d() == 2 {
        out.text("grid.csv", &decision_grid(&params, &analysis.cluster, ds.r_x.max(1e-12), a.grid))?;
    }
    out.finish("analyze", serde_json::to_value(a_config(a))?, Some(DatasetRef::hash(&a.data)?))?;

    println!(
        "r = {:.4e}, ratio = {}, nonlinear fraction {} (train), PAR ratios ({}, {}), n_diff ({}, {}), NAR {}, PAR {}, {} violations over {} probes",
        analysis.cluster.radius_r,
        analysis.cluster.ratio.map_or("undefined".into(), |r| format!("{r:.4e}")),
        analysis.nonlinear_fraction_train,
        analysis.regime.par_w_ratio,
        analysis.regime.par_u_ratio,
        analysis.regime.n_diff_w,
        analysis.regime.n_diff_u,
        analysis.regime.in_nar,
        analysis.regime.in_par,
        analysis.violations,
        analysis.probes,
    );
    Ok(exit::OK)
}

fn a_config(a: &AnalyzeArgs) -> serde_json::Value {
    json!({
        "params": a.params,
        "data": a.data,
        "test": a.test,
        "beta": a.beta,
        "probes": a.probes,
        "seed": a.seed,
        "grid": a.grid,
        "symmetry": a.symmetry,
    })
}

/// Samples of the network and surrogate decisions on a square grid.
fn decision_grid(params: &NetworkParams, report: &ltl_core::ClusterReport, half_width: f64, per_axis: usize) -> String {
    let mut s = String::from("x1,x2,network_output,network_sign,surrogate_sign,in_linear_region\n");
    let step = 2.0 * half_width / (per_axis - 1) as f64;
    for i in 0..per_axis {
        for j in 0..per_axis {
            let x = [-half_width + i as f64 * step, -half_width + j as f64 * step];
            let out = params.forward_unchecked(&x);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                x[0],
                x[1],
                out,
                sign(out),
                surrogate_classifier(report, &x),
                in_linear_region(report, &x)
            );
        }
    }
    s
}

#[derive(Serialize)]
struct Comparison {
    cos_w: f64,
    cos_u: f64,
}

pub fn svm(a: &SvmArgs) -> anyhow::Result<u8> {
    let ds = load_dataset(&a.data)?;
    let opts = SolverOptions { tol: a.tol, max_iter: a.max_iter, ..SolverOptions::default() };
    let sol = solve_par_svm(&ds.points, a.alpha, &opts)?;
    let mut out = Outputs::new(&a.out_dir)?;
    out.json("svm_solution.json", &sol)?;
    out.text("boundary_normals.csv", &region_normals(&sol))?;
    if ds.dim() == 2 {
        out.text("boundary.csv", &boundary_rays(&sol, ds.r_x))?;
    }
    println!(
        "objective {} after {} iterations; KKT stationarity {:.3e}, feasibility {:.3e}, complementarity {:.3e}",
        sol.objective, sol.iterations, sol.kkt_stationarity, sol.kkt_feasibility, sol.kkt_complementarity
    );
    if let Some(path) = &a.compare {
        let params = load_params(path)?;
        let (cos_w, cos_u) = compare_directions(&params, &sol)?;
        out.json("comparison.json", &Comparison { cos_w, cos_u })?;
        println!("cos_w {cos_w} cos_u {cos_u}");
    }
    out.finish(
        "svm",
        json!({ "alpha": a.alpha, "tol": a.tol, "max_iter": a.max_iter, "compare": a.compare }),
        Some(DatasetRef::hash(&a.data)?),
    )?;
    Ok(exit::OK)
}

/// Normal of the predicted decision boundary `s(w.x) = s(u.x)` inside each
/// sign region of `(w.x, u.x)`.
fn region_normals(sol: &SvmSolution) -> String {
    let d = sol.w.len();
    let mut s = String::from("w_sign,u_sign");
    for i in 1..=d {
        let _ = write!(s, ",n{i}");
    }
    s.push('\n');
    for (sw, su) in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
        let cw = if sw > 0 { 1.0 } else { sol.alpha };
        let cu = if su > 0 { 1.0 } else { sol.alpha };
        let _ = write!(s, "{sw},{su}");
        for (w, u) in sol.w.iter().zip(&sol.u) {
            let _ = write!(s, ",{}", cw * w - cu * u);
        }
        s.push('\n');
    }
    s
}

/// Rays (2-d only) on which the predicted network `s(w.x) - s(u.x)` vanishes,
/// sampled from the origin out to radius `r`.
fn boundary_rays(sol: &SvmSolution, r: f64) -> String {
    let act = ActivationConfig::new(sol.alpha).expect("solution alpha is valid");
    let f = |t: f64| {
        let x = [t.cos(), t.sin()];
        leaky_relu(dot(&sol.w, &x), act) - leaky_relu(dot(&sol.u, &x), act)
    };
    let steps = 3600;
    let h = std::f64::consts::TAU / steps as f64;
    let mut angles = Vec::new();
    for i in 0..steps {
        let (mut lo, mut hi) = (i as f64 * h, (i + 1) as f64 * h);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            angles.push(lo);
            continue;
        }
        if flo * fhi >= 0.0 {
            continue;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        angles.push(0.5 * (lo + hi));
    }
    let mut s = String::from("ray,angle,t,x1,x2\n");
    for (k, a) in angles.iter().enumerate() {
        for j in 0..=20 {
            let t = r * j as f64 / 20.0;
            let _ = writeln!(s, "{k},{a},{t},{},{}", t * a.cos(), t * a.sin());
        }
    }
    s
}

pub fn bound(a: &BoundArgs) -> anyhow::Result<u8> {
    let cfg = TrainConfig { k: a.k, eta: a.eta, v: a.v, alpha: a.alpha, ..TrainConfig::default() };
    cfg.validate()?;
    let terms = convergence_bound(a.n, a.eps, a.rx, a.r0, &cfg, a.w_star_norm)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&terms)?);
    } else {
        println!("M(n, eps) = {}", terms.total);
        println!("  A     = {}", terms.a);
        println!("  term1 = {}", terms.term1);
        println!("  term2 = {}", terms.term2);
        println!("  term3 = {}", terms.term3);
        println!("  n     = {}", terms.n);
    }
    Ok(exit::OK)
}
