//! Command implementations. Every command writes into the output directory
//! and returns a short summary for the terminal.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mfgp_core::benchmarks::{self, ProblemSpec};
use mfgp_core::model::{self, HyperParams, MultiFidelityDataset, ObservationBlock};
use mfgp_core::operators::{self, Side, Transform};
use mfgp_core::posterior::{self, ActiveLearningHistory};
use mfgp_core::{KernelParams, LinearOperatorSpec, QuadratureSpec, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Command, OperatorSection, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{self, coord_header, Cell};
use crate::model_file;

/// Largest tolerated closed-form versus reference discrepancy in `kernel-check`.
pub const KERNEL_CHECK_TOLERANCE: f64 = 1e-4;
/// Relative change under quadrature refinement above which a warning is
/// recorded for fractional models.
pub const QUADRATURE_WARN_GAP: f64 = 1e-6;
/// Random points used for the operator-identity residual in reports.
pub const IDENTITY_POINTS: usize = 50;

fn log(msg: impl AsRef<str>) {
    eprintln!("[mfgp] {}", msg.as_ref());
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Runs the configured command.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    match cfg.command {
        Command::Train => train(cfg, &out),
        Command::Predict => predict(cfg, &out),
        Command::ActiveLearn => active_learn(cfg, &out),
        Command::Benchmark => benchmark(cfg, &out),
        Command::KernelCheck => kernel_check(cfg, &out),
    }
}

fn problem(cfg: &RunConfig) -> Result<ProblemSpec> {
    let name = cfg
        .problem
        .as_deref()
        .ok_or_else(|| CliError::usage("missing `problem`"))?;
    Ok(benchmarks::make_problem(name)?)
}

fn kernel_json(k: &KernelParams) -> Value {
    json!({
        "variance": k.variance(),
        "ard_weights": k.ard_weights(),
        "length_scales": k.length_scales(),
    })
}

/// Hyperparameters in natural units.
pub fn hyperparams_json(hp: &HyperParams) -> Value {
    json!({
        "level1": kernel_json(&hp.level1),
        "level2": kernel_json(&hp.level2),
        "rho": hp.rho,
        "noise_variance": { "u": hp.noise_u(), "f1": hp.noise_f1(), "f2": hp.noise_f2() },
    })
}

fn model_json(m: &TrainedModel) -> Value {
    let [n0, n1, n2] = m.dataset().sizes();
    json!({
        "nlml": m.nlml(),
        "jitter": m.jitter(),
        "sizes": { "n0": n0, "n1": n1, "n2": n2 },
        "hyperparameters": hyperparams_json(m.hyperparams()),
    })
}

/// Quadrature self-refinement on pairs of training inputs of a fractional
/// model. Returns the worst gap, `None` for other operators.
fn quadrature_gap(m: &TrainedModel) -> Result<Option<f64>> {
    let LinearOperatorSpec::FractionalRL { alpha, quadrature } = m.operator() else {
        return Ok(None);
    };
    let xs: Vec<f64> = m.dataset().entries().map(|(_, x)| x[0]).take(8).collect();
    let hp = m.hyperparams();
    let mut worst: f64 = 0.0;
    for k in [&hp.level1, &hp.level2] {
        for (i, &x) in xs.iter().enumerate() {
            let y = xs[(i + 1) % xs.len()];
            for (a, b) in [(x, x), (x, y)] {
                for t in [Transform::Both, Transform::Right] {
                    let gap =
                        operators::fractional_refinement_gap(t, *alpha, k, a, b, *quadrature)?;
                    worst = worst.max(gap);
                }
            }
        }
    }
    Ok(Some(worst))
}

fn model_warnings(
    m: &TrainedModel,
    preds: &[&posterior::PosteriorPrediction],
) -> Result<Vec<String>> {
    let mut w = Vec::new();
    if let Some(gap) = quadrature_gap(m)? {
        if gap > QUADRATURE_WARN_GAP {
            w.push(format!(
                "fractional quadrature changes by {gap:.3e} under refinement (threshold {QUADRATURE_WARN_GAP:e})"
            ));
        }
    }
    if m.jitter() > 0.0 {
        w.push(format!("covariance needed jitter {:e}", m.jitter()));
    }
    for p in preds {
        if !p.passes_variance_gate() {
            w.push(format!(
                "negative posterior variance {:.3e} (relative to prior) was clamped to zero",
                p.min_raw_variance
            ));
        }
    }
    for s in &w {
        log(format!("warning: {s}"));
    }
    Ok(w)
}

/// Posterior for `u` and `f` at `points`, `u` as NaN when the model has no anchors.
fn predictions(
    m: &TrainedModel,
    points: &[Vec<f64>],
) -> Result<(
    Option<posterior::PosteriorPrediction>,
    posterior::PosteriorPrediction,
)> {
    let u = if m.dataset().anchors.is_empty() {
        None
    } else {
        Some(posterior::predict_u(m, points)?)
    };
    Ok((u, posterior::predict_f(m, points)?))
}

fn write_predictions(
    path: &Path,
    dim: usize,
    points: &[Vec<f64>],
    u: Option<&posterior::PosteriorPrediction>,
    f: &posterior::PosteriorPrediction,
) -> Result<()> {
    let mut header = coord_header("x_", dim);
    header.extend(["u_mean", "u_std", "f_mean", "f_std"].map(String::from));
    let f_std = f.std_dev();
    let u_std = u.map(|u| u.std_dev());
    let rows: Vec<Vec<Cell>> = points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut row: Vec<Cell> = x.iter().map(|v| Cell::Num(*v)).collect();
            match (u, &u_std) {
                (Some(u), Some(s)) => row.extend([Cell::Num(u.mean[i]), Cell::Num(s[i])]),
                _ => row.extend([Cell::Num(f64::NAN), Cell::Num(f64::NAN)]),
            }
            row.extend([Cell::Num(f.mean[i]), Cell::Num(f_std[i])]);
            row
        })
        .collect();
    io::write_csv(path, &header, &rows)
}

fn check_points_dim(points: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    match points.iter().find(|p| p.len() != dim) {
        Some(p) => Err(CliError::usage(format!(
            "{what}: points have dimension {}, the model expects {dim}",
            p.len()
        ))),
        None => Ok(()),
    }
}

fn read_dataset(cfg: &RunConfig) -> Result<MultiFidelityDataset> {
    let data = cfg.data.as_ref().expect("validated");
    let mut blocks: [Option<ObservationBlock>; 3] = [None, None, None];
    for (slot, path) in blocks
        .iter_mut()
        .zip([&data.anchors, &data.low, &data.high])
    {
        if let Some(p) = path {
            *slot = Some(io::read_observations(&cfg.resolve(p))?);
        }
    }
    let dim = blocks
        .iter()
        .flatten()
        .map(ObservationBlock::dim)
        .next()
        .expect("validated: at least one data file");
    let [a, l, h] = blocks.map(|b| b.unwrap_or_else(|| ObservationBlock::empty(dim)));
    MultiFidelityDataset::new(a, l, h).map_err(|e| CliError::usage(format!("data: {e}")))
}

/// Relative errors of `u` and `f` against a problem's exact fields on its
/// evaluation points.
fn problem_errors(p: &ProblemSpec, m: &TrainedModel) -> Result<(Option<f64>, f64)> {
    let pts = benchmarks::evaluation_points(p)?;
    let (u, f) = predictions(m, &pts)?;
    let exact_f: Vec<f64> = pts.iter().map(|x| (p.f_high)(x)).collect();
    let err_f = benchmarks::rel_l2_error(&f.mean, &exact_f)?;
    let err_u = match (p.u_exact, u) {
        (Some(ue), Some(u)) => {
            let exact: Vec<f64> = pts.iter().map(|x| ue(x)).collect();
            Some(benchmarks::rel_l2_error(&u.mean, &exact)?)
        }
        _ => None,
    };
    Ok((err_u, err_f))
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let seed = cfg.seed.expect("validated");
    let (dataset, op, frozen, prob) = match &cfg.problem {
        Some(_) => {
            let p = problem(cfg)?;
            let ds = benchmarks::generate_observations(&p, seed)?;
            for (name, block) in [
                ("anchors", &ds.anchors),
                ("low", &ds.low),
                ("high", &ds.high),
            ] {
                io::write_observations(&out.join(format!("data_{name}.csv")), block)?;
            }
            (ds, p.operator.clone(), Some(p.frozen), Some(p))
        }
        None => (
            read_dataset(cfg)?,
            cfg.operator_spec()?.expect("validated"),
            None,
            None,
        ),
    };
    let tc = cfg.train_config(frozen)?;
    log(format!(
        "training {} on n = {:?} with {} restarts",
        op.name(),
        dataset.sizes(),
        tc.restarts
    ));
    let start = Instant::now();
    let outcome = model::train_with_diagnostics(dataset, &op, &tc)?;
    let wall = start.elapsed().as_secs_f64();
    let m = outcome.model;
    log(format!("final NLML {:.6e} after {wall:.2} s", m.nlml()));
    model_file::save(&m, &out.join("model.json"))?;

    let mut preds = Vec::new();
    if let Some(e) = &cfg.eval {
        let pts = e.points();
        check_points_dim(&pts, m.dataset().dim(), "eval")?;
        let (u, f) = predictions(&m, &pts)?;
        write_predictions(
            &out.join("predictions.csv"),
            m.dataset().dim(),
            &pts,
            u.as_ref(),
            &f,
        )?;
        preds.extend(u);
        preds.push(f);
    }
    let warnings = model_warnings(&m, &preds.iter().collect::<Vec<_>>())?;
    let errors = match &prob {
        Some(p) => {
            let (eu, ef) = problem_errors(p, &m)?;
            json!({ "rel_l2_u": eu, "rel_l2_f": ef })
        }
        None => Value::Null,
    };
    let restarts: Vec<Value> = outcome
        .restarts
        .iter()
        .map(|r| {
            json!({
                "restart": r.restart,
                "initial_nlml": r.initial_nlml,
                "final_nlml": r.final_nlml,
                "iterations": r.iterations,
            })
        })
        .collect();
    let report = json!({
        "command": "train",
        "problem": cfg.problem,
        "operator": OperatorSection::from_spec(&op),
        "seed": seed,
        "train_seed": tc.seed,
        "model": model_json(&m),
        "restarts": restarts,
        "errors": errors,
        "warnings": warnings,
        "wall_time_s": wall,
        "timestamp_unix": timestamp(),
    });
    io::write_json(&out.join("report.json"), &report)
}

fn predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = model_file::load(&cfg.resolve(cfg.model.as_ref().expect("validated")))?;
    let dim = m.dataset().dim();
    let qpath = cfg.resolve(cfg.queries.as_ref().expect("validated"));
    let (qdim, pts) = io::read_points(&qpath)?;
    if let Some(d) = qdim {
        if d != dim {
            return Err(CliError::usage(format!(
                "{}: query file has {d} columns, the model expects {dim}",
                qpath.display()
            )));
        }
    }
    let start = Instant::now();
    let (u, f) = predictions(&m, &pts)?;
    if u.is_none() {
        log("model has no anchor observations; u columns are NaN");
    }
    write_predictions(&out.join("predictions.csv"), dim, &pts, u.as_ref(), &f)?;
    let mut preds: Vec<&posterior::PosteriorPrediction> = u.iter().collect();
    preds.push(&f);
    let warnings = model_warnings(&m, &preds)?;
    log(format!("wrote {} predictions", pts.len()));
    let report = json!({
        "command": "predict",
        "operator": OperatorSection::from_spec(m.operator()),
        "queries": pts.len(),
        "model": model_json(&m),
        "warnings": warnings,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "timestamp_unix": timestamp(),
    });
    io::write_json(&out.join("report.json"), &report)
}

fn default_candidates(p: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
    match p.dim() {
        1 => Ok(benchmarks::evaluation_points(p)?),
        2 => Ok(benchmarks::grid_2d(&p.domain, 30, 30)),
        d => Err(CliError::usage(format!(
            "active-learn in {d} dimensions needs `active.candidates` or an `[eval]` grid"
        ))),
    }
}

fn write_history(path: &Path, dim: usize, h: &ActiveLearningHistory) -> Result<()> {
    let mut header = vec!["iteration".to_string(), "n2".to_string()];
    header.extend(coord_header("x*_", dim));
    header.extend(["max_Vf", "rel_err_u", "rel_err_f"].map(String::from));
    let rows: Vec<Vec<Cell>> = h
        .iterations
        .iter()
        .map(|it| {
            let mut row = vec![Cell::from(it.iteration), Cell::from(it.sizes[2])];
            row.extend(it.selected.iter().map(|v| Cell::Num(*v)));
            row.extend([
                Cell::Num(it.max_variance_f),
                it.rel_error_u.into(),
                it.rel_error_f.into(),
            ]);
            row
        })
        .collect();
    io::write_csv(path, &header, &rows)
}

fn active_learn(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = problem(cfg)?;
    let active = cfg.active.as_ref().expect("validated");
    let candidates = match (&active.candidates, &cfg.eval) {
        (Some(c), _) => io::read_points(&cfg.resolve(c))?.1,
        (None, Some(e)) => e.points(),
        (None, None) => default_candidates(&p)?,
    };
    check_points_dim(&candidates, p.dim(), "candidates")?;
    let tc = cfg.train_config(Some(p.frozen))?;
    log(format!(
        "active learning on {} with budget {} over {} candidates",
        p.name,
        active.budget,
        candidates.len()
    ));
    let start = Instant::now();
    let result = posterior::run_active_loop(&p, active.budget, &tc, &candidates);
    let wall = start.elapsed().as_secs_f64();
    let history = match &result {
        Ok(o) => &o.history,
        Err(e) => &e.history,
    };
    for it in &history.iterations {
        log(format!(
            "iteration {:>3}: n2 = {:>3}  max Vf = {:.3e}  err u = {}  err f = {}",
            it.iteration,
            it.sizes[2],
            it.max_variance_f,
            it.rel_error_u.map_or("-".into(), |e| format!("{e:.3e}")),
            it.rel_error_f.map_or("-".into(), |e| format!("{e:.3e}")),
        ));
    }
    write_history(&out.join("history.csv"), p.dim(), history)?;
    let outcome = result.map_err(|e| CliError::Numerical(e.to_string()))?;
    model_file::save(&outcome.model, &out.join("model.json"))?;
    let warnings = model_warnings(&outcome.model, &[])?;
    let report = json!({
        "command": "active-learn",
        "problem": p.name,
        "seed": tc.seed,
        "budget": active.budget,
        "candidates": candidates.len(),
        "model": model_json(&outcome.model),
        "warnings": warnings,
        "wall_time_s": wall,
        "timestamp_unix": timestamp(),
    });
    io::write_json(&out.join("report.json"), &report)
}

fn benchmark(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = problem(cfg)?;
    let seeds = cfg
        .benchmark
        .as_ref()
        .map_or_else(|| vec![cfg.seed.expect("validated")], |b| b.seeds.clone());
    let identity =
        benchmarks::operator_identity_error(&p, IDENTITY_POINTS, benchmarks::EVAL_SEED).ok();
    let rejected: Vec<Value> =
        benchmarks::rejected_reading_notes(&p, IDENTITY_POINTS, benchmarks::EVAL_SEED)?
            .into_iter()
            .map(|(d, r)| json!({ "reading": d, "identity_residual": r }))
            .collect();
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for (k, &seed) in seeds.iter().enumerate() {
        let mut tc = cfg.train_config(Some(p.frozen))?;
        tc.seed = cfg.train.as_ref().and_then(|t| t.seed).unwrap_or(seed);
        let fit = |spec: &ProblemSpec| -> Result<(TrainedModel, Option<f64>, f64)> {
            let ds = benchmarks::generate_observations(spec, seed)?;
            let m = model::train(ds, &spec.operator, &tc)?;
            let (eu, ef) = problem_errors(spec, &m)?;
            Ok((m, eu, ef))
        };
        let (mf, mf_u, mf_f) = fit(&p)?;
        let (sf, sf_u, sf_f) = fit(&p.single_fidelity())?;
        log(format!(
            "{} seed {seed}: u error MF {} SF {}",
            p.name,
            mf_u.map_or("-".into(), |e| format!("{e:.4e}")),
            sf_u.map_or("-".into(), |e| format!("{e:.4e}")),
        ));
        let [n0, n1, n2] = mf.dataset().sizes();
        rows.push(vec![
            Cell::from(p.name),
            Cell::from(seed),
            Cell::from(n0),
            Cell::from(n1),
            Cell::from(n2),
            mf_u.into(),
            sf_u.into(),
            Cell::Num(mf_f),
            Cell::Num(sf_f),
        ]);
        if k == 0 {
            let pts = benchmarks::evaluation_points(&p)?;
            let (u, f) = predictions(&mf, &pts)?;
            write_predictions(&out.join("predictions.csv"), p.dim(), &pts, u.as_ref(), &f)?;
        }
        warnings.extend(model_warnings(&mf, &[])?);
        let ard = benchmarks::ard_report(&mf);
        runs.push(json!({
            "seed": seed,
            "multi_fidelity": model_json(&mf),
            "single_fidelity": model_json(&sf),
            "ard": {
                "level1": ard.level1,
                "level2": ard.level2,
                "level1_ratio": ard.level1_ratio,
                "level2_ratio": ard.level2_ratio,
                "level2_ranking": ard.ranked_level2(),
            },
        }));
    }
    let header = [
        "problem",
        "seed",
        "n0",
        "n1",
        "n2",
        "mf_u_error",
        "sf_u_error",
        "mf_f_error",
        "sf_f_error",
    ]
    .map(String::from);
    io::write_csv(&out.join("errors.csv"), &header, &rows)?;
    let report = json!({
        "command": "benchmark",
        "problem": p.name,
        "operator": OperatorSection::from_spec(&p.operator),
        "sample_sizes": p.sample_sizes,
        "noise_std": p.noise_std,
        "identity_residual": identity,
        "rejected_readings": rejected,
        "runs": runs,
        "warnings": warnings,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "timestamp_unix": timestamp(),
    });
    io::write_json(&out.join("report.json"), &report)
}

/// Operators exercised by `kernel-check` when no `[operator]` is given.
pub fn kernel_check_catalog() -> Vec<LinearOperatorSpec> {
    vec![
        LinearOperatorSpec::Identity,
        LinearOperatorSpec::FirstDerivative1D,
        LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
        LinearOperatorSpec::Laplacian { dim: 2 },
        LinearOperatorSpec::AdvectionDiffusionReaction,
        LinearOperatorSpec::FractionalRL {
            alpha: benchmarks::FRACTIONAL_ALPHA,
            quadrature: QuadratureSpec::default(),
        },
    ]
}

/// One closed-form versus reference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheckRow {
    pub operator: String,
    pub kernel: &'static str,
    pub sample: usize,
    pub closed_form: f64,
    pub reference: f64,
    pub rel_error: f64,
}

/// Compares each operator kernel with its reference on `samples` random
/// `(x, x', θ)` draws. The reference is the finite-difference oracle, or the
/// refined quadrature for the fractional operator.
pub fn kernel_check_rows(
    ops: &[LinearOperatorSpec],
    samples: usize,
    seed: u64,
) -> Result<Vec<KernelCheckRow>> {
    let mut rows = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        let dim = op.input_dim().unwrap_or(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for sample in 0..samples {
            let lv = rng.random_range(-1.0..1.0);
            let lw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..3.0)).collect();
            let params = KernelParams::from_log(lv, lw)?;
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            for (kernel, side) in [("ff", Side::Both), ("uf", Side::Right)] {
                let (closed_form, reference) = match op {
                    LinearOperatorSpec::FractionalRL { alpha, quadrature } => {
                        let t = if side == Side::Both {
                            Transform::Both
                        } else {
                            Transform::Right
                        };
                        let compiled = op.compile()?;
                        let fine = LinearOperatorSpec::FractionalRL {
                            alpha: *alpha,
                            quadrature: quadrature.refined(),
                        }
                        .compile()?;
                        (
                            compiled.eval(t, &params, &x, &y)?,
                            fine.eval(t, &params, &x, &y)?,
                        )
                    }
                    _ => {
                        let cf = match side {
                            Side::Both => operators::op_kernel_ff(op, &params, &x, &y)?,
                            _ => operators::op_kernel_uf(op, &params, &x, &y)?,
                        };
                        (
                            cf,
                            operators::op_kernel_numeric_oracle(op, &params, &x, &y, side)?,
                        )
                    }
                };
                let rel_error = (closed_form - reference).abs() / (reference.abs() + 1e-12);
                rows.push(KernelCheckRow {
                    operator: op.name().to_string(),
                    kernel,
                    sample,
                    closed_form,
                    reference,
                    rel_error,
                });
            }
        }
    }
    Ok(rows)
}

fn kernel_check(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ops = match cfg.operator_spec()? {
        Some(op) => vec![op],
        None => kernel_check_catalog(),
    };
    let samples = cfg.check.as_ref().map_or(100, |c| c.samples);
    let seed = cfg.seed.expect("validated");
    let start = Instant::now();
    let rows = kernel_check_rows(&ops, samples, seed)?;
    let header = [
        "operator",
        "kernel",
        "sample",
        "closed_form",
        "reference",
        "rel_error",
    ]
    .map(String::from);
    let cells: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                Cell::from(r.operator.as_str()),
                Cell::from(r.kernel),
                Cell::from(r.sample),
                Cell::Num(r.closed_form),
                Cell::Num(r.reference),
                Cell::Num(r.rel_error),
            ]
        })
        .collect();
    io::write_csv(&out.join("kernel_check.csv"), &header, &cells)?;
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for op in &ops {
        let worst = rows
            .iter()
            .filter(|r| r.operator == op.name())
            .map(|r| r.rel_error)
            .fold(0.0, f64::max);
        let pass = worst <= KERNEL_CHECK_TOLERANCE;
        log(format!(
            "{:<30} max rel error {worst:.3e}  {}",
            op.name(),
            if pass { "ok" } else { "FAIL" }
        ));
        if !pass {
            failed.push(op.name());
        }
        summary.push(json!({ "operator": op.name(), "max_rel_error": worst, "pass": pass }));
    }
    let report = json!({
        "command": "kernel-check",
        "seed": seed,
        "samples": samples,
        "tolerance": KERNEL_CHECK_TOLERANCE,
        "operators": summary,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "timestamp_unix": timestamp(),
    });
    io::write_json(&out.join("report.json"), &report)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "kernel check exceeded {KERNEL_CHECK_TOLERANCE:e} for: {}",
            failed.join(", ")
        )))
    }
}
