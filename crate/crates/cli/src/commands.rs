use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use lram::fem::{self, quadrature};
use lram::lowrank::{self, glram_compress, io::write_factors, EnergyConvention, LowRankBasis};
use lram::numerics::{condition_estimate, mtx, SparseMatrix};
use lram::perturbed_solver::SolveMethod;
use lram::socp::{build_reduced_problem, optimize, Method, SocpResult};
use lram::spde::{critical_from_eigenvalues, run_on_problem, tau_scan, SpdeProblem, SpdeRunConfig};
use nalgebra::DVector;

use crate::config::{Config, SolverChoice};
use crate::error::CliError;
use crate::output::{num, Csv, KeyValues, OutputDir};

/// Eigenvalues listed in `eigenvalues.csv`.
const EIGENVALUES_LISTED: usize = 20;

fn spde_config(cfg: &Config) -> SpdeRunConfig {
    SpdeRunConfig {
        h: cfg.h,
        m: cfg.m,
        tau: cfg.tau,
        epsilon: cfg.epsilon,
        distribution: cfg.distribution,
        master_seed: cfg.seed,
        method: match cfg.method {
            SolverChoice::Smw => SolveMethod::Smw,
            SolverChoice::Neumann => SolveMethod::Neumann(cfg.neumann_order),
            SolverChoice::Direct => SolveMethod::Direct,
        },
        reference: cfg.reference,
        direct_fallback: cfg.direct_fallback,
        energy_convention: cfg.energy_convention,
        condition_samples: cfg.condition_samples,
    }
}

fn energy_csv(curve: &[(usize, f64)]) -> Vec<u8> {
    let mut csv = Csv::new(&["k", "energy"]);
    for &(k, e) in curve {
        csv.row([k.to_string(), num(e)]);
    }
    csv.into_bytes()
}

fn eigenvalues_csv(values: &[f64]) -> Vec<u8> {
    let mut csv = Csv::new(&["index", "eigenvalue"]);
    for (i, v) in values.iter().take(EIGENVALUES_LISTED).enumerate() {
        csv.row([(i + 1).to_string(), num(*v)]);
    }
    csv.into_bytes()
}

fn nodal_csv(mesh: &fem::TriMesh, columns: &[(&str, &DVector<f64>)]) -> Vec<u8> {
    let mut header = vec!["node", "x", "y"];
    header.extend(columns.iter().map(|c| c.0));
    let mut csv = Csv::new(&header);
    for (i, p) in mesh.nodes.iter().enumerate() {
        let mut row = vec![i.to_string(), num(p[0]), num(p[1])];
        row.extend(columns.iter().map(|c| num(c.1[i])));
        csv.row(row);
    }
    csv.into_bytes()
}

pub fn spde(cfg: &Config, out: &mut OutputDir) -> Result<String, CliError> {
    let run = spde_config(cfg);
    let problem = SpdeProblem::from_config(&run)?;
    let report = run_on_problem(&run, &problem)?;

    let mut kv = KeyValues::new();
    kv.add("n", report.n.to_string());
    kv.add("num_boundary", report.num_boundary.to_string());
    kv.add("M", cfg.m.to_string());
    kv.add("k", report.k.to_string());
    kv.add_num("tau", cfg.tau);
    kv.add("method", run.method.to_string());
    kv.add("err_l2", report.err_l2.map(num).unwrap_or_default());
    kv.add_num("rmsre", report.rmsre);
    kv.add_num("compression_ratio", report.compression_ratio);
    kv.add("k_star", report.k_star.to_string());
    kv.add_num("tau_star", report.tau_star);
    kv.add_num("cond_abar", report.cond_abar);
    for (m, c) in report.sample_conditions.iter().enumerate() {
        kv.add_num(&format!("cond_sample_{}", m + 1), *c);
    }
    kv.add_num("min_coefficient", report.min_coefficient);
    let fallbacks: Vec<String> = report.fallbacks.iter().map(|m| (m + 1).to_string()).collect();
    kv.add("fallback_samples", fallbacks.join(" "));
    kv.add("neumann_residual_max", report.neumann_residual_max.map(num).unwrap_or_default());
    kv.add("failure", report.failure.clone().unwrap_or_default());
    out.write("report.csv", &kv.into_bytes())?;

    let mut cols: Vec<(&str, &DVector<f64>)> = vec![("ubar", &report.ubar)];
    if let Some(q) = &report.qoi_lram {
        cols.push(("qoi", q));
    }
    if let Some(q) = &report.qoi_reference {
        cols.push(("qoi_reference", q));
    }
    out.write("qoi.csv", &nodal_csv(&problem.mesh, &cols))?;
    out.write("energy.csv", &energy_csv(&report.energy_curve))?;
    out.write("eigenvalues.csv", &eigenvalues_csv(&report.eigenvalues))?;

    let start = Instant::now();
    if let (Some(reference), false) = (&report.qoi_reference, cfg.tau_scan.is_empty()) {
        let rows = tau_scan(&problem, reference, &cfg.tau_scan)?;
        let mut csv = Csv::new(&["tau", "k", "err_l2", "rmsre", "compression_ratio"]);
        for r in rows {
            csv.row([num(r.tau), r.k.to_string(), num(r.err_l2), num(r.rmsre), num(r.compression_ratio)]);
        }
        out.write("errors_vs_tau.csv", &csv.into_bytes())?;
    }
    let t = &report.timings;
    out.timing("assembly", t.assembly);
    out.timing("compression", t.compression);
    out.timing("solve", t.solve);
    out.timing("reference", t.reference);
    out.timing("tau_scan", start.elapsed());

    if let Some(f) = report.failure {
        return Err(CliError::Failed(f));
    }
    Ok(format!(
        "N = {}, k = {}, err_l2 = {}, k* = {}",
        report.n,
        report.k,
        report.err_l2.map(num).unwrap_or_else(|| "n/a".into()),
        report.k_star
    ))
}

pub fn socp(cfg: &Config, out: &mut OutputDir) -> Result<String, CliError> {
    let start = Instant::now();
    let problem = SpdeProblem::build(cfg.h, cfg.m, cfg.epsilon, cfg.distribution, cfg.seed)?;
    let k = lowrank::rank_for_tau(problem.n(), cfg.tau)?;
    let reduced = build_reduced_problem(
        &problem.mesh,
        &problem.system,
        problem.factors(k)?,
        cfg.desired_state,
        cfg.beta,
        cfg.pairing,
        cfg.mismatch_weight,
    )?;
    out.timing("setup", start.elapsed());

    let methods: Vec<Method> = if cfg.compare_methods {
        Method::ALL.to_vec()
    } else {
        vec![cfg.optimizer]
    };
    let f0 = DVector::from_element(reduced.n(), cfg.initial_control);
    let mut results = Vec::with_capacity(methods.len());
    for &m in &methods {
        let res = optimize(&reduced, &cfg.optimizer_spec(m), &f0)?;
        out.timing(&format!("optimize {m}"), res.elapsed);
        results.push(res);
    }

    let desired = |x: f64, y: f64| cfg.desired_state.eval(x, y);
    let state_errors = |r: &SocpResult| {
        (
            (&r.mu_star - reduced.target()).norm(),
            quadrature::l2_error(&problem.mesh, r.mu_star.as_slice(), desired),
        )
    };

    let mut history = Csv::new(&["method", "iter", "J", "grad_norm", "step"]);
    for r in &results {
        for h in &r.history {
            history.row([r.method.to_string(), h.iter.to_string(), num(h.j), num(h.grad_norm), num(h.step)]);
        }
    }
    out.write("socp_history.csv", &history.into_bytes())?;

    let main = results
        .iter()
        .find(|r| r.method == cfg.optimizer)
        .expect("selected optimizer always runs");
    let (err_nodal, err_l2) = state_errors(main);
    let mut kv = KeyValues::new();
    kv.add("optimizer", main.method.to_string());
    kv.add("n", reduced.n().to_string());
    kv.add("k", reduced.k().to_string());
    kv.add_num("tau", cfg.tau);
    kv.add("M", reduced.m().to_string());
    kv.add_num("J0", main.j0);
    kv.add_num("J_star", main.j_star);
    kv.add_num("ratio", main.ratio());
    kv.add_num("grad_norm_final", main.grad_norm_final);
    kv.add("iterations", main.iterations.to_string());
    kv.add("converged", main.converged.to_string());
    kv.add("negative_components", main.negative_components.to_string());
    kv.add_num("state_error_nodal", err_nodal);
    kv.add_num("state_error_l2", err_l2);
    out.write("report.csv", &kv.into_bytes())?;
    out.write("control.csv", &nodal_csv(&problem.mesh, &[("f", &main.f_star)]))?;
    out.write("state_mean.csv", &nodal_csv(&problem.mesh, &[("mu", &main.mu_star)]))?;

    if cfg.compare_methods {
        let mut header = vec![
            "method",
            "iterations",
            "converged",
            "state_error_nodal",
            "state_error_l2",
            "ratio",
            "J0",
            "J_star",
            "grad_norm_final",
            "negative_components",
        ];
        if cfg.timings {
            header.push("time_s");
        }
        let mut csv = Csv::new(&header);
        for r in &results {
            let (en, el) = state_errors(r);
            let mut row = vec![
                r.method.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                num(en),
                num(el),
                num(r.ratio()),
                num(r.j0),
                num(r.j_star),
                num(r.grad_norm_final),
                r.negative_components.to_string(),
            ];
            if cfg.timings {
                row.push(num(r.elapsed.as_secs_f64()));
            }
            csv.row(row);
        }
        out.write("methods.csv", &csv.into_bytes())?;
    }

    let stalled: Vec<String> = results
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.method.to_string())
        .collect();
    if !stalled.is_empty() {
        return Err(CliError::Failed(format!(
            "iteration cap reached without convergence: {}",
            stalled.join(", ")
        )));
    }
    Ok(format!(
        "{}: {} iterations, J0 = {}, J* = {}, ratio = {}",
        main.method,
        main.iterations,
        num(main.j0),
        num(main.j_star),
        num(main.ratio())
    ))
}

/// Perturbations and, when available, the mean matrix and boundary count.
struct Ensemble {
    perturbations: Vec<SparseMatrix>,
    abar: Option<SparseMatrix>,
    num_boundary: Option<usize>,
}

fn read_mtx(path: &Path) -> Result<SparseMatrix, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    mtx::read_sparse(BufReader::new(file)).map_err(|e| match e {
        lram::Error::Parse { line, message } => {
            CliError::Usage(format!("{} line {line}: {message}", path.display()))
        }
        other => other.into(),
    })
}

/// `*.mtx` files of `dir`, shorter names first, then by name; `abar.mtx` is
/// taken as the mean matrix rather than a perturbation.
fn read_ensemble_dir(dir: &Path) -> Result<Ensemble, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".mtx") {
            names.push(name);
        }
    }
    names.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let mut abar = None;
    let mut perturbations = Vec::new();
    for name in names {
        let a = read_mtx(&dir.join(&name))?;
        if name == "abar.mtx" {
            abar = Some(a);
        } else {
            perturbations.push(a);
        }
    }
    if perturbations.is_empty() {
        return Err(CliError::Usage(format!("no perturbation .mtx files in {}", dir.display())));
    }
    Ok(Ensemble {
        perturbations,
        abar,
        num_boundary: None,
    })
}

fn load_ensemble(cfg: &Config) -> Result<Ensemble, CliError> {
    if let Some(dir) = &cfg.ensemble_dir {
        return read_ensemble_dir(dir);
    }
    let mesh = fem::structured_mesh(cfg.h)?;
    let fields = fem::sample_fields(mesh.num_elements(), cfg.m, cfg.epsilon, cfg.distribution, cfg.seed)?;
    let system = fem::assemble(&mesh, &fields, |_, _| 1.0)?;
    Ok(Ensemble {
        perturbations: system.atilde,
        abar: Some(system.abar),
        num_boundary: Some(mesh.num_boundary()),
    })
}

pub fn compress(cfg: &Config, out: &mut OutputDir) -> Result<String, CliError> {
    let start = Instant::now();
    let ens = load_ensemble(cfg)?;
    out.timing("load", start.elapsed());

    let start = Instant::now();
    let factors = lowrank::compress(&ens.perturbations, cfg.tau)?;
    let err = lowrank::rmsre(&ens.perturbations, &factors)?;
    out.timing("compress", start.elapsed());
    let (n, m, k) = (factors.n(), factors.m(), factors.k);

    let mut kv = KeyValues::new();
    kv.add("n", n.to_string());
    kv.add("M", m.to_string());
    kv.add("k", k.to_string());
    kv.add_num("tau", cfg.tau);
    kv.add_num("rmsre", err);
    kv.add_num("compression_ratio", lowrank::compression_ratio(n, k, m));
    kv.add("stored_scalars", factors.stored_scalar_count().to_string());
    kv.add("dense_scalars", (m * n * n).to_string());

    if cfg.glram {
        let start = Instant::now();
        let g = glram_compress(&ens.perturbations, k, cfg.glram_max_iters, cfg.glram_rel_tol)?;
        out.timing("glram", start.elapsed());
        kv.add_num("glram_rmsre", g.rmsre());
        kv.add("glram_iterations", g.iterations.to_string());
        let mut csv = Csv::new(&["iter", "rmsre"]);
        for (i, r) in g.rmsre_history.iter().enumerate() {
            csv.row([(i + 1).to_string(), num(*r)]);
        }
        out.write("glram_history.csv", &csv.into_bytes())?;
    }
    out.write("report.csv", &kv.into_bytes())?;

    let mut buf = Vec::new();
    mtx::write_dense(&mut buf, &factors.u)?;
    out.write("factors/U.mtx", &buf)?;
    for (i, w) in factors.w.iter().enumerate() {
        let mut buf = Vec::new();
        mtx::write_dense(&mut buf, w)?;
        out.write(&format!("factors/W_{}.mtx", i + 1), &buf)?;
    }
    let mut buf = Vec::new();
    write_factors(&mut buf, &factors)?;
    out.write("factors/factors.bin", &buf)?;

    Ok(format!("N = {n}, M = {m}, k = {k}, rmsre = {}", num(err)))
}

/// Treats an all-zero ensemble as "nothing to report" rather than an error.
fn zero_ok<T>(r: lram::Result<T>) -> lram::Result<Option<T>> {
    match r {
        Err(lram::Error::ZeroEnsemble) => Ok(None),
        other => other.map(Some),
    }
}

pub fn diagnose(cfg: &Config, out: &mut OutputDir) -> Result<String, CliError> {
    let start = Instant::now();
    let ens = load_ensemble(cfg)?;
    out.timing("load", start.elapsed());

    let start = Instant::now();
    let basis = LowRankBasis::new(&ens.perturbations)?;
    let eigenvalues = basis.eigenvalues();
    let n = basis.n();
    out.timing("eigen", start.elapsed());

    let plain = zero_ok(lowrank::energy_curve(eigenvalues, EnergyConvention::Eigen))?;
    let squared = zero_ok(lowrank::energy_curve(eigenvalues, EnergyConvention::EigenSquared))?;
    let (k_star, tau_star) = zero_ok(critical_from_eigenvalues(eigenvalues))?.unwrap_or((0, 0.0));

    let mut csv = Csv::new(&["k", "energy", "energy_squared"]);
    if let (Some(p), Some(s)) = (&plain, &squared) {
        for (a, b) in p.iter().zip(s) {
            csv.row([a.0.to_string(), num(a.1), num(b.1)]);
        }
    }
    out.write("energy.csv", &csv.into_bytes())?;
    out.write("eigenvalues.csv", &eigenvalues_csv(eigenvalues))?;

    let mut kv = KeyValues::new();
    kv.add("n", n.to_string());
    kv.add("M", ens.perturbations.len().to_string());
    if let Some(b) = ens.num_boundary {
        kv.add("num_boundary", b.to_string());
        kv.add("num_interior", (n - b).to_string());
    }
    kv.add("k_star", k_star.to_string());
    kv.add_num("tau_star", tau_star);
    let start = Instant::now();
    if let Some(abar) = &ens.abar {
        kv.add_num("cond_abar", condition_estimate(abar)?);
        for (m, a) in ens.perturbations.iter().take(cfg.condition_samples).enumerate() {
            let full = abar.add_scaled(1.0, a, 1.0)?;
            kv.add_num(&format!("cond_sample_{}", m + 1), condition_estimate(&full)?);
        }
    }
    out.timing("conditions", start.elapsed());
    out.write("diagnose.csv", &kv.into_bytes())?;

    Ok(format!("N = {n}, k* = {k_star}, tau* = {}", num(tau_star)))
}
