use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use gcomm_core::em::OuterIteration;
use gcomm_core::generate::{sample_latent, sample_sbm, LatentSample, SbmParams};
use gcomm_core::io::{
    coefficients_tsv, omega_tsv, parse_coefficients, parse_posterior, posterior_tsv, truth_tsv,
};
use gcomm_core::oracle::{oracle_marginals, self_consistent_field, JointModel};
use gcomm_core::{
    em, objective, parse_edge_list, run_bp, BeliefStore, BpSchedule, Discretization, EdgeFunction,
    FitConfig, ParsedGraph,
};
use serde_json::json;

use crate::manifest::{
    now_ms, Convergence, InputRecord, Report, RunManifest, Timestamps, Versions,
};
use crate::{EvalArgs, InferArgs, LatentArgs, OracleArgs, OracleModel, SbmArgs};

const CAP_STOPPED: u8 = 2;

fn read_graph(path: &Path) -> Result<(Vec<u8>, ParsedGraph)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text =
        std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let parsed = parse_edge_list(text).with_context(|| format!("{}", path.display()))?;
    for w in parsed.warnings() {
        log::warn!("{}: {w}", path.display());
    }
    Ok((bytes, parsed))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn read_coefficients(path: &Path) -> Result<gcomm_core::Coefficients> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_coefficients(&text).with_context(|| format!("{}", path.display()))
}

pub fn infer(args: &InferArgs, schedule: BpSchedule) -> Result<u8> {
    let started = now_ms();
    let (bytes, parsed) = read_graph(&args.edgelist)?;
    let g = &parsed.graph;
    let cfg = FitConfig {
        degree: args.degree,
        grid_points: args.grid,
        bp_tolerance: args.tol_bp,
        damping: args.damping,
        max_sweeps: args.max_sweeps,
        bp_schedule: schedule,
        outer_tolerance: args.tol_outer,
        max_outer: args.max_outer,
        seed: args.seed,
        restarts: args.restarts,
        probe_strength: args.probe_strength,
        ..FitConfig::default()
    };
    cfg.validate()?;
    ensure!(args.jobs >= 1, "--jobs must be at least 1");
    log::info!("{} nodes, {} edges", g.n(), g.m());

    let observer = |it: &OuterIteration<'_>| {
        log::debug!(
            "restart {} iteration {}: objective {:.10e}, {} BP sweeps",
            it.restart,
            it.iteration,
            it.objective,
            it.bp.sweeps
        );
    };
    let fit = em::fit_with(g, &cfg, args.jobs, Some(&observer))?;
    let status = if fit.converged { 0 } else { CAP_STOPPED };
    if fit.bp_capped > 0 {
        log::warn!(
            "{} outer iterations used BP runs that hit the sweep cap",
            fit.bp_capped
        );
    }
    if status == CAP_STOPPED {
        log::warn!(
            "outer loop stopped at the iteration cap of {}",
            cfg.max_outer
        );
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write(&args.out, "posterior.tsv", &posterior_tsv(g, &fit))?;
    write(&args.out, "omega.tsv", &omega_tsv(&fit.edge_function))?;
    write(
        &args.out,
        "coefficients.tsv",
        &coefficients_tsv(fit.edge_function.coefficients()),
    )?;
    let manifest = RunManifest {
        command: "infer".into(),
        seed: cfg.seed,
        input: InputRecord::new(&args.edgelist, &bytes, &parsed),
        versions: Versions::default(),
        timestamps: Timestamps {
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        },
        convergence: Convergence {
            converged: fit.converged,
            outer_iterations: fit.objective_trace.len(),
            bp_capped: fit.bp_capped,
            exit_status: status,
        },
        config: cfg,
    };
    let report = Report::new(&fit, manifest);
    write(
        &args.out,
        "report.json",
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    Ok(status)
}

fn write_sample(out: &Path, sample: &LatentSample) -> Result<()> {
    if sample.dropped_isolated > 0 {
        log::info!(
            "{} isolated nodes left out of the edge list",
            sample.dropped_isolated
        );
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(out, "network.edgelist", &sample.graph.to_edge_list())?;
    write(out, "truth.tsv", &truth_tsv(sample))
}

pub fn generate_sbm(args: &SbmArgs) -> Result<u8> {
    ensure!(
        args.cin.is_finite() && args.cout.is_finite() && args.cin >= 0.0 && args.cout >= 0.0,
        "--cin and --cout must be finite and nonnegative"
    );
    ensure!(
        args.cin + args.cout > 0.0,
        "--cin and --cout are both zero; the graph would have no edges"
    );
    let params = SbmParams::planted(args.n, args.groups, args.cin, args.cout)?;
    let sample = sample_sbm(&params, args.seed)?;
    log::info!(
        "{} nodes, {} edges, mean degree {:.3}",
        sample.graph.n(),
        sample.graph.m(),
        2.0 * sample.graph.m() as f64 / args.n as f64
    );
    write_sample(&args.out, &sample)?;
    Ok(0)
}

pub fn generate_latent(args: &LatentArgs) -> Result<u8> {
    ensure!(args.n >= 2, "--n must be at least 2");
    ensure!(
        args.degree_param.is_finite() && args.degree_param > 0.0,
        "--degree-param must be positive"
    );
    let c = read_coefficients(&args.omega_file)?;
    let mean_omega = c.as_slice().iter().sum::<f64>() / (c.size() * c.size()) as f64;
    if (mean_omega - 1.0).abs() > 0.05 {
        log::warn!(
            "edge function averages {mean_omega:.4}; mean degree will drift from --degree-param"
        );
    }
    let disc = Discretization::new(c.degree(), c.degree() + 2)?;
    let ef = EdgeFunction::new(c, &disc)?;
    let sample = sample_latent(&vec![args.degree_param; args.n], &ef, args.seed)?;
    write_sample(&args.out, &sample)?;
    Ok(0)
}

pub fn eval(args: &EvalArgs) -> Result<u8> {
    let (_, parsed) = read_graph(&args.edgelist)?;
    let g = &parsed.graph;
    let c = read_coefficients(&args.fit.join("coefficients.tsv"))?;

    let posterior = match fs::read_to_string(args.fit.join("posterior.tsv")) {
        Ok(text) => Some(parse_posterior(&text).context("posterior.tsv in the fit directory")?),
        Err(_) => None,
    };
    let mut cfg = match fs::read_to_string(args.fit.join("report.json")) {
        Ok(text) => {
            let report: Report =
                serde_json::from_str(&text).context("report.json in the fit directory")?;
            report.manifest.config
        }
        Err(_) => FitConfig {
            degree: c.degree(),
            grid_points: posterior
                .as_ref()
                .map_or(FitConfig::default().grid_points, |p| p.grid_len),
            ..FitConfig::default()
        },
    };
    ensure!(
        cfg.degree == c.degree(),
        "fit records degree {} but coefficients.tsv has degree {}",
        cfg.degree,
        c.degree()
    );
    if let Some(t) = args.tol_bp {
        cfg.bp_tolerance = t;
    }
    if let Some(d) = args.damping {
        cfg.damping = d;
    }
    if let Some(s) = args.max_sweeps {
        cfg.max_sweeps = s;
    }
    cfg.validate()?;

    let disc = Discretization::new(cfg.degree, cfg.grid_points)?;
    let ef = EdgeFunction::new(c, &disc)?;
    let k = disc.k();
    let mut store = match &posterior {
        Some(p) => {
            ensure!(
                p.grid_len == k,
                "posterior.tsv has {} grid columns, expected {k}",
                p.grid_len
            );
            let rows: HashMap<&str, usize> = p
                .labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let mut marginals = Vec::with_capacity(g.n() * k);
            for u in 0..g.n() {
                let label = g.label(u);
                let Some(&r) = rows.get(label.as_str()) else {
                    bail!("node `{label}` is missing from posterior.tsv");
                };
                marginals.extend_from_slice(&p.densities[r * k..(r + 1) * k]);
            }
            BeliefStore::from_marginals(g, &ef, &marginals)?
        }
        None => BeliefStore::uniform(g, &ef)?,
    };
    let bp = run_bp(&mut store, &ef, g, &cfg.bp())?;
    let obj = objective(g, &store, &ef)?;
    let status = if bp.converged { 0 } else { CAP_STOPPED };
    let out = json!({
        "objective": obj,
        "nodes": g.n(),
        "edges": g.m(),
        "degree": cfg.degree,
        "grid_points": k,
        "warm_start": posterior.is_some(),
        "bp": {
            "sweeps": bp.sweeps,
            "converged": bp.converged,
            "residual": bp.residual,
            "tolerance": cfg.bp_tolerance,
            "damping": cfg.damping,
            "schedule": cfg.bp_schedule,
            "max_normalization_error": store.max_normalization_error(&disc.grid),
        },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(status)
}

pub fn oracle(args: &OracleArgs) -> Result<u8> {
    let (_, parsed) = read_graph(&args.edgelist)?;
    let g = &parsed.graph;
    let c = read_coefficients(&args.coefficients)?;
    let disc = Discretization::new(c.degree(), args.grid)?;
    let ef = EdgeFunction::new(c, &disc)?;
    let (nu, marg) = match args.model {
        OracleModel::Field => {
            ensure!(g.is_forest(), "the field oracle needs a forest");
            let (nu, marg) = self_consistent_field(g, &ef, 1e-15, 100_000)?;
            (Some(nu), marg)
        }
        OracleModel::Poisson => (None, oracle_marginals(g, &ef, &JointModel::Poisson)?),
        OracleModel::Bernoulli => (None, oracle_marginals(g, &ef, &JointModel::Bernoulli)?),
    };
    let k = disc.k();
    let nodes: serde_json::Map<String, serde_json::Value> = (0..g.n())
        .map(|u| (g.label(u), json!(marg.node[u * k..(u + 1) * k])))
        .collect();
    let out = json!({
        "model": format!("{:?}", args.model).to_lowercase(),
        "grid": disc.grid.nodes(),
        "log_normalizer": marg.log_normalizer,
        "objective": marg.objective(g, &ef),
        "nu": nu,
        "node_marginals": nodes,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}
