//! Expectation-maximization for the edge-function coefficients.
//!
//! The outer loop alternates belief propagation (posterior marginals under
//! the current `omega`) with a coefficient update. The update itself is an
//! inner EM over the responsibilities
//! `Q_jk(x, y) = c_jk B_j(x) B_k(y) / omega(x, y)`, driven by the sufficient
//! statistics `mu(x, y)` (edge-pair posterior mass) and `nu(x)`
//! (degree-weighted node posterior mass).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Coefficients, Discretization, EdgeFunction};
use crate::bp::{pair_marginal, run_bp, BeliefStore, BpConfig, BpOutcome, BpSchedule};
use crate::error::{Error, Result};
use crate::graph::Graph;

use std::sync::Arc;

/// Smallest coefficient the inner update may produce; zero is absorbing.
pub const COEFFICIENT_FLOOR: f64 = 1e-12;

/// Standard deviation of posterior means above which a probe run counts as
/// having found structure.
pub const PROBE_SPREAD: f64 = 1e-2;

/// Statistics the coefficient update depends on, tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepStats {
    k: usize,
    /// `K x K`, symmetric
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl MStepStats {
    /// Wraps raw tables; `mu` must be `K x K` and symmetric.
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        let k = nu.len();
        if mu.len() != k * k {
            return Err(Error::Argument("mu must be K x K".into()));
        }
        for i in 0..k {
            for j in 0..k {
                if mu[i * k + j] != mu[j * k + i] {
                    return Err(Error::Argument("mu must be symmetric".into()));
                }
            }
        }
        if mu.iter().chain(&nu).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Argument(
                "statistics must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { k, mu, nu })
    }

    pub fn mu_at(&self, i: usize, j: usize) -> f64 {
        self.mu[i * self.k + j]
    }

    /// `(sum_ij w_i w_j mu_ij, sum_i w_i nu_i)`; both are 1 for statistics
    /// assembled from normalized posteriors.
    pub fn masses(&self, disc: &Discretization) -> (f64, f64) {
        let w = disc.grid.weights();
        let mut mu_mass = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                mu_mass += w[i] * w[j] * self.mu_at(i, j);
            }
        }
        (mu_mass, disc.grid.sum(&self.nu))
    }
}

/// Accumulates `mu = (1/2m) sum_(u,v) a_uv q_uv` over ordered adjacent pairs
/// and `nu = (1/2m) sum_u d_u q_u`.
pub fn compute_stats(g: &Graph, store: &BeliefStore, ef: &EdgeFunction) -> Result<MStepStats> {
    let k = ef.grid().len();
    let two_m = g.num_directed() as f64;
    let mut mu = vec![0.0; k * k];
    for &(u, v) in g.edges() {
        let pm = pair_marginal(u, v, store, ef, g)?;
        for i in 0..k {
            for j in 0..k {
                mu[i * k + j] += pm.at(i, j) + pm.at(j, i);
            }
        }
    }
    mu.iter_mut().for_each(|x| *x /= two_m);
    // the two orientations are summed in different orders; make it exact
    for i in 0..k {
        for j in 0..i {
            mu[j * k + i] = mu[i * k + j];
        }
    }
    Ok(MStepStats {
        k,
        mu,
        nu: store.degree_weighted_marginal(g),
    })
}

/// `int nu(x) B_j(x) dx` for every basis index.
fn nu_moments(stats: &MStepStats, disc: &Discretization) -> Vec<f64> {
    disc.basis.moments(&disc.grid, &stats.nu)
}

/// The coefficient objective with the responsibilities at their optimum:
/// `sum_ij w_i w_j mu_ij log omega_ij - sum_jk c_jk D_j D_k`, where
/// `D_j = int nu B_j`. Inner EM never decreases it.
pub fn coefficient_objective(
    stats: &MStepStats,
    c: &Coefficients,
    disc: &Arc<Discretization>,
) -> Result<f64> {
    let ef = EdgeFunction::new(c.clone(), disc)?;
    let w = disc.grid.weights();
    let k = disc.k();
    let mut fit = 0.0;
    for i in 0..k {
        for j in 0..k {
            let m = stats.mu_at(i, j);
            if m > 0.0 {
                fit += w[i] * w[j] * m * ef.at(i, j).ln();
            }
        }
    }
    let d = nu_moments(stats, disc);
    let s = c.size();
    let mut penalty = 0.0;
    for a in 0..s {
        for b in 0..s {
            penalty += c.get(a, b) * d[a] * d[b];
        }
    }
    Ok(fit - penalty)
}

/// One responsibility/coefficient update.
pub fn inner_em_step(
    stats: &MStepStats,
    c: &Coefficients,
    disc: &Arc<Discretization>,
) -> Result<Coefficients> {
    let ef = EdgeFunction::new(c.clone(), disc)?;
    let basis = &disc.basis;
    let w = disc.grid.weights();
    let k = disc.k();
    let s = c.size();

    // ratio_il = w_i w_l mu_il / omega_il; the numerator of the update is
    // c_jk * sum_il B_j(t_i) ratio_il B_k(t_l).
    let mut ratio = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let m = stats.mu_at(i, l);
            if m > 0.0 {
                let om = ef.at(i, l);
                if !(om > 0.0) {
                    return Err(Error::Invariant(format!(
                        "omega vanishes at grid point ({i}, {l}) where mu has mass"
                    )));
                }
                ratio[i * k + l] = w[i] * w[l] * m / om;
            }
        }
    }
    // half = B * ratio, (N+1) x K
    let mut half = vec![0.0; s * k];
    for j in 0..s {
        for l in 0..k {
            half[j * k + l] = (0..k).map(|i| basis.value(j, i) * ratio[i * k + l]).sum();
        }
    }
    let d = nu_moments(stats, disc);
    let mut next = vec![0.0; s * s];
    for j in 0..s {
        for b in 0..s {
            let denom = d[j] * d[b];
            if !(denom > 0.0) {
                return Err(Error::Invariant(format!(
                    "zero denominator for coefficient ({j}, {b})"
                )));
            }
            let resp: f64 = (0..k).map(|l| half[j * k + l] * basis.value(b, l)).sum();
            next[j * s + b] = (c.get(j, b) * resp / denom).max(COEFFICIENT_FLOOR);
        }
    }
    Coefficients::symmetrized(c.degree(), &next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerEmOutcome {
    pub coefficients: Coefficients,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates [`inner_em_step`] until the largest coefficient change falls
/// below `cfg.inner_tolerance` or `cfg.max_inner` steps have run.
pub fn inner_em(
    stats: &MStepStats,
    c_init: &Coefficients,
    disc: &Arc<Discretization>,
    cfg: &FitConfig,
) -> Result<InnerEmOutcome> {
    if c_init.as_slice().iter().all(|&c| c == 0.0) {
        return Err(Error::Argument("initial coefficients are all zero".into()));
    }
    let mut c = c_init.clone();
    for it in 1..=cfg.max_inner {
        let next = inner_em_step(stats, &c, disc)?;
        let change = next.max_abs_diff(&c);
        c = next;
        if change < cfg.inner_tolerance {
            return Ok(InnerEmOutcome {
                coefficients: c,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(InnerEmOutcome {
        coefficients: c,
        iterations: cfg.max_inner,
        converged: false,
    })
}

/// `sum_ij w_i w_j a_i b_j omega_ij` through basis moments.
fn bilinear(ef: &EdgeFunction, a: &[f64], b: &[f64]) -> f64 {
    let disc = ef.disc();
    let ga = disc.basis.moments(&disc.grid, a);
    let gb = disc.basis.moments(&disc.grid, b);
    let c = ef.coefficients();
    let mut acc = 0.0;
    for j in 0..c.size() {
        for k in 0..c.size() {
            acc += ga[j] * c.get(j, k) * gb[k];
        }
    }
    acc
}

/// Expected complete-data log-likelihood to leading order:
///
/// `sum_{u,v adjacent} E[log omega(x_u, x_v)] - sum_{u != v} (d_u d_v / 2m) E[omega(x_u, x_v)]`
///
/// with edge terms under the pair marginals and the rest under products of
/// node marginals. Both sums run over ordered pairs. The second is computed
/// from the aggregate `nu` minus the `u = v` diagonal.
///
/// Returns `-inf` when `omega` vanishes where an edge marginal has mass.
pub fn objective(g: &Graph, store: &BeliefStore, ef: &EdgeFunction) -> Result<f64> {
    let k = ef.grid().len();
    let w = ef.grid().weights();
    let two_m = g.num_directed() as f64;

    let mut edge_term = 0.0;
    for &(u, v) in g.edges() {
        let pm = pair_marginal(u, v, store, ef, g)?;
        for i in 0..k {
            for j in 0..k {
                let q = pm.at(i, j);
                if q > 0.0 {
                    edge_term += 2.0 * w[i] * w[j] * q * ef.at(i, j).ln();
                }
            }
        }
    }

    let nu = store.degree_weighted_marginal(g);
    let mut null_term = two_m * bilinear(ef, &nu, &nu);
    for u in 0..g.n() {
        let d = g.degree(u) as f64;
        let q = store.marginal(u);
        null_term -= d * d / two_m * bilinear(ef, q, q);
    }
    Ok(edge_term - null_term)
}

/// Tunables of [`fit`]. Every field is recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Bernstein degree `N` of the edge function.
    pub degree: usize,
    /// Quadrature points `K`.
    pub grid_points: usize,
    pub bp_tolerance: f64,
    pub damping: f64,
    pub max_sweeps: usize,
    #[serde(default)]
    pub bp_schedule: BpSchedule,
    pub inner_tolerance: f64,
    pub max_inner: usize,
    /// Relative objective change that ends the outer loop.
    pub outer_tolerance: f64,
    pub max_outer: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Weight of the banded probe mixed into the starting coefficients;
    /// zero skips the probe.
    #[serde(default = "default_probe_strength")]
    pub probe_strength: f64,
}

fn default_probe_strength() -> f64 {
    0.5
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            degree: 4,
            grid_points: 12,
            bp_tolerance: 1e-6,
            damping: 0.8,
            max_sweeps: 200,
            bp_schedule: BpSchedule::default(),
            inner_tolerance: 1e-8,
            max_inner: 500,
            outer_tolerance: 1e-6,
            max_outer: 100,
            seed: 0,
            restarts: 5,
            probe_strength: default_probe_strength(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.bp_tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || self.inner_tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            || self.outer_tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return bad("tolerances must be positive");
        }
        if !(0.0..=1.0).contains(&self.probe_strength) {
            return bad("probe strength must lie in [0, 1]");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if self.max_sweeps == 0 || self.max_inner == 0 || self.max_outer == 0 || self.restarts == 0
        {
            return bad("iteration caps and restart count must be at least 1");
        }
        // 2K - 1 >= 2N + 2: products of two basis functions integrate exactly
        if 2 * self.grid_points < 2 * self.degree + 3 {
            return Err(Error::Config(format!(
                "grid of {} points is too coarse for degree {}; need at least {}",
                self.grid_points,
                self.degree,
                self.degree + 2
            )));
        }
        Ok(())
    }

    pub fn bp(&self) -> BpConfig {
        BpConfig {
            tolerance: self.bp_tolerance,
            damping: self.damping,
            max_sweeps: self.max_sweeps,
            schedule: self.bp_schedule,
        }
    }
}

/// Snapshot handed to a fit observer after each outer iteration.
pub struct OuterIteration<'a> {
    pub restart: usize,
    pub iteration: usize,
    pub store: &'a BeliefStore,
    pub stats: &'a MStepStats,
    pub edge_function: &'a EdgeFunction,
    pub objective: f64,
    pub bp: BpOutcome,
}

pub type Observer<'a> = &'a (dyn Fn(&OuterIteration<'_>) + Sync);

/// Outcome of one restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub edge_function: EdgeFunction,
    pub store: BeliefStore,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// BP runs in this restart that stopped at the sweep cap.
    pub bp_capped: usize,
    /// The probe found structure and the restart started from it.
    pub probe_used: bool,
}

impl RestartOutcome {
    fn final_objective(&self) -> f64 {
        match self.objective_trace.last() {
            Some(v) if !v.is_nan() => *v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Result of [`fit`] for the best restart, plus per-restart summaries.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub edge_function: EdgeFunction,
    pub store: BeliefStore,
    /// `n x K` rows of `q_u(t_i)`
    pub node_posteriors: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_var: Vec<f64>,
    pub objective_trace: Vec<f64>,
    /// The outer loop met its tolerance before the iteration cap.
    pub converged: bool,
    pub bp_capped: usize,
    pub best_restart: usize,
    pub restart_objectives: Vec<f64>,
    /// Per restart, whether it started from the probe.
    pub probe_used: Vec<bool>,
}

impl FitReport {
    pub fn k(&self) -> usize {
        self.edge_function.grid().len()
    }

    pub fn posterior(&self, u: usize) -> &[f64] {
        let k = self.k();
        &self.node_posteriors[u * k..(u + 1) * k]
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Mean and variance of a grid density.
pub fn posterior_moments(disc: &Discretization, q: &[f64]) -> (f64, f64) {
    let t = disc.grid.nodes();
    let mean = disc.grid.integrate_indexed(|i| t[i] * q[i]);
    let second = disc.grid.integrate_indexed(|i| t[i] * t[i] * q[i]);
    (mean, (second - mean * mean).max(0.0))
}

/// Standard deviation of the posterior means across nodes.
pub fn posterior_spread(disc: &Discretization, store: &BeliefStore) -> f64 {
    let k = disc.k();
    let means: Vec<f64> = store
        .marginals()
        .chunks(k)
        .map(|q| posterior_moments(disc, q).0)
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `c_jk (1 - a + a (N + 1) [j = k])`: the same coefficients with weight
/// pulled onto the diagonal, which makes `omega` a band along `x = y`. Row
/// sums are preserved for constant `c`.
pub fn banded(c: &Coefficients, strength: f64) -> Coefficients {
    let s = c.size();
    let mut v = c.as_slice().to_vec();
    for j in 0..s {
        for k in 0..s {
            v[j * s + k] *= if j == k {
                1.0 - strength + strength * s as f64
            } else {
                1.0 - strength
            };
        }
    }
    Coefficients::new(c.degree(), v).expect("scaling keeps symmetry and sign")
}

/// Initial coefficients `1 + U[0, 0.5]`, symmetric.
pub fn initial_coefficients<R: Rng + ?Sized>(degree: usize, rng: &mut R) -> Coefficients {
    let s = degree + 1;
    let mut v = vec![0.0; s * s];
    for j in 0..s {
        for k in j..s {
            let c = 1.0 + 0.5 * rng.random::<f64>();
            v[j * s + k] = c;
            v[k * s + j] = c;
        }
    }
    Coefficients::new(degree, v).expect("positive symmetric by construction")
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn run_restart(
    g: &Graph,
    cfg: &FitConfig,
    disc: &Arc<Discretization>,
    restart: usize,
    observer: Option<Observer<'_>>,
) -> Result<RestartOutcome> {
    let outcome = run_restart_from(g, cfg, disc, restart, observer, cfg.probe_strength > 0.0)?;
    if outcome.probe_used && posterior_spread(disc, &outcome.store) <= PROBE_SPREAD {
        // the structure the probe suggested did not survive; nothing in the
        // data pins the band it left behind
        log::debug!("restart {restart}: probe structure faded, refitting from the plain start");
        return run_restart_from(g, cfg, disc, restart, observer, false);
    }
    Ok(outcome)
}

fn run_restart_from(
    g: &Graph,
    cfg: &FitConfig,
    disc: &Arc<Discretization>,
    restart: usize,
    observer: Option<Observer<'_>>,
    try_probe: bool,
) -> Result<RestartOutcome> {
    let mut rng = restart_rng(cfg.seed, restart);
    let mut coefficients = initial_coefficients(cfg.degree, &mut rng);
    let mut ef = EdgeFunction::new(coefficients.clone(), disc)?;
    let mut store = BeliefStore::random(g, &ef, &mut rng)?;
    let bp_cfg = cfg.bp();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut bp_capped = 0;

    // Near the constant function BP settles on identical marginals for every
    // node, and there the coefficient update returns its input. A banded
    // probe pushes BP past that point when the graph has structure; if it
    // still finds none the restart keeps the near-constant start.
    let mut probe_used = false;
    if try_probe {
        let probe = banded(&coefficients, cfg.probe_strength);
        let probe_ef = EdgeFunction::new(probe.clone(), disc)?;
        let mut probe_store = BeliefStore::with_messages(g, &probe_ef, store.messages().to_vec())?;
        let out = run_bp(&mut probe_store, &probe_ef, g, &bp_cfg)?;
        let spread = posterior_spread(disc, &probe_store);
        log::debug!(
            "restart {restart}: probe spread {spread:.3e} after {} sweeps",
            out.sweeps
        );
        if spread > PROBE_SPREAD {
            probe_used = true;
            coefficients = probe;
            ef = probe_ef;
            store = probe_store;
        }
    }

    for iteration in 0..cfg.max_outer {
        let bp = run_bp(&mut store, &ef, g, &bp_cfg)?;
        if !bp.converged {
            bp_capped += 1;
        }
        let obj = objective(g, &store, &ef)?;
        let stats = compute_stats(g, &store, &ef)?;
        if let Some(obs) = observer {
            obs(&OuterIteration {
                restart,
                iteration,
                store: &store,
                stats: &stats,
                edge_function: &ef,
                objective: obj,
                bp,
            });
        }
        let previous = trace.last().copied();
        trace.push(obj);
        if let Some(prev) = previous {
            if obj.is_finite() && (obj - prev).abs() < cfg.outer_tolerance * obj.abs() {
                converged = true;
                break;
            }
        }
        if iteration + 1 == cfg.max_outer {
            break;
        }
        coefficients = inner_em(&stats, &coefficients, disc, cfg)?.coefficients;
        ef = EdgeFunction::new(coefficients.clone(), disc)?;
    }
    log::debug!(
        "restart {restart}: {} outer iterations, objective {:?}, converged {converged}",
        trace.len(),
        trace.last()
    );
    Ok(RestartOutcome {
        edge_function: ef,
        store,
        objective_trace: trace,
        converged,
        bp_capped,
        probe_used,
    })
}

/// Fits the model with default execution options.
pub fn fit(g: &Graph, cfg: &FitConfig) -> Result<FitReport> {
    fit_with(g, cfg, 1, None)
}

/// Fits the model, evaluating restarts and BP sweeps on `jobs` worker
/// threads. The result does not depend on `jobs`.
///
/// Each restart starts from coefficients near the constant function and
/// random messages, then alternates BP, the objective, and inner EM until
/// the relative objective change drops below `cfg.outer_tolerance`. The
/// coefficients reported are the ones the final BP run used. The restart
/// with the highest final objective wins; ties go to the lower index.
pub fn fit_with(
    g: &Graph,
    cfg: &FitConfig,
    jobs: usize,
    observer: Option<Observer<'_>>,
) -> Result<FitReport> {
    cfg.validate()?;
    if g.m() == 0 {
        return Err(Error::NoEdges);
    }
    let disc = Discretization::new(cfg.degree, cfg.grid_points)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<RestartOutcome> = pool.install(|| {
        (0..cfg.restarts)
            .into_par_iter()
            .map(|r| run_restart(g, cfg, &disc, r, observer))
            .collect::<Result<_>>()
    })?;

    let restart_objectives: Vec<f64> = outcomes
        .iter()
        .map(RestartOutcome::final_objective)
        .collect();
    let probe_used = outcomes.iter().map(|o| o.probe_used).collect();
    let mut best = 0;
    for (r, &obj) in restart_objectives.iter().enumerate() {
        if obj > restart_objectives[best] {
            best = r;
        }
    }
    let winner = outcomes
        .into_iter()
        .nth(best)
        .expect("at least one restart");
    let k = disc.k();
    let (mut mean, mut var) = (Vec::with_capacity(g.n()), Vec::with_capacity(g.n()));
    for u in 0..g.n() {
        let (m, v) = posterior_moments(&disc, &winner.store.marginals()[u * k..(u + 1) * k]);
        mean.push(m);
        var.push(v);
    }
    Ok(FitReport {
        node_posteriors: winner.store.marginals().to_vec(),
        edge_function: winner.edge_function,
        store: winner.store,
        posterior_mean: mean,
        posterior_var: var,
        objective_trace: winner.objective_trace,
        converged: winner.converged,
        bp_capped: winner.bp_capped,
        best_restart: best,
        restart_objectives,
        probe_used,
    })
}
