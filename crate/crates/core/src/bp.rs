//! Belief propagation for the latent-position posterior.
//!
//! Each directed edge `u -> v` carries a density `eta_{u->v}(x)` over node
//! `u`'s position with `v` removed. Non-edges enter through a mean field:
//! every node sees `exp(-(d_u / 2m) F(x))` with
//! `F(x) = sum_w d_w int q_w(y) omega(x, y) dy`, shared by all messages and
//! kept in step with the node marginals.
//!
//! Two sweep schedules are available. Synchronous sweeps recompute every
//! message from the previous sweep and refresh the field once; they
//! parallelize but can lock into a period-two swing of the whole population
//! when the field is strong. Sequential sweeps visit nodes in index order and
//! refresh the field after each node, which damps that swing. Both are
//! deterministic and independent of the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{EdgeFunction, QuadratureGrid};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Messages, node marginals and the shared field, all tabulated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefStore {
    k: usize,
    /// `messages[e * K + i]` for directed edge slot `e`
    messages: Vec<f64>,
    marginals: Vec<f64>,
    field: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpSchedule {
    Synchronous,
    #[default]
    Sequential,
}

/// Stopping rules for [`run_bp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpConfig {
    /// Largest tolerated weighted-L1 change of any message in a sweep.
    pub tolerance: f64,
    /// Weight of the freshly computed message in the damped update.
    pub damping: f64,
    pub max_sweeps: usize,
    pub schedule: BpSchedule,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            damping: 0.8,
            max_sweeps: 200,
            schedule: BpSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOutcome {
    pub sweeps: usize,
    pub converged: bool,
    /// Residual of the last sweep.
    pub residual: f64,
}

/// Two-node posterior on an edge, `table[i * K + j] = q_uv(t_i, t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMarginal {
    pub u: usize,
    pub v: usize,
    k: usize,
    pub table: Vec<f64>,
}

impl PairMarginal {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.k + j]
    }

    pub fn transpose(&self) -> Self {
        let k = self.k;
        let mut table = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                table[j * k + i] = self.table[i * k + j];
            }
        }
        Self {
            u: self.v,
            v: self.u,
            k,
            table,
        }
    }
}

/// Turns log-values into a density normalized under the grid weights.
/// Returns `false` if nothing is left to normalize.
fn normalize_log(values: &mut [f64], weights: &[f64]) -> bool {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let mut z = 0.0;
    for (v, w) in values.iter_mut().zip(weights) {
        *v = (*v - max).exp();
        z += *v * w;
    }
    if !(z > 0.0) || !z.is_finite() {
        return false;
    }
    values.iter_mut().for_each(|v| *v /= z);
    true
}

fn normalize(values: &mut [f64], weights: &[f64]) -> bool {
    let z: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    if !(z > 0.0) || !z.is_finite() {
        return false;
    }
    values.iter_mut().for_each(|v| *v /= z);
    true
}

/// `log int eta(y) omega(t_i, y) dy` at every grid node.
fn incoming_log(ef: &EdgeFunction, message: &[f64]) -> Vec<f64> {
    ef.integrate_against(message)
        .into_iter()
        .map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Node-level accumulator that can leave one incoming term out exactly,
/// even when that term is `-inf`.
struct Cavity {
    finite: Vec<f64>,
    zeros: Vec<u32>,
}

impl Cavity {
    fn new(base: Vec<f64>) -> Self {
        let k = base.len();
        let mut c = Self {
            finite: vec![0.0; k],
            zeros: vec![0; k],
        };
        c.add(&base);
        c
    }

    fn add(&mut self, term: &[f64]) {
        for i in 0..term.len() {
            if term[i] == f64::NEG_INFINITY {
                self.zeros[i] += 1;
            } else {
                self.finite[i] += term[i];
            }
        }
    }

    fn total(&self) -> Vec<f64> {
        self.finite
            .iter()
            .zip(&self.zeros)
            .map(|(&f, &z)| if z > 0 { f64::NEG_INFINITY } else { f })
            .collect()
    }

    fn without(&self, term: &[f64]) -> Vec<f64> {
        (0..term.len())
            .map(|i| {
                let excluded_zero = term[i] == f64::NEG_INFINITY;
                let zeros = self.zeros[i] - u32::from(excluded_zero);
                if zeros > 0 {
                    f64::NEG_INFINITY
                } else if excluded_zero {
                    self.finite[i]
                } else {
                    self.finite[i] - term[i]
                }
            })
            .collect()
    }
}

impl BeliefStore {
    /// Store whose messages are the given per-slot densities (normalized here);
    /// the field starts from uniform marginals and the marginals are then
    /// assembled from the messages.
    pub fn with_messages(g: &Graph, ef: &EdgeFunction, mut messages: Vec<f64>) -> Result<Self> {
        let grid = ef.grid();
        let k = grid.len();
        if messages.len() != g.num_directed() * k {
            return Err(Error::Argument("message buffer has the wrong size".into()));
        }
        for u in 0..g.n() {
            for e in g.out_edges(u) {
                if !normalize(&mut messages[e * k..(e + 1) * k], grid.weights()) {
                    return Err(Error::DegenerateMessage {
                        from: u,
                        to: g.target(e),
                    });
                }
            }
        }
        let mut store = Self {
            k,
            messages,
            marginals: vec![1.0; g.n() * k],
            field: Vec::new(),
        };
        store.refresh_field(g, ef);
        let incoming = store.incoming_all(g, ef);
        store.marginals = store.assemble_marginals(g, ef, &incoming)?;
        Ok(store)
    }

    /// All messages uniform.
    pub fn uniform(g: &Graph, ef: &EdgeFunction) -> Result<Self> {
        Self::with_messages(g, ef, vec![1.0; g.num_directed() * ef.grid().len()])
    }

    /// Independent random positive densities per message.
    pub fn random<R: Rng + ?Sized>(g: &Graph, ef: &EdgeFunction, rng: &mut R) -> Result<Self> {
        let len = g.num_directed() * ef.grid().len();
        let messages = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
        Self::with_messages(g, ef, messages)
    }

    /// Warm start from node marginals: `eta_{u->v} = q_u` for every `v`.
    pub fn from_marginals(g: &Graph, ef: &EdgeFunction, marginals: &[f64]) -> Result<Self> {
        let k = ef.grid().len();
        if marginals.len() != g.n() * k {
            return Err(Error::Argument("marginal table has the wrong size".into()));
        }
        let mut messages = vec![0.0; g.num_directed() * k];
        for u in 0..g.n() {
            for e in g.out_edges(u) {
                messages[e * k..(e + 1) * k].copy_from_slice(&marginals[u * k..(u + 1) * k]);
            }
        }
        let mut store = Self::with_messages(g, ef, messages)?;
        store.marginals = marginals.to_vec();
        for u in 0..g.n() {
            if !normalize(store.marginal_mut(u), ef.grid().weights()) {
                return Err(Error::Argument(format!(
                    "marginal of node {u} is degenerate"
                )));
            }
        }
        store.refresh_field(g, ef);
        Ok(store)
    }

    pub fn grid_len(&self) -> usize {
        self.k
    }

    /// Message on directed edge slot `e`.
    pub fn message(&self, e: usize) -> &[f64] {
        &self.messages[e * self.k..(e + 1) * self.k]
    }

    pub fn marginal(&self, u: usize) -> &[f64] {
        &self.marginals[u * self.k..(u + 1) * self.k]
    }

    fn marginal_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.marginals[u * self.k..(u + 1) * self.k]
    }

    /// Node marginals, row-major `n x K`.
    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn messages(&self) -> &[f64] {
        &self.messages
    }

    /// `F(t_i) = sum_w d_w int q_w(y) omega(t_i, y) dy`.
    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// `nu(t_i) = (1/2m) sum_u d_u q_u(t_i)`.
    pub fn degree_weighted_marginal(&self, g: &Graph) -> Vec<f64> {
        let k = self.k;
        let two_m = g.num_directed() as f64;
        let mut nu = vec![0.0; k];
        for u in 0..g.n() {
            let d = g.degree(u) as f64;
            for (acc, q) in nu.iter_mut().zip(self.marginal(u)) {
                *acc += d * q;
            }
        }
        nu.iter_mut().for_each(|v| *v /= two_m);
        nu
    }

    fn refresh_field(&mut self, g: &Graph, ef: &EdgeFunction) {
        let two_m = g.num_directed() as f64;
        let nu = self.degree_weighted_marginal(g);
        self.field = ef
            .integrate_against(&nu)
            .into_iter()
            .map(|v| two_m * v)
            .collect();
    }

    /// `-(d_u / 2m) F(t_i)`.
    fn field_term(&self, g: &Graph, u: usize) -> Vec<f64> {
        let scale = g.degree(u) as f64 / g.num_directed() as f64;
        self.field.iter().map(|f| -scale * f).collect()
    }

    /// Incoming log-factors for every slot: entry `e` (slot `u -> w`) holds
    /// `log int eta_{w->u}(y) omega(x, y) dy`.
    fn incoming_all(&self, g: &Graph, ef: &EdgeFunction) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; self.messages.len()];
        out.par_chunks_mut(k).enumerate().for_each(|(e, slot)| {
            slot.copy_from_slice(&incoming_log(ef, self.message(g.reverse(e))));
        });
        out
    }

    fn cavity(&self, g: &Graph, u: usize, incoming: &[f64]) -> Cavity {
        let k = self.k;
        let mut cav = Cavity::new(self.field_term(g, u));
        for e in g.out_edges(u) {
            cav.add(&incoming[e * k..(e + 1) * k]);
        }
        cav
    }

    fn assemble_marginals(
        &self,
        g: &Graph,
        ef: &EdgeFunction,
        incoming: &[f64],
    ) -> Result<Vec<f64>> {
        let weights = ef.grid().weights();
        let rows: Vec<Vec<f64>> = (0..g.n())
            .into_par_iter()
            .map(|u| {
                let mut q = self.cavity(g, u, incoming).total();
                if normalize_log(&mut q, weights) {
                    Ok(q)
                } else {
                    Err(Error::DegenerateMessage { from: u, to: u })
                }
            })
            .collect::<Result<_>>()?;
        Ok(rows.concat())
    }

    /// Largest deviation of any message or marginal from unit mass.
    pub fn max_normalization_error(&self, grid: &QuadratureGrid) -> f64 {
        self.messages
            .chunks(self.k)
            .chain(self.marginals.chunks(self.k))
            .map(|v| (grid.sum(v) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// True when every stored value is finite and nonnegative.
    pub fn is_nonnegative(&self) -> bool {
        self.messages
            .iter()
            .chain(&self.marginals)
            .all(|v| v.is_finite() && *v >= 0.0)
    }

    /// The store under `x -> 1 - x`: every density reversed on the grid.
    pub fn flipped(&self, g: &Graph, ef_flipped: &EdgeFunction) -> Self {
        let rev = |buf: &[f64]| -> Vec<f64> {
            buf.chunks(self.k)
                .flat_map(|c| c.iter().rev().copied())
                .collect()
        };
        let mut s = Self {
            k: self.k,
            messages: rev(&self.messages),
            marginals: rev(&self.marginals),
            field: Vec::new(),
        };
        s.refresh_field(g, ef_flipped);
        s
    }
}

/// Recomputes `eta_{u->v}` from the store's current messages and field.
pub fn update_message(
    u: usize,
    v: usize,
    store: &BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
) -> Result<Vec<f64>> {
    if !g.has_edge(u, v) {
        return Err(Error::Argument(format!(
            "nodes {u} and {v} are not adjacent"
        )));
    }
    let mut log_eta = store.field_term(g, u);
    for e in g.out_edges(u) {
        if g.target(e) == v {
            continue;
        }
        for (acc, t) in log_eta
            .iter_mut()
            .zip(incoming_log(ef, store.message(g.reverse(e))))
        {
            *acc += t;
        }
    }
    if normalize_log(&mut log_eta, ef.grid().weights()) {
        Ok(log_eta)
    } else {
        Err(Error::DegenerateMessage { from: u, to: v })
    }
}

/// Posterior density of node `u`: the message formula with no neighbor left out.
pub fn node_marginal(
    u: usize,
    store: &BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
) -> Result<Vec<f64>> {
    let mut log_q = store.field_term(g, u);
    for e in g.out_edges(u) {
        for (acc, t) in log_q
            .iter_mut()
            .zip(incoming_log(ef, store.message(g.reverse(e))))
        {
            *acc += t;
        }
    }
    if normalize_log(&mut log_q, ef.grid().weights()) {
        Ok(log_q)
    } else {
        Err(Error::DegenerateMessage { from: u, to: u })
    }
}

/// `q_uv(x, y) ∝ eta_{u->v}(x) eta_{v->u}(y) omega(x, y)`.
pub fn pair_marginal(
    u: usize,
    v: usize,
    store: &BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
) -> Result<PairMarginal> {
    let e = g
        .directed_edge(u, v)
        .ok_or_else(|| Error::Argument(format!("nodes {u} and {v} are not adjacent")))?;
    let k = store.k;
    let w = ef.grid().weights();
    let a = store.message(e);
    let b = store.message(g.reverse(e));
    let mut table = vec![0.0; k * k];
    let mut z = 0.0;
    for i in 0..k {
        for j in 0..k {
            let val = a[i] * b[j] * ef.at(i, j);
            table[i * k + j] = val;
            z += w[i] * w[j] * val;
        }
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::DegeneratePair { u, v });
    }
    table.iter_mut().for_each(|t| *t /= z);
    Ok(PairMarginal { u, v, k, table })
}

/// Damped replacement of one message; returns its weighted-L1 change.
fn damp_into(proposal: &mut [f64], old: &[f64], damping: f64, weights: &[f64]) -> f64 {
    for i in 0..proposal.len() {
        proposal[i] = damping * proposal[i] + (1.0 - damping) * old[i];
    }
    normalize(proposal, weights);
    (0..proposal.len())
        .map(|i| weights[i] * (proposal[i] - old[i]).abs())
        .sum()
}

fn synchronous_sweep(
    store: &mut BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
    incoming: &mut Vec<f64>,
    damping: f64,
) -> Result<f64> {
    let k = store.k;
    let weights = ef.grid().weights();
    store.refresh_field(g, ef);
    let current = &*store;
    let per_node: Vec<(Vec<f64>, f64)> = (0..g.n())
        .into_par_iter()
        .map(|u| {
            let cav = current.cavity(g, u, incoming);
            let slots = g.out_edges(u);
            let mut out = Vec::with_capacity(slots.len() * k);
            let mut worst = 0.0f64;
            for e in slots {
                let mut proposal = cav.without(&incoming[e * k..(e + 1) * k]);
                if !normalize_log(&mut proposal, weights) {
                    return Err(Error::DegenerateMessage {
                        from: u,
                        to: g.target(e),
                    });
                }
                worst = worst.max(damp_into(
                    &mut proposal,
                    current.message(e),
                    damping,
                    weights,
                ));
                out.extend_from_slice(&proposal);
            }
            Ok((out, worst))
        })
        .collect::<Result<_>>()?;

    let residual = per_node.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    store.messages = per_node.into_iter().flat_map(|(m, _)| m).collect();
    *incoming = store.incoming_all(g, ef);
    store.marginals = store.assemble_marginals(g, ef, incoming)?;
    Ok(residual)
}

fn sequential_sweep(
    store: &mut BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
    incoming: &mut [f64],
    damping: f64,
) -> Result<f64> {
    let k = store.k;
    let weights = ef.grid().weights();
    let two_m = g.num_directed() as f64;
    let mut nu = store.degree_weighted_marginal(g);
    store.field = ef
        .integrate_against(&nu)
        .into_iter()
        .map(|v| two_m * v)
        .collect();
    let mut residual = 0.0f64;
    for u in 0..g.n() {
        let cav = store.cavity(g, u, incoming);
        for e in g.out_edges(u) {
            let mut proposal = cav.without(&incoming[e * k..(e + 1) * k]);
            if !normalize_log(&mut proposal, weights) {
                return Err(Error::DegenerateMessage {
                    from: u,
                    to: g.target(e),
                });
            }
            residual = residual.max(damp_into(&mut proposal, store.message(e), damping, weights));
            store.messages[e * k..(e + 1) * k].copy_from_slice(&proposal);
            let back = g.reverse(e);
            incoming[back * k..(back + 1) * k].copy_from_slice(&incoming_log(ef, &proposal));
        }
        let mut q = cav.total();
        if !normalize_log(&mut q, weights) {
            return Err(Error::DegenerateMessage { from: u, to: u });
        }
        let scale = g.degree(u) as f64 / two_m;
        for i in 0..k {
            nu[i] += scale * (q[i] - store.marginals[u * k + i]);
        }
        store.marginal_mut(u).copy_from_slice(&q);
        store.field = ef
            .integrate_against(&nu)
            .into_iter()
            .map(|v| two_m * v)
            .collect();
    }
    Ok(residual)
}

/// Iterates damped sweeps until the largest weighted-L1 message change drops
/// below the tolerance or the sweep cap is reached.
///
/// On return the field is refreshed from the last marginals and the marginals
/// are rebuilt from the final messages under that field, so they agree with
/// [`node_marginal`]. Hitting the cap is reported, not an error.
pub fn run_bp(
    store: &mut BeliefStore,
    ef: &EdgeFunction,
    g: &Graph,
    cfg: &BpConfig,
) -> Result<BpOutcome> {
    let mut incoming = store.incoming_all(g, ef);
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        residual = match cfg.schedule {
            BpSchedule::Synchronous => synchronous_sweep(store, ef, g, &mut incoming, cfg.damping)?,
            BpSchedule::Sequential => sequential_sweep(store, ef, g, &mut incoming, cfg.damping)?,
        };
        if residual < cfg.tolerance {
            converged = true;
            break;
        }
    }
    store.refresh_field(g, ef);
    store.marginals = store.assemble_marginals(g, ef, &incoming)?;
    Ok(BpOutcome {
        sweeps,
        converged,
        residual,
    })
}
