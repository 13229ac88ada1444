//! Exact posteriors on tiny graphs by brute force over the quadrature grid.
//!
//! Every assignment of grid nodes to graph nodes is visited and weighted by
//! the product measure `prod_u w_{i_u}` times the model's joint weight. This is
//! the reference the belief-propagation engine is tested against.
//!
//! Three joint weightings are supported:
//!
//! * [`JointModel::Poisson`]: every pair interacts, edges with
//!   `d_u d_v omega / 2m` and non-edges with `exp(-d_u d_v omega / 2m)`;
//! * [`JointModel::Bernoulli`]: the exact `p^a (1 - p)^(1 - a)` form;
//! * [`JointModel::Field`]: the tree-factored weighting BP solves exactly,
//!   non-edges replaced by the mean field `exp(-d_u int nu(y) omega(x, y) dy)`.

use crate::basis::EdgeFunction;
use crate::error::{Error, Result};
use crate::graph::{edge_probability, Graph};

#[derive(Debug, Clone, PartialEq)]
pub enum JointModel {
    Poisson,
    Bernoulli,
    Field {
        /// degree-weighted mean marginal on the grid
        nu: Vec<f64>,
        /// an edge whose factor is left out, for cavity computations
        skip_edge: Option<(usize, usize)>,
    },
}

/// Exact grid-measure marginals.
#[derive(Debug, Clone)]
pub struct OracleMarginals {
    k: usize,
    /// `n x K` densities
    pub node: Vec<f64>,
    /// one `K x K` density per entry of `Graph::edges()`, oriented `(u, v)` with `u < v`
    pub pairs: Vec<Vec<f64>>,
    pub log_normalizer: f64,
}

impl OracleMarginals {
    pub fn node(&self, u: usize) -> &[f64] {
        &self.node[u * self.k..(u + 1) * self.k]
    }

    /// Pair density for an edge, transposed if asked in the other orientation.
    pub fn pair(&self, g: &Graph, u: usize, v: usize) -> Option<Vec<f64>> {
        let k = self.k;
        let idx = g.edges().iter().position(|&e| e == (u.min(v), u.max(v)))?;
        let t = &self.pairs[idx];
        if u < v {
            Some(t.clone())
        } else {
            let mut out = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    out[j * k + i] = t[i * k + j];
                }
            }
            Some(out)
        }
    }

    /// The fit objective evaluated from these marginals, written as a plain
    /// double loop over ordered node pairs.
    pub fn objective(&self, g: &Graph, ef: &EdgeFunction) -> f64 {
        let k = self.k;
        let w = ef.grid().weights();
        let two_m = 2.0 * g.m() as f64;
        let mut total = 0.0;
        for u in 0..g.n() {
            for v in 0..g.n() {
                if u == v {
                    continue;
                }
                if let Some(t) = self.pair(g, u, v) {
                    for i in 0..k {
                        for j in 0..k {
                            if t[i * k + j] > 0.0 {
                                total += w[i] * w[j] * t[i * k + j] * ef.at(i, j).ln();
                            }
                        }
                    }
                }
                let scale = g.degree(u) as f64 * g.degree(v) as f64 / two_m;
                let (qu, qv) = (self.node(u), self.node(v));
                for i in 0..k {
                    for j in 0..k {
                        total -= scale * w[i] * w[j] * qu[i] * qv[j] * ef.at(i, j);
                    }
                }
            }
        }
        total
    }

    /// `nu(t_i) = (1/2m) sum_u d_u q_u(t_i)`.
    pub fn degree_weighted_marginal(&self, g: &Graph) -> Vec<f64> {
        let two_m = 2.0 * g.m() as f64;
        (0..self.k)
            .map(|i| {
                (0..g.n())
                    .map(|u| g.degree(u) as f64 * self.node(u)[i])
                    .sum::<f64>()
                    / two_m
            })
            .collect()
    }
}

fn check_size(n: usize, k: usize) -> Result<()> {
    let ok = match n {
        0..=6 => k <= 16,
        7 | 8 => k <= 8,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::OracleSize(format!(
            "enumerating {k}^{n} assignments is outside the supported range"
        )))
    }
}

/// Per-node log potentials, `n x K`, excluding the grid weights.
fn node_potentials(g: &Graph, ef: &EdgeFunction, model: &JointModel) -> Vec<f64> {
    let k = ef.grid().len();
    match model {
        JointModel::Field { nu, .. } => {
            let h = ef.integrate_against(nu);
            (0..g.n())
                .flat_map(|u| {
                    let d = g.degree(u) as f64;
                    h.iter().map(move |hv| -d * hv).collect::<Vec<_>>()
                })
                .collect()
        }
        _ => vec![0.0; g.n() * k],
    }
}

/// Interacting pairs `(u, v)`, `u < v`, with their log factor tables.
fn pair_factors(g: &Graph, ef: &EdgeFunction, model: &JointModel) -> Vec<(usize, usize, Vec<f64>)> {
    let k = ef.grid().len();
    let two_m = 2.0 * g.m() as f64;
    let table = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..k * k).map(|idx| f(ef.at(idx / k, idx % k))).collect()
    };
    let mut out = Vec::new();
    match model {
        JointModel::Field { skip_edge, .. } => {
            let skip = skip_edge.map(|(a, b)| (a.min(b), a.max(b)));
            for &(u, v) in g.edges() {
                if Some((u, v)) != skip {
                    out.push((u, v, table(&|w: f64| w.ln())));
                }
            }
        }
        JointModel::Poisson => {
            for u in 0..g.n() {
                for v in (u + 1)..g.n() {
                    let scale = g.degree(u) as f64 * g.degree(v) as f64 / two_m;
                    let t = if g.has_edge(u, v) {
                        table(&|w: f64| (scale * w).ln())
                    } else {
                        table(&|w: f64| -scale * w)
                    };
                    out.push((u, v, t));
                }
            }
        }
        JointModel::Bernoulli => {
            for u in 0..g.n() {
                for v in (u + 1)..g.n() {
                    let (du, dv) = (g.degree(u), g.degree(v));
                    let t = if g.has_edge(u, v) {
                        table(&|w: f64| edge_probability(du, dv, g.m(), w).ln())
                    } else {
                        table(&|w: f64| (1.0 - edge_probability(du, dv, g.m(), w)).ln())
                    };
                    out.push((u, v, t));
                }
            }
        }
    }
    out
}

struct Enumerator<'a> {
    k: usize,
    n: usize,
    log_w: Vec<f64>,
    node_pot: &'a [f64],
    /// for each node, the factors whose later endpoint it is: (earlier node, table)
    closing: Vec<Vec<(usize, &'a [f64])>>,
    edges: &'a [(usize, usize)],
    shift: f64,
    assignment: Vec<usize>,
    node_acc: Vec<f64>,
    pair_acc: Vec<Vec<f64>>,
    total: f64,
}

impl Enumerator<'_> {
    fn descend(&mut self, depth: usize, partial: f64) {
        if depth == self.n {
            let p = (partial - self.shift).exp();
            if p == 0.0 {
                return;
            }
            self.total += p;
            for u in 0..self.n {
                self.node_acc[u * self.k + self.assignment[u]] += p;
            }
            for (idx, &(u, v)) in self.edges.iter().enumerate() {
                self.pair_acc[idx][self.assignment[u] * self.k + self.assignment[v]] += p;
            }
            return;
        }
        for i in 0..self.k {
            let mut lw = partial + self.log_w[i] + self.node_pot[depth * self.k + i];
            for &(earlier, table) in &self.closing[depth] {
                lw += table[self.assignment[earlier] * self.k + i];
            }
            if lw == f64::NEG_INFINITY {
                continue;
            }
            self.assignment[depth] = i;
            self.descend(depth + 1, lw);
        }
    }
}

/// Marginals by direct enumeration of all `K^n` grid assignments.
pub fn oracle_marginals(
    g: &Graph,
    ef: &EdgeFunction,
    model: &JointModel,
) -> Result<OracleMarginals> {
    let grid = ef.grid();
    let (n, k) = (g.n(), grid.len());
    check_size(n, k)?;
    let node_pot = node_potentials(g, ef, model);
    let factors = pair_factors(g, ef, model);
    let log_w: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();

    let max_of = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut shift = 0.0;
    for u in 0..n {
        let row: Vec<f64> = (0..k).map(|i| log_w[i] + node_pot[u * k + i]).collect();
        shift += max_of(&row);
    }
    for (_, _, t) in &factors {
        shift += max_of(t);
    }
    if !shift.is_finite() {
        return Err(Error::Invariant("joint weight vanishes identically".into()));
    }

    let mut closing: Vec<Vec<(usize, &[f64])>> = vec![Vec::new(); n];
    for (u, v, t) in &factors {
        closing[*v].push((*u, t.as_slice()));
    }
    let mut en = Enumerator {
        k,
        n,
        log_w,
        node_pot: &node_pot,
        closing,
        edges: g.edges(),
        shift,
        assignment: vec![0; n],
        node_acc: vec![0.0; n * k],
        pair_acc: vec![vec![0.0; k * k]; g.m()],
        total: 0.0,
    };
    en.descend(0, 0.0);
    if !(en.total > 0.0) {
        return Err(Error::Invariant("joint normalizer is zero".into()));
    }
    let w = grid.weights();
    let z = en.total;
    let node = en
        .node_acc
        .iter()
        .enumerate()
        .map(|(idx, a)| a / (z * w[idx % k]))
        .collect();
    let pairs = en
        .pair_acc
        .into_iter()
        .map(|t| {
            t.iter()
                .enumerate()
                .map(|(idx, a)| a / (z * w[idx / k] * w[idx % k]))
                .collect()
        })
        .collect();
    Ok(OracleMarginals {
        k,
        node,
        pairs,
        log_normalizer: z.ln() + shift,
    })
}

/// Marginals of the [`JointModel::Field`] weighting on a forest by rooted
/// sum-product elimination. No size limit.
pub fn eliminate_marginals(
    g: &Graph,
    ef: &EdgeFunction,
    model: &JointModel,
) -> Result<OracleMarginals> {
    let JointModel::Field { skip_edge, .. } = model else {
        return Err(Error::Argument(
            "elimination supports only the field weighting".into(),
        ));
    };
    let grid = ef.grid();
    let (n, k) = (g.n(), grid.len());
    let w = grid.weights();
    let skip = skip_edge.map(|(a, b)| (a.min(b), a.max(b)));
    let kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|e| Some(*e) != skip)
        .collect();
    let forest = Graph::from_edges(n, &kept)?;
    if !forest.is_forest() {
        return Err(Error::Argument("elimination requires a forest".into()));
    }
    let pot = node_potentials(g, ef, model);
    // local weight including the quadrature weight
    let psi: Vec<f64> = (0..n * k).map(|idx| w[idx % k] * pot[idx].exp()).collect();

    // BFS order from each component root
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut component = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    for r in 0..n {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let start = order.len();
        order.push(r);
        let mut head = start;
        while head < order.len() {
            let u = order[head];
            component[u] = r;
            head += 1;
            for &v in forest.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = u;
                    order.push(v);
                }
            }
        }
    }

    // up[v](x_parent) = sum_x psi_v(x) prod_{children c} up[c](x) omega(x, x_parent)
    let mut up = vec![vec![1.0; k]; n];
    let mut below = vec![vec![1.0; k]; n]; // psi_v * prod children up
    let mut log_scale = 0.0;
    for &v in order.iter().rev() {
        let mut b: Vec<f64> = psi[v * k..(v + 1) * k].to_vec();
        for &c in forest.neighbors(v) {
            if parent[c] == v {
                for i in 0..k {
                    b[i] *= up[c][i];
                }
            }
        }
        if parent[v] != usize::MAX {
            let mut msg: Vec<f64> = (0..k)
                .map(|xp| (0..k).map(|x| b[x] * ef.at(x, xp)).sum())
                .collect();
            let s: f64 = msg.iter().sum();
            msg.iter_mut().for_each(|m| *m /= s);
            log_scale += s.ln();
            up[v] = msg;
        } else {
            let s: f64 = b.iter().sum();
            log_scale += s.ln();
        }
        below[v] = b;
    }

    // down[v](x_v): message from the parent side into v
    let mut down = vec![vec![1.0; k]; n];
    for &v in &order {
        let p = parent[v];
        if p == usize::MAX {
            continue;
        }
        let mut above: Vec<f64> = (0..k).map(|x| psi[p * k + x] * down[p][x]).collect();
        for &c in forest.neighbors(p) {
            if parent[c] == p && c != v {
                for x in 0..k {
                    above[x] *= up[c][x];
                }
            }
        }
        let mut msg: Vec<f64> = (0..k)
            .map(|xv| (0..k).map(|x| above[x] * ef.at(x, xv)).sum())
            .collect();
        let s: f64 = msg.iter().sum();
        msg.iter_mut().for_each(|m| *m /= s);
        down[v] = msg;
    }

    let mut node = vec![0.0; n * k];
    for u in 0..n {
        let mut q: Vec<f64> = (0..k).map(|x| below[u][x] * down[u][x]).collect();
        let s: f64 = q.iter().sum();
        for x in 0..k {
            q[x] /= s * w[x];
        }
        node[u * k..(u + 1) * k].copy_from_slice(&q);
    }

    let mut pairs = Vec::with_capacity(g.m());
    for &(a, b) in g.edges() {
        let mut t = vec![0.0; k * k];
        if Some((a, b)) == skip {
            if component[a] == component[b] {
                return Err(Error::Argument(
                    "skipped edge must separate its endpoints".into(),
                ));
            }
            for i in 0..k {
                for j in 0..k {
                    t[i * k + j] = node[a * k + i] * node[b * k + j];
                }
            }
            pairs.push(t);
            continue;
        }
        let (p, c) = if parent[b] == a { (a, b) } else { (b, a) };
        let mut above: Vec<f64> = (0..k).map(|x| psi[p * k + x] * down[p][x]).collect();
        for &o in forest.neighbors(p) {
            if parent[o] == p && o != c {
                for x in 0..k {
                    above[x] *= up[o][x];
                }
            }
        }
        let mut z = 0.0;
        for xp in 0..k {
            for xc in 0..k {
                let v = above[xp] * ef.at(xp, xc) * below[c][xc];
                let (i, j) = if p == a { (xp, xc) } else { (xc, xp) };
                t[i * k + j] = v;
                z += v;
            }
        }
        for i in 0..k {
            for j in 0..k {
                t[i * k + j] /= z * w[i] * w[j];
            }
        }
        pairs.push(t);
    }
    Ok(OracleMarginals {
        k,
        node,
        pairs,
        log_normalizer: log_scale,
    })
}

/// Solves for the field weighting whose `nu` is reproduced by its own exact
/// marginals, by damped fixed-point iteration with tree elimination.
///
/// Returns the self-consistent `nu` together with the marginals it induces.
pub fn self_consistent_field(
    g: &Graph,
    ef: &EdgeFunction,
    tolerance: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, OracleMarginals)> {
    let k = ef.grid().len();
    let mut nu = vec![1.0; k];
    for _ in 0..max_iter {
        let model = JointModel::Field {
            nu: nu.clone(),
            skip_edge: None,
        };
        let marg = eliminate_marginals(g, ef, &model)?;
        let next = marg.degree_weighted_marginal(g);
        let change = next
            .iter()
            .zip(&nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < tolerance {
            return Ok((next, marg));
        }
        nu = nu
            .iter()
            .zip(&next)
            .map(|(a, b)| 0.5 * a + 0.5 * b)
            .collect();
    }
    Err(Error::Invariant(
        "self-consistent field iteration did not converge".into(),
    ))
}
