//! Synthetic networks: the stochastic block model and the degree-corrected
//! latent-position model itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::EdgeFunction;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Above this many nodes the block model switches to geometric skipping.
pub const SKIP_SAMPLER_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub group_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
}

impl SbmParams {
    /// Equal groups with `p_in = c_in / n`, `p_out = c_out / n`.
    pub fn planted(n: usize, groups: usize, c_in: f64, c_out: f64) -> Result<Self> {
        if groups == 0 || n < groups {
            return Err(Error::Argument(format!(
                "cannot split {n} nodes into {groups} groups"
            )));
        }
        let base = n / groups;
        let extra = n % groups;
        let group_sizes = (0..groups).map(|r| base + usize::from(r < extra)).collect();
        let params = Self {
            group_sizes,
            p_in: c_in / n as f64,
            p_out: c_out / n as f64,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn n(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::Argument(
                "every group needs at least one node".into(),
            ));
        }
        for p in [self.p_in, self.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A sampled graph with its planted structure, indexed like `graph`.
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub graph: Graph,
    pub x_true: Vec<f64>,
    pub group_labels: Option<Vec<usize>>,
    /// Nodes with no edges, removed so the graph is an edge list.
    pub dropped_isolated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbmSampler {
    PairLoop,
    GeometricSkip,
}

/// Draws from the block model; the sampler is chosen by size.
pub fn sample_sbm(params: &SbmParams, seed: u64) -> Result<LatentSample> {
    let sampler = if params.n() > SKIP_SAMPLER_THRESHOLD {
        SbmSampler::GeometricSkip
    } else {
        SbmSampler::PairLoop
    };
    sample_sbm_with(params, seed, sampler)
}

/// Draws from the block model with an explicit pair sampler.
///
/// Nodes are placed in groups in order. Each node's planted position is
/// uniform on its group's slice of `[0, 1]` (slice widths proportional to
/// group size), which is the latent-position form of the same model.
pub fn sample_sbm_with(params: &SbmParams, seed: u64, sampler: SbmSampler) -> Result<LatentSample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n();
    let mut groups = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(params.group_sizes.len());
    for (r, &size) in params.group_sizes.iter().enumerate() {
        starts.push(groups.len());
        groups.extend(std::iter::repeat_n(r, size));
    }
    let x: Vec<f64> = (0..n)
        .map(|u| {
            let r = groups[u];
            let lo = starts[r] as f64 / n as f64;
            lo + params.group_sizes[r] as f64 / n as f64 * rng.random::<f64>()
        })
        .collect();

    let mut edges = Vec::new();
    match sampler {
        SbmSampler::PairLoop => {
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if groups[u] == groups[v] {
                        params.p_in
                    } else {
                        params.p_out
                    };
                    if rng.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
        }
        SbmSampler::GeometricSkip => {
            let sizes = &params.group_sizes;
            for r in 0..sizes.len() {
                let s = sizes[r];
                let total = s * (s - 1) / 2;
                let mut row = 0;
                let mut row_start = 0;
                for idx in skip_indices(total, params.p_in, &mut rng) {
                    while idx >= row_start + (s - 1 - row) {
                        row_start += s - 1 - row;
                        row += 1;
                    }
                    let col = row + 1 + (idx - row_start);
                    edges.push((starts[r] + row, starts[r] + col));
                }
                for t in (r + 1)..sizes.len() {
                    for idx in skip_indices(s * sizes[t], params.p_out, &mut rng) {
                        edges.push((starts[r] + idx / sizes[t], starts[t] + idx % sizes[t]));
                    }
                }
            }
        }
    }
    compact(n, edges, x, Some(groups))
}

/// Indices in `0..total` selected independently with probability `p`.
fn skip_indices<R: Rng>(total: usize, p: f64, rng: &mut R) -> Vec<usize> {
    if p <= 0.0 || total == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..total).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut idx: f64 = -1.0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        idx += 1.0 + (u.ln() / log_q).floor();
        if idx >= total as f64 {
            return out;
        }
        out.push(idx as usize);
    }
}

/// Draws positions uniformly and links each pair with probability
/// `min(1, d_u d_v omega(x_u, x_v) / 2m)`, with `d` the target degrees and
/// `2m` their sum.
pub fn sample_latent(target_degrees: &[f64], ef: &EdgeFunction, seed: u64) -> Result<LatentSample> {
    let n = target_degrees.len();
    if target_degrees.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Argument(
            "target degrees must be finite and nonnegative".into(),
        ));
    }
    let two_m: f64 = target_degrees.iter().sum();
    if two_m < 2.0 {
        return Err(Error::Argument(
            "target degrees must sum to at least 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = (target_degrees[u] * target_degrees[v] * ef.eval(x[u], x[v]) / two_m).min(1.0);
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    compact(n, edges, x, None)
}

/// A uniformly random labelled tree on `n >= 2` nodes, decoded from a random
/// Pruefer sequence.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Argument("a tree needs at least two nodes".into()));
    }
    let code: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &c in &code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &c in &code {
        let leaf = (0..n)
            .find(|&v| degree[v] == 1)
            .expect("a leaf always remains");
        edges.push((leaf, c));
        degree[leaf] -= 1;
        degree[c] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    Graph::from_edges(n, &edges)
}

/// Drops isolated nodes and renumbers the rest in order; labels keep the
/// original indices.
fn compact(
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Vec<f64>,
    groups: Option<Vec<usize>>,
) -> Result<LatentSample> {
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let mut touched = vec![false; n];
    for &(u, v) in &edges {
        touched[u] = true;
        touched[v] = true;
    }
    let mut new_index = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for u in 0..n {
        if touched[u] {
            new_index[u] = kept.len();
            kept.push(u);
        }
    }
    let mapped: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(u, v)| (new_index[u], new_index[v]))
        .collect();
    let graph = Graph::from_edges(kept.len(), &mapped)?
        .with_labels(kept.iter().map(|u| u.to_string()).collect())?;
    Ok(LatentSample {
        graph,
        x_true: kept.iter().map(|&u| x[u]).collect(),
        group_labels: groups.map(|g| kept.iter().map(|&u| g[u]).collect()),
        dropped_isolated: n - kept.len(),
    })
}
