#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn gcomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcomm"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn status(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Two disjoint complete graphs on 30 nodes each, nodes `a0..a29`, `b0..b29`.
pub fn two_cliques() -> String {
    let mut s = String::new();
    for side in ["a", "b"] {
        for u in 0..30 {
            for v in (u + 1)..30 {
                s.push_str(&format!("{side}{u} {side}{v}\n"));
            }
        }
    }
    s
}

/// Label to posterior mean, from `posterior.tsv`.
pub fn posterior_means(dir: &Path) -> Vec<(String, f64)> {
    let text = std::fs::read_to_string(dir.join("posterior.tsv")).unwrap();
    let table = gcomm_core::io::parse_posterior(&text).unwrap();
    table.labels.into_iter().zip(table.mean).collect()
}

pub fn mean_and_spread(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Optimal 1-D 3-means by exhaustive search over the two cut points of the
/// sorted values.
pub fn three_means(xs: &[f64]) -> Vec<usize> {
    let n = xs.len();
    assert!(n >= 3);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let (mut s1, mut s2) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for (r, &i) in order.iter().enumerate() {
        s1[r + 1] = s1[r] + xs[i];
        s2[r + 1] = s2[r] + xs[i] * xs[i];
    }
    let cost = |a: usize, b: usize| {
        let s = s1[b] - s1[a];
        s2[b] - s2[a] - s * s / (b - a) as f64
    };
    let mut best = (f64::INFINITY, 1, 2);
    for a in 1..n - 1 {
        for b in (a + 1)..n {
            let c = cost(0, a) + cost(a, b) + cost(b, n);
            if c < best.0 {
                best = (c, a, b);
            }
        }
    }
    let mut labels = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        labels[i] = usize::from(r >= best.1) + usize::from(r >= best.2);
    }
    labels
}

/// Fraction of nodes whose cluster matches the planted group under the best
/// relabeling of the three clusters.
pub fn best_agreement(clusters: &[usize], truth: &[usize]) -> f64 {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let hits = PERMS
        .iter()
        .map(|p| {
            clusters
                .iter()
                .zip(truth)
                .filter(|(c, t)| p[**c] == **t)
                .count()
        })
        .max()
        .unwrap();
    hits as f64 / truth.len() as f64
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        // ties share their average rank
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            r[idx] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, _) = mean_and_spread(&ra);
    let (mb, _) = mean_and_spread(&rb);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
