//! Shared discretization of the latent interval: a Gauss-Legendre grid on
//! `[0, 1]`, the Bernstein basis tabulated on it, and the edge function
//! `omega(x, y) = sum_jk c_jk B_j(x) B_k(y)`.
//!
//! Every function of `x` elsewhere in the crate is a length-`K` vector of
//! values at the grid nodes and every integral is a weighted grid sum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i f(t_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// `sum_i w_i f(i)` for a function of the node index.
    pub fn integrate_indexed(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * f(i)).sum()
    }

    /// Weighted sum of a tabulated function.
    pub fn sum(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `K`-point Gauss-Legendre rule mapped from `[-1, 1]` to `[0, 1]`.
///
/// Roots are found by Newton iteration from the usual cosine guesses. Only
/// the negative half is solved for; the rest is mirrored so the grid is
/// symmetric under `t -> 1 - t` up to the affine map's rounding.
pub fn gauss_legendre_grid(k: usize) -> Result<QuadratureGrid> {
    if k == 0 {
        return Err(Error::Argument(
            "quadrature needs at least one point".into(),
        ));
    }
    let mut xi = vec![0.0; k];
    let mut wi = vec![0.0; k];
    let half = k.div_ceil(2);
    for i in 0..half {
        // cos guess for the i-th largest root; negate to fill from the left
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(k, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(k, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xi[i] = -x;
        xi[k - 1 - i] = x;
        wi[i] = w;
        wi[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        xi[k / 2] = 0.0;
    }
    Ok(QuadratureGrid {
        nodes: xi.iter().map(|x| 0.5 * (1.0 + x)).collect(),
        weights: wi.iter().map(|w| 0.5 * w).collect(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein polynomial `C(N, k) x^k (1 - x)^(N - k)`, with `0^0 = 1`.
pub fn bernstein_eval(degree: usize, k: usize, x: f64) -> Result<f64> {
    if k > degree {
        return Err(Error::Argument(format!(
            "Bernstein index {k} exceeds degree {degree}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Argument(format!("{x} lies outside [0, 1]")));
    }
    Ok(bernstein_unchecked(degree, k, x))
}

fn bernstein_unchecked(degree: usize, k: usize, x: f64) -> f64 {
    binomial(degree, k) * x.powi(k as i32) * (1.0 - x).powi((degree - k) as i32)
}

/// Bernstein polynomials of one degree tabulated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinBasis {
    degree: usize,
    k: usize,
    /// `values[b * K + i] = B_b(t_i)`
    values: Vec<f64>,
}

impl BernsteinBasis {
    pub fn new(degree: usize, grid: &QuadratureGrid) -> Self {
        let k = grid.len();
        let mut values = Vec::with_capacity((degree + 1) * k);
        for b in 0..=degree {
            values.extend(
                grid.nodes()
                    .iter()
                    .map(|&t| bernstein_unchecked(degree, b, t)),
            );
        }
        Self { degree, k, values }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn size(&self) -> usize {
        self.degree + 1
    }

    /// `B_b` at every grid node.
    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.k..(b + 1) * self.k]
    }

    pub fn value(&self, b: usize, i: usize) -> f64 {
        self.values[b * self.k + i]
    }

    /// Moments `sum_i w_i f(t_i) B_b(t_i)` for every basis index.
    pub fn moments(&self, grid: &QuadratureGrid, f: &[f64]) -> Vec<f64> {
        let wf: Vec<f64> = f.iter().zip(grid.weights()).map(|(a, w)| a * w).collect();
        (0..self.size())
            .map(|b| self.row(b).iter().zip(&wf).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// `int_0^1 B_k` for each `k`, by quadrature. Requires `2K - 1 >= N`.
pub fn basis_integrals(basis: &BernsteinBasis, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    if 2 * grid.len() < basis.degree() + 1 {
        return Err(Error::Config(format!(
            "{}-point quadrature is not exact for degree-{} Bernstein polynomials",
            grid.len(),
            basis.degree()
        )));
    }
    Ok((0..basis.size()).map(|b| grid.sum(basis.row(b))).collect())
}

/// A grid with its Bernstein basis; everything the numerics share.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: QuadratureGrid,
    pub basis: BernsteinBasis,
}

impl Discretization {
    pub fn new(degree: usize, points: usize) -> Result<Arc<Self>> {
        let grid = gauss_legendre_grid(points)?;
        let basis = BernsteinBasis::new(degree, &grid);
        basis_integrals(&basis, &grid)?;
        Ok(Arc::new(Self { grid, basis }))
    }

    pub fn k(&self) -> usize {
        self.grid.len()
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    /// Reverses a grid-tabulated function, `f(t) -> f(1 - t)`.
    pub fn flip(values: &[f64]) -> Vec<f64> {
        values.iter().rev().copied().collect()
    }
}

/// Symmetric nonnegative `(N+1) x (N+1)` coefficient matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    degree: usize,
    values: Vec<f64>,
}

impl Coefficients {
    /// Validates symmetry (exact), nonnegativity and finiteness.
    pub fn new(degree: usize, values: Vec<f64>) -> Result<Self> {
        let s = degree + 1;
        if values.len() != s * s {
            return Err(Error::Argument(format!(
                "{} coefficients given for degree {degree}, expected {}",
                values.len(),
                s * s
            )));
        }
        for j in 0..s {
            for k in 0..s {
                let c = values[j * s + k];
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::Argument(format!(
                        "coefficient c[{j}][{k}] = {c} is invalid"
                    )));
                }
                if c != values[k * s + j] {
                    return Err(Error::Argument(format!(
                        "coefficients not symmetric at ({j}, {k})"
                    )));
                }
            }
        }
        Ok(Self { degree, values })
    }

    /// Every coefficient set to `value`.
    pub fn constant(degree: usize, value: f64) -> Self {
        let s = degree + 1;
        Self {
            degree,
            values: vec![value; s * s],
        }
    }

    /// Builds from any square matrix by averaging with its transpose.
    pub fn symmetrized(degree: usize, values: &[f64]) -> Result<Self> {
        let s = degree + 1;
        if values.len() != s * s {
            return Err(Error::Argument(
                "coefficient matrix has the wrong size".into(),
            ));
        }
        let mut out = vec![0.0; s * s];
        for j in 0..s {
            for k in 0..s {
                out[j * s + k] = 0.5 * (values[j * s + k] + values[k * s + j]);
            }
        }
        for j in 0..s {
            for k in 0..j {
                out[j * s + k] = out[k * s + j];
            }
        }
        Self::new(degree, out)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn size(&self) -> usize {
        self.degree + 1
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.size() + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `c'_jk = c_{N-j, N-k}`, the coefficients of `omega(1 - x, 1 - y)`.
    pub fn flipped(&self) -> Self {
        let s = self.size();
        let mut values = vec![0.0; s * s];
        for j in 0..s {
            for k in 0..s {
                values[j * s + k] = self.values[(s - 1 - j) * s + (s - 1 - k)];
            }
        }
        Self {
            degree: self.degree,
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The edge function together with its grid tabulations.
#[derive(Debug, Clone)]
pub struct EdgeFunction {
    coefficients: Coefficients,
    disc: Arc<Discretization>,
    k: usize,
    /// `omega(t_i, t_j)`, `K x K`
    grid_values: Vec<f64>,
    /// `mix[i * (N+1) + b] = sum_j B_j(t_i) c_jb`, so that
    /// `int omega(t_i, y) f(y) dy = sum_b mix[i][b] * moment_b(f)`.
    mix: Vec<f64>,
}

impl EdgeFunction {
    pub fn new(coefficients: Coefficients, disc: &Arc<Discretization>) -> Result<Self> {
        let basis = &disc.basis;
        if coefficients.degree() != basis.degree() {
            return Err(Error::Argument(format!(
                "coefficients have degree {} but the basis has degree {}",
                coefficients.degree(),
                basis.degree()
            )));
        }
        let k = disc.k();
        let s = basis.size();
        let mut mix = vec![0.0; k * s];
        for i in 0..k {
            for b in 0..s {
                mix[i * s + b] = (0..s)
                    .map(|j| basis.value(j, i) * coefficients.get(j, b))
                    .sum();
            }
        }
        let mut grid_values = vec![0.0; k * k];
        for i in 0..k {
            for l in 0..=i {
                let v: f64 = (0..s).map(|b| mix[i * s + b] * basis.value(b, l)).sum();
                grid_values[i * k + l] = v;
                grid_values[l * k + i] = v;
            }
        }
        Ok(Self {
            coefficients,
            disc: Arc::clone(disc),
            k,
            grid_values,
            mix,
        })
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn disc(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.disc.grid
    }

    /// Same coefficients re-tabulated on another discretization of equal degree.
    pub fn rebased(&self, disc: &Arc<Discretization>) -> Result<Self> {
        Self::new(self.coefficients.clone(), disc)
    }

    pub fn degree(&self) -> usize {
        self.coefficients.degree()
    }

    /// `omega(t_i, t_j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.grid_values[i * self.k + j]
    }

    /// Row-major `K x K` table of `omega` on the grid.
    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    /// Direct evaluation of the Bernstein expansion at arbitrary points.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.degree();
        let bx: Vec<f64> = (0..=n).map(|j| bernstein_unchecked(n, j, x)).collect();
        let by: Vec<f64> = (0..=n).map(|j| bernstein_unchecked(n, j, y)).collect();
        let mut acc = 0.0;
        for j in 0..=n {
            for k in 0..=n {
                acc += self.coefficients.get(j, k) * bx[j] * by[k];
            }
        }
        acc
    }

    /// `g(t_i) = int omega(t_i, y) f(y) dy` for every node, given the basis
    /// moments of `f` (see [`BernsteinBasis::moments`]).
    pub fn apply_moments(&self, moments: &[f64]) -> Vec<f64> {
        let s = moments.len();
        (0..self.k)
            .map(|i| {
                self.mix[i * s..(i + 1) * s]
                    .iter()
                    .zip(moments)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `int omega(t_i, y) f(y) dy` for a tabulated `f`.
    pub fn integrate_against(&self, f: &[f64]) -> Vec<f64> {
        self.apply_moments(&self.disc.basis.moments(&self.disc.grid, f))
    }
}
