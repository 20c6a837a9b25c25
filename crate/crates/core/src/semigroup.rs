//! Dense discretization of `L = -Δ + V`, its eigendecomposition, and the heat
//! and Poisson semigroups built from it by functional calculus.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{dist2, Grid, GridSpec};
use crate::quad::{dt_over_t_weights, log_space};

/// Default cap on the number of unknowns of a dense operator (20³).
pub const DEFAULT_NODE_CAP: usize = 8000;
/// Default node count of the subordination quadrature.
pub const DEFAULT_SUBORDINATION_NODES: usize = 96;
/// The subordination window is `[t² * LO, t² * HI]`.
pub const SUBORDINATION_WINDOW: (f64, f64) = (1e-4, 1e4);

/// `-Δ_h + diag(V)` on every grid node, with zero Dirichlet data one step
/// outside the box.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    grid: GridSpec,
    matrix: Mat<f64>,
}

impl OperatorMatrix {
    pub fn assemble(grid: &Grid, v: &[f64], node_cap: usize) -> Result<Self> {
        let n = grid.node_count();
        if n > node_cap {
            return Err(Error::Resource(format!("{n} nodes exceeds the dense operator cap of {node_cap}")));
        }
        if v.len() != n {
            return Err(Error::Argument(format!("potential has {} values for {n} nodes", v.len())));
        }
        let d = grid.dim();
        let ppa = grid.points_per_axis();
        let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
        let mut matrix = Mat::<f64>::zeros(n, n);
        let mut stride = 1usize;
        let mut strides = vec![0usize; d];
        for axis in (0..d).rev() {
            strides[axis] = stride;
            stride *= ppa;
        }
        for i in 0..n {
            matrix[(i, i)] = 2.0 * d as f64 * inv_h2 + v[i];
            let multi = grid.multi_index(i);
            for axis in 0..d {
                if multi[axis] + 1 < ppa {
                    let j = i + strides[axis];
                    matrix[(i, j)] = -inv_h2;
                    matrix[(j, i)] = -inv_h2;
                }
            }
        }
        Ok(Self { grid: grid.spec(), matrix })
    }

    pub fn grid_spec(&self) -> &GridSpec {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn symmetry_defect(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        worst
    }

    /// Smallest Gershgorin lower bound `a_ii - Σ_{j≠i} |a_ij|`.
    pub fn gershgorin_floor(&self) -> f64 {
        let n = self.size();
        (0..n)
            .map(|i| {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| self.matrix[(i, j)].abs()).sum();
                self.matrix[(i, i)] - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Eigenpairs of an [`OperatorMatrix`]. Eigenfunctions are normalized in the
/// `h^d`-weighted inner product, so kernels are `Φ g(Λ) Φ^T`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    grid: GridSpec,
    cell_volume: f64,
    eigenvalues: Vec<f64>,
    // Euclidean-orthonormal columns; φ_j = u_j / sqrt(h^d).
    vectors: Mat<f64>,
}

pub fn spectral_decompose(op: &OperatorMatrix) -> Result<SpectralDecomposition> {
    let prev = faer::get_global_parallelism();
    faer::set_global_parallelism(Par::Seq);
    let evd = op.matrix.self_adjoint_eigen(Side::Lower);
    faer::set_global_parallelism(prev);
    let evd = evd.map_err(|e| Error::Numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let eigenvalues: Vec<f64> = (0..s.nrows()).map(|j| s[j]).collect();
    if eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("eigensolver returned non-finite eigenvalues".into()));
    }
    let grid = Grid::from_spec(&op.grid)?;
    Ok(SpectralDecomposition {
        grid: op.grid.clone(),
        cell_volume: grid.cell_volume(),
        eigenvalues,
        vectors: evd.U().to_owned(),
    })
}

impl SpectralDecomposition {
    pub fn grid_spec(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Euclidean-orthonormal eigenvectors as columns.
    pub fn unit_vectors(&self) -> MatRef<'_, f64> {
        self.vectors.as_ref()
    }

    pub fn eigenfunction(&self, j: usize) -> Vec<f64> {
        let s = self.cell_volume.sqrt().recip();
        (0..self.len()).map(|x| self.vectors[(x, j)] * s).collect()
    }

    /// `c_j = ∫ f φ_j`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let s = self.cell_volume.sqrt();
        (0..self.len())
            .into_par_iter()
            .map(|j| {
                let col = self.vectors.col(j);
                let mut acc = 0.0;
                for (x, fx) in f.iter().enumerate() {
                    acc += col[x] * fx;
                }
                acc * s
            })
            .collect()
    }

    /// `Σ_j c_j φ_j`.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.len());
        let s = self.cell_volume.sqrt().recip();
        (0..self.len())
            .into_par_iter()
            .map(|x| {
                let mut acc = 0.0;
                for (j, cj) in c.iter().enumerate() {
                    acc += self.vectors[(x, j)] * cj;
                }
                acc * s
            })
            .collect()
    }

    /// `m(L) f` for a multiplier sampled at the eigenvalues.
    pub fn apply_multiplier(&self, m: &[f64], f: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = self.coefficients(f).iter().zip(m).map(|(c, m)| c * m).collect();
        self.synthesize(&c)
    }

    /// Kernel entry of `m(L)` with respect to `dy`.
    pub fn kernel_entry(&self, m: &[f64], x: usize, y: usize) -> f64 {
        let mut acc = 0.0;
        for (j, mj) in m.iter().enumerate() {
            acc += self.vectors[(x, j)] * mj * self.vectors[(y, j)];
        }
        acc / self.cell_volume
    }

    /// Kernel of `m(L)` restricted to `rows × cols`.
    pub fn kernel_block(&self, m: &[f64], rows: &[usize], cols: &[usize]) -> Mat<f64> {
        let n = self.len();
        assert_eq!(m.len(), n);
        let inv = self.cell_volume.recip();
        let a = Mat::<f64>::from_fn(rows.len(), n, |i, j| self.vectors[(rows[i], j)] * m[j] * inv);
        let b = Mat::<f64>::from_fn(n, cols.len(), |j, k| self.vectors[(cols[k], j)]);
        let mut out = Mat::<f64>::zeros(rows.len(), cols.len());
        matmul(out.as_mut(), Accum::Replace, a.as_ref(), b.as_ref(), 1.0, Par::Seq);
        out
    }

    pub fn kernel(&self, m: &[f64]) -> Mat<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.kernel_block(m, &all, &all)
    }

    /// Relative Frobenius defect `‖A - UΛU^T‖ / ‖A‖`.
    pub fn reconstruction_error(&self, op: &OperatorMatrix) -> f64 {
        let n = self.len();
        let scaled = Mat::<f64>::from_fn(n, n, |i, j| self.vectors[(i, j)] * self.eigenvalues[j]);
        let mut rec = Mat::<f64>::zeros(n, n);
        matmul(rec.as_mut(), Accum::Replace, scaled.as_ref(), self.vectors.transpose(), 1.0, Par::Seq);
        let diff = &rec - &op.matrix;
        diff.norm_l2() / op.matrix.norm_l2()
    }

    /// `max |⟨φ_i, φ_j⟩ - δ_ij|`.
    pub fn gram_defect(&self) -> f64 {
        let n = self.len();
        let mut gram = Mat::<f64>::zeros(n, n);
        matmul(gram.as_mut(), Accum::Replace, self.vectors.transpose(), self.vectors.as_ref(), 1.0, Par::Seq);
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Argument(format!("time must be positive, got {t}")));
    }
    Ok(())
}

pub fn heat_multiplier(eigenvalues: &[f64], t: f64) -> Vec<f64> {
    eigenvalues.iter().map(|l| (-t * l).exp()).collect()
}

pub fn poisson_multiplier(eigenvalues: &[f64], t: f64) -> Vec<f64> {
    eigenvalues.iter().map(|l| (-t * l.max(0.0).sqrt()).exp()).collect()
}

/// `∂_t e^{-t√λ} = -√λ e^{-t√λ}`.
pub fn poisson_tderiv_multiplier(eigenvalues: &[f64], t: f64) -> Vec<f64> {
    eigenvalues
        .iter()
        .map(|l| {
            let r = l.max(0.0).sqrt();
            -r * (-t * r).exp()
        })
        .collect()
}

/// Subordination density `t/(2√π) e^{-t²/4u} u^{-3/2}`.
pub fn subordination_density(t: f64, u: f64) -> f64 {
    t / (2.0 * std::f64::consts::PI.sqrt()) * (-t * t / (4.0 * u)).exp() * u.powf(-1.5)
}

/// Log-spaced trapezoid rule for `∫ w_t(u) F(u) du` over the window
/// `[t² 10⁻⁴, t² 10⁴]`, with the first Euler-Maclaurin end correction.
#[derive(Clone, Debug)]
pub struct Subordination {
    t: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    step: f64,
}

impl Subordination {
    pub fn new(t: f64, n_quad: usize) -> Result<Self> {
        check_time(t)?;
        if n_quad < 32 {
            return Err(Error::Argument(format!("subordination needs at least 32 nodes, got {n_quad}")));
        }
        let (lo, hi) = SUBORDINATION_WINDOW;
        let nodes = log_space(t * t * lo, t * t * hi, n_quad);
        let step = (hi / lo).ln() / (n_quad - 1) as f64;
        let weights = dt_over_t_weights(&nodes)
            .into_iter()
            .zip(&nodes)
            .map(|(w, &u)| w * u * subordination_density(t, u))
            .collect();
        Ok(Self { t, nodes, weights, step })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    // d/ds of w(u) u e^{-uλ} at u = e^s, divided by the integrand itself.
    fn log_slope(&self, u: f64, lambda: f64) -> f64 {
        self.t * self.t / (4.0 * u) - 0.5 - u * lambda
    }

    fn end_correction(&self, lambda: f64) -> f64 {
        let (a, b) = (self.nodes[0], *self.nodes.last().unwrap());
        let g = |u: f64| subordination_density(self.t, u) * u * (-u * lambda).exp() * self.log_slope(u, lambda);
        -self.step * self.step / 12.0 * (g(b) - g(a))
    }

    /// Quadrature of `∫ w_t(u) e^{-uλ} du` at each eigenvalue.
    pub fn multiplier(&self, eigenvalues: &[f64]) -> Vec<f64> {
        eigenvalues
            .iter()
            .map(|&l| {
                let l = l.max(0.0);
                let mut acc = 0.0;
                for (u, w) in self.nodes.iter().zip(&self.weights) {
                    acc += w * (-u * l).exp();
                }
                acc + self.end_correction(l)
            })
            .collect()
    }

    /// Total mass of the density: window quadrature plus the closed-form mass
    /// outside the window (`∫_0^a w = erfc(t/2√a)`, `∫_b^∞ w = erf(t/2√b)`).
    pub fn weight_mass(&self) -> f64 {
        let window: f64 = self.weights.iter().sum::<f64>() + self.end_correction(0.0);
        let (a, b) = (self.nodes[0], *self.nodes.last().unwrap());
        window + erfc(self.t / (2.0 * a.sqrt())) + erf(self.t / (2.0 * b.sqrt()))
    }
}

/// Relative sup-over-spectrum distance, equal to the relative operator-norm
/// distance of the two functions of `L`.
pub fn multiplier_mismatch(approx: &[f64], exact: &[f64]) -> f64 {
    let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = approx.iter().zip(exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "heat-L")]
    HeatL,
    #[serde(rename = "heat-delta-closed-form")]
    HeatDeltaClosedForm,
    #[serde(rename = "poisson-L")]
    PoissonL,
    #[serde(rename = "poisson-delta")]
    PoissonDelta,
    #[serde(rename = "poisson-L-tderiv")]
    PoissonTDerivative,
}

/// Kernel values `K[x, y]` with respect to `dy`, so `(Kf)(x) = Σ_y K[x,y] f(y) h^d`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub kind: KernelKind,
    pub t: f64,
    pub grid: GridSpec,
    matrix: Mat<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: KernelKind,
    t: f64,
    grid: GridSpec,
    rows: usize,
    cols: usize,
    layout: String,
}

impl KernelMatrix {
    pub fn new(kind: KernelKind, t: f64, grid: GridSpec, matrix: Mat<f64>) -> Self {
        Self { kind, t, grid, matrix }
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix[(x, y)]
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        (0..self.matrix.ncols()).map(|y| self.matrix[(x, y)]).collect()
    }

    pub fn row_mass(&self, x: usize) -> f64 {
        let h_d = Grid::from_spec(&self.grid).map(|g| g.cell_volume()).unwrap_or(f64::NAN);
        self.row(x).iter().sum::<f64>() * h_d
    }

    pub fn min_entry(&self) -> f64 {
        let mut m = f64::INFINITY;
        for j in 0..self.matrix.ncols() {
            for i in 0..self.matrix.nrows() {
                m = m.min(self.matrix[(i, j)]);
            }
        }
        m
    }

    /// Composition `(K ∘ other)[x,z] = Σ_y K[x,y] other[y,z] h^d`.
    pub fn compose(&self, other: &KernelMatrix) -> Result<Mat<f64>> {
        let h_d = Grid::from_spec(&self.grid)?.cell_volume();
        let mut out = Mat::<f64>::zeros(self.matrix.nrows(), other.matrix.ncols());
        matmul(out.as_mut(), Accum::Replace, self.matrix.as_ref(), other.matrix.as_ref(), h_d, Par::Seq);
        Ok(out)
    }

    /// Writes `path` (row-major little-endian f64) and `path.json`.
    pub fn write_binary(&self, path: &Path) -> Result<PathBuf> {
        let (rows, cols) = (self.matrix.nrows(), self.matrix.ncols());
        let mut out = BufWriter::new(File::create(path)?);
        for i in 0..rows {
            for j in 0..cols {
                out.write_all(&self.matrix[(i, j)].to_le_bytes())?;
            }
        }
        out.flush()?;
        let mut sidecar_path = path.as_os_str().to_owned();
        sidecar_path.push(".json");
        let sidecar_path = PathBuf::from(sidecar_path);
        let sidecar = Sidecar {
            kind: self.kind,
            t: self.t,
            grid: self.grid.clone(),
            rows,
            cols,
            layout: "row-major f64 little-endian".into(),
        };
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(sidecar_path)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut sidecar_path = path.as_os_str().to_owned();
        sidecar_path.push(".json");
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(PathBuf::from(sidecar_path))?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() != sidecar.rows * sidecar.cols * 8 {
            return Err(Error::Argument(format!("{} holds {} bytes, sidecar expects {}x{}", path.display(), bytes.len(), sidecar.rows, sidecar.cols)));
        }
        let matrix = Mat::<f64>::from_fn(sidecar.rows, sidecar.cols, |i, j| {
            let k = 8 * (i * sidecar.cols + j);
            f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap())
        });
        Ok(Self { kind: sidecar.kind, t: sidecar.t, grid: sidecar.grid, matrix })
    }
}

pub fn heat_kernel(dec: &SpectralDecomposition, t: f64) -> Result<KernelMatrix> {
    check_time(t)?;
    let m = heat_multiplier(dec.eigenvalues(), t);
    Ok(KernelMatrix::new(KernelKind::HeatL, t, dec.grid.clone(), dec.kernel(&m)))
}

/// Poisson multiplier by subordination, checked against `e^{-t√λ}`.
/// Returns the quadrature multiplier and its relative mismatch.
pub fn subordinated_multiplier(dec: &SpectralDecomposition, t: f64, n_quad: usize) -> Result<(Vec<f64>, f64)> {
    let sub = Subordination::new(t, n_quad)?;
    let approx = sub.multiplier(dec.eigenvalues());
    let mismatch = multiplier_mismatch(&approx, &poisson_multiplier(dec.eigenvalues(), t));
    if !(mismatch <= 1e-3) {
        return Err(Error::Consistency(format!("subordination at t={t} misses the spectral Poisson multiplier by {mismatch:.3e}")));
    }
    Ok((approx, mismatch))
}

pub fn poisson_subordinated(dec: &SpectralDecomposition, t: f64, n_quad: usize) -> Result<KernelMatrix> {
    let (m, _) = subordinated_multiplier(dec, t, n_quad)?;
    Ok(KernelMatrix::new(KernelKind::PoissonL, t, dec.grid.clone(), dec.kernel(&m)))
}

/// Centered difference of the subordinated multipliers against the spectral
/// derivative; returns the relative mismatch.
pub fn tderiv_fd_mismatch(dec: &SpectralDecomposition, t: f64, n_quad: usize) -> Result<f64> {
    check_time(t)?;
    let eps = 1e-3 * t;
    let plus = Subordination::new(t + eps, n_quad)?.multiplier(dec.eigenvalues());
    let minus = Subordination::new(t - eps, n_quad)?.multiplier(dec.eigenvalues());
    let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    Ok(multiplier_mismatch(&fd, &poisson_tderiv_multiplier(dec.eigenvalues(), t)))
}

pub fn poisson_t_derivative(dec: &SpectralDecomposition, t: f64) -> Result<KernelMatrix> {
    let mismatch = tderiv_fd_mismatch(dec, t, DEFAULT_SUBORDINATION_NODES)?;
    if !(mismatch <= 1e-3) {
        return Err(Error::Consistency(format!("finite difference of the Poisson semigroup at t={t} misses the spectral derivative by {mismatch:.3e}")));
    }
    let m = poisson_tderiv_multiplier(dec.eigenvalues(), t);
    Ok(KernelMatrix::new(KernelKind::PoissonTDerivative, t, dec.grid.clone(), dec.kernel(&m)))
}

/// `h_t(x - y) = (4πt)^{-d/2} e^{-|x-y|²/4t}`.
pub fn classical_heat_kernel(x: &[f64], y: &[f64], t: f64, d: usize) -> f64 {
    (4.0 * std::f64::consts::PI * t).powf(-(d as f64) / 2.0) * (-dist2(x, y) / (4.0 * t)).exp()
}

/// Heat kernel of `-Δ + |x|²`.
pub fn mehler_kernel_oracle(x: &[f64], y: &[f64], t: f64, d: usize) -> f64 {
    let (sh, ch) = ((2.0 * t).sinh(), (2.0 * t).cosh());
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (2.0 * std::f64::consts::PI * sh).powf(-(d as f64) / 2.0) * (-(ch * (xx + yy) - 2.0 * xy) / (2.0 * sh)).exp()
}

/// `Γ((d+1)/2) / π^{(d+1)/2}`.
pub fn poisson_constant(d: usize) -> f64 {
    let a = (d as f64 + 1.0) / 2.0;
    gamma(a) / std::f64::consts::PI.powf(a)
}

fn norm2(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// `P_t(z) = c_d t (t² + |z|²)^{-(d+1)/2}`.
pub fn classical_poisson_kernel(z: &[f64], t: f64, d: usize) -> f64 {
    poisson_constant(d) * t * (t * t + norm2(z)).powf(-(d as f64 + 1.0) / 2.0)
}

/// `t ∂_t P_t(z) = c_d t (|z|² - d t²) (t² + |z|²)^{-(d+3)/2}`.
pub fn classical_poisson_tderiv_kernel(z: &[f64], t: f64, d: usize) -> f64 {
    let r2 = norm2(z);
    poisson_constant(d) * t * (r2 - d as f64 * t * t) * (t * t + r2).powf(-(d as f64 + 3.0) / 2.0)
}

fn closed_form_matrix(grid: &Grid, t: f64, kind: KernelKind, f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Result<KernelMatrix> {
    check_time(t)?;
    let n = grid.node_count();
    let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.node(i)).collect();
    let cols: Vec<Vec<f64>> = (0..n).into_par_iter().map(|y| coords.iter().map(|x| f(x, &coords[y])).collect()).collect();
    let matrix = Mat::<f64>::from_fn(n, n, |i, j| cols[j][i]);
    Ok(KernelMatrix::new(kind, t, grid.spec(), matrix))
}

/// `h_t` sampled on node pairs.
pub fn classical_heat_matrix(grid: &Grid, t: f64) -> Result<KernelMatrix> {
    let d = grid.dim();
    closed_form_matrix(grid, t, KernelKind::HeatDeltaClosedForm, |x, y| classical_heat_kernel(x, y, t, d))
}

/// `P_t` sampled on node pairs.
pub fn classical_poisson_matrix(grid: &Grid, t: f64) -> Result<KernelMatrix> {
    let d = grid.dim();
    closed_form_matrix(grid, t, KernelKind::PoissonDelta, |x, y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        classical_poisson_kernel(&z, t, d)
    })
}

/// Relative max-entry deviation of `approx` from `reference` over the given
/// node pairs.
pub fn relative_max_deviation(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (a, r) in pairs {
        diff = diff.max((a - r).abs());
        scale = scale.max(r.abs());
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
