//! The square function `g^{L,q} f(x) = (∫ ‖t ∂_t e^{-t√L} f(x)‖_X^q dt/t)^{1/q}`,
//! its split over the region N, the dominating kernels and the audits of the
//! localization argument.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::grid::{unit_ball_volume, unit_sphere_area, Ball, Grid, ScalarField};
use crate::potential::{region_n_row, CriticalCovering, PotentialProfile};
use crate::quad::{dt_over_t_weights, log_space};
use crate::semigroup::{classical_poisson_tderiv_kernel, SpectralDecomposition};
use crate::spaces::{BanachSurrogate, VectorField};

/// Default density of the `t` grid.
pub const NODES_PER_DECADE: f64 = 16.0;
pub const MIN_T_NODES: usize = 64;
const BATCH: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemigroupKind {
    #[default]
    #[serde(rename = "L")]
    L,
    #[serde(rename = "delta")]
    Delta,
}

fn one() -> f64 {
    1.0
}

/// `t` grid bounds left as `None` are derived from the spectrum:
/// `t_min = 10⁻³/√λ_max`, `t_max = 40/√λ_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareFunctionConfig {
    pub q: f64,
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub t_count: Option<usize>,
    #[serde(default)]
    pub semigroup_kind: SemigroupKind,
    #[serde(default = "one")]
    pub alpha: f64,
}

impl SquareFunctionConfig {
    pub fn new(q: f64) -> Self {
        Self { q, t_min: None, t_max: None, t_count: None, semigroup_kind: SemigroupKind::L, alpha: 1.0 }
    }

    pub fn with_kind(mut self, kind: SemigroupKind) -> Self {
        self.semigroup_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 2.0) || !self.q.is_finite() {
            return Err(Error::Config(format!("q must satisfy 2 <= q < inf, got {}", self.q)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Some(t) = self.t_min {
            if !(t > 0.0) {
                return Err(Error::Config(format!("t_min must be positive, got {t}")));
            }
        }
        if let (Some(a), Some(b)) = (self.t_min, self.t_max) {
            if !(b > a) {
                return Err(Error::Config(format!("t_max {b} must exceed t_min {a}")));
            }
        }
        if let Some(n) = self.t_count {
            if n < MIN_T_NODES {
                return Err(Error::Config(format!("t grid needs at least {MIN_T_NODES} nodes, got {n}")));
            }
        }
        Ok(())
    }

    /// Resolves the `t` grid against a spectrum and enforces spectral
    /// coverage: `t_min √λ_max ≤ 10` and `t_max √λ_min⁺ ≥ 10`.
    pub fn time_grid(&self, eigenvalues: &[f64]) -> Result<TimeGrid> {
        self.validate()?;
        let lmax = eigenvalues.iter().fold(0.0f64, |m, l| m.max(*l));
        let floor = 1e-12 * lmax.max(1.0);
        let lmin = eigenvalues.iter().copied().filter(|l| *l > floor).fold(f64::INFINITY, f64::min);
        if !(lmax > 0.0) || !lmin.is_finite() {
            return Err(Error::Config("spectrum has no positive eigenvalue".into()));
        }
        let t_min = self.t_min.unwrap_or(1e-3 / lmax.sqrt());
        let t_max = self.t_max.unwrap_or(40.0 / lmin.sqrt());
        if !(t_max > t_min) {
            return Err(Error::Config(format!("t_max {t_max} must exceed t_min {t_min}")));
        }
        if t_min * lmax.sqrt() > 10.0 {
            return Err(Error::Config(format!("t_min {t_min:.3e} misses the top of the spectrum (t_min sqrt(lambda_max) = {:.3})", t_min * lmax.sqrt())));
        }
        if t_max * lmin.sqrt() < 10.0 {
            return Err(Error::Config(format!("t_max {t_max:.3e} misses the bottom of the spectrum (t_max sqrt(lambda_min) = {:.3})", t_max * lmin.sqrt())));
        }
        let count = self
            .t_count
            .unwrap_or_else(|| ((NODES_PER_DECADE * (t_max / t_min).log10()).ceil() as usize + 1).max(MIN_T_NODES));
        let nodes = log_space(t_min, t_max, count);
        let weights = dt_over_t_weights(&nodes);
        Ok(TimeGrid { nodes, weights })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    /// Trapezoid weights for `dt/t`.
    pub weights: Vec<f64>,
}

/// `g^{L,q}` bound to one spectral decomposition. Profiles `t ∂_t 𝒫_t f(x)`
/// are evaluated for all `t` at once by a single matrix product.
pub struct SquareFunction<'a> {
    dec: &'a SpectralDecomposition,
    cfg: SquareFunctionConfig,
    time: TimeGrid,
    // mu[(j, k)] = t_k ∂_t e^{-t√λ_j} at t_k
    mu: Mat<f64>,
    // rows of the eigenvector matrix as contiguous columns
    ut: Mat<f64>,
}

impl<'a> SquareFunction<'a> {
    pub fn new(cfg: &SquareFunctionConfig, dec: &'a SpectralDecomposition) -> Result<Self> {
        let time = cfg.time_grid(dec.eigenvalues())?;
        let lam = dec.eigenvalues();
        let mu = Mat::<f64>::from_fn(lam.len(), time.nodes.len(), |j, k| {
            let t = time.nodes[k];
            let r = lam[j].max(0.0).sqrt();
            -t * r * (-t * r).exp()
        });
        let ut = dec.unit_vectors().transpose().to_owned();
        Ok(Self { dec, cfg: cfg.clone(), time, mu, ut })
    }

    pub fn config(&self) -> &SquareFunctionConfig {
        &self.cfg
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        self.dec
    }

    fn nodes(&self) -> usize {
        self.dec.len()
    }

    fn check_field(&self, f: &VectorField, x: &BanachSurrogate) -> Result<()> {
        if f.node_count() != self.nodes() {
            return Err(Error::Argument(format!("field has {} nodes, decomposition {}", f.node_count(), self.nodes())));
        }
        if f.components() != x.n {
            return Err(Error::Argument(format!("{}-component field measured in {}", f.components(), x.label())));
        }
        Ok(())
    }

    /// `(Σ_k w_k ‖p_k‖^q)^{1/q}` for a profile laid out as `p[k * n + i]`.
    pub fn profile_norm(&self, profile: &[f64], x: &BanachSurrogate) -> f64 {
        let n = x.n;
        let q = self.cfg.q;
        let mut acc = 0.0;
        for (k, w) in self.time.weights.iter().enumerate() {
            let v = x.norm(&profile[k * n..(k + 1) * n]);
            acc += w * if q == 2.0 { v * v } else { v.powf(q) };
        }
        if q == 2.0 {
            acc.sqrt()
        } else {
            acc.powf(1.0 / q)
        }
    }

    /// Spectral coefficients `b[j * n + i] = Σ_y u_j(y) w(y) f_i(y)` over the
    /// listed nodes.
    fn partial_coefficients(&self, f: &VectorField, nodes: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
        let (big_n, n) = (self.nodes(), f.components());
        let mut b = vec![0.0; big_n * n];
        for (y, w) in nodes {
            let fy = f.at(y);
            if fy.iter().all(|v| *v == 0.0) || w == 0.0 {
                continue;
            }
            let row = self.ut.col(y);
            for i in 0..n {
                let s = w * fy[i];
                for j in 0..big_n {
                    b[j * n + i] += row[j] * s;
                }
            }
        }
        b
    }

    /// Profiles at `x` for each coefficient block: `P_k = Σ_j mu[j,k] u_j(x) b_j`.
    fn profiles_batch(&self, items: &[(usize, &[f64])], n: usize) -> Vec<Vec<f64>> {
        let big_n = self.nodes();
        let t = self.time.nodes.len();
        let v = Mat::<f64>::from_fn(big_n, items.len() * n, |j, c| {
            let (x, b) = items[c / n];
            self.ut[(j, x)] * b[j * n + c % n]
        });
        let mut p = Mat::<f64>::zeros(t, items.len() * n);
        matmul(p.as_mut(), Accum::Replace, self.mu.transpose(), v.as_ref(), 1.0, Par::Seq);
        (0..items.len())
            .map(|b| {
                let mut out = vec![0.0; t * n];
                for k in 0..t {
                    for i in 0..n {
                        out[k * n + i] = p[(k, b * n + i)];
                    }
                }
                out
            })
            .collect()
    }

    /// `t ∂_t 𝒫_t f(x)` of a scalar field as an `N × T` matrix.
    pub fn scalar_profiles(&self, f: &[f64]) -> Mat<f64> {
        let (big_n, t) = (self.nodes(), self.time.nodes.len());
        let c = self.dec.coefficients(f);
        // coefficients() is weighted by sqrt(h^d); undo to stay Euclidean.
        let s = self.dec.cell_volume().sqrt().recip();
        let b = Mat::<f64>::from_fn(big_n, t, |j, k| c[j] * s * self.mu[(j, k)]);
        let mut p = Mat::<f64>::zeros(big_n, t);
        matmul(p.as_mut(), Accum::Replace, self.ut.transpose(), b.as_ref(), 1.0, Par::Seq);
        p
    }

    /// `t ∂_t 𝒫_t f(x)` for every node, laid out `[x][k * n + i]`.
    pub fn profiles(&self, f: &VectorField) -> Vec<Vec<f64>> {
        let (big_n, n, t) = (self.nodes(), f.components(), self.time.nodes.len());
        let mut out = vec![vec![0.0; t * n]; big_n];
        for i in 0..n {
            let p = self.scalar_profiles(&f.component(i));
            for (x, row) in out.iter_mut().enumerate() {
                for k in 0..t {
                    row[k * n + i] = p[(x, k)];
                }
            }
        }
        out
    }

    /// `g` of `f = Σ_m f_m v_m` from cached scalar profiles `P_m` of `f_m`.
    pub fn combination_g(&self, terms: &[(&Mat<f64>, &[f64])], x: &BanachSurrogate) -> Result<ScalarField> {
        let n = x.n;
        let t = self.time.nodes.len();
        for (p, v) in terms {
            if p.nrows() != self.nodes() || p.ncols() != t || v.len() != n {
                return Err(Error::Argument("template profile or coefficient shape mismatch".into()));
            }
        }
        let out: Vec<f64> = (0..self.nodes())
            .into_par_iter()
            .map(|node| {
                let mut prof = vec![0.0; t * n];
                for (p, v) in terms {
                    for k in 0..t {
                        let a = p[(node, k)];
                        for i in 0..n {
                            prof[k * n + i] += a * v[i];
                        }
                    }
                }
                self.profile_norm(&prof, x)
            })
            .collect();
        Ok(ScalarField::new(out))
    }

    pub fn g(&self, f: &VectorField, x: &BanachSurrogate) -> Result<ScalarField> {
        self.check_field(f, x)?;
        let profiles = self.profiles(f);
        Ok(ScalarField::new(profiles.par_iter().map(|p| self.profile_norm(p, x)).collect()))
    }

    /// Evaluates `‖t ∂_t 𝒫_t(w_x f)(x)‖` where each node `x` supplies its own
    /// weights `w_x` through `rows`.
    pub fn g_with_rows<R>(&self, f: &VectorField, x: &BanachSurrogate, rows: R) -> Result<ScalarField>
    where
        R: Fn(usize) -> Vec<(usize, f64)> + Sync,
    {
        self.check_field(f, x)?;
        let n = x.n;
        let xs: Vec<usize> = (0..self.nodes()).collect();
        let out: Vec<f64> = xs
            .par_chunks(BATCH)
            .flat_map_iter(|chunk| {
                let blocks: Vec<Vec<f64>> = chunk.iter().map(|&p| self.partial_coefficients(f, rows(p).into_iter())).collect();
                let items: Vec<(usize, &[f64])> = chunk.iter().zip(&blocks).map(|(&p, b)| (p, b.as_slice())).collect();
                self.profiles_batch(&items, n).into_iter().map(|p| self.profile_norm(&p, x)).collect::<Vec<_>>()
            })
            .collect();
        Ok(ScalarField::new(out))
    }

    /// The split over N. Per node the full profile is the elementwise sum of
    /// the local and global profiles, so the triangle inequalities between the
    /// three evaluations hold for the computed numbers.
    pub fn split(&self, grid: &Grid, profile: &PotentialProfile, f: &VectorField, x: &BanachSurrogate) -> Result<SplitFields> {
        self.check_field(f, x)?;
        profile.rho_table()?;
        let n = x.n;
        let all: Vec<f64> = self.partial_coefficients(f, (0..self.nodes()).map(|y| (y, 1.0)));
        let support: Vec<usize> = (0..self.nodes()).filter(|&y| f.at(y).iter().any(|v| *v != 0.0)).collect();
        let xs: Vec<usize> = (0..self.nodes()).collect();
        let triples: Vec<(f64, f64, f64, bool)> = xs
            .par_chunks(BATCH)
            .map(|chunk| -> Result<Vec<(f64, f64, f64, bool)>> {
                let mut blocks = Vec::with_capacity(3 * chunk.len());
                for &p in chunk {
                    let row = region_n_row(grid, profile, p)?;
                    let local = self.partial_coefficients(f, row.iter().map(|&y| (y, 1.0)));
                    let inside = support.iter().filter(|y| row.binary_search(y).is_ok()).count();
                    let global: Vec<f64> = if inside == support.len() {
                        vec![0.0; local.len()]
                    } else {
                        all.iter().zip(&local).map(|(a, l)| a - l).collect()
                    };
                    blocks.push(global);
                    blocks.push(local);
                }
                let items: Vec<(usize, &[f64])> = blocks.iter().enumerate().map(|(k, b)| (chunk[k / 2], b.as_slice())).collect();
                let profiles = self.profiles_batch(&items, n);
                Ok(profiles.chunks(2).map(|pair| self.split_norms(&pair[0], &pair[1], x)).collect())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let g: Vec<f64> = triples.iter().map(|t| t.0).collect();
        let global: Vec<f64> = triples.iter().map(|t| t.1).collect();
        let local: Vec<f64> = g.iter().zip(&global).map(|(a, b)| a - b).collect();
        let masked_local: Vec<f64> = triples.iter().map(|t| t.2).collect();
        let exceeded: Vec<bool> = triples.iter().map(|t| t.3).collect();
        Ok(SplitFields { g: g.into(), global: global.into(), local: local.into(), masked_local: masked_local.into(), exceeded })
    }

    /// `(‖G + L‖, ‖G‖, ‖L‖)` and whether `|‖G + L‖ - ‖L‖| > ‖G‖`. For `q = 2`
    /// and inner norms built from sums, squares and maxima the sum `G + L` is
    /// kept exact and the norms and the comparison run in double-double.
    fn split_norms(&self, global: &[f64], local: &[f64], x: &BanachSurrogate) -> (f64, f64, f64, bool) {
        let exact = |a: &[f64], b: Option<&[f64]>| self.profile_norm_dd(a, b, x);
        if let (Some(full), Some(glob), Some(loc)) = (exact(global, Some(local)), exact(global, None), exact(local, None)) {
            return (full.hi(), glob.hi(), loc.hi(), (full - loc).abs() > glob);
        }
        let full: Vec<f64> = global.iter().zip(local).map(|(g, l)| g + l).collect();
        let (g, glob, loc) = (self.profile_norm(&full, x), self.profile_norm(global, x), self.profile_norm(local, x));
        (g, glob, loc, (g - loc).abs() > glob)
    }

    fn profile_norm_dd(&self, a: &[f64], b: Option<&[f64]>, x: &BanachSurrogate) -> Option<TwoFloat> {
        if self.cfg.q != 2.0 || !(x.n == 1 || x.r == 1.0 || x.r == 2.0 || x.r.is_infinite()) {
            return None;
        }
        let n = x.n;
        let zero = TwoFloat::from(0.0);
        let mut acc = zero;
        for (k, w) in self.time.weights.iter().enumerate() {
            let entry = |i: usize| match b {
                Some(b) => TwoFloat::new_add(a[k * n + i], b[k * n + i]),
                None => TwoFloat::from(a[k * n + i]),
            };
            let sq = if n == 1 || x.r == 2.0 {
                (0..n).fold(zero, |s, i| s + entry(i) * entry(i))
            } else if x.r == 1.0 {
                let s = (0..n).fold(zero, |s, i| s + entry(i).abs());
                s * s
            } else {
                let m = (0..n).fold(zero, |m, i| m.max(entry(i).abs()));
                m * m
            };
            acc += sq * *w;
        }
        Some(acc.sqrt())
    }
}

/// `g`, `g_glob = g(χ_{N^c}(x,·) f)(x)`, `g_loc = g - g_glob` and the masked
/// variant `g(χ_N(x,·) f)(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitFields {
    pub g: ScalarField,
    pub global: ScalarField,
    pub local: ScalarField,
    pub masked_local: ScalarField,
    /// Per node, `|g - g(χ_N f)| > g_glob` decided before rounding to `f64`.
    pub exceeded: Vec<bool>,
}

impl SplitFields {
    /// Nodes where `|g - g(χ_N f)| > g_glob`.
    pub fn cutoff_violations(&self) -> Vec<usize> {
        (0..self.g.len()).filter(|&i| self.exceeded[i]).collect()
    }
}

pub fn g_function(cfg: &SquareFunctionConfig, f: &VectorField, dec: &SpectralDecomposition, x: &BanachSurrogate) -> Result<ScalarField> {
    SquareFunction::new(cfg, dec)?.g(f, x)
}

pub fn g_global(cfg: &SquareFunctionConfig, f: &VectorField, dec: &SpectralDecomposition, grid: &Grid, profile: &PotentialProfile, x: &BanachSurrogate) -> Result<ScalarField> {
    Ok(SquareFunction::new(cfg, dec)?.split(grid, profile, f, x)?.global)
}

pub fn g_local(cfg: &SquareFunctionConfig, f: &VectorField, dec: &SpectralDecomposition, grid: &Grid, profile: &PotentialProfile, x: &BanachSurrogate) -> Result<ScalarField> {
    Ok(SquareFunction::new(cfg, dec)?.split(grid, profile, f, x)?.local)
}

/// `ρ(x)^α / |x - y|^{d+α}`.
pub fn kernel_l_value(rho_x: f64, r: f64, alpha: f64, d: usize) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::Domain("kernel L is singular at x = y".into()));
    }
    Ok(rho_x.powf(alpha) / r.powf(d as f64 + alpha))
}

/// `ρ(x)^{-δ} / |x - y|^{d-δ}`.
pub fn kernel_m_value(rho_x: f64, r: f64, delta: f64, d: usize) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::Domain("kernel M is singular at x = y".into()));
    }
    Ok(rho_x.powf(-delta) / r.powf(d as f64 - delta))
}

pub fn kernel_l(grid: &Grid, profile: &PotentialProfile, x: usize, y: usize, alpha: f64) -> Result<f64> {
    kernel_l_value(profile.rho_table()?[x], grid.node_distance(x, y), alpha, grid.dim())
}

pub fn kernel_m(grid: &Grid, profile: &PotentialProfile, x: usize, y: usize, delta: f64) -> Result<f64> {
    kernel_m_value(profile.rho_table()?[x], grid.node_distance(x, y), delta, grid.dim())
}

// Indicator of r <= edge with a linear ramp one cell wide.
fn ramp_below(r: f64, edge: f64, h: f64) -> f64 {
    ((edge - r) / h + 0.5).clamp(0.0, 1.0)
}

fn ramp_above(r: f64, edge: f64, h: f64) -> f64 {
    ((r - edge) / h + 0.5).clamp(0.0, 1.0)
}

/// `lim_K (Σ_{k ∈ Z^d, 0 < |k|} w_K(|k|) |k|^{-s} - ∫ w_K(|z|) |z|^{-s} dz)` for
/// `s < d`, with a one-cell ramp cutoff `w_K`. A unit-spacing lattice sum of
/// `|z|^{-s}` over a ball of radius `R` differs from the integral by `h^{d-s}`
/// times this constant.
pub fn lattice_singular_offset(d: usize, s: f64) -> f64 {
    assert!(s < d as f64);
    let k = match d {
        1 => 4000,
        2 => 200,
        _ => 32,
    } as f64;
    let kk = k as isize + 2;
    let span = (2 * kk + 1) as usize;
    let total = span.pow(d as u32);
    let mut lattice = 0.0;
    let mut idx = vec![0isize; d];
    for flat in 0..total {
        let mut rem = flat;
        for c in idx.iter_mut() {
            *c = (rem % span) as isize - kk;
            rem /= span;
        }
        let r = (idx.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
        if r > 0.0 {
            lattice += ramp_below(r, k, 1.0) * r.powf(-s);
        }
    }
    let sigma = unit_sphere_area(d);
    let e = d as f64 - s;
    let core = sigma * (k - 0.5).powf(e) / e;
    let steps = 4000;
    let dr = 1.0 / steps as f64;
    let shell: f64 = (0..steps)
        .map(|i| {
            let r = k - 0.5 + (i as f64 + 0.5) * dr;
            ramp_below(r, k, 1.0) * sigma * r.powf(d as f64 - 1.0 - s) * dr
        })
        .sum();
    lattice - core - shell
}

/// `∫ L(x,y) χ_{N^c}(x,y) dy` by grid quadrature with a one-cell ramp at the
/// inner edge `ρ(x)` and at the largest radius `R` inside the box, plus the
/// closed-form tail `σ ρ^α / (α R^α)`.
pub fn kernel_l_identity(grid: &Grid, profile: &PotentialProfile, x: usize, alpha: f64) -> Result<f64> {
    let rho = profile.rho_table()?[x];
    let (d, h) = (grid.dim(), grid.spacing());
    let center = grid.node(x);
    let outer = grid.wall_distance(&center);
    if outer <= rho + h {
        return Err(Error::Domain(format!("node {x} is too close to the wall for rho = {rho}")));
    }
    let mut acc = 0.0;
    grid.for_each_in_ball(&Ball { center, radius: outer + h }, |_, r2| {
        let r = r2.sqrt();
        let w = ramp_above(r, rho, h) * ramp_below(r, outer, h);
        if w > 0.0 {
            acc += w * rho.powf(alpha) / r.powf(d as f64 + alpha);
        }
    });
    Ok(acc * grid.cell_volume() + unit_sphere_area(d) * rho.powf(alpha) / (alpha * outer.powf(alpha)))
}

/// `∫ M(x,y) χ_N(x,y) dy` with a one-cell ramp at `ρ(x)` and the lattice
/// correction of the singular point.
pub fn kernel_m_identity(grid: &Grid, profile: &PotentialProfile, x: usize, delta: f64) -> Result<f64> {
    let rho = profile.rho_table()?[x];
    let (d, h) = (grid.dim(), grid.spacing());
    let center = grid.node(x);
    let mut acc = 0.0;
    grid.for_each_in_ball(&Ball { center, radius: rho + h }, |_, r2| {
        if r2 > 0.0 {
            let r = r2.sqrt();
            acc += ramp_below(r, rho, h) * rho.powf(-delta) / r.powf(d as f64 - delta);
        }
    });
    let offset = lattice_singular_offset(d, d as f64 - delta);
    Ok(acc * grid.cell_volume() - rho.powf(-delta) * h.powf(delta) * offset)
}

/// `∫_{inner ≤ |x-y| ≤ outer} |x-y|^{-d} dy` with one-cell ramps at both edges.
pub fn annulus_row_integral(grid: &Grid, x: usize, inner: f64, outer: f64) -> Result<f64> {
    let (d, h) = (grid.dim(), grid.spacing());
    let center = grid.node(x);
    if grid.wall_distance(&center) < outer + h {
        return Err(Error::Domain(format!("annulus of outer radius {outer} leaves the box at node {x}")));
    }
    let mut acc = 0.0;
    grid.for_each_in_ball(&Ball { center, radius: outer + h }, |_, r2| {
        if r2 > 0.0 {
            let r = r2.sqrt();
            acc += ramp_above(r, inner, h) * ramp_below(r, outer, h) * r.powf(-(d as f64));
        }
    });
    Ok(acc * grid.cell_volume())
}

/// `σ_{d-1} log(3(1+C₁)/C₁²)`.
pub fn annulus_closed_form(d: usize, c1: f64) -> f64 {
    unit_sphere_area(d) * (3.0 * (1.0 + c1) / (c1 * c1)).ln()
}

/// Fitted constant of a pointwise bound `lhs ≤ C rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub constant: f64,
    pub argmax_node: Option<usize>,
    pub finite: bool,
    pub max_lhs: f64,
    /// Nodes where `rhs = 0` but `lhs > 0`.
    pub unbounded_nodes: usize,
}

pub fn fit_bound(lhs: &[f64], rhs: &[f64]) -> BoundReport {
    let mut constant = 0.0f64;
    let mut argmax = None;
    let mut unbounded = 0;
    for (i, (l, r)) in lhs.iter().zip(rhs).enumerate() {
        if *l <= 0.0 {
            continue;
        }
        if *r <= 0.0 {
            unbounded += 1;
            continue;
        }
        if l / r > constant {
            constant = l / r;
            argmax = Some(i);
        }
    }
    let finite = unbounded == 0 && constant.is_finite();
    if unbounded > 0 {
        constant = f64::INFINITY;
    }
    BoundReport { constant, argmax_node: argmax, finite, max_lhs: lhs.iter().fold(0.0, |m, v| m.max(*v)), unbounded_nodes: unbounded }
}

/// `∫ L(x,y) χ_{N^c}(x,y) ‖f(y)‖ dy` at every node (sharp region edges).
pub fn global_bound_rhs(grid: &Grid, profile: &PotentialProfile, alpha: f64, norms: &[f64]) -> Result<Vec<f64>> {
    let rho = profile.rho_table()?;
    let d = grid.dim();
    let support: Vec<usize> = (0..norms.len()).filter(|&y| norms[y] != 0.0).collect();
    let h_d = grid.cell_volume();
    Ok((0..grid.node_count())
        .into_par_iter()
        .map(|x| {
            let rx = rho[x];
            let mut acc = 0.0;
            for &y in &support {
                let r2 = grid.node_distance(x, y).powi(2);
                if r2 > rx * rx * (1.0 + 1e-12) {
                    acc += rx.powf(alpha) / r2.sqrt().powf(d as f64 + alpha) * norms[y];
                }
            }
            acc * h_d
        })
        .collect())
}

/// `∫ M(x,y) χ_N(x,y) ‖f(y)‖ dy` at every node, with the lattice correction
/// of the singular point weighted by `‖f(x)‖`.
pub fn local_bound_rhs(grid: &Grid, profile: &PotentialProfile, delta: f64, norms: &[f64]) -> Result<Vec<f64>> {
    let rho = profile.rho_table()?;
    let (d, h) = (grid.dim(), grid.spacing());
    let offset = lattice_singular_offset(d, d as f64 - delta);
    let h_d = grid.cell_volume();
    Ok((0..grid.node_count())
        .into_par_iter()
        .map(|x| {
            let rx = rho[x];
            let mut acc = 0.0;
            grid.for_each_in_ball(&Ball { center: grid.node(x), radius: rx }, |y, r2| {
                if r2 > 0.0 && norms[y] != 0.0 {
                    acc += rx.powf(-delta) / r2.sqrt().powf(d as f64 - delta) * norms[y];
                }
            });
            acc * h_d - rx.powf(-delta) * h.powf(delta) * offset * norms[x]
        })
        .collect())
}

/// Smallest `C` with `g_glob f ≤ C ∫ L χ_{N^c} ‖f‖` at every node.
pub fn check_global_domination(sq: &SquareFunction, grid: &Grid, profile: &PotentialProfile, f: &VectorField, x: &BanachSurrogate) -> Result<BoundReport> {
    let split = sq.split(grid, profile, f, x)?;
    let rhs = global_bound_rhs(grid, profile, sq.config().alpha, &f.norms(x)?)?;
    Ok(fit_bound(&split.global, &rhs))
}

/// Smallest `C` with `|g^L_loc f - g^Δ_loc f| ≤ C ∫ M χ_N ‖f‖` at every node.
pub fn check_local_difference(sq_l: &SquareFunction, sq_delta: &SquareFunction, grid: &Grid, profile: &PotentialProfile, f: &VectorField, x: &BanachSurrogate) -> Result<BoundReport> {
    let a = sq_l.split(grid, profile, f, x)?;
    let b = sq_delta.split(grid, profile, f, x)?;
    let lhs: Vec<f64> = a.local.iter().zip(b.local.iter()).map(|(p, q)| (p - q).abs()).collect();
    let rhs = local_bound_rhs(grid, profile, profile.delta(), &f.norms(x)?)?;
    Ok(fit_bound(&lhs, &rhs))
}

/// Quadrature scheme for [`pt_deriv_qnorm_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QnormScheme {
    /// Trapezoid in `log t` on `[10⁻⁸|z|, 10⁸|z|]`, split at the sign change.
    LogTrapezoid,
    /// Gauss-Legendre in `θ = atan(t/|z|)`, split at the sign change.
    GaussLegendreAngle,
}

/// `‖t ∂_t P_t(z)‖_{L^q(dt/t)}`.
pub fn pt_deriv_qnorm(z: &[f64], q: f64) -> Result<f64> {
    pt_deriv_qnorm_with(z, q, QnormScheme::LogTrapezoid)
}

pub fn pt_deriv_qnorm_with(z: &[f64], q: f64, scheme: QnormScheme) -> Result<f64> {
    let d = z.len();
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::Domain("the Poisson derivative norm is singular at z = 0".into()));
    }
    if !(q >= 1.0) {
        return Err(Error::Argument(format!("q must be at least 1, got {q}")));
    }
    let f = |t: f64| classical_poisson_tderiv_kernel(z, t, d).abs().powf(q);
    // t ∂_t P_t(z) changes sign at t = |z| / √d.
    let t0 = r / (d as f64).sqrt();
    let total = match scheme {
        QnormScheme::LogTrapezoid => {
            let piece = |a: f64, b: f64| {
                let nodes = log_space(a, b, 8001);
                dt_over_t_weights(&nodes).iter().zip(&nodes).map(|(w, t)| w * f(*t)).sum::<f64>()
            };
            piece(1e-8 * r, t0) + piece(t0, 1e8 * r)
        }
        QnormScheme::GaussLegendreAngle => {
            let gl = GaussLegendre::new(200).map_err(|e| Error::Numeric(format!("{e:?}")))?;
            // t = r tan θ, dt/t = dθ / (sin θ cos θ)
            let g = |th: f64| {
                let t = r * th.tan();
                if t <= 0.0 || !t.is_finite() {
                    0.0
                } else {
                    f(t) / (th.sin() * th.cos())
                }
            };
            let th0 = (1.0 / (d as f64).sqrt()).atan();
            gl.integrate(0.0, th0, g) + gl.integrate(th0, std::f64::consts::FRAC_PI_2, g)
        }
    };
    Ok(total.powf(1.0 / q))
}

/// Per-node weights `w_x(y) = #{k : x ∈ Q_k, y ∈ 2Q_k}` of the operator S.
pub fn s_weights(grid: &Grid, covering: &CriticalCovering, x: usize) -> Vec<(usize, f64)> {
    let mut w: Vec<(usize, f64)> = Vec::new();
    for k in covering.containing(grid, x) {
        let ball = covering.ball(grid, k).scaled(2.0).expect("positive radius");
        w.extend(grid.nodes_in_ball(&ball).into_iter().map(|y| (y, 1.0)));
    }
    w.sort_by_key(|p| p.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(w.len());
    for (y, v) in w {
        match merged.last_mut() {
            Some(last) if last.0 == y => last.1 += v,
            _ => merged.push((y, v)),
        }
    }
    merged
}

/// `S f(x) = ‖Σ_k χ_{Q_k}(x) t ∂_t P_t(χ_{2Q_k} f)(x)‖_{L^q_X(dt/t)}`.
pub fn operator_s(sq: &SquareFunction, grid: &Grid, covering: &CriticalCovering, f: &VectorField, x: &BanachSurrogate) -> Result<ScalarField> {
    sq.g_with_rows(f, x, |p| s_weights(grid, covering, p))
}

/// Exhaustive comparison of the kernel weights of S and of the N-localized
/// operator `Σ_k χ_{Q_k}(x) χ_N(x,y)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnulusAudit {
    pub c1: f64,
    pub pairs_checked: u64,
    pub disagreements: u64,
    pub violations: u64,
    /// Extremes of `|x-y|/ρ(x)` over disagreeing pairs.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower: f64,
    pub upper: f64,
}

impl AnnulusAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn annulus_audit(grid: &Grid, profile: &PotentialProfile, covering: &CriticalCovering, c1: f64) -> Result<AnnulusAudit> {
    let rho = profile.rho_table()?;
    let n = grid.node_count();
    let lower = c1 / (1.0 + c1);
    let upper = 3.0 / c1;
    let per_node: Vec<(u64, u64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let count = covering.containing(grid, x).len() as f64;
            let mut weights = s_weights(grid, covering, x);
            let local = grid.nodes_in_ball(&Ball { center: grid.node(x), radius: rho[x] });
            for &y in &local {
                weights.push((y, 0.0));
            }
            weights.sort_by_key(|p| p.0);
            let (mut dis, mut bad, mut lo, mut hi) = (0u64, 0u64, f64::INFINITY, 0.0f64);
            let mut i = 0;
            while i < weights.len() {
                let y = weights[i].0;
                let mut w = 0.0;
                while i < weights.len() && weights[i].0 == y {
                    w += weights[i].1;
                    i += 1;
                }
                let in_n = local.binary_search(&y).is_ok();
                let localized = if in_n { count } else { 0.0 };
                if w != localized {
                    dis += 1;
                    let ratio = grid.node_distance(x, y) / rho[x];
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                    if ratio < lower * (1.0 - 1e-12) || ratio > upper * (1.0 + 1e-12) {
                        bad += 1;
                    }
                }
            }
            (dis, bad, lo, hi)
        })
        .collect();
    let mut audit = AnnulusAudit { c1, pairs_checked: (n as u64) * (n as u64), disagreements: 0, violations: 0, min_ratio: f64::INFINITY, max_ratio: 0.0, lower, upper };
    for (dis, bad, lo, hi) in per_node {
        audit.disagreements += dis;
        audit.violations += bad;
        audit.min_ratio = audit.min_ratio.min(lo);
        audit.max_ratio = audit.max_ratio.max(hi);
    }
    Ok(audit)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub r: f64,
    pub max_error: f64,
    pub max_value: f64,
    pub nodes_compared: usize,
}

/// `max_x |g^{Δ,q} f(x) - g^{Δ,q} f^R(x/R)|` with `f^R(x) = f(Rx)`, over nodes
/// `x` with both `x` and `x/R` in the inner three quarters of the box.
pub fn scaling_identity_check(sq: &SquareFunction, grid: &Grid, f: &[f64], r: f64) -> Result<ScalingReport> {
    if !(0.5..=2.0).contains(&r) {
        return Err(Error::Argument(format!("dilation factor must lie in [0.5, 2], got {r}")));
    }
    let limit = 0.75 * grid.half_width();
    let fr = grid.dilate(f, r)?;
    for field in [f, &fr[..]] {
        for y in 0..grid.node_count() {
            if field[y] != 0.0 && grid.node(y).iter().any(|c| c.abs() > limit) {
                return Err(Error::Domain("support reaches the outer quarter of the box".into()));
            }
        }
    }
    let x = BanachSurrogate::scalar();
    let g1 = sq.g(&VectorField::from_scalar(f), &x)?;
    let g2 = sq.g(&VectorField::from_scalar(&fr), &x)?;
    let mut report = ScalingReport { r, max_error: 0.0, max_value: g1.iter().fold(0.0, |m, v| m.max(*v)), nodes_compared: 0 };
    for p in 0..grid.node_count() {
        let coords = grid.node(p);
        let scaled: Vec<f64> = coords.iter().map(|c| c / r).collect();
        if coords.iter().chain(&scaled).any(|c| c.abs() > limit) {
            continue;
        }
        let other = if r == 1.0 { g2[p] } else { grid.interpolate(&g2, &scaled) };
        report.max_error = report.max_error.max((g1[p] - other).abs());
        report.nodes_compared += 1;
    }
    Ok(report)
}

/// `(Γ(q)/q^q)^{1/q}`, the value of `g^{L,q} φ / |φ|` for an eigenfunction.
pub fn eigenfunction_constant(q: f64) -> f64 {
    (statrs::function::gamma::gamma(q) / q.powf(q)).powf(1.0 / q)
}

/// Volume of the ball of cell volume, used in reports of the singular cell.
pub fn cell_ball_radius(grid: &Grid) -> f64 {
    (grid.cell_volume() / unit_ball_volume(grid.dim())).powf(1.0 / grid.dim() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{build_covering, exhaustive_c1, PotentialKind};
    use crate::semigroup::{spectral_decompose, OperatorMatrix, DEFAULT_NODE_CAP};

    fn dec_for(grid: &Grid, v: &[f64]) -> SpectralDecomposition {
        spectral_decompose(&OperatorMatrix::assemble(grid, v, DEFAULT_NODE_CAP).unwrap()).unwrap()
    }

    #[test]
    fn config_rules() {
        assert!(SquareFunctionConfig::new(1.5).validate().is_err());
        let mut c = SquareFunctionConfig::new(2.0);
        c.t_count = Some(10);
        assert!(c.validate().is_err());
        let lam = [1.0, 4.0, 100.0];
        let mut c = SquareFunctionConfig::new(2.0);
        c.t_min = Some(5.0);
        assert!(matches!(c.time_grid(&lam), Err(Error::Config(_))));
        let mut c = SquareFunctionConfig::new(2.0);
        c.t_max = Some(2.0);
        assert!(matches!(c.time_grid(&lam), Err(Error::Config(_))));
        let tg = SquareFunctionConfig::new(2.0).time_grid(&lam).unwrap();
        assert!(tg.nodes.len() >= MIN_T_NODES && tg.nodes.windows(2).all(|w| w[0] < w[1]));
        let json = r#"{"q": 3.0, "semigroup_kind": "delta"}"#;
        let c: SquareFunctionConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.semigroup_kind, SemigroupKind::Delta);
        assert_eq!(c.alpha, 1.0);
    }

    #[test]
    fn eigenfunction_constants() {
        let g = Grid::new(1, 1.0, 64).unwrap();
        let dec = dec_for(&g, &vec![0.0; 64]);
        let x = BanachSurrogate::scalar();
        for q in [2.0, 3.0, 4.0] {
            let sq = SquareFunction::new(&SquareFunctionConfig::new(q), &dec).unwrap();
            let want = eigenfunction_constant(q);
            for j in [0, 5, 40] {
                let phi = dec.eigenfunction(j);
                let gf = sq.g(&VectorField::from_scalar(&phi), &x).unwrap();
                for (a, p) in gf.iter().zip(&phi) {
                    assert!((a - want * p.abs()).abs() <= 1e-4 * want * p.abs() + 1e-12, "q={q} j={j}");
                }
            }
        }
        assert!((eigenfunction_constant(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_homogeneity_subadditivity() {
        let g = Grid::new(2, 1.0, 9).unwrap();
        let dec = dec_for(&g, &g.field_from_fn(|p| p[0] * p[0] + p[1] * p[1]));
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0), &dec).unwrap();
        let x = BanachSurrogate::new(2.0, 2).unwrap();
        let n = g.node_count();
        assert!(sq.g(&VectorField::zeros(n, 2), &x).unwrap().iter().all(|v| *v == 0.0));
        let a = VectorField::new(2, (0..2 * n).map(|i| ((i * 31 % 17) as f64) / 8.0 - 1.0).collect()).unwrap();
        let b = VectorField::new(2, (0..2 * n).map(|i| ((i * 13 % 7) as f64) / 3.0 - 1.0).collect()).unwrap();
        let ga = sq.g(&a, &x).unwrap();
        let g2 = sq.g(&a.scaled(-2.0), &x).unwrap();
        for (u, v) in ga.iter().zip(g2.iter()) {
            assert_eq!(2.0 * u, *v);
        }
        let gb = sq.g(&b, &x).unwrap();
        let mut s = a.clone();
        s.add_scaled(1.0, &b);
        let gs = sq.g(&s, &x).unwrap();
        for i in 0..n {
            assert!(gs[i] <= (ga[i] + gb[i]) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn plancherel_half() {
        let g = Grid::new(1, 1.0, 128).unwrap();
        let dec = dec_for(&g, &vec![0.0; 128]);
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0).with_kind(SemigroupKind::Delta), &dec).unwrap();
        let mut c = vec![0.0; 128];
        for (j, cj) in c.iter_mut().enumerate().take(30) {
            *cj = ((j * 7 % 5) as f64) - 2.0;
        }
        let f = dec.synthesize(&c);
        let gf = sq.g(&VectorField::from_scalar(&f), &BanachSurrogate::scalar()).unwrap();
        let h = g.cell_volume();
        let ratio = crate::spaces::scalar_lp_norm(&gf, 2.0, h) / crate::spaces::scalar_lp_norm(&f, 2.0, h);
        assert!((ratio - 0.5).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn cutoff_check_survives_tiny_local_parts() {
        let g = Grid::new(1, 1.0, 15).unwrap();
        let dec = dec_for(&g, &vec![1.0; 15]);
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0), &dec).unwrap();
        let len = sq.time_grid().nodes.len();
        for x in [BanachSurrogate::scalar(), BanachSurrogate::new(2.0, 3).unwrap(), BanachSurrogate::new(f64::INFINITY, 2).unwrap()] {
            let m = len * x.n;
            for seed in 0..200u64 {
                let glob: Vec<f64> = (0..m).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin() * 2.5e-5).collect();
                let loc: Vec<f64> = (0..m).map(|i| ((i as f64 * 1.7 + seed as f64) * 0.91).cos() * 4.5e-21).collect();
                let (full, gl, lo, exceeded) = sq.split_norms(&glob, &loc, &x);
                assert!(!exceeded, "seed {seed}: {full:e} {gl:e} {lo:e}");
                assert!((full - gl).abs() <= 1e-12 * gl);
            }
        }
    }

    #[test]
    fn split_identities() {
        let g = Grid::new(2, 1.0, 11).unwrap();
        let p = PotentialProfile::new(&g, PotentialKind::Power { c: 4.0, beta: 2.0 }, 2.0).unwrap().with_rho(&g).unwrap();
        let dec = dec_for(&g, p.values());
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0), &dec).unwrap();
        let x = BanachSurrogate::new(2.0, 2).unwrap();
        let n = g.node_count();
        let f = VectorField::new(2, (0..2 * n).map(|i| ((i * 29 % 23) as f64) / 11.0 - 1.0).collect()).unwrap();
        let s = sq.split(&g, &p, &f, &x).unwrap();
        assert!(s.cutoff_violations().is_empty());
        let direct = sq.g(&f, &x).unwrap();
        for i in 0..n {
            assert!((s.local[i] + s.global[i] - s.g[i]).abs() <= f64::EPSILON * s.g[i]);
            assert!((direct[i] - s.g[i]).abs() <= 1e-10 * direct[i].max(1e-300));
        }
        // Data inside the N-row of x has no global part at x.
        let x0 = g.node_at(&[0.0, 0.0]).unwrap();
        let row = region_n_row(&g, &p, x0).unwrap();
        let mut local = VectorField::zeros(n, 2);
        for &y in &row {
            local.at_mut(y).copy_from_slice(&[1.0, -0.5]);
        }
        let s = sq.split(&g, &p, &local, &x).unwrap();
        assert_eq!(s.global[x0], 0.0);
        let rep = check_global_domination(&sq, &g, &p, &local, &x).unwrap();
        assert!(rep.finite);
    }

    #[test]
    fn capped_rho_has_no_global_part() {
        let g = Grid::new(2, 1.0, 9).unwrap();
        let p = PotentialProfile::new(&g, PotentialKind::Constant(1e-9), 2.0).unwrap().with_rho(&g).unwrap();
        // The cap is the half-width; override with a cap covering the box diagonal.
        let diam = 2.0 * 2f64.sqrt();
        let p = p.with_rho_table(vec![diam; g.node_count()], vec![true; g.node_count()], diam).unwrap();
        let dec = dec_for(&g, p.values());
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0), &dec).unwrap();
        let x = BanachSurrogate::scalar();
        let f = VectorField::from_scalar(&g.field_from_fn(|q| q[0] - 0.3 * q[1]));
        let s = sq.split(&g, &p, &f, &x).unwrap();
        assert!(s.global.iter().all(|v| *v == 0.0));
        assert_eq!(s.local, s.g);
    }

    #[test]
    fn kernels_and_identities() {
        assert!(kernel_l_value(1.0, 0.0, 1.0, 3).is_err());
        let a = kernel_l_value(0.3, 0.5, 1.0, 3).unwrap();
        let b = kernel_l_value(0.6, 1.0, 1.0, 3).unwrap();
        assert!((b - a / 8.0).abs() < 1e-15 * a);
        let g = Grid::new(3, 0.9, 21).unwrap();
        let p = PotentialProfile::new(&g, PotentialKind::Constant(1.0), 3.0).unwrap().with_rho(&g).unwrap();
        let x0 = g.node_at(&[0.0, 0.0, 0.0]).unwrap();
        let sigma = unit_sphere_area(3);
        let l = kernel_l_identity(&g, &p, x0, 1.0).unwrap();
        assert!((l / sigma - 1.0).abs() < 0.02, "{}", l / sigma);
        let m = kernel_m_identity(&g, &p, x0, p.delta()).unwrap();
        assert!((m / (sigma / p.delta()) - 1.0).abs() < 0.02, "{}", m * p.delta() / sigma);
    }

    #[test]
    fn qnorm_homogeneity_and_closed_form() {
        let c1 = pt_deriv_qnorm(&[1.0, 0.0, 0.0], 2.0).unwrap();
        let c2 = pt_deriv_qnorm(&[0.0, 2.0, 0.0], 2.0).unwrap();
        assert!((c1 / c2 - 8.0).abs() < 1e-4 * 8.0);
        let want = 1.0 / (std::f64::consts::PI * 6f64.sqrt());
        let a = pt_deriv_qnorm_with(&[1.0], 2.0, QnormScheme::LogTrapezoid).unwrap();
        let b = pt_deriv_qnorm_with(&[1.0], 2.0, QnormScheme::GaussLegendreAngle).unwrap();
        assert!((a - b).abs() < 1e-6 * want && (a - want).abs() < 1e-6 * want, "{a} {b} {want}");
        assert!(pt_deriv_qnorm(&[0.0, 0.0], 2.0).is_err());
        // Interpolation bound and convergence to the sup of the t-profile.
        let z = [0.7, 0.0, 0.0];
        let sup = log_space(1e-4, 1e4, 200001).iter().map(|t| classical_poisson_tderiv_kernel(&z, *t, 3).abs()).fold(0.0, f64::max);
        let l2 = pt_deriv_qnorm(&z, 2.0).unwrap();
        let mut gaps = Vec::new();
        for q in [3.0, 4.0, 6.0, 8.0, 16.0, 64.0, 256.0] {
            let v = pt_deriv_qnorm(&z, q).unwrap();
            assert!(v <= sup.powf(1.0 - 2.0 / q) * l2.powf(2.0 / q) * (1.0 + 1e-9));
            gaps.push((v - sup).abs());
        }
        assert!(gaps.windows(2).skip(3).all(|w| w[1] < w[0]));
        assert!(gaps[gaps.len() - 1] < 0.03 * sup);
    }

    #[test]
    fn annulus_audit_and_single_ball() {
        let g = Grid::new(2, 1.0, 13).unwrap();
        let p = PotentialProfile::new(&g, PotentialKind::Power { c: 4.0, beta: 2.0 }, 2.0).unwrap().with_rho(&g).unwrap();
        let cov = build_covering(&g, &p).unwrap();
        let c1 = exhaustive_c1(&g, &p).unwrap();
        let audit = annulus_audit(&g, &p, &cov, c1).unwrap();
        assert!(audit.passed(), "{audit:?}");
        assert!(audit.disagreements > 0);
    }

    #[test]
    fn s_on_single_cover_nodes_is_localized_g() {
        let g = Grid::new(1, 1.0, 41).unwrap();
        let p = PotentialProfile::new(&g, PotentialKind::Constant(1e-6), 1.0).unwrap().with_rho(&g).unwrap();
        let cov = build_covering(&g, &p).unwrap();
        let dec = dec_for(&g, &vec![0.0; 41]);
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0).with_kind(SemigroupKind::Delta), &dec).unwrap();
        let x = BanachSurrogate::scalar();
        let f = VectorField::from_scalar(&g.field_from_fn(|q| (3.0 * q[0]).sin()));
        let s = operator_s(&sq, &g, &cov, &f, &x).unwrap();
        let mut checked = 0;
        for k in 0..cov.len() {
            let two_q = cov.ball(&g, k).scaled(2.0).unwrap();
            let masked: Vec<f64> = (0..41).map(|y| if two_q.contains(&g.node(y)) { f.at(y)[0] } else { 0.0 }).collect();
            let gm = sq.g(&VectorField::from_scalar(&masked), &x).unwrap();
            for y in 0..41 {
                if cov.containing(&g, y) == vec![k] {
                    assert!((s[y] - gm[y]).abs() <= 1e-12 * gm[y].max(1e-300));
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn scaling_identity_trivial_and_domain() {
        let g = Grid::new(1, 8.0, 257).unwrap();
        let dec = dec_for(&g, &vec![0.0; 257]);
        let sq = SquareFunction::new(&SquareFunctionConfig::new(2.0).with_kind(SemigroupKind::Delta), &dec).unwrap();
        let f = g.field_from_fn(|q| (-q[0] * q[0]).exp() * if q[0].abs() < 3.0 { 1.0 } else { 0.0 });
        assert_eq!(scaling_identity_check(&sq, &g, &f, 1.0).unwrap().max_error, 0.0);
        let rep = scaling_identity_check(&sq, &g, &f, 2.0).unwrap();
        assert!(rep.max_error < 0.05 * rep.max_value, "{rep:?}");
        let wide = g.field_from_fn(|q| if q[0].abs() < 5.0 { 1.0 } else { 0.0 });
        assert!(matches!(scaling_identity_check(&sq, &g, &wide, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn lattice_offset_is_stable() {
        let a = lattice_singular_offset(3, 2.0);
        assert!((a + 8.91).abs() < 0.02, "{a}");
    }
}
