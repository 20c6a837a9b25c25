//! Nonnegative potentials, the critical radius function and the critical
//! covering built from it.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dist, Ball, Grid, ScalarField};

/// Number of log-spaced radii scanned before bisecting for the critical radius.
pub const RHO_LADDER_LEN: usize = 64;
/// The ladder spans `[RHO_LADDER_FLOOR * r_max, r_max]`.
pub const RHO_LADDER_FLOOR: f64 = 1e-3;
/// Search ladders for the constants of the rho comparison.
pub const K0_LADDER: [u32; 4] = [1, 2, 4, 8];
pub const C_LADDER_STEP: f64 = 0.25;
pub const C_LADDER_MAX: f64 = 16.0;

/// Potential description as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: String,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub beta: f64,
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn constant(c: f64, s: f64) -> Self {
        Self { kind: "constant".into(), c, beta: 0.0, s, table_path: None }
    }

    pub fn power(c: f64, beta: f64, s: f64) -> Self {
        Self { kind: "power".into(), c, beta, s, table_path: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    Constant(f64),
    /// `c |x|^beta`
    Power { c: f64, beta: f64 },
    /// One value per grid node.
    Table(Vec<f64>),
}

impl PotentialKind {
    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        match spec.kind.as_str() {
            "constant" => Ok(Self::Constant(spec.c)),
            "power" => {
                if spec.beta < 0.0 {
                    return Err(Error::Config(format!("power exponent must be >= 0, got {}", spec.beta)));
                }
                Ok(Self::Power { c: spec.c, beta: spec.beta })
            }
            "table" => {
                let path = spec
                    .table_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("table potential needs table_path".into()))?;
                Ok(Self::Table(read_table(path)?))
            }
            other => Err(Error::Config(format!("unknown potential kind {other:?}"))),
        }
    }

    fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        match self {
            Self::Constant(c) => Ok(ScalarField::new(vec![*c; grid.node_count()])),
            Self::Power { c, beta } => Ok(grid.field_from_fn(|x| {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                c * r2.powf(beta / 2.0)
            })),
            Self::Table(values) => {
                if values.len() != grid.node_count() {
                    return Err(Error::Config(format!(
                        "potential table has {} values, grid has {} nodes",
                        values.len(),
                        grid.node_count()
                    )));
                }
                Ok(ScalarField::new(values.clone()))
            }
        }
    }
}

/// Reads one value per row; the last column of each row is the potential.
fn read_table(path: &std::path::Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let last = record.iter().last().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            // header row
            Err(_) if out.is_empty() => continue,
            Err(_) => return Err(Error::Config(format!("bad potential value {last:?}"))),
        }
    }
    Ok(out)
}

/// Critical radius at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoEstimate {
    pub radius: f64,
    /// `F(x, r) <= 1` held up to the cap, so the radius is the cap itself.
    pub capped: bool,
}

/// A potential sampled on a grid, with its reverse Hölder exponent and,
/// once computed, the critical radius at every node.
#[derive(Clone, Debug)]
pub struct PotentialProfile {
    kind: PotentialKind,
    s: f64,
    delta: f64,
    values: ScalarField,
    rho: Vec<f64>,
    capped: Vec<bool>,
    rho_cap: f64,
}

impl PotentialProfile {
    pub fn new(grid: &Grid, kind: PotentialKind, s: f64) -> Result<Self> {
        let d = grid.dim() as f64;
        let delta = 2.0 - d / s;
        if !(s > d / 2.0) || !(delta > 0.0) {
            return Err(Error::Argument(format!("reverse Hölder exponent s = {s} must exceed d/2 = {}", d / 2.0)));
        }
        let values = kind.sample(grid)?;
        if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument(format!("potential must be finite and >= 0; node {bad} has {}", values[bad])));
        }
        Ok(Self { kind, s, delta, values, rho: Vec::new(), capped: Vec::new(), rho_cap: grid.half_width() })
    }

    pub fn from_spec(grid: &Grid, spec: &PotentialSpec) -> Result<Self> {
        Self::new(grid, PotentialKind::from_spec(spec)?, spec.s)
    }

    /// Fills the critical-radius table, capped at the box half-width.
    pub fn with_rho(mut self, grid: &Grid) -> Result<Self> {
        let cap = grid.half_width();
        let table: Vec<RhoEstimate> = (0..grid.node_count())
            .into_par_iter()
            .map(|i| critical_radius(grid, &self.values, &grid.node(i), cap))
            .collect::<Result<_>>()?;
        self.rho = table.iter().map(|e| e.radius).collect();
        self.capped = table.iter().map(|e| e.capped).collect();
        self.rho_cap = cap;
        Ok(self)
    }

    /// Replaces the critical-radius table (used by the FFI layer and tests).
    pub fn with_rho_table(mut self, rho: Vec<f64>, capped: Vec<bool>, cap: f64) -> Result<Self> {
        if rho.len() != self.values.len() || capped.len() != rho.len() {
            return Err(Error::Argument("rho table length mismatch".into()));
        }
        if rho.iter().any(|&r| !(r > 0.0 && r <= cap)) {
            return Err(Error::Argument("rho entries must lie in (0, cap]".into()));
        }
        self.rho = rho;
        self.capped = capped;
        self.rho_cap = cap;
        Ok(self)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `delta = 2 - d/s`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn values(&self) -> &ScalarField {
        &self.values
    }

    pub fn rho_cap(&self) -> f64 {
        self.rho_cap
    }

    pub fn has_rho(&self) -> bool {
        !self.rho.is_empty()
    }

    pub fn rho_table(&self) -> Result<&[f64]> {
        if self.rho.is_empty() {
            return Err(Error::Argument("rho table not populated; call with_rho first".into()));
        }
        Ok(&self.rho)
    }

    pub fn capped_flags(&self) -> &[bool] {
        &self.capped
    }

    pub fn rho(&self, node: usize) -> f64 {
        self.rho[node]
    }

    /// Writes `x_1..x_d, rho, capped` rows.
    pub fn write_rho_csv<W: Write>(&self, grid: &Grid, out: W) -> Result<()> {
        let rho = self.rho_table()?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("rho".into());
        header.push("capped".into());
        w.write_record(&header)?;
        for (i, r) in rho.iter().enumerate() {
            let mut row: Vec<String> = grid.node(i).iter().map(|c| format!("{c}")).collect();
            row.push(format!("{r}"));
            row.push(self.capped[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `F(x, r) = r^{2-d} * integral of V over B(x, r)`.
pub fn scaled_mass(grid: &Grid, v: &[f64], x: &[f64], r: f64) -> Result<f64> {
    let mass = grid.integrate_ball(v, &Ball::new(x.to_vec(), r)?)?;
    Ok(r.powi(2 - grid.dim() as i32) * mass)
}

/// Largest `r <= r_max` with `F(x, r) <= 1`.
///
/// `F` is scanned on a log-spaced ladder from the top down; the last ladder
/// radius with `F <= 1` is refined by bisection against its upper neighbour
/// to `1e-3 h`. If `F <= 1` at `r_max` the cap is returned and flagged. If no
/// ladder radius qualifies (node mass dominates a sub-cell ball) the ladder
/// floor is returned.
pub fn critical_radius(grid: &Grid, v: &[f64], x: &[f64], r_max: f64) -> Result<RhoEstimate> {
    if !(r_max > 0.0) {
        return Err(Error::Argument(format!("r_max must be positive, got {r_max}")));
    }
    let r_lo = r_max * RHO_LADDER_FLOOR;
    let ratio = (r_max / r_lo).powf(1.0 / (RHO_LADDER_LEN - 1) as f64);
    let ladder: Vec<f64> = (0..RHO_LADDER_LEN)
        .map(|k| if k + 1 == RHO_LADDER_LEN { r_max } else { r_lo * ratio.powi(k as i32) })
        .collect();
    if scaled_mass(grid, v, x, r_max)? <= 1.0 {
        return Ok(RhoEstimate { radius: r_max, capped: true });
    }
    let mut hi = r_max;
    for k in (0..RHO_LADDER_LEN - 1).rev() {
        let r = ladder[k];
        if scaled_mass(grid, v, x, r)? <= 1.0 {
            let mut lo = r;
            let tol = 1e-3 * grid.spacing();
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if scaled_mass(grid, v, x, mid)? <= 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(RhoEstimate { radius: lo, capped: false });
        }
        hi = r;
    }
    Ok(RhoEstimate { radius: r_lo, capped: false })
}

/// `sup_B (mean_B V^s)^{1/s} / mean_B V` over a finite ball family. Balls on
/// which `V` vanishes identically contribute 1.
pub fn reverse_holder_constant(grid: &Grid, v: &[f64], s: f64, family: &[Ball]) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::Argument("empty ball family".into()));
    }
    let vs: Vec<f64> = v.iter().map(|x| x.powf(s)).collect();
    let mut best = f64::NEG_INFINITY;
    for b in family {
        let mean_v = grid.ball_average(v, b)?;
        let mean_vs = grid.ball_average(&vs, b)?;
        let ratio = if mean_v == 0.0 && mean_vs == 0.0 { 1.0 } else { mean_vs.powf(1.0 / s) / mean_v };
        best = best.max(ratio);
    }
    Ok(best)
}

/// Constants of the two-sided comparison between `rho(x)` and `rho(y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoComparison {
    pub c: f64,
    pub k0: u32,
    /// Largest constant below 1 with `C1 rho(x) < rho(y) < rho(x)/C1`
    /// whenever `|x - y| <= rho(x)`.
    pub c1: f64,
}

fn comparison_need(rho_x: f64, rho_y: f64, r: f64, k0: u32) -> f64 {
    let base = 1.0 + r / rho_x;
    let lower = rho_x * base.powf(-(k0 as f64)) / rho_y;
    let upper = rho_y / (rho_x * base.powf(k0 as f64 / (k0 as f64 + 1.0)));
    lower.max(upper)
}

impl RhoComparison {
    /// Pairs on which the sandwich fails with these constants.
    pub fn violations(&self, grid: &Grid, profile: &PotentialProfile, pairs: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
        let rho = profile.rho_table()?;
        Ok(pairs
            .iter()
            .copied()
            .filter(|&(x, y)| {
                let r = grid.node_distance(x, y);
                comparison_need(rho[x], rho[y], r, self.k0) > self.c * (1.0 + 1e-12)
            })
            .collect())
    }
}

/// Fits `(c, k0)` on the ladders (smallest validating `c`, ties to the smaller
/// `k0`) and derives `C1` from the pairs that lie in the region N.
pub fn fit_rho_comparison(grid: &Grid, profile: &PotentialProfile, pairs: &[(usize, usize)]) -> Result<RhoComparison> {
    if pairs.len() < 100 {
        return Err(Error::Argument(format!("need at least 100 pairs, got {}", pairs.len())));
    }
    let rho = profile.rho_table()?;
    let c_ladder: Vec<f64> =
        (0..).map(|k| 1.0 + C_LADDER_STEP * k as f64).take_while(|&c| c <= C_LADDER_MAX + 1e-12).collect();

    let mut best: Option<(f64, u32)> = None;
    let mut worst: Option<(f64, (usize, usize))> = None;
    for &k0 in &K0_LADDER {
        let (need, pair) = pairs
            .iter()
            .map(|&(x, y)| (comparison_need(rho[x], rho[y], grid.node_distance(x, y), k0), (x, y)))
            .fold((0.0, pairs[0]), |acc, cur| if cur.0 > acc.0 { cur } else { acc });
        if worst.is_none_or(|(w, _)| need < w) {
            worst = Some((need, pair));
        }
        if let Some(&c) = c_ladder.iter().find(|&&c| need <= c * (1.0 + 1e-12)) {
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, k0));
            }
        }
    }
    let (c, k0) = best.ok_or_else(|| {
        let (need, (x, y)) = worst.expect("non-empty ladder");
        Error::Fit(format!("no (c, k0) on the ladder validates; worst pair ({x}, {y}) needs c = {need:.4}"))
    })?;

    let mut m = 1.0f64;
    for &(x, y) in pairs {
        if in_region_n(grid, profile, x, y)? {
            m = m.min(rho[y] / rho[x]).min(rho[x] / rho[y]);
        }
    }
    Ok(RhoComparison { c, k0, c1: m * (1.0 - 1e-6) })
}

/// `(x, y)` lies in N iff `|x - y| <= rho(x)`; note `rho` of the first node.
pub fn in_region_n(grid: &Grid, profile: &PotentialProfile, x: usize, y: usize) -> Result<bool> {
    let rho = profile.rho_table()?;
    let r = rho[x];
    let d = grid.node_distance(x, y);
    Ok(d * d <= r * r * (1.0 + 1e-12))
}

/// Nodes `y` with `(x, y)` in N, ascending.
pub fn region_n_row(grid: &Grid, profile: &PotentialProfile, x: usize) -> Result<Vec<usize>> {
    let rho = profile.rho_table()?;
    Ok(grid.nodes_in_ball(&Ball { center: grid.node(x), radius: rho[x] }))
}

/// `C1` from every pair of N on the grid, scaled by `1 - 1e-6`.
pub fn exhaustive_c1(grid: &Grid, profile: &PotentialProfile) -> Result<f64> {
    let rho = profile.rho_table()?;
    let m = (0..grid.node_count())
        .into_par_iter()
        .map(|x| {
            let mut m = 1.0f64;
            grid.for_each_in_ball(&Ball { center: grid.node(x), radius: rho[x] }, |y, _| {
                m = m.min(rho[y] / rho[x]).min(rho[x] / rho[y]);
            });
            m
        })
        .reduce(|| 1.0, f64::min);
    Ok(m * (1.0 - 1e-6))
}

/// The balls `Q_k = B(x_k, rho(x_k))` of a greedy maximal packing.
#[derive(Clone, Debug)]
pub struct CriticalCovering {
    pub centers: Vec<usize>,
    pub radii: Vec<f64>,
    /// `max_k card{j : 2Q_j meets 2Q_k}`.
    pub overlap: usize,
}

impl CriticalCovering {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn ball(&self, grid: &Grid, k: usize) -> Ball {
        Ball { center: grid.node(self.centers[k]), radius: self.radii[k] }
    }

    /// Indices `k` with `node` in `Q_k` (closed balls).
    pub fn containing(&self, grid: &Grid, node: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| {
                let r = grid.node_distance(node, self.centers[k]);
                r * r <= self.radii[k] * self.radii[k] * (1.0 + 1e-12)
            })
            .collect()
    }

    /// Number of grid nodes lying in at least one `Q_k`.
    pub fn covered_nodes(&self, grid: &Grid) -> usize {
        (0..grid.node_count()).filter(|&i| !self.containing(grid, i).is_empty()).count()
    }

    /// Intersection counts for every `k`, by exhaustive pair test.
    pub fn overlap_counts(&self, grid: &Grid) -> Vec<usize> {
        overlap_counts(grid, &self.centers, &self.radii)
    }
}

fn overlap_counts(grid: &Grid, centers: &[usize], radii: &[f64]) -> Vec<usize> {
    (0..centers.len())
        .map(|k| {
            (0..centers.len())
                .filter(|&j| grid.node_distance(centers[j], centers[k]) <= 2.0 * (radii[j] + radii[k]) * (1.0 + 1e-12))
                .count()
        })
        .collect()
}

/// Greedy maximal packing in lexicographic node order: a node becomes a new
/// center iff no accepted ball contains it.
pub fn build_covering(grid: &Grid, profile: &PotentialProfile) -> Result<CriticalCovering> {
    let rho = profile.rho_table()?;
    let coords = grid.coordinates();
    let d = grid.dim();
    let at = |i: usize| &coords[i * d..(i + 1) * d];
    let mut centers: Vec<usize> = Vec::new();
    for i in 0..grid.node_count() {
        let covered = centers.iter().any(|&k| {
            let r = dist(at(i), at(k));
            r * r <= rho[k] * rho[k] * (1.0 + 1e-12)
        });
        if !covered {
            centers.push(i);
        }
    }
    let radii: Vec<f64> = centers.iter().map(|&k| rho[k]).collect();
    let overlap = overlap_counts(grid, &centers, &radii).into_iter().max().unwrap_or(0);
    Ok(CriticalCovering { centers, radii, overlap })
}
