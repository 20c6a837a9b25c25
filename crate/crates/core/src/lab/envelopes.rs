//! Fitted envelopes for the heat kernel of L: the Gaussian upper bound with
//! the `(1 + √t/ρ(x) + √t/ρ(y))^{-α}` decay, and the bound
//! `|k_t - h_t| ≤ (√t/ρ(x))^δ t^{-d/2} W(|x-y|/√t)` with `W` fitted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::potential::{PotentialKind, PotentialProfile};
use crate::quad::log_space;
use crate::semigroup::{heat_multiplier, spectral_decompose, OperatorMatrix, SpectralDecomposition};

use super::config::{derive_seed, EnvelopeSpec, RunConfig};
use super::report::{fmt_f64, ReportBundle};

/// Ladder `2^{j/4}`, `j = 0..=160`, for the fitted constant.
pub const C_LADDER_STEPS: usize = 160;
/// Kernel values below `1e-10 (4πt)^{-d/2}` in magnitude are rounding noise.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triple {
    pub x: usize,
    pub y: usize,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpperBoundFit {
    pub alpha: f64,
    pub c_alpha: f64,
    pub max_ratio: f64,
    pub triples: usize,
    pub noise_skipped: usize,
    pub negative: usize,
    pub violations: usize,
    pub worst: Option<Triple>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeBin {
    pub s_lo: f64,
    pub s_hi: f64,
    pub train_max: f64,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DifferenceFit {
    pub delta: f64,
    pub margin: f64,
    pub bins: Vec<EnvelopeBin>,
    pub train: usize,
    pub holdout: usize,
    pub holdout_violations: usize,
    /// Largest holdout value over the envelope.
    pub worst_holdout_ratio: f64,
    pub worst: Option<Triple>,
    /// All differences vanish, so every envelope passes.
    pub trivial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosedFormCheck {
    pub c: f64,
    pub triples: usize,
    /// `max |(h - k) - (1 - e^{-ct}) h| / ((1 - e^{-ct}) (4πt)^{-d/2})`.
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub resolution: usize,
    pub t_values: Vec<f64>,
    pub upper: UpperBoundFit,
    pub difference: DifferenceFit,
    pub closed_form: Option<ClosedFormCheck>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.upper.violations == 0 && self.upper.c_alpha.is_finite() && self.difference.holdout_violations == 0
    }

    pub fn to_bundle(&self) -> Result<ReportBundle> {
        let mut b = ReportBundle::new();
        b.section("envelopes", self)?;
        let t = b.table_mut("envelope_bins", &["s_lo", "s_hi", "train_max", "w"]);
        for bin in &self.difference.bins {
            t.push(vec![fmt_f64(bin.s_lo), fmt_f64(bin.s_hi), fmt_f64(bin.train_max), fmt_f64(bin.w)]);
        }
        b.log(format!(
            "envelopes: C_alpha = {} (max ratio {}), holdout violations {}",
            self.upper.c_alpha, self.upper.max_ratio, self.difference.holdout_violations
        ));
        Ok(b)
    }
}

/// Default `t` range `[2h², L²/4]`.
pub fn t_values(grid: &Grid, spec: &EnvelopeSpec) -> Vec<f64> {
    let h = grid.spacing();
    let lo = spec.t_min.unwrap_or(2.0 * h * h);
    let hi = spec.t_max.unwrap_or(0.25 * grid.half_width() * grid.half_width());
    if spec.t_count == 1 {
        vec![lo]
    } else {
        log_space(lo, hi, spec.t_count)
    }
}

pub fn sample_triples(grid: &Grid, spec: &EnvelopeSpec, ts: &[f64], seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    let interior = grid.interior_nodes(spec.interior_fraction);
    if interior.is_empty() {
        return Err(Error::Domain("no interior node to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "envelopes"));
    Ok((0..spec.triples)
        .map(|_| (interior[rng.random_range(0..interior.len())], interior[rng.random_range(0..interior.len())], rng.random_range(0..ts.len())))
        .collect())
}

fn ladder_value(ratio: f64) -> Option<f64> {
    (0..=C_LADDER_STEPS).map(|j| 2f64.powf(j as f64 / 4.0)).find(|c| *c >= ratio)
}

/// Fits both envelopes from kernel values `k(x, y, i)` and `h(x, y, i)` at
/// `t = ts[i]`.
pub fn fit_envelopes_with<K, H>(grid: &Grid, profile: &PotentialProfile, spec: &EnvelopeSpec, seed: u64, ts: &[f64], k: K, h: H) -> Result<EnvelopeReport>
where
    K: Fn(usize, usize, usize) -> f64 + Sync,
    H: Fn(usize, usize, usize) -> f64 + Sync,
{
    let rho = profile.rho_table()?;
    let d = grid.dim() as f64;
    let triples = sample_triples(grid, spec, ts, seed)?;
    let values: Vec<(f64, f64)> = triples.par_iter().map(|&(x, y, i)| (k(x, y, i), h(x, y, i))).collect();
    let floor = |t: f64| NOISE_FLOOR * (4.0 * std::f64::consts::PI * t).powf(-d / 2.0);
    let triple = |j: usize| Triple { x: triples[j].0, y: triples[j].1, t: ts[triples[j].2] };

    // Upper bound.
    let (mut max_ratio, mut worst, mut noise, mut negative) = (0.0f64, None, 0, 0);
    let mut ratios = vec![0.0; triples.len()];
    for (j, &(x, y, i)) in triples.iter().enumerate() {
        let t = ts[i];
        let kv = values[j].0;
        if kv < -floor(t) {
            negative += 1;
            continue;
        }
        if kv.abs() <= floor(t) {
            noise += 1;
            continue;
        }
        let r2 = grid.node_distance(x, y).powi(2);
        let st = t.sqrt();
        let bound = t.powf(-d / 2.0) * (-r2 / (5.0 * t)).exp() * (1.0 + st / rho[x] + st / rho[y]).powf(-spec.alpha);
        ratios[j] = kv / bound;
        if ratios[j] > max_ratio {
            max_ratio = ratios[j];
            worst = Some(j);
        }
    }
    let c_alpha = ladder_value(max_ratio).ok_or_else(|| {
        Error::Fit(format!("no ladder constant bounds the heat kernel; worst triple {:?} with ratio {max_ratio:e}", worst.map(triple)))
    })?;
    let upper = UpperBoundFit {
        alpha: spec.alpha,
        c_alpha,
        max_ratio,
        triples: triples.len(),
        noise_skipped: noise,
        negative,
        violations: negative + ratios.iter().filter(|r| **r > c_alpha).count(),
        worst: worst.map(triple),
    };

    // Difference envelope on a train / holdout split.
    let delta = profile.delta();
    let scaled: Vec<(f64, f64)> = triples
        .iter()
        .zip(&values)
        .map(|(&(x, y, i), &(kv, hv))| {
            let t = ts[i];
            let diff = (kv - hv).abs();
            let diff = if diff <= floor(t) { 0.0 } else { diff };
            let s = grid.node_distance(x, y) / t.sqrt();
            (s, diff * t.powf(d / 2.0) * (rho[x] / t.sqrt()).powf(delta))
        })
        .collect();
    let holdout = ((spec.holdout_fraction * triples.len() as f64).ceil() as usize).clamp(1, triples.len() - 1);
    let train = triples.len() - holdout;
    let s_max = scaled.iter().map(|p| p.0).fold(0.0f64, f64::max) * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let width = s_max / spec.bins as f64;
    let bin_of = |s: f64| ((s / width) as usize).min(spec.bins - 1);
    let mut train_max = vec![0.0f64; spec.bins];
    for &(s, v) in &scaled[..train] {
        let b = bin_of(s);
        train_max[b] = train_max[b].max(v);
    }
    let w: Vec<f64> = (0..spec.bins)
        .map(|j| spec.margin * train_max[j.saturating_sub(1)..].iter().copied().fold(0.0, f64::max))
        .collect();
    let (mut violations, mut worst_ratio, mut worst_j) = (0, 0.0f64, None);
    for (j, &(s, v)) in scaled.iter().enumerate().skip(train) {
        let wb = w[bin_of(s)];
        if v > wb {
            violations += 1;
        }
        let ratio = if v == 0.0 { 0.0 } else { v / wb };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_j = Some(j);
        }
    }
    let difference = DifferenceFit {
        delta,
        margin: spec.margin,
        bins: (0..spec.bins).map(|j| EnvelopeBin { s_lo: j as f64 * width, s_hi: (j + 1) as f64 * width, train_max: train_max[j], w: w[j] }).collect(),
        train,
        holdout,
        holdout_violations: violations,
        worst_holdout_ratio: worst_ratio,
        worst: worst_j.map(triple),
        trivial: scaled.iter().all(|p| p.1 == 0.0),
    };

    let closed_form = match profile.kind() {
        PotentialKind::Constant(c) => {
            let mut max_rel = 0.0f64;
            let mut count = 0;
            for (&(_, _, i), &(kv, hv)) in triples.iter().zip(&values) {
                let t = ts[i];
                let factor = 1.0 - (-c * t).exp();
                if factor > 0.0 {
                    let scale = factor * (4.0 * std::f64::consts::PI * t).powf(-d / 2.0);
                    max_rel = max_rel.max(((hv - kv) - factor * hv).abs() / scale);
                    count += 1;
                }
            }
            Some(ClosedFormCheck { c: *c, triples: count, max_rel_error: max_rel })
        }
        _ => None,
    };
    Ok(EnvelopeReport { resolution: grid.points_per_axis(), t_values: ts.to_vec(), upper, difference, closed_form })
}

/// Spectral kernels of L and of the discrete Laplacian on the same grid.
pub fn spectral_sources(dec: &SpectralDecomposition, ts: &[f64]) -> Vec<Vec<f64>> {
    ts.iter().map(|&t| heat_multiplier(dec.eigenvalues(), t)).collect()
}

pub fn fit_kernel_envelopes(cfg: &RunConfig) -> Result<EnvelopeReport> {
    cfg.validate()?;
    let grid = cfg.base_grid()?;
    let profile = cfg.profile_on(&grid)?;
    let dec = spectral_decompose(&OperatorMatrix::assemble(&grid, profile.values(), cfg.node_cap)?)?;
    let dec0 = spectral_decompose(&OperatorMatrix::assemble(&grid, &vec![0.0; grid.node_count()], cfg.node_cap)?)?;
    let ts = t_values(&grid, &cfg.envelopes);
    let mk = spectral_sources(&dec, &ts);
    let mh = spectral_sources(&dec0, &ts);
    fit_envelopes_with(&grid, &profile, &cfg.envelopes, cfg.seed, &ts, |x, y, i| dec.kernel_entry(&mk[i], x, y), |x, y, i| dec0.kernel_entry(&mh[i], x, y))
}
