use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::potential::{PotentialProfile, PotentialSpec};
use crate::semigroup::DEFAULT_NODE_CAP;
use crate::spaces::{BanachSurrogate, BALL_LADDER_STEPS};
use crate::squarefn::SquareFunctionConfig;

use super::norm::MIN_PROBES;

fn two() -> usize {
    2
}

fn ladder_steps() -> usize {
    BALL_LADDER_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallFamilySpec {
    #[serde(default = "two")]
    pub stride: usize,
    #[serde(default = "ladder_steps")]
    pub steps: usize,
    #[serde(default)]
    pub prune: bool,
}

impl Default for BallFamilySpec {
    fn default() -> Self {
        Self { stride: 2, steps: BALL_LADDER_STEPS, prune: false }
    }
}

/// Composition of the probe zoo. The first five counts feed the `L^2`,
/// weak-`L^1` and `BMO` estimates; the `h1_*` counts feed the atom estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub gaussian: usize,
    pub indicator: usize,
    pub eigen_mix: usize,
    pub small_atom: usize,
    pub big_atom: usize,
    pub h1_small_atoms: usize,
    pub h1_big_atoms: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { gaussian: 10, indicator: 8, eigen_mix: 8, small_atom: 4, big_atom: 2, h1_small_atoms: 20, h1_big_atoms: 12 }
    }
}

impl ProbeSpec {
    pub fn field_probes(&self) -> usize {
        self.gaussian + self.indicator + self.eigen_mix + self.small_atom + self.big_atom
    }

    pub fn atom_probes(&self) -> usize {
        self.h1_small_atoms + self.h1_big_atoms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeSpec {
    pub triples: usize,
    pub holdout_fraction: f64,
    pub alpha: f64,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub t_count: usize,
    /// Sampled nodes keep this fraction of the half-width from every wall.
    pub interior_fraction: f64,
    pub bins: usize,
    pub margin: f64,
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        Self { triples: 10_000, holdout_fraction: 0.2, alpha: 1.0, t_min: None, t_max: None, t_count: 16, interior_fraction: 0.25, bins: 24, margin: 1.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationSpec {
    pub enabled: bool,
    pub annulus_audit: bool,
}

impl Default for LocalizationSpec {
    fn default() -> Self {
        Self { enabled: true, annulus_audit: true }
    }
}

fn default_surrogates() -> Vec<BanachSurrogate> {
    vec![BanachSurrogate::scalar()]
}

fn default_node_cap() -> usize {
    DEFAULT_NODE_CAP
}

/// Everything a run needs. `seed` has no default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub potential: PotentialSpec,
    pub square_function: SquareFunctionConfig,
    #[serde(default = "default_surrogates")]
    pub surrogates: Vec<BanachSurrogate>,
    #[serde(default)]
    pub ball_family: BallFamilySpec,
    #[serde(default)]
    pub probes: ProbeSpec,
    pub seed: u64,
    /// Points per axis of the resolution pair; empty means `grid` only.
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub envelopes: EnvelopeSpec,
    #[serde(default)]
    pub localization: LocalizationSpec,
    #[serde(default = "default_node_cap")]
    pub node_cap: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_cap > DEFAULT_NODE_CAP {
            return Err(Error::Config(format!("node_cap {} exceeds the hard cap {DEFAULT_NODE_CAP}", self.node_cap)));
        }
        for p in self.resolution_list() {
            let grid = Grid::new(self.grid.d, self.grid.half_width, p)?;
            if grid.node_count() > self.node_cap {
                return Err(Error::Resource(format!("{} nodes at {p} points per axis exceed node_cap {}", grid.node_count(), self.node_cap)));
            }
        }
        self.square_function.validate()?;
        if self.surrogates.is_empty() {
            return Err(Error::Config("surrogate list is empty".into()));
        }
        if self.probes.field_probes() < MIN_PROBES || self.probes.atom_probes() < MIN_PROBES {
            return Err(Error::Config(format!("every norm estimate needs at least {MIN_PROBES} probes")));
        }
        if self.ball_family.steps == 0 {
            return Err(Error::Config("ball family needs at least one radius".into()));
        }
        let e = &self.envelopes;
        if !(0.0 < e.holdout_fraction && e.holdout_fraction < 1.0) || e.triples < 10 || e.bins == 0 || e.t_count == 0 {
            return Err(Error::Config("envelope spec needs 0 < holdout < 1, at least 10 triples, bins and t values".into()));
        }
        if !(e.margin >= 1.0) || !(e.alpha > 0.0) || !(0.0..0.5).contains(&e.interior_fraction) {
            return Err(Error::Config("envelope margin must be >= 1, alpha > 0 and interior fraction in [0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn resolution_list(&self) -> Vec<usize> {
        if self.resolutions.is_empty() {
            vec![self.grid.points_per_axis]
        } else {
            self.resolutions.clone()
        }
    }

    pub fn grid_at(&self, points_per_axis: usize) -> Result<Grid> {
        Grid::new(self.grid.d, self.grid.half_width, points_per_axis)
    }

    pub fn base_grid(&self) -> Result<Grid> {
        Grid::from_spec(&self.grid)
    }

    pub fn profile_on(&self, grid: &Grid) -> Result<PotentialProfile> {
        PotentialProfile::from_spec(grid, &self.potential)?.with_rho(grid)
    }
}

/// Seed of the stream named `label` under `seed` (FNV-1a then splitmix64).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
