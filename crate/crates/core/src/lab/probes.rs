//! The probe zoo: Gaussians, ball indicators, mixtures of box eigenmodes,
//! small and big atoms. Templates are defined in continuum coordinates so the
//! same zoo can be sampled on several resolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::potential::PotentialProfile;
use crate::spaces::{atom_from_shape, zero_last_node_sum, Atom, AtomKind, BanachSurrogate, VectorField};

use super::config::{derive_seed, ProbeSpec};
use super::norm::Probe;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    Gaussian { center: Vec<f64>, width: f64 },
    Indicator { center: Vec<f64>, radius: f64 },
    /// `Σ c_k Π_i sin(π k_i (x_i + L) / 2L)`.
    EigenMix { modes: Vec<(Vec<usize>, f64)> },
    /// Dipole `(y - c)_axis` on `B(c, factor ρ(c))`, made an atom.
    SmallAtom { center: Vec<f64>, radius_factor: f64, axis: usize },
    /// Constant on `B(c, factor ρ(c))`, made an atom.
    BigAtom { center: Vec<f64>, radius_factor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Gaussian,
    Indicator,
    EigenMix,
    SmallAtom,
    BigAtom,
}

impl ProbeKind {
    fn tag(self) -> &'static str {
        match self {
            Self::Gaussian => "gauss",
            Self::Indicator => "ind",
            Self::EigenMix => "eig",
            Self::SmallAtom => "small",
            Self::BigAtom => "big",
        }
    }

    pub fn is_atom(self) -> bool {
        matches!(self, Self::SmallAtom | Self::BigAtom)
    }
}

/// A probe is `Σ_m T_m ⊗ v_m` over its templates; vectors `v_m` are drawn per
/// surrogate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbePlan {
    pub id: String,
    pub kind: ProbeKind,
    pub terms: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeZoo {
    pub templates: Vec<Template>,
    /// Probes for the `L^2`, weak-`L^1` and `BMO` estimates.
    pub fields: Vec<ProbePlan>,
    /// Atom probes for the `H^1` estimate.
    pub atoms: Vec<ProbePlan>,
}

/// Scalar template on one grid, with its atom data when it is an atom.
#[derive(Clone, Debug)]
pub struct RealizedTemplate {
    pub values: Vec<f64>,
    pub atom: Option<Atom>,
}

fn uniform_point(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-half..half)).collect()
}

impl ProbeZoo {
    pub fn generate(d: usize, half_width: f64, spec: &ProbeSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "zoo"));
        let l = half_width;
        let mut templates = Vec::new();
        let mut fields = Vec::new();
        let mut atoms = Vec::new();
        let push = |templates: &mut Vec<Template>, list: &mut Vec<ProbePlan>, kind: ProbeKind, k: usize, ts: Vec<Template>| {
            let start = templates.len();
            templates.extend(ts);
            list.push(ProbePlan { id: format!("{}-{k}", kind.tag()), kind, terms: (start..templates.len()).collect() });
        };
        for k in 0..spec.gaussian {
            let m = 1 + (k % 2);
            let ts = (0..m).map(|_| Template::Gaussian { center: uniform_point(&mut rng, d, 0.5 * l), width: rng.random_range(0.1 * l..0.4 * l) }).collect();
            push(&mut templates, &mut fields, ProbeKind::Gaussian, k, ts);
        }
        for k in 0..spec.indicator {
            let ts = vec![Template::Indicator { center: uniform_point(&mut rng, d, 0.5 * l), radius: rng.random_range(0.15 * l..0.5 * l) }];
            push(&mut templates, &mut fields, ProbeKind::Indicator, k, ts);
        }
        for k in 0..spec.eigen_mix {
            let modes = (0..3)
                .map(|_| ((0..d).map(|_| rng.random_range(1..=4usize)).collect(), rng.sample::<f64, _>(StandardNormal)))
                .collect();
            push(&mut templates, &mut fields, ProbeKind::EigenMix, k, vec![Template::EigenMix { modes }]);
        }
        let small = |rng: &mut ChaCha8Rng| Template::SmallAtom { center: uniform_point(rng, d, 0.4 * l), radius_factor: 0.5, axis: rng.random_range(0..d) };
        let big = |rng: &mut ChaCha8Rng| Template::BigAtom { center: uniform_point(rng, d, 0.3 * l), radius_factor: 1.25 };
        for k in 0..spec.small_atom {
            let t = small(&mut rng);
            push(&mut templates, &mut fields, ProbeKind::SmallAtom, k, vec![t]);
        }
        for k in 0..spec.big_atom {
            let t = big(&mut rng);
            push(&mut templates, &mut fields, ProbeKind::BigAtom, k, vec![t]);
        }
        for k in 0..spec.h1_small_atoms {
            let t = small(&mut rng);
            push(&mut templates, &mut atoms, ProbeKind::SmallAtom, spec.small_atom + k, vec![t]);
        }
        for k in 0..spec.h1_big_atoms {
            let t = big(&mut rng);
            push(&mut templates, &mut atoms, ProbeKind::BigAtom, spec.big_atom + k, vec![t]);
        }
        Self { templates, fields, atoms }
    }

    pub fn plans(&self) -> impl Iterator<Item = &ProbePlan> {
        self.fields.iter().chain(&self.atoms)
    }
}

impl Template {
    pub fn realize(&self, grid: &Grid, profile: &PotentialProfile) -> Result<RealizedTemplate> {
        let l = grid.half_width();
        let scalar = BanachSurrogate::scalar();
        let atom = |center: &[f64], factor: f64, kind: AtomKind, axis: Option<usize>| -> Result<RealizedTemplate> {
            let node = grid.nearest_node(center);
            let radius = factor * profile.rho_table()?[node];
            let c = grid.node(node);
            let a = atom_from_shape(grid, node, radius, kind, profile, &scalar, |y, out| {
                out[0] = match axis {
                    Some(i) => (y[i] - c[i]) / radius,
                    None => 1.0,
                }
            })?;
            Ok(RealizedTemplate { values: a.values.component(0), atom: Some(a) })
        };
        match self {
            Template::Gaussian { center, width } => Ok(RealizedTemplate {
                values: grid
                    .field_from_fn(|y| {
                        let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-r2 / (2.0 * width * width)).exp()
                    })
                    .into_vec(),
                atom: None,
            }),
            Template::Indicator { center, radius } => Ok(RealizedTemplate {
                values: grid
                    .field_from_fn(|y| {
                        let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                        if r2 <= radius * radius { 1.0 } else { 0.0 }
                    })
                    .into_vec(),
                atom: None,
            }),
            Template::EigenMix { modes } => Ok(RealizedTemplate {
                values: grid
                    .field_from_fn(|y| {
                        modes
                            .iter()
                            .map(|(k, c)| c * k.iter().zip(y).map(|(&ki, &yi)| (std::f64::consts::PI * ki as f64 * (yi + l) / (2.0 * l)).sin()).product::<f64>())
                            .sum()
                    })
                    .into_vec(),
                atom: None,
            }),
            Template::SmallAtom { center, radius_factor, axis } => atom(center, *radius_factor, AtomKind::Small, Some(*axis)),
            Template::BigAtom { center, radius_factor } => atom(center, *radius_factor, AtomKind::Big, None),
        }
    }
}

/// Coefficient vectors `v_m` of `plan` in `x`; atoms get `‖v‖_X = 1`.
pub fn plan_coefficients(plan: &ProbePlan, x: &BanachSurrogate, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("coef/{}/{}", plan.id, x.label())));
    plan.terms
        .iter()
        .map(|_| {
            let mut v: Vec<f64> = (0..x.n).map(|_| rng.sample(StandardNormal)).collect();
            if plan.kind.is_atom() {
                let s = x.norm(&v);
                v.iter_mut().for_each(|c| *c /= s);
            }
            v
        })
        .collect()
}

/// `Σ_m T_m ⊗ v_m` on the grid. For an atom plan the result is returned as an
/// atom in `x`, with the exact cancellation restored.
pub fn realize_probe(grid: &Grid, realized: &[RealizedTemplate], plan: &ProbePlan, coeffs: &[Vec<f64>]) -> Result<(VectorField, Option<Atom>)> {
    let n = coeffs.first().map_or(1, Vec::len);
    let mut f = VectorField::zeros(grid.node_count(), n);
    for (&m, v) in plan.terms.iter().zip(coeffs) {
        let t = &realized[m].values;
        for (y, &ty) in t.iter().enumerate() {
            if ty != 0.0 {
                for (o, c) in f.at_mut(y).iter_mut().zip(v) {
                    *o += ty * c;
                }
            }
        }
    }
    if !plan.kind.is_atom() {
        return Ok((f, None));
    }
    let base = realized[plan.terms[0]].atom.as_ref().ok_or_else(|| Error::Argument(format!("plan {} has no atom template", plan.id)))?;
    if base.kind == AtomKind::Small {
        zero_last_node_sum(&mut f, &grid.nodes_in_ball(&base.ball));
    }
    let atom = Atom { values: f.clone(), ball: base.ball.clone(), center_node: base.center_node, kind: base.kind };
    Ok((f, Some(atom)))
}

/// Every plan of the zoo realized in `x`, for the generic estimator.
pub fn realize_zoo(grid: &Grid, profile: &PotentialProfile, zoo: &ProbeZoo, x: &BanachSurrogate, seed: u64) -> Result<Vec<Probe>> {
    let realized: Vec<RealizedTemplate> = zoo.templates.iter().map(|t| t.realize(grid, profile)).collect::<Result<_>>()?;
    zoo.plans()
        .map(|plan| {
            let (field, _) = realize_probe(grid, &realized, plan, &plan_coefficients(plan, x, seed))?;
            Ok(Probe { id: plan.id.clone(), field })
        })
        .collect()
}
