//! Boundedness of `g^{L,q}` on `L^2`, `L^1 → weak-L^1`, `H^1 → L^1` and
//! `BMO_L`, probed for every surrogate `X` and resolution, with the
//! localization ledger of the global part, the local difference and the
//! operator S.

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::potential::{build_covering, exhaustive_c1, PotentialProfile};
use crate::semigroup::{spectral_decompose, OperatorMatrix, SpectralDecomposition};
use crate::spaces::{bmo_l_norm, h1_norm_upper, is_atom, lp_norm, scalar_lp_norm, scalar_weak_l1, BallFamily, BanachSurrogate, VectorField};
use crate::squarefn::{annulus_audit, fit_bound, global_bound_rhs, local_bound_rhs, AnnulusAudit, SemigroupKind, SquareFunction, SquareFunctionConfig};

use super::config::RunConfig;
use super::norm::{drift_percent, NormReport};
use super::probes::{plan_coefficients, realize_probe, ProbeKind, ProbeZoo, RealizedTemplate};
use super::report::{fmt_f64, fmt_opt, ReportBundle, NORM_TABLE_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteItem {
    Lp,
    WeakL1,
    Hardy,
    Bmo,
}

impl SuiteItem {
    pub const ALL: [SuiteItem; 4] = [SuiteItem::Bmo, SuiteItem::Lp, SuiteItem::WeakL1, SuiteItem::Hardy];

    pub fn domain(self, x: &BanachSurrogate) -> String {
        let l = x.label();
        match self {
            Self::Lp => format!("L^2({l})"),
            Self::WeakL1 => format!("L^1({l})"),
            Self::Hardy => format!("H^1_L({l})"),
            Self::Bmo => format!("BMO_L({l})"),
        }
    }

    pub fn codomain(self) -> &'static str {
        match self {
            Self::Lp => "L^2",
            Self::WeakL1 => "weak-L^1",
            Self::Hardy => "L^1",
            Self::Bmo => "BMO_L",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FinitenessAudit {
    pub fields_checked: u64,
    pub values_checked: u64,
    pub nonfinite: u64,
}

impl FinitenessAudit {
    fn absorb(&mut self, values: &[f64]) -> u64 {
        let bad = values.iter().filter(|v| !v.is_finite()).count() as u64;
        self.fields_checked += 1;
        self.values_checked += values.len() as u64;
        self.nonfinite += bad;
        bad
    }
}

/// Estimates over the `n` of one exponent `r`, at one resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NDriftRow {
    pub resolution: usize,
    pub exponent: String,
    pub codomain: String,
    pub ns: Vec<usize>,
    pub estimates: Vec<f64>,
    pub drift_percent: f64,
    pub nondecreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationRow {
    pub probe: String,
    /// Nodes where `|g f - g(χ_N f)| > g_glob f`, for L and for Δ.
    pub cutoff_violations: usize,
    pub cutoff_violations_delta: usize,
    pub global_constant: f64,
    pub global_argmax: Option<usize>,
    pub local_constant: f64,
    pub local_argmax: Option<usize>,
    /// `‖g_glob f‖_2 / ‖f‖_2`, `sup g_glob f / ‖f‖_BMO` and, for atoms, `‖g_glob a‖_1`.
    pub global_lp_ratio: f64,
    pub global_sup_over_bmo: f64,
    pub global_l1: Option<f64>,
    /// The same three for `|g^L_loc f - g^Δ_loc f|`.
    pub difference_lp_ratio: f64,
    pub difference_sup_over_bmo: f64,
    pub difference_l1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationLedger {
    pub resolution: usize,
    pub rows: Vec<LocalizationRow>,
    pub total_cutoff_violations: usize,
    pub covering_size: usize,
    pub covering_overlap: usize,
    pub covered_nodes: usize,
    pub c1: f64,
    pub annulus: Option<AnnulusAudit>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub resolutions: Vec<usize>,
    pub reports: Vec<NormReport>,
    pub finiteness: FinitenessAudit,
    pub n_drift: Vec<NDriftRow>,
    pub localization: Option<LocalizationLedger>,
    #[serde(skip)]
    pub log: Vec<String>,
}

struct Stage {
    grid: Grid,
    profile: PotentialProfile,
    dec: SpectralDecomposition,
}

fn build_stage(cfg: &RunConfig, points: usize) -> Result<Stage> {
    let grid = cfg.grid_at(points)?;
    let profile = cfg.profile_on(&grid)?;
    let op = OperatorMatrix::assemble(&grid, profile.values(), cfg.node_cap)?;
    let dec = spectral_decompose(&op)?;
    Ok(Stage { grid, profile, dec })
}

type Measurements = Vec<(String, f64, f64)>;

/// Per item, `(probe id, in, out)` for the probes drawn for `x`.
fn measure_surrogate(
    cfg: &RunConfig,
    stage: &Stage,
    sq: &SquareFunction,
    zoo: &ProbeZoo,
    realized: &[RealizedTemplate],
    profiles: &[Mat<f64>],
    family: &BallFamily,
    x: &BanachSurrogate,
    audit: &mut FinitenessAudit,
) -> Result<Vec<(SuiteItem, Measurements)>> {
    let grid = &stage.grid;
    let h_d = grid.cell_volume();
    let scalar = BanachSurrogate::scalar();
    let prune = cfg.ball_family.prune;
    let evaluate = |plan: &super::probes::ProbePlan| -> Result<(VectorField, ScalarField, Option<crate::spaces::Atom>)> {
        let coeffs = plan_coefficients(plan, x, cfg.seed);
        let (f, atom) = realize_probe(grid, realized, plan, &coeffs)?;
        let terms: Vec<(&Mat<f64>, &[f64])> = plan.terms.iter().zip(&coeffs).map(|(&m, v)| (&profiles[m], v.as_slice())).collect();
        let gf = sq.combination_g(&terms, x)?;
        Ok((f, gf, atom))
    };
    let field_rows = zoo
        .fields
        .par_iter()
        .map(|plan| -> Result<(String, [(f64, f64); 3], (u64, u64, u64))> {
            let (f, gf, _) = evaluate(plan)?;
            let bad_f = f.as_slice().iter().filter(|v| !v.is_finite()).count() as u64;
            let bad_g = gf.iter().filter(|v| !v.is_finite()).count() as u64;
            if bad_f + bad_g > 0 {
                return Err(Error::NonFinite(format!("probe {} in {} at {} points per axis", plan.id, x.label(), grid.points_per_axis())));
            }
            let bmo_in = bmo_l_norm(grid, &f, x, family, prune)?.norm;
            let bmo_out = bmo_l_norm(grid, &VectorField::from_scalar(&gf), &scalar, family, prune)?.norm;
            let lp = (lp_norm(&f, 2.0, x, h_d)?, scalar_lp_norm(&gf, 2.0, h_d));
            let weak = (lp_norm(&f, 1.0, x, h_d)?, scalar_weak_l1(&gf, h_d));
            Ok((plan.id.clone(), [(bmo_in, bmo_out), lp, weak], (2, (f.as_slice().len() + gf.len()) as u64, 0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let atom_rows = zoo
        .atoms
        .par_iter()
        .map(|plan| -> Result<(String, (f64, f64), usize)> {
            let (f, gf, atom) = evaluate(plan)?;
            let atom = atom.ok_or_else(|| Error::Consistency(format!("{} is not an atom plan", plan.id)))?;
            if !is_atom(grid, &atom, &stage.profile, x)? {
                return Err(Error::Consistency(format!("probe {} fails the atom conditions in {}", plan.id, x.label())));
            }
            if gf.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("probe {} in {} at {} points per axis", plan.id, x.label(), grid.points_per_axis())));
            }
            let input = h1_norm_upper(grid, &f, &[(1.0, atom)], x)?;
            Ok((plan.id.clone(), (input, scalar_lp_norm(&gf, 1.0, h_d)), f.as_slice().len() + gf.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    for (_, _, (fields, values, _)) in &field_rows {
        audit.fields_checked += fields;
        audit.values_checked += values;
    }
    for (_, _, values) in &atom_rows {
        audit.fields_checked += 2;
        audit.values_checked += *values as u64;
    }
    let mut out = Vec::new();
    for (k, item) in [SuiteItem::Bmo, SuiteItem::Lp, SuiteItem::WeakL1].into_iter().enumerate() {
        out.push((item, field_rows.iter().map(|(id, m, _)| (id.clone(), m[k].0, m[k].1)).collect()));
    }
    out.push((SuiteItem::Hardy, atom_rows.into_iter().map(|(id, (a, b), _)| (id, a, b)).collect()));
    Ok(out)
}

fn localization_ledger(
    cfg: &RunConfig,
    stage: &Stage,
    sq: &SquareFunction,
    zoo: &ProbeZoo,
    realized: &[RealizedTemplate],
    family: &BallFamily,
) -> Result<LocalizationLedger> {
    let (grid, profile) = (&stage.grid, &stage.profile);
    let h_d = grid.cell_volume();
    let zero = vec![0.0; grid.node_count()];
    let dec_delta = spectral_decompose(&OperatorMatrix::assemble(grid, &zero, cfg.node_cap)?)?;
    let tg = sq.time_grid();
    let mut cfg_delta = SquareFunctionConfig::new(sq.config().q).with_kind(SemigroupKind::Delta);
    cfg_delta.alpha = sq.config().alpha;
    cfg_delta.t_min = Some(tg.nodes[0]);
    cfg_delta.t_max = Some(*tg.nodes.last().unwrap());
    cfg_delta.t_count = Some(tg.nodes.len());
    let sq_delta = SquareFunction::new(&cfg_delta, &dec_delta)?;
    let x = BanachSurrogate::scalar();
    let mut picks = Vec::new();
    for kind in [ProbeKind::Gaussian, ProbeKind::Indicator, ProbeKind::EigenMix, ProbeKind::SmallAtom, ProbeKind::BigAtom] {
        if let Some(p) = zoo.fields.iter().find(|p| p.kind == kind) {
            picks.push(p);
        }
    }
    let mut rows = Vec::new();
    for plan in picks {
        let coeffs = plan_coefficients(plan, &x, cfg.seed);
        let (f, _) = realize_probe(grid, realized, plan, &coeffs)?;
        let norms = f.norms(&x)?;
        let a = sq.split(grid, profile, &f, &x)?;
        let b = sq_delta.split(grid, profile, &f, &x)?;
        let global = fit_bound(&a.global, &global_bound_rhs(grid, profile, sq.config().alpha, &norms)?);
        let diff: Vec<f64> = a.local.iter().zip(b.local.iter()).map(|(p, q)| (p - q).abs()).collect();
        let local = fit_bound(&diff, &local_bound_rhs(grid, profile, profile.delta(), &norms)?);
        let f_l2 = scalar_lp_norm(&norms, 2.0, h_d);
        let f_bmo = bmo_l_norm(grid, &f, &x, family, cfg.ball_family.prune)?.norm;
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, y| m.max(*y));
        let atom = plan.kind.is_atom();
        rows.push(LocalizationRow {
            probe: plan.id.clone(),
            cutoff_violations: a.cutoff_violations().len(),
            cutoff_violations_delta: b.cutoff_violations().len(),
            global_constant: global.constant,
            global_argmax: global.argmax_node,
            local_constant: local.constant,
            local_argmax: local.argmax_node,
            global_lp_ratio: scalar_lp_norm(&a.global, 2.0, h_d) / f_l2,
            global_sup_over_bmo: sup(&a.global) / f_bmo,
            global_l1: atom.then(|| scalar_lp_norm(&a.global, 1.0, h_d)),
            difference_lp_ratio: scalar_lp_norm(&diff, 2.0, h_d) / f_l2,
            difference_sup_over_bmo: sup(&diff) / f_bmo,
            difference_l1: atom.then(|| scalar_lp_norm(&diff, 1.0, h_d)),
        });
    }
    let covering = build_covering(grid, profile)?;
    let c1 = exhaustive_c1(grid, profile)?;
    let annulus = if cfg.localization.annulus_audit { Some(annulus_audit(grid, profile, &covering, c1)?) } else { None };
    Ok(LocalizationLedger {
        resolution: grid.points_per_axis(),
        total_cutoff_violations: rows.iter().map(|r| r.cutoff_violations + r.cutoff_violations_delta).sum(),
        rows,
        covering_size: covering.len(),
        covering_overlap: covering.overlap,
        covered_nodes: covering.covered_nodes(grid),
        c1,
        annulus,
    })
}

/// Runs every item for every surrogate at every resolution of `cfg`.
///
/// The probe set of `l^r_n` contains the probes of every listed `l^r_m` with
/// `m < n`, embedded by zero padding; padding leaves both norms unchanged.
pub fn run_theorem_a_suite(cfg: &RunConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let zoo = ProbeZoo::generate(cfg.grid.d, cfg.grid.half_width, &cfg.probes, cfg.seed);
    let resolutions = cfg.resolution_list();
    let mut reports: Vec<NormReport> = Vec::new();
    let mut finiteness = FinitenessAudit::default();
    let mut log = Vec::new();
    let mut localization = None;
    for (stage_index, &points) in resolutions.iter().enumerate() {
        let stage = build_stage(cfg, points)?;
        let sq = SquareFunction::new(&cfg.square_function, &stage.dec)?;
        let eig = stage.dec.eigenvalues();
        log.push(format!(
            "resolution {points}: {} nodes, eigenvalues [{}, {}], {} t nodes on [{}, {}]",
            stage.grid.node_count(),
            eig[0],
            eig[eig.len() - 1],
            sq.time_grid().nodes.len(),
            sq.time_grid().nodes[0],
            sq.time_grid().nodes[sq.time_grid().nodes.len() - 1]
        ));
        let realized: Vec<RealizedTemplate> = zoo.templates.par_iter().map(|t| t.realize(&stage.grid, &stage.profile)).collect::<Result<_>>()?;
        let profiles: Vec<Mat<f64>> = realized.par_iter().map(|r| sq.scalar_profiles(&r.values)).collect();
        for p in &profiles {
            if finiteness.absorb(p.col_iter().flat_map(|c| c.iter().copied()).collect::<Vec<_>>().as_slice()) > 0 {
                return Err(Error::NonFinite(format!("template profile at {points} points per axis")));
            }
        }
        let family = BallFamily::ladder(&stage.grid, &stage.profile, cfg.ball_family.stride, cfg.ball_family.steps)?;
        let mut own: Vec<Vec<(SuiteItem, Measurements)>> = Vec::new();
        for x in &cfg.surrogates {
            own.push(measure_surrogate(cfg, &stage, &sq, &zoo, &realized, &profiles, &family, x, &mut finiteness)?);
            log.push(format!("resolution {points}: {} measured", x.label()));
        }
        for (i, x) in cfg.surrogates.iter().enumerate() {
            for (k, item) in SuiteItem::ALL.iter().enumerate() {
                let mut m = own[i][k].1.clone();
                for (j, y) in cfg.surrogates.iter().enumerate() {
                    if j != i && y.r == x.r && y.n < x.n {
                        m.extend(own[j][k].1.iter().map(|(id, a, b)| (format!("{}/{id}", y.label()), *a, *b)));
                    }
                }
                debug_assert_eq!(own[i][k].0, *item);
                let mut rep = NormReport::from_measurements(&format!("g^{{L,{}}}", cfg.square_function.q), &item.domain(x), item.codomain(), m)?;
                rep.resolution = Some(points);
                reports.push(rep);
            }
        }
        if stage_index == 0 && cfg.localization.enabled {
            localization = Some(localization_ledger(cfg, &stage, &sq, &zoo, &realized, &family)?);
            log.push(format!("resolution {points}: localization ledger done"));
        }
    }
    // Drift against the previous resolution.
    for k in 0..reports.len() {
        let (res, dom, cod) = (reports[k].resolution, reports[k].domain.clone(), reports[k].codomain.clone());
        let pos = resolutions.iter().position(|p| Some(*p) == res).unwrap();
        let other = if pos == 0 { resolutions.get(1) } else { resolutions.get(pos - 1) };
        if let Some(o) = other {
            if let Some(r) = reports.iter().find(|r| r.resolution == Some(*o) && r.domain == dom && r.codomain == cod) {
                reports[k].drift_percent = Some(drift_percent(reports[k].estimate, r.estimate));
            }
        }
    }
    let mut n_drift = Vec::new();
    for &points in &resolutions {
        let mut exponents: Vec<f64> = Vec::new();
        for x in &cfg.surrogates {
            if !exponents.contains(&x.r) {
                exponents.push(x.r);
            }
        }
        for r in exponents {
            let mut xs: Vec<&BanachSurrogate> = cfg.surrogates.iter().filter(|x| x.r == r).collect();
            xs.sort_by_key(|x| x.n);
            xs.dedup_by_key(|x| x.n);
            if xs.len() < 2 {
                continue;
            }
            for item in SuiteItem::ALL {
                let estimates: Vec<f64> = xs
                    .iter()
                    .map(|x| reports.iter().find(|rep| rep.resolution == Some(points) && rep.domain == item.domain(x)).map_or(f64::NAN, |rep| rep.estimate))
                    .collect();
                let lo = estimates.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = estimates.iter().copied().fold(0.0f64, f64::max);
                n_drift.push(NDriftRow {
                    resolution: points,
                    exponent: xs[0].label().split('_').next().unwrap_or_default().to_string(),
                    codomain: item.codomain().to_string(),
                    ns: xs.iter().map(|x| x.n).collect(),
                    nondecreasing: estimates.windows(2).all(|w| w[0] <= w[1]),
                    drift_percent: drift_percent(lo, hi),
                    estimates,
                });
            }
        }
    }
    Ok(SuiteOutcome { resolutions, reports, finiteness, n_drift, localization, log })
}

impl SuiteOutcome {
    pub fn to_bundle(&self, cfg: &RunConfig) -> Result<ReportBundle> {
        let mut b = ReportBundle::new();
        b.section("config", cfg)?;
        b.section("theorem_a", self)?;
        let norm = b.table_mut("norm_reports", &NORM_TABLE_HEADER);
        for r in &self.reports {
            norm.push(vec![
                r.resolution.map(|p| p.to_string()).unwrap_or_default(),
                r.operator.clone(),
                r.domain.clone(),
                r.codomain.clone(),
                fmt_f64(r.estimate),
                r.probe_count.to_string(),
                r.skipped.len().to_string(),
                r.argmax_probe.clone().unwrap_or_default(),
                fmt_opt(r.drift_percent),
            ]);
        }
        let ratios = b.table_mut("probe_ratios", &["resolution", "domain", "codomain", "probe", "input", "output", "ratio"]);
        for r in &self.reports {
            for p in &r.ratios {
                ratios.push(vec![
                    r.resolution.map(|p| p.to_string()).unwrap_or_default(),
                    r.domain.clone(),
                    r.codomain.clone(),
                    p.id.clone(),
                    fmt_f64(p.input),
                    fmt_f64(p.output),
                    fmt_f64(p.ratio),
                ]);
            }
        }
        let nd = b.table_mut("n_drift", &["resolution", "exponent", "codomain", "ns", "estimates", "drift_percent", "nondecreasing"]);
        for r in &self.n_drift {
            let join = |v: Vec<String>| v.join(";");
            nd.push(vec![
                r.resolution.to_string(),
                r.exponent.clone(),
                r.codomain.clone(),
                join(r.ns.iter().map(|n| n.to_string()).collect()),
                join(r.estimates.iter().map(|e| fmt_f64(*e)).collect()),
                fmt_f64(r.drift_percent),
                r.nondecreasing.to_string(),
            ]);
        }
        if let Some(l) = &self.localization {
            let t = b.table_mut(
                "localization",
                &["probe", "cutoff_violations", "cutoff_violations_delta", "global_constant", "local_constant", "global_lp_ratio", "global_sup_over_bmo", "global_l1", "difference_lp_ratio", "difference_sup_over_bmo", "difference_l1"],
            );
            for r in &l.rows {
                t.push(vec![
                    r.probe.clone(),
                    r.cutoff_violations.to_string(),
                    r.cutoff_violations_delta.to_string(),
                    fmt_f64(r.global_constant),
                    fmt_f64(r.local_constant),
                    fmt_f64(r.global_lp_ratio),
                    fmt_f64(r.global_sup_over_bmo),
                    fmt_opt(r.global_l1),
                    fmt_f64(r.difference_lp_ratio),
                    fmt_f64(r.difference_sup_over_bmo),
                    fmt_opt(r.difference_l1),
                ]);
            }
        }
        b.log(format!("finiteness: {} fields, {} values, {} non-finite", self.finiteness.fields_checked, self.finiteness.values_checked, self.finiteness.nonfinite));
        for line in &self.log {
            b.log(line.clone());
        }
        Ok(b)
    }
}
