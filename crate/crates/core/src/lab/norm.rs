use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spaces::VectorField;

/// Smallest probe count accepted by an estimate.
pub const MIN_PROBES: usize = 32;

#[derive(Clone, Debug)]
pub struct Probe {
    pub id: String,
    pub field: VectorField,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRatio {
    pub id: String,
    pub input: f64,
    pub output: f64,
    pub ratio: f64,
}

/// Lower estimate of an operator norm: the largest `out/in` over probes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormReport {
    pub operator: String,
    pub domain: String,
    pub codomain: String,
    pub resolution: Option<usize>,
    pub estimate: f64,
    pub probe_count: usize,
    pub skipped: Vec<String>,
    pub argmax_probe: Option<String>,
    /// Relative change against the other resolution, in percent.
    pub drift_percent: Option<f64>,
    pub ratios: Vec<ProbeRatio>,
}

impl NormReport {
    /// Builds the report from `(id, in, out)` triples in the given order.
    /// Probes with `in = 0` are skipped; the first maximal ratio wins ties.
    pub fn from_measurements(operator: &str, domain: &str, codomain: &str, measurements: Vec<(String, f64, f64)>) -> Result<Self> {
        if measurements.len() < MIN_PROBES {
            return Err(Error::Argument(format!("{operator}: {} probes given, at least {MIN_PROBES} needed", measurements.len())));
        }
        let probe_count = measurements.len();
        let mut ratios = Vec::new();
        let mut skipped = Vec::new();
        for (id, input, output) in measurements {
            if !input.is_finite() || !output.is_finite() {
                return Err(Error::NonFinite(format!("{operator}: probe {id} gave in = {input}, out = {output}")));
            }
            if input == 0.0 {
                skipped.push(id);
                continue;
            }
            ratios.push(ProbeRatio { ratio: output / input, id, input, output });
        }
        let mut estimate = 0.0;
        let mut argmax = None;
        for r in &ratios {
            if argmax.is_none() || r.ratio > estimate {
                estimate = r.ratio;
                argmax = Some(r.id.clone());
            }
        }
        Ok(Self {
            operator: operator.into(),
            domain: domain.into(),
            codomain: codomain.into(),
            resolution: None,
            estimate,
            probe_count,
            skipped,
            argmax_probe: argmax,
            drift_percent: None,
            ratios,
        })
    }

    /// The estimate is the maximum of the recorded ratios.
    pub fn audit(&self) -> bool {
        let max = self.ratios.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
        self.ratios.iter().all(|r| r.ratio <= self.estimate) && (self.ratios.is_empty() || max == self.estimate)
    }
}

/// `|a - b| / min(a, b)` in percent; zero when both vanish.
pub fn drift_percent(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    100.0 * (a - b).abs() / a.min(b)
}

/// Probes `apply` with every field, in parallel, recording in and out norms.
pub fn estimate_operator_norm<A, I, O>(
    operator: &str,
    domain: &str,
    codomain: &str,
    probes: &[Probe],
    apply: A,
    in_norm: I,
    out_norm: O,
) -> Result<NormReport>
where
    A: Fn(&VectorField) -> Result<VectorField> + Sync,
    I: Fn(&VectorField) -> Result<f64> + Sync,
    O: Fn(&VectorField) -> Result<f64> + Sync,
{
    let measurements = probes
        .par_iter()
        .map(|p| {
            let input = in_norm(&p.field)?;
            let output = if input == 0.0 { 0.0 } else { out_norm(&apply(&p.field)?)? };
            Ok((p.id.clone(), input, output))
        })
        .collect::<Result<Vec<_>>>()?;
    NormReport::from_measurements(operator, domain, codomain, measurements)
}
