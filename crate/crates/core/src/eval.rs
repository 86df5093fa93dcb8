//! Confusion counting and the FAR/FRR/HTER metrics, threshold sweeps, and
//! report emission.
//!
//! Rates are counts divided once in 64-bit floats; percentages appear only
//! at display time.

use serde::Serialize;

use crate::dataset::Liveness;
use crate::error::{Error, Result};
use crate::protocol::{Decision, Verdict};

/// The four confusion cells of a decision set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub real_accepted: usize,
    pub real_rejected: usize,
    pub fake_accepted: usize,
    pub fake_rejected: usize,
}

impl ConfusionCounts {
    pub fn reals(&self) -> usize {
        self.real_accepted + self.real_rejected
    }

    pub fn fakes(&self) -> usize {
        self.fake_accepted + self.fake_rejected
    }

    /// False rejection rate: rejected reals over all reals.
    pub fn frr(&self) -> f64 {
        self.real_rejected as f64 / self.reals() as f64
    }

    /// False acceptance rate: accepted fakes over all fakes.
    pub fn far(&self) -> f64 {
        self.fake_accepted as f64 / self.fakes() as f64
    }
}

/// Threshold, rates, and the counts behind them.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
    pub hter: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(threshold: f64, counts: ConfusionCounts) -> Result<Self> {
        let frr = counts.frr();
        let far = counts.far();
        Ok(MetricsReport {
            threshold,
            frr,
            far,
            hter: hter(frr, far)?,
            counts,
        })
    }
}

/// Tallies decisions against ground truth. Both classes must be present,
/// otherwise one of the rates is undefined.
pub fn confusion_counts(decisions: &[Decision], truths: &[Liveness]) -> Result<ConfusionCounts> {
    if decisions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            op: "confusion_counts",
            decisions: decisions.len(),
            truths: truths.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (decision, truth) in decisions.iter().zip(truths) {
        match (truth, decision.verdict) {
            (Liveness::Real, Verdict::Real) => counts.real_accepted += 1,
            (Liveness::Real, Verdict::Fake) => counts.real_rejected += 1,
            (Liveness::Fake, Verdict::Real) => counts.fake_accepted += 1,
            (Liveness::Fake, Verdict::Fake) => counts.fake_rejected += 1,
        }
    }
    if counts.reals() == 0 || counts.fakes() == 0 {
        return Err(Error::MissingClass {
            context: "confusion_counts",
        });
    }
    Ok(counts)
}

/// Half total error rate: `(FRR + FAR) / 2`.
pub fn hter(frr: f64, far: f64) -> Result<f64> {
    for (name, value) in [("FRR", frr), ("FAR", far)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::RateOutOfRange { name, value });
        }
    }
    Ok((frr + far) / 2.0)
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub frr: f64,
    pub far: f64,
    pub hter: f64,
}

/// Candidate thresholds for a distance set: midpoints between adjacent
/// distinct sorted distances, one below the minimum, and one above the
/// maximum. The below-minimum candidate is halved off the smallest distance
/// and is omitted if the smallest distance is zero, since no positive
/// threshold rejects a zero-distance sample under the strict `d < tau` rule.
pub fn sweep_candidates(distances: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    if let (Some(&min), Some(&max)) = (sorted.first(), sorted.last()) {
        if min > 0.0 {
            candidates.push(min / 2.0);
        }
        for pair in sorted.windows(2) {
            candidates.push((pair[0] + pair[1]) / 2.0);
        }
        candidates.push(max + 1.0);
    }
    candidates
}

/// Evaluates FRR/FAR/HTER at every candidate threshold, in ascending order.
/// FRR is nonincreasing and FAR nondecreasing along the sweep.
pub fn threshold_sweep(distances: &[f64], truths: &[Liveness]) -> Result<Vec<SweepPoint>> {
    if distances.len() != truths.len() {
        return Err(Error::LengthMismatch {
            op: "threshold_sweep",
            decisions: distances.len(),
            truths: truths.len(),
        });
    }
    let reals = truths.iter().filter(|t| **t == Liveness::Real).count();
    let fakes = truths.len() - reals;
    if reals == 0 || fakes == 0 {
        return Err(Error::MissingClass {
            context: "threshold_sweep",
        });
    }
    sweep_candidates(distances)
        .into_iter()
        .map(|tau| {
            let mut real_rejected = 0usize;
            let mut fake_accepted = 0usize;
            for (&d, &truth) in distances.iter().zip(truths) {
                let accepted = d < tau;
                match truth {
                    Liveness::Real if !accepted => real_rejected += 1,
                    Liveness::Fake if accepted => fake_accepted += 1,
                    _ => {}
                }
            }
            let frr = real_rejected as f64 / reals as f64;
            let far = fake_accepted as f64 / fakes as f64;
            Ok(SweepPoint {
                tau,
                frr,
                far,
                hter: hter(frr, far)?,
            })
        })
        .collect()
}

/// Report output encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    report: &'a MetricsReport,
    sweep: &'a [SweepPoint],
}

/// Nine significant digits, scientific notation.
fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Serializes the report: CSV holds the sweep as `tau,frr,far,hter` rows with
/// nine significant digits; JSON mirrors [`MetricsReport`] plus the sweep.
pub fn emit_report(report: &MetricsReport, sweep: &[SweepPoint], format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("tau,frr,far,hter\n");
            for p in sweep {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    sig9(p.tau),
                    sig9(p.frr),
                    sig9(p.far),
                    sig9(p.hter)
                ));
            }
            out.into_bytes()
        }
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(&JsonReport { report, sweep })
                .expect("report serialization cannot fail");
            bytes.push(b'\n');
            bytes
        }
    }
}
