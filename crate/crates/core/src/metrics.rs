//! Evaluation: equal error rate and the minimum normalized tandem detection
//! cost over countermeasure score sets.
//!
//! Both metrics sweep the same candidate thresholds: every distinct score
//! plus the two infinities. At a threshold the miss rate is the fraction of
//! bonafide scores below it and the false-acceptance rate the fraction of
//! spoof scores at or above it.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::formats::{Label, ManifestEntry, ScoreRecord};

/// Labeled scores; higher means more bonafide-like.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    records: Vec<(f64, Label)>,
}

impl ScoreSet {
    pub fn new(records: Vec<(f64, Label)>) -> Result<Self> {
        for (i, (score, _)) in records.iter().enumerate() {
            if !score.is_finite() {
                return Err(Error::NonFinite {
                    context: "ScoreSet",
                    index: i,
                });
            }
        }
        Ok(ScoreSet { records })
    }

    /// Join a score file with manifest labels by utterance id. Every score
    /// must have a label; manifest entries without scores are ignored.
    pub fn from_records(scores: &[ScoreRecord], labels: &[ManifestEntry]) -> Result<Self> {
        let by_id: HashMap<&str, Label> =
            labels.iter().map(|e| (e.utt_id.as_str(), e.label)).collect();
        let mut records = Vec::with_capacity(scores.len());
        for s in scores {
            let label = by_id.get(s.utt_id.as_str()).ok_or_else(|| {
                Error::Dataset(format!("score for unknown utt_id {:?}", s.utt_id))
            })?;
            records.push((s.score, *label));
        }
        ScoreSet::new(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let bona = self
            .records
            .iter()
            .filter(|(_, l)| *l == Label::Bonafide)
            .count();
        (bona, self.records.len() - bona)
    }

    pub fn records(&self) -> &[(f64, Label)] {
        &self.records
    }
}

/// Priors, costs, and the verification system's fixed operating point for
/// the tandem cost.
#[derive(Clone, Copy, Debug)]
pub struct TdcfCostModel {
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfCostModel {
    fn default() -> Self {
        TdcfCostModel {
            pi_tar: 0.9405,
            pi_non: 0.0095,
            pi_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.0,
            p_fa_asv: 0.0,
            p_miss_spoof_asv: 0.0,
        }
    }
}

impl TdcfCostModel {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.pi_tar, self.pi_non, self.pi_spoof];
        if priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("priors must be positive".into()));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("priors must sum to 1, got {sum}")));
        }
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm];
        if costs.iter().any(|&c| c <= 0.0) {
            return Err(Error::Config("costs must be positive".into()));
        }
        for (name, p) in [
            ("p_miss_asv", self.p_miss_asv),
            ("p_fa_asv", self.p_fa_asv),
            ("p_miss_spoof_asv", self.p_miss_spoof_asv),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Parse a key=value block (bare field names, `#` comments) on top of
    /// the defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut model = TdcfCostModel::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("cost model line {}: expected key=value", i + 1))
            })?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("cost model key {key:?}: bad number {value:?}"))
            })?;
            match key {
                "pi_tar" => model.pi_tar = value,
                "pi_non" => model.pi_non = value,
                "pi_spoof" => model.pi_spoof = value,
                "c_miss_asv" => model.c_miss_asv = value,
                "c_fa_asv" => model.c_fa_asv = value,
                "c_miss_cm" => model.c_miss_cm = value,
                "c_fa_cm" => model.c_fa_cm = value,
                "p_miss_asv" => model.p_miss_asv = value,
                "p_fa_asv" => model.p_fa_asv = value,
                "p_miss_spoof_asv" => model.p_miss_spoof_asv = value,
                other => {
                    return Err(Error::Config(format!("unknown cost model key {other:?}")))
                }
            }
        }
        model.validate()?;
        Ok(model)
    }
}

/// Evaluation summary, printable as a key=value block.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: Option<f64>,
    pub tdcf_threshold: Option<f64>,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eer={:.6}", self.eer)?;
        writeln!(f, "eer_threshold={:.6}", self.eer_threshold)?;
        if let (Some(cost), Some(thr)) = (self.min_tdcf, self.tdcf_threshold) {
            writeln!(f, "min_tdcf={cost:.6}")?;
            writeln!(f, "tdcf_threshold={thr:.6}")?;
        }
        writeln!(f, "n_bonafide={}", self.n_bonafide)?;
        write!(f, "n_spoof={}", self.n_spoof)
    }
}

/// One point of the detection trade-off trace.
struct RatePoint {
    threshold: f64,
    p_miss: f64,
    p_fa: f64,
}

/// Miss/false-acceptance rates at every candidate threshold, ascending.
fn rate_curve(set: &ScoreSet) -> Result<Vec<RatePoint>> {
    let (n_bona, n_spoof) = set.counts();
    if n_bona == 0 || n_spoof == 0 {
        return Err(Error::SingleClass(set.len()));
    }
    let mut sorted: Vec<(f64, Label)> = set.records().to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let mut points = vec![RatePoint {
        threshold: f64::NEG_INFINITY,
        p_miss: 0.0,
        p_fa: 1.0,
    }];
    let mut bona_below = 0usize;
    let mut spoof_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        points.push(RatePoint {
            threshold,
            p_miss: bona_below as f64 / n_bona as f64,
            p_fa: (n_spoof - spoof_below) as f64 / n_spoof as f64,
        });
        // Consume the tie group so each distinct score appears once.
        while i < sorted.len() && sorted[i].0 == threshold {
            match sorted[i].1 {
                Label::Bonafide => bona_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push(RatePoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate: the crossing of the miss and false-acceptance traces,
/// linearly interpolated between adjacent candidate points.
pub fn compute_eer(set: &ScoreSet) -> Result<(f64, f64)> {
    let points = rate_curve(set)?;
    // p_miss - p_fa is non-decreasing, from -1 at -inf to +1 at +inf.
    for i in 0..points.len() {
        let diff = points[i].p_miss - points[i].p_fa;
        if diff == 0.0 {
            return Ok((points[i].p_miss, points[i].threshold));
        }
        if diff > 0.0 {
            let prev = &points[i - 1];
            let cur = &points[i];
            let d_prev = prev.p_miss - prev.p_fa;
            let t = -d_prev / (diff - d_prev);
            let eer = prev.p_miss + t * (cur.p_miss - prev.p_miss);
            let threshold = if prev.threshold.is_infinite() {
                cur.threshold
            } else if cur.threshold.is_infinite() {
                prev.threshold
            } else {
                prev.threshold + t * (cur.threshold - prev.threshold)
            };
            return Ok((eer, threshold));
        }
    }
    unreachable!("the trace ends at p_miss - p_fa = 1");
}

/// Cost coefficients for the countermeasure's miss and false-acceptance
/// rates, from the priors, costs, and the fixed verification operating
/// point. Both must be positive for the normalization to make sense.
pub fn tdcf_coefficients(model: &TdcfCostModel) -> Result<(f64, f64)> {
    model.validate()?;
    let c1 = model.pi_tar * (model.c_miss_cm - model.c_miss_asv * model.p_miss_asv)
        - model.pi_non * model.c_fa_asv * model.p_fa_asv;
    let c2 = model.c_fa_cm * model.pi_spoof * (1.0 - model.p_miss_spoof_asv);
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(Error::DegenerateCostModel { c1, c2 });
    }
    Ok((c1, c2))
}

/// Minimum over candidate thresholds of
/// (C1 * p_miss + C2 * p_fa) / min(C1, C2).
pub fn compute_min_tdcf(set: &ScoreSet, model: &TdcfCostModel) -> Result<(f64, f64)> {
    let (c1, c2) = tdcf_coefficients(model)?;
    let denom = c1.min(c2);
    let points = rate_curve(set)?;
    let mut best = f64::INFINITY;
    let mut best_threshold = f64::NEG_INFINITY;
    for p in &points {
        let cost = (c1 * p.p_miss + c2 * p.p_fa) / denom;
        if cost < best {
            best = cost;
            best_threshold = p.threshold;
        }
    }
    Ok((best, best_threshold))
}

/// EER plus, when a cost model is supplied, the minimum tandem cost.
pub fn evaluate(set: &ScoreSet, cost_model: Option<&TdcfCostModel>) -> Result<MetricReport> {
    let (eer, eer_threshold) = compute_eer(set)?;
    let (min_tdcf, tdcf_threshold) = match cost_model {
        Some(m) => {
            let (cost, thr) = compute_min_tdcf(set, m)?;
            (Some(cost), Some(thr))
        }
        None => (None, None),
    };
    let (n_bonafide, n_spoof) = set.counts();
    Ok(MetricReport {
        eer,
        eer_threshold,
        min_tdcf,
        tdcf_threshold,
        n_bonafide,
        n_spoof,
    })
}
