//! Validity, efficiency and adaptivity of prediction regions, plus the
//! point-localization metrics (mean point error and success detection rate).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibrate::{uncertainty, PointSource};
use crate::error::{Error, Result};
use crate::io::Example;
use crate::region::PredictionRegion;

/// SDR radii reported by default, in mm.
pub const DEFAULT_SDR_THRESHOLDS: [f64; 4] = [2.0, 2.5, 3.0, 4.0];

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// Fraction of truths inside their regions.
pub fn coverage(regions: &[PredictionRegion], truths: &[Vec<f64>]) -> Result<f64> {
    same_len(regions.len(), truths.len())?;
    if regions.is_empty() {
        return Err(Error::DegenerateInput("no regions".into()));
    }
    let mut hits = 0usize;
    for (r, y) in regions.iter().zip(truths) {
        if r.contains(y)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / regions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyStats {
    #[serde(with = "crate::json_float")]
    pub mean: f64,
    #[serde(with = "crate::json_float")]
    pub std: f64,
    #[serde(with = "crate::json_float")]
    pub median: f64,
    #[serde(with = "crate::json_float")]
    pub q1: f64,
    #[serde(with = "crate::json_float")]
    pub q3: f64,
}

/// Linear interpolation between order statistics at `(n-1)·p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Mean, population std, median and quartiles of region measures.
pub fn summarize(measures: &[f64]) -> Result<EfficiencyStats> {
    if measures.is_empty() {
        return Err(Error::DegenerateInput("no measures".into()));
    }
    let n = measures.len() as f64;
    let mean = measures.iter().sum::<f64>() / n;
    let std = if mean.is_finite() {
        (measures.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt()
    } else {
        f64::NAN
    };
    let mut sorted = measures.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EfficiencyStats {
        mean,
        std,
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    })
}

pub fn efficiency_stats(regions: &[PredictionRegion]) -> Result<EfficiencyStats> {
    let measures = regions
        .iter()
        .map(PredictionRegion::measure)
        .collect::<Result<Vec<_>>>()?;
    summarize(&measures)
}

/// 1-based ranks, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's r_s: Pearson correlation of average ranks.
pub fn spearman(sizes: &[f64], errors: &[f64]) -> Result<f64> {
    same_len(sizes.len(), errors.len())?;
    if sizes.len() < 2 {
        return Err(Error::DegenerateInput("need at least two pairs".into()));
    }
    let rx = average_ranks(sizes);
    let ry = average_ranks(errors);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrEntry {
    pub threshold_mm: f64,
    pub rate: f64,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean error and the fraction of errors strictly below each
/// threshold.
pub fn point_metrics(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<(f64, Vec<SdrEntry>)> {
    same_len(preds.len(), truths.len())?;
    if preds.is_empty() {
        return Err(Error::DegenerateInput("no predictions".into()));
    }
    let dist: Vec<f64> = preds.iter().zip(truths).map(|(p, t)| euclidean(p, t)).collect();
    Ok(sdr_from_errors(&dist, thresholds))
}

fn sdr_from_errors(dist: &[f64], thresholds: &[f64]) -> (f64, Vec<SdrEntry>) {
    let n = dist.len() as f64;
    let pe = dist.iter().sum::<f64>() / n;
    let sdr = thresholds
        .iter()
        .map(|&t| SdrEntry {
            threshold_mm: t,
            rate: dist.iter().filter(|&&e| e < t).count() as f64 / n,
        })
        .collect();
    (pe, sdr)
}

/// Per example outcome feeding a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub landmark: usize,
    pub covered: bool,
    pub measure: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub coverage: f64,
    pub efficiency: EfficiencyStats,
    /// Spearman r_s between region measure and point error; 0 when undefined.
    pub adaptivity: f64,
    pub adaptivity_defined: bool,
    pub pe_mean: f64,
    pub sdr: Vec<SdrEntry>,
}

impl EvaluationReport {
    pub fn from_observations(obs: &[Observation], thresholds: &[f64]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::DegenerateInput("no observations".into()));
        }
        let measures: Vec<f64> = obs.iter().map(|o| o.measure).collect();
        let errors: Vec<f64> = obs.iter().map(|o| o.error).collect();
        let (adaptivity, adaptivity_defined) = match spearman(&measures, &errors) {
            Ok(r) => (r, true),
            Err(e) => {
                log::warn!("adaptivity undefined: {e}");
                (0.0, false)
            }
        };
        let (pe_mean, sdr) = sdr_from_errors(&errors, thresholds);
        Ok(EvaluationReport {
            n: obs.len(),
            coverage: obs.iter().filter(|o| o.covered).count() as f64 / obs.len() as f64,
            efficiency: summarize(&measures)?,
            adaptivity,
            adaptivity_defined,
            pe_mean,
            sdr,
        })
    }
}

/// Pooled and per-landmark reports for one method at one α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub method: String,
    pub alpha: f64,
    pub pooled: EvaluationReport,
    pub per_landmark: BTreeMap<usize, EvaluationReport>,
}

pub fn observe(
    regions: &[PredictionRegion],
    examples: &[Example],
    point: PointSource,
) -> Result<Vec<Observation>> {
    same_len(regions.len(), examples.len())?;
    regions
        .iter()
        .zip(examples)
        .map(|(r, ex)| {
            let p = uncertainty::point_prediction(ex, point, "evaluate")?;
            Ok(Observation {
                landmark: ex.landmark,
                covered: r.contains(&ex.truth)?,
                measure: r.measure()?,
                error: euclidean(&p, &ex.truth),
            })
        })
        .collect()
}

impl ReportSet {
    pub fn build(
        method: impl Into<String>,
        alpha: f64,
        obs: &[Observation],
        thresholds: &[f64],
    ) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<Observation>> = BTreeMap::new();
        for o in obs {
            groups.entry(o.landmark).or_default().push(o.clone());
        }
        let per_landmark = groups
            .into_iter()
            .map(|(k, g)| Ok((k, EvaluationReport::from_observations(&g, thresholds)?)))
            .collect::<Result<_>>()?;
        Ok(ReportSet {
            method: method.into(),
            alpha,
            pooled: EvaluationReport::from_observations(obs, thresholds)?,
            per_landmark,
        })
    }

    /// Aligned text table: one row per landmark, then the pooled row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "method: {}   alpha: {}   nominal coverage: {:.1}%",
            self.method,
            self.alpha,
            100.0 * (1.0 - self.alpha)
        );
        let mut header = format!(
            "{:<9} {:>6} {:>9} {:>11} {:>11} {:>11} {:>11} {:>11} {:>8} {:>8}",
            "landmark", "n", "cov(%)", "mean", "std", "median", "q1", "q3", "r_s", "PE(mm)"
        );
        for s in &self.pooled.sdr {
            let _ = write!(header, " {:>9}", format!("SDR@{}", s.threshold_mm));
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        let row = |label: String, r: &EvaluationReport| {
            let e = &r.efficiency;
            let mut line = format!(
                "{:<9} {:>6} {:>9.2} {:>11.4} {:>11.4} {:>11.4} {:>11.4} {:>11.4} {:>8.4} {:>8.3}",
                label,
                r.n,
                100.0 * r.coverage,
                e.mean,
                e.std,
                e.median,
                e.q1,
                e.q3,
                r.adaptivity,
                r.pe_mean
            );
            for s in &r.sdr {
                let _ = write!(line, " {:>8.2}%", 100.0 * s.rate);
            }
            line
        };
        for (k, r) in &self.per_landmark {
            let _ = writeln!(out, "{}", row(k.to_string(), r));
        }
        let _ = writeln!(out, "{}", row("pooled".into(), &self.pooled));
        out
    }
}
