use serde::{Deserialize, Serialize};

use crate::error::{check_alpha, Error, Result};

/// Calibration nonconformity scores with a cached descending order.
///
/// Equality compares the score multiset: the original order is not
/// serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LedgerRepr", into = "LedgerRepr")]
pub struct ScoreLedger {
    scores: Vec<f64>,
    sorted_desc: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    sorted_desc: Vec<f64>,
}

impl From<LedgerRepr> for ScoreLedger {
    fn from(r: LedgerRepr) -> Self {
        ScoreLedger::from_scores(r.sorted_desc)
    }
}

impl From<ScoreLedger> for LedgerRepr {
    fn from(l: ScoreLedger) -> Self {
        LedgerRepr {
            sorted_desc: l.sorted_desc,
        }
    }
}

impl PartialEq for ScoreLedger {
    fn eq(&self, other: &Self) -> bool {
        self.sorted_desc == other.sorted_desc
    }
}

impl ScoreLedger {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut sorted_desc = scores.clone();
        sorted_desc.sort_by(|a, b| b.total_cmp(a));
        ScoreLedger { scores, sorted_desc }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sorted_desc(&self) -> &[f64] {
        &self.sorted_desc
    }
}

/// Rank `⌊α(m+1)⌋` of the conformal threshold among `m` descending scores.
///
/// A relative slack of 1e-9 absorbs representation error in decimal alphas
/// (e.g. `0.29 * 100` evaluating to `28.999…`).
pub fn threshold_rank(alpha: f64, m: usize) -> usize {
    let x = alpha * (m + 1) as f64;
    (x + 1e-9 * x.max(1.0)).floor() as usize
}

/// `S*_{⌊α(m+1)⌋}` of the descending scores; `+∞` when the rank is below 1
/// and `-∞` when it exceeds `m`.
pub fn conformal_threshold(ledger: &ScoreLedger, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let m = ledger.len();
    if m == 0 {
        return Err(Error::EmptyLedger);
    }
    let k = threshold_rank(alpha, m);
    Ok(if k < 1 {
        f64::INFINITY
    } else if k > m {
        f64::NEG_INFINITY
    } else {
        ledger.sorted_desc[k - 1]
    })
}
