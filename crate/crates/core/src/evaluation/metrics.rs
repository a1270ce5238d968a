use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detection metrics with fake as the positive class. `ap` and `auc` are
/// `None` when only one class is present.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    pub n: usize,
    pub positives: usize,
}

impl Metrics {
    pub fn is_complete(&self) -> bool {
        self.ap.is_some() && self.auc.is_some()
    }
}

/// Mann-Whitney AUC via average ranks; tied scores count one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    Some((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64))
}

/// Step-interpolated average precision: the mean, over positives, of the
/// precision at that positive's score threshold (ties share a threshold).
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    if p == 0 || p == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let block_pos = order[i..=j].iter().filter(|&&k| positive[k]).count();
        tp += block_pos;
        seen += j - i + 1;
        ap += block_pos as f64 * tp as f64 / seen as f64;
        i = j + 1;
    }
    Some(ap / p as f64)
}

/// ACC at `threshold` (score >= threshold predicts fake), AP and AUC.
pub fn metrics(scores: &[f64], positive: &[bool], threshold: f64) -> Result<Metrics> {
    if scores.len() != positive.len() {
        return Err(Error::InvalidArgument(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to evaluate".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("detection scores".into()));
    }
    let hits = scores.iter().zip(positive).filter(|(&s, &y)| (s >= threshold) == y).count();
    Ok(Metrics {
        acc: hits as f64 / scores.len() as f64,
        ap: average_precision(scores, positive),
        auc: auc(scores, positive),
        n: scores.len(),
        positives: positive.iter().filter(|&&b| b).count(),
    })
}
