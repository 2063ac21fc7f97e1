//! Detector scoring against bundle labels under heavy class imbalance.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inserter::LabelSet;

pub const DEFAULT_TOP_K: usize = 100;
pub const MIN_COVERAGE: f64 = 0.99;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("labels contain no trigger or payload nets")]
    NoPositives,
    #[error("predictions cover {covered} of {total} labeled nets (need 99%)")]
    Coverage { covered: usize, total: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads `net,score` rows; a header row is optional.
pub fn read_predictions<R: io::Read>(input: R) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let (net, score) = match (rec.get(0), rec.get(1)) {
            (Some(n), Some(s)) => (n, s),
            _ => {
                return Err(EvalError::Parse {
                    line,
                    msg: "expected `net,score`".into(),
                })
            }
        };
        if i == 0 && net == "net" && score == "score" {
            continue;
        }
        let v: f64 = score.parse().map_err(|_| EvalError::Parse {
            line,
            msg: format!("bad score `{score}`"),
        })?;
        if !v.is_finite() {
            return Err(EvalError::Parse {
                line,
                msg: format!("non-finite score `{score}`"),
            });
        }
        out.insert(net.to_string(), v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub roc_auc: f64,
    pub average_precision: f64,
    pub best_f1: f64,
    /// One point per distinct score, thresholds descending (recall ascending).
    pub sweep: Vec<PrPoint>,
    pub cone_hit_rate: f64,
    pub top_k: usize,
    pub nets: usize,
    pub positives: usize,
    pub missing: usize,
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.5;
    }
    let sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

fn pr_sweep(scores: &[f64], positive: &[bool]) -> (Vec<PrPoint>, f64) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut out = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == t {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let precision = tp / (tp + fp);
        let recall = if n_pos > 0.0 { tp / n_pos } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        out.push(PrPoint {
            threshold: t,
            precision,
            recall,
            f1,
        });
    }
    (out, ap)
}

/// Scores `predictions` against `labels`; trigger and payload nets are the
/// positive class. Nets without a prediction score 0 and are counted in
/// `missing`.
pub fn score_predictions(
    labels: &LabelSet,
    predictions: &BTreeMap<String, f64>,
    top_k: usize,
) -> Result<DetectorMetrics, EvalError> {
    let total = labels.nets.len();
    let covered = labels.nets.keys().filter(|n| predictions.contains_key(*n)).count();
    if total == 0 || (covered as f64) < MIN_COVERAGE * total as f64 {
        return Err(EvalError::Coverage { covered, total });
    }
    let missing = total - covered;
    if missing > 0 {
        log::warn!("{missing} labeled nets have no prediction; scored 0");
    }
    let names: Vec<&String> = labels.nets.keys().collect();
    let scores: Vec<f64> = names.iter().map(|n| predictions.get(*n).copied().unwrap_or(0.0)).collect();
    let positive: Vec<bool> = labels.nets.values().map(|l| l.label.is_positive()).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let roc_auc = roc_auc(&scores, &positive);
    let (sweep, average_precision) = pr_sweep(&scores, &positive);
    let best_f1 = sweep.iter().map(|p| p.f1).fold(0.0, f64::max);

    // top-k by score, ties by net name
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| names[a].cmp(names[b])));
    let top: BTreeSet<&str> = order.iter().take(top_k).map(|&i| names[i].as_str()).collect();
    let mut cones: BTreeMap<&str, bool> = BTreeMap::new();
    for (net, l) in &labels.nets {
        if let (true, Some(c)) = (l.label.is_positive(), &l.cone_id) {
            let hit = cones.entry(c.as_str()).or_insert(false);
            *hit |= top.contains(net.as_str());
        }
    }
    let cone_hit_rate = if cones.is_empty() {
        0.0
    } else {
        cones.values().filter(|&&h| h).count() as f64 / cones.len() as f64
    };
    Ok(DetectorMetrics {
        roc_auc,
        average_precision,
        best_f1,
        sweep,
        cone_hit_rate,
        top_k,
        nets: total,
        positives: n_pos,
        missing,
    })
}

/// Predictions equal to the labels: 1 on positives, 0 elsewhere.
pub fn oracle_predictions(labels: &LabelSet) -> BTreeMap<String, f64> {
    labels
        .nets
        .iter()
        .map(|(n, l)| (n.clone(), if l.label.is_positive() { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inserter::{Label, NetLabel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize, pos: &[usize]) -> LabelSet {
        let mut s = LabelSet::default();
        for i in 0..n {
            let p = pos.contains(&i);
            s.nets.insert(
                format!("n{i:05}"),
                NetLabel {
                    label: if p { Label::Trigger } else { Label::Clean },
                    cone_id: p.then(|| format!("c{}", i % 3)),
                },
            );
        }
        s
    }

    /// Direct pair count: P(s+ > s-) + 0.5 P(s+ == s-).
    fn auc_pairs(s: &[f64], p: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if p[i] && !p[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn oracle_and_constant() {
        let l = labels(200, &[3, 50, 120]);
        let m = score_predictions(&l, &oracle_predictions(&l), DEFAULT_TOP_K).unwrap();
        assert_eq!(m.roc_auc, 1.0);
        assert_eq!(m.cone_hit_rate, 1.0);
        assert_eq!(m.average_precision, 1.0);
        let c: BTreeMap<String, f64> = l.nets.keys().map(|n| (n.clone(), 0.3)).collect();
        assert_eq!(score_predictions(&l, &c, 10).unwrap().roc_auc, 0.5);
    }

    #[test]
    fn rank_statistic_matches_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s: Vec<f64> = (0..60).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let p: Vec<bool> = (0..60).map(|i| i % 7 == 0).collect();
            assert!((roc_auc(&s, &p) - auc_pairs(&s, &p)).abs() < 1e-12);
            let flip: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
            assert!((roc_auc(&s, &p) + roc_auc(&flip, &p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_scores_near_half() {
        let pos: Vec<usize> = (0..10).map(|i| i * 997).collect();
        let l = labels(10_000, &pos);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let preds: BTreeMap<String, f64> = l.nets.keys().map(|n| (n.clone(), rng.random::<f64>())).collect();
        let m = score_predictions(&l, &preds, DEFAULT_TOP_K).unwrap();
        assert!((0.3..=0.7).contains(&m.roc_auc), "{}", m.roc_auc);
        assert!(m.sweep.windows(2).all(|w| w[0].recall <= w[1].recall));
        for p in &m.sweep {
            assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
    }

    #[test]
    fn coverage_and_parse() {
        let l = labels(200, &[1]);
        let mut preds = oracle_predictions(&l);
        preds.remove("n00000");
        let m = score_predictions(&l, &preds, 5).unwrap();
        assert_eq!(m.missing, 1);
        let few: BTreeMap<String, f64> = preds.into_iter().take(100).collect();
        assert!(matches!(score_predictions(&l, &few, 5), Err(EvalError::Coverage { .. })));
        assert!(matches!(
            score_predictions(&labels(10, &[]), &oracle_predictions(&labels(10, &[])), 5),
            Err(EvalError::NoPositives)
        ));
        let p = read_predictions("net,score\na,0.5\nb, 1\n".as_bytes()).unwrap();
        assert_eq!(p["b"], 1.0);
        assert!(matches!(read_predictions("a,x\n".as_bytes()), Err(EvalError::Parse { line: 1, .. })));
    }
}
