//! Candidate scoring: a 28-32-32-2 MLP with acceptance and stealth heads,
//! trained from the pipeline's own history.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::ConeMeta;
use crate::templates::{PayloadFamily, TemplateDescriptor, TriggerFamily};

pub const SUBGRAPH_FEATURES: usize = 16;
pub const TEMPLATE_FEATURES: usize = 12;
pub const FEATURES: usize = SUBGRAPH_FEATURES + TEMPLATE_FEATURES;
pub const HIDDEN: usize = 32;
pub const HEADS: usize = 2;
/// Bumped whenever the feature layout or a normalization changes.
pub const FEATURE_VERSION: u32 = 1;
pub const NET_VERSION: &str = "mlp-28-32-32-2/v1";
pub const DEFAULT_RANK_WEIGHTS: (f64, f64) = (0.5, 0.5);

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * FEATURES;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HEADS * HIDDEN;
pub const PARAM_COUNT: usize = B3 + HEADS;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("feature dimension {got}, expected {want}")]
    Dimension { got: usize, want: usize },
    #[error("rank weights must be non-negative with a positive sum, got ({0}, {1})")]
    BadWeights(f64, f64),
    #[error("history is empty")]
    EmptyHistory,
    #[error("history contains a single acceptance class")]
    SingleClass,
    #[error("bad hyperparameters: {0}")]
    BadHyper(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Feature layout (version 1). Subgraph part:
/// 0-2 rarity pct min/median/max /100, 3 ln(size), 4 depth_to_interface/8,
/// 5 register reachable, 6 depth_to_register/8 (0 when none),
/// 7-9 overlap max/mean and disjointness mean, 10 ln(1+boundary_in),
/// 11 mean fan-in/4, 12 mean fan-out/4, 13 ln(1+max fan-out),
/// 14 anchor pct/100, 15 ln(1+reconvergent nodes).
/// Template part: 16-20 trigger one-hot, 21-25 payload one-hot,
/// 26 tap_count/8, 27 local_depth/8.
pub fn featurize(meta: &ConeMeta, boundary_in: usize, d: &TemplateDescriptor) -> FeatureVector {
    let mut v = Vec::with_capacity(FEATURES);
    v.push(meta.rarity.min / 100.0);
    v.push(meta.rarity.median / 100.0);
    v.push(meta.rarity.max / 100.0);
    v.push((meta.size.max(1) as f64).ln());
    v.push(meta.depth_to_interface as f64 / 8.0);
    v.push(if meta.depth_to_register.is_some() { 1.0 } else { 0.0 });
    v.push(meta.depth_to_register.map_or(0.0, |x| x as f64 / 8.0));
    v.push(meta.reconv.overlap_max);
    v.push(meta.reconv.overlap_mean);
    v.push(meta.reconv.disjointness_mean);
    v.push((1.0 + boundary_in as f64).ln());
    v.push(meta.mean_fanin / 4.0);
    v.push(meta.mean_fanout / 4.0);
    v.push((1.0 + meta.max_fanout as f64).ln());
    v.push(meta.anchor_pct / 100.0);
    v.push((1.0 + meta.reconv.reconvergent_nodes as f64).ln());
    for t in TriggerFamily::ALL {
        v.push(if t == d.trigger_family { 1.0 } else { 0.0 });
    }
    for p in PayloadFamily::ALL {
        v.push(if p == d.payload_family { 1.0 } else { 0.0 });
    }
    v.push(d.params.tap_count as f64 / 8.0);
    v.push(d.params.local_depth as f64 / 8.0);
    for x in v.iter_mut() {
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    FeatureVector(v)
}

/// Proxy for the stealth label when no detector feedback exists.
pub fn stealth_proxy(meta: &ConeMeta) -> f64 {
    (0.5 * meta.anchor_pct / 100.0 + 0.5 * meta.reconv.overlap_max).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acceptance: f64,
    pub stealth: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub version: String,
    pub layers: Vec<usize>,
    /// W1, b1, W2, b2, W3, b3; weight matrices row-major as (out, in).
    pub params: Vec<f64>,
}

struct Forward {
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    z: [f64; HEADS],
}

impl PolicyNet {
    pub fn zeros() -> Self {
        PolicyNet {
            version: NET_VERSION.to_string(),
            layers: vec![FEATURES, HIDDEN, HIDDEN, HEADS],
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for (start, fan_in, fan_out) in [(W1, FEATURES, HIDDEN), (W2, HIDDEN, HIDDEN), (W3, HIDDEN, HEADS)] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-a..a);
            }
        }
        p
    }

    fn check(&self, fv: &FeatureVector) -> Result<(), PolicyError> {
        if fv.len() != FEATURES {
            return Err(PolicyError::Dimension {
                got: fv.len(),
                want: FEATURES,
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let p = &self.params;
        let mut h1 = [0.0; HIDDEN];
        for (j, h) in h1.iter_mut().enumerate() {
            let row = &p[W1 + j * FEATURES..W1 + (j + 1) * FEATURES];
            let s: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + p[B1 + j];
            *h = s.max(0.0);
        }
        let mut h2 = [0.0; HIDDEN];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &p[W2 + j * HIDDEN..W2 + (j + 1) * HIDDEN];
            let s: f64 = row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>() + p[B2 + j];
            *h = s.max(0.0);
        }
        let mut z = [0.0; HEADS];
        for (k, o) in z.iter_mut().enumerate() {
            let row = &p[W3 + k * HIDDEN..W3 + (k + 1) * HIDDEN];
            *o = row.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>() + p[B3 + k];
        }
        Forward { h1, h2, z }
    }

    /// Hidden pre-activations, used to keep gradient probes off ReLU kinks.
    pub fn preactivations(&self, fv: &FeatureVector) -> Vec<f64> {
        let p = &self.params;
        let x = &fv.0;
        let f = self.forward(x);
        let mut out = Vec::with_capacity(2 * HIDDEN);
        for j in 0..HIDDEN {
            let row = &p[W1 + j * FEATURES..W1 + (j + 1) * FEATURES];
            out.push(row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + p[B1 + j]);
        }
        for j in 0..HIDDEN {
            let row = &p[W2 + j * HIDDEN..W2 + (j + 1) * HIDDEN];
            out.push(row.iter().zip(&f.h1).map(|(w, x)| w * x).sum::<f64>() + p[B2 + j]);
        }
        out
    }

    pub fn score(&self, fv: &FeatureVector) -> Result<Scores, PolicyError> {
        self.check(fv)?;
        let f = self.forward(&fv.0);
        Ok(Scores {
            acceptance: sigmoid(f.z[0]),
            stealth: sigmoid(f.z[1]),
        })
    }

    pub fn score_batch(&self, fvs: &[FeatureVector]) -> Result<Vec<Scores>, PolicyError> {
        fvs.par_iter().map(|fv| self.score(fv)).collect()
    }

    /// Mean loss over `batch` (logistic on acceptance, squared error on
    /// stealth) and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> (f64, Vec<f64>) {
        let p = &self.params;
        let mut g = vec![0.0; PARAM_COUNT];
        let mut loss = 0.0;
        let n = batch.len().max(1) as f64;
        for s in batch {
            let x = &s.x.0;
            let f = self.forward(x);
            let a = sigmoid(f.z[0]);
            let st = sigmoid(f.z[1]);
            let ya = if s.accepted { 1.0 } else { 0.0 };
            loss += softplus(f.z[0]) - ya * f.z[0] + (st - s.stealth).powi(2);
            let dz = [(a - ya) / n, 2.0 * (st - s.stealth) * st * (1.0 - st) / n];
            let mut dh2 = [0.0; HIDDEN];
            for k in 0..HEADS {
                g[B3 + k] += dz[k];
                for j in 0..HIDDEN {
                    g[W3 + k * HIDDEN + j] += dz[k] * f.h2[j];
                    dh2[j] += dz[k] * p[W3 + k * HIDDEN + j];
                }
            }
            let mut dh1 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                if f.h2[j] <= 0.0 {
                    continue;
                }
                g[B2 + j] += dh2[j];
                for i in 0..HIDDEN {
                    g[W2 + j * HIDDEN + i] += dh2[j] * f.h1[i];
                    dh1[i] += dh2[j] * p[W2 + j * HIDDEN + i];
                }
            }
            for j in 0..HIDDEN {
                if f.h1[j] <= 0.0 {
                    continue;
                }
                g[B1 + j] += dh1[j];
                for i in 0..FEATURES {
                    g[W1 + j * FEATURES + i] += dh1[j] * x[i];
                }
            }
        }
        (loss / n, g)
    }

    pub fn loss(&self, batch: &[Sample]) -> f64 {
        self.loss_and_grad(batch).0
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), PolicyError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json(text: &str) -> Result<Self, PolicyError> {
        let p: PolicyNet = serde_json::from_str(text)?;
        if p.layers != [FEATURES, HIDDEN, HIDDEN, HEADS] || p.params.len() != PARAM_COUNT {
            return Err(PolicyError::Format(format!(
                "shape {:?} with {} params",
                p.layers,
                p.params.len()
            )));
        }
        Ok(p)
    }
}

/// Orders candidates by `w_a * acceptance + w_s * stealth`, descending, ties
/// by id ascending.
pub fn rank<S: AsRef<str>>(candidates: &[(S, Scores)], weights: (f64, f64)) -> Result<Vec<String>, PolicyError> {
    let (wa, ws) = weights;
    if !(wa >= 0.0 && ws >= 0.0 && wa + ws > 0.0) {
        return Err(PolicyError::BadWeights(wa, ws));
    }
    let combined: Vec<(String, f64)> = candidates
        .iter()
        .map(|(id, s)| (id.as_ref().to_string(), wa * s.acceptance + ws * s.stealth))
        .collect();
    Ok(rank_combined(combined))
}

pub fn rank_combined(mut combined: Vec<(String, f64)>) -> Vec<String> {
    combined.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    combined.into_iter().map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    FailedEquivalence,
    FailedScan,
    FailedBudget,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Accepted => "accepted",
            Outcome::FailedEquivalence => "failed_equivalence",
            Outcome::FailedScan => "failed_scan",
            Outcome::FailedBudget => "failed_budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub candidate: String,
    pub features: FeatureVector,
    pub outcome: Outcome,
    pub stealth: f64,
}

pub fn append_history<W: Write>(mut w: W, records: &[HistoryRecord]) -> Result<(), PolicyError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(r: R) -> Result<Vec<HistoryRecord>, PolicyError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: FeatureVector,
    pub accepted: bool,
    pub stealth: f64,
}

impl From<&HistoryRecord> for Sample {
    fn from(r: &HistoryRecord) -> Self {
        Sample {
            x: r.features.clone(),
            accepted: r.outcome == Outcome::Accepted,
            stealth: r.stealth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD from `p`. Deterministic for a given seed.
pub fn train(
    p: &PolicyNet,
    history: &[HistoryRecord],
    hyper: TrainHyper,
) -> Result<(PolicyNet, TrainReport), PolicyError> {
    if history.is_empty() {
        return Err(PolicyError::EmptyHistory);
    }
    if hyper.batch_size == 0 || hyper.learning_rate.is_nan() || hyper.learning_rate <= 0.0 {
        return Err(PolicyError::BadHyper(format!("{hyper:?}")));
    }
    let samples: Vec<Sample> = history.iter().map(Sample::from).collect();
    for s in &samples {
        p.check(&s.x)?;
    }
    let pos = samples.iter().filter(|s| s.accepted).count();
    if pos == 0 || pos == samples.len() {
        return Err(PolicyError::SingleClass);
    }
    let mut net = p.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let initial_loss = net.loss(&samples);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (_, g) = net.loss_and_grad(&batch);
            for (w, d) in net.params.iter_mut().zip(&g) {
                *w -= hyper.learning_rate * d;
            }
        }
        epoch_losses.push(net.loss(&samples));
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

/// Fraction of samples whose acceptance score lands on the right side of 0.5.
pub fn training_accuracy(p: &PolicyNet, history: &[HistoryRecord]) -> f64 {
    let ok = history
        .iter()
        .filter(|r| {
            let a = p.score(&r.features).map(|s| s.acceptance).unwrap_or(0.5);
            (a > 0.5) == (r.outcome == Outcome::Accepted)
        })
        .count();
    ok as f64 / history.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{RarityStats, ReconvSummary};
    use crate::templates::builtin_library;

    fn meta(size: usize) -> ConeMeta {
        ConeMeta {
            size,
            depth_to_interface: 2,
            depth_to_register: None,
            reconv: ReconvSummary {
                overlap_max: 0.5,
                overlap_mean: 0.25,
                disjointness_mean: 0.7,
                reconvergent_nodes: 1,
            },
            rarity: RarityStats {
                min: 10.0,
                median: 50.0,
                max: 99.5,
            },
            anchor_pct: 99.5,
            mean_fanin: 2.0,
            mean_fanout: 1.5,
            max_fanout: 3,
            truncated: false,
        }
    }

    fn toy_vec(rng: &mut ChaCha8Rng) -> FeatureVector {
        FeatureVector((0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn features() {
        let lib = builtin_library();
        let a = featurize(&meta(1), 4, &lib[0]);
        assert_eq!(a.len(), FEATURES);
        assert_eq!(a, featurize(&meta(1), 4, &lib[0]));
        assert_eq!(a.0[3], 0.0);
        assert!(a.0.iter().all(|x| x.is_finite()));
        let mut d = lib[0].clone();
        d.trigger_family = TriggerFamily::HashCombo;
        let b = featurize(&meta(1), 4, &d);
        let differ: Vec<usize> = (0..FEATURES).filter(|&i| a.0[i] != b.0[i]).collect();
        assert!(differ.iter().all(|i| (16..21).contains(i)), "{differ:?}");
        assert_eq!(differ.len(), 2);
        assert!((stealth_proxy(&meta(3)) - (0.5 * 0.995 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn scoring() {
        let z = PolicyNet::zeros();
        let fv = FeatureVector(vec![1.0; FEATURES]);
        assert_eq!(
            z.score(&fv).unwrap(),
            Scores {
                acceptance: 0.5,
                stealth: 0.5
            }
        );
        assert!(matches!(
            z.score(&FeatureVector(vec![0.0; 3])),
            Err(PolicyError::Dimension { got: 3, .. })
        ));
        let p = PolicyNet::init(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fvs: Vec<FeatureVector> = (0..40).map(|_| toy_vec(&mut rng)).collect();
        let batch = p.score_batch(&fvs).unwrap();
        for (fv, s) in fvs.iter().zip(&batch) {
            assert_eq!(*s, p.score(fv).unwrap());
            assert!(s.acceptance > 0.0 && s.acceptance < 1.0);
            assert!(s.stealth > 0.0 && s.stealth < 1.0);
        }
    }

    #[test]
    fn ranking() {
        let s = |a, st| Scores {
            acceptance: a,
            stealth: st,
        };
        let c = vec![("b", s(0.9, 0.1)), ("a", s(0.1, 0.9)), ("c", s(0.5, 0.5))];
        assert_eq!(rank(&c, (1.0, 0.0)).unwrap(), ["b", "c", "a"]);
        assert_eq!(rank(&c, (0.5, 0.5)).unwrap(), ["a", "b", "c"]);
        assert_eq!(rank(&c, (1.0, 1.0)).unwrap(), rank(&c, (0.5, 0.5)).unwrap());
        assert!(rank(&c, (0.0, 0.0)).is_err());
        assert!(rank(&c, (-1.0, 2.0)).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let p = PolicyNet::init(9);
        let mut buf = Vec::new();
        p.write_json(&mut buf).unwrap();
        assert_eq!(PolicyNet::read_json(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
        let mut bad = p.clone();
        bad.params.pop();
        let text = serde_json::to_string(&bad).unwrap();
        assert!(matches!(PolicyNet::read_json(&text), Err(PolicyError::Format(_))));
    }

    #[test]
    fn history_round_trip_and_single_class() {
        let r = HistoryRecord {
            candidate: "c0".into(),
            features: FeatureVector(vec![0.25; FEATURES]),
            outcome: Outcome::FailedScan,
            stealth: 0.3,
        };
        let mut buf = Vec::new();
        append_history(&mut buf, &[r.clone(), r.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"failed_scan\""));
        assert_eq!(read_history(&buf[..]).unwrap(), vec![r.clone(), r.clone()]);
        let acc = HistoryRecord {
            outcome: Outcome::Accepted,
            ..r
        };
        assert!(matches!(
            train(&PolicyNet::init(0), &[acc], TrainHyper::default()),
            Err(PolicyError::SingleClass)
        ));
        assert!(matches!(
            train(&PolicyNet::init(0), &[], TrainHyper::default()),
            Err(PolicyError::EmptyHistory)
        ));
    }

    #[test]
    fn scan_failures_learned() {
        // feature 21 marks scan-failing candidates
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mk = |n: usize, fail: bool| -> Vec<HistoryRecord> {
            (0..n)
                .map(|i| {
                    let mut x = toy_vec(&mut rng);
                    x.0[21] = if fail { 1.0 } else { 0.0 };
                    HistoryRecord {
                        candidate: format!("{fail}{i}"),
                        features: x,
                        outcome: if fail { Outcome::FailedScan } else { Outcome::Accepted },
                        stealth: 0.5,
                    }
                })
                .collect()
        };
        let mut hist = mk(30, false);
        hist.extend(mk(30, true));
        let held_ok = mk(10, false);
        let held_bad = mk(10, true);
        let hyper = TrainHyper {
            epochs: 100,
            ..TrainHyper::default()
        };
        let (p, rep) = train(&PolicyNet::init(1), &hist, hyper).unwrap();
        assert!(rep.final_loss <= rep.initial_loss);
        let mean = |h: &[HistoryRecord]| {
            h.iter().map(|r| p.score(&r.features).unwrap().acceptance).sum::<f64>() / h.len() as f64
        };
        assert!(mean(&held_bad) < mean(&held_ok));
    }
}
