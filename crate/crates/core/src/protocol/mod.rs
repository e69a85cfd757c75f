//! Session driver: base training, frozen-backbone incremental sessions with
//! prototype updates, integrated nearest-class-mean evaluation and metrics.

mod pipeline;
mod train;
mod variant;

pub use pipeline::{
    load_data, run_ablation, run_ablation_grid, run_on_store, run_pipeline, sweep_delta, AblationRow, RunOutcome,
    SessionRecord, SweepRow,
};
pub use train::{finetune_new_rows, train_base, BaseTraining};
pub use variant::{AblationVariant, Aggregation};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::encoder::{forward_features, ModelParams};
use crate::error::{Error, Result};
use crate::feataug::{expand_batch, proxy_encode, sample_pairing, MixSource, MixtureMode, TransformSet};
use crate::numcore::{dot, l2_norm, Tensor};
use crate::rng::{self, tag};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Registered classes per session and the prototype table, keyed by proxy label.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub proxy_factor: usize,
    pub feature_dim: usize,
    pub session_classes: Vec<Vec<usize>>,
    pub prototypes: BTreeMap<usize, Vec<f64>>,
}

impl SessionState {
    pub fn new(proxy_factor: usize, feature_dim: usize) -> Self {
        Self {
            proxy_factor,
            feature_dim,
            session_classes: Vec::new(),
            prototypes: BTreeMap::new(),
        }
    }

    /// Index of the latest registered session, `None` before the first.
    pub fn session(&self) -> Option<usize> {
        self.session_classes.len().checked_sub(1)
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.session_classes.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn is_registered(&self, y: usize) -> bool {
        self.session_classes.iter().any(|s| s.contains(&y))
    }

    /// Opens a new session. Classes already seen in any earlier session, or
    /// repeated within `classes`, are rejected.
    pub fn register_session(&mut self, classes: &[usize]) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::Session("a session must introduce at least one class".into()));
        }
        let mut fresh = BTreeSet::new();
        for &y in classes {
            if self.is_registered(y) {
                return Err(Error::Session(format!("class {y} was registered in an earlier session")));
            }
            if !fresh.insert(y) {
                return Err(Error::Session(format!("class {y} listed twice in one session")));
            }
        }
        self.session_classes.push(classes.to_vec());
        Ok(())
    }

    /// Stores the normalised direction of `v` as the prototype of `(y, p)`.
    pub fn set_prototype(&mut self, y: usize, p: usize, v: &[f64]) -> Result<()> {
        if !self.is_registered(y) {
            return Err(Error::Session(format!("class {y} is not registered")));
        }
        if v.len() != self.feature_dim {
            return Err(Error::ShapeMismatch {
                op: "set_prototype",
                left: vec![self.feature_dim],
                right: vec![v.len()],
            });
        }
        let n = l2_norm(v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroNorm { row: y });
        }
        let key = proxy_encode(y, p, self.proxy_factor)?;
        self.prototypes.insert(key, v.iter().map(|x| x / n).collect());
        Ok(())
    }

    pub fn prototype(&self, y: usize, p: usize) -> Option<&[f64]> {
        if p >= self.proxy_factor {
            return None;
        }
        self.prototypes.get(&(y * self.proxy_factor + p)).map(Vec::as_slice)
    }

    /// Prototype rows of `classes` in proxy-label order, ready to become
    /// classifier rows.
    pub fn prototype_rows(&self, classes: &[usize]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(classes.len() * self.proxy_factor);
        for &y in classes {
            for p in 0..self.proxy_factor {
                let c = self
                    .prototype(y, p)
                    .ok_or_else(|| Error::Session(format!("class {y} slot {p} has no prototype")))?;
                rows.push(c.to_vec());
            }
        }
        Tensor::from_rows(&rows)
    }
}

/// How slot-1 prototypes mix the augmented features of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMix {
    pub delta: f64,
    pub mixture: MixtureMode,
    /// Off: slot 1 averages the unmixed anchor stream.
    pub mix: bool,
    pub noise_scale: f64,
}

impl Default for PrototypeMix {
    fn default() -> Self {
        Self {
            delta: 0.5,
            mixture: MixtureMode::AUG_AUG,
            mix: true,
            noise_scale: 1.0,
        }
    }
}

fn mean_rows(t: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (a, b) in m.iter_mut().zip(t.row(i)) {
            *a += b;
        }
    }
    let n = t.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Registers `classes` as a new session and computes their prototypes from
/// `inputs`/`labels` through the frozen extractor. Slot 0 is the mean
/// feature of the class; slot 1 (when the table has two slots) is the mean
/// of δ-mixed features of the class's expanded samples, paired only within
/// the class.
#[allow(clippy::too_many_arguments)]
pub fn build_prototypes(
    state: &mut SessionState,
    params: &ModelParams,
    inputs: &Tensor,
    labels: &[usize],
    classes: &[usize],
    transforms: &TransformSet,
    mix: &PrototypeMix,
    seed: u64,
) -> Result<()> {
    if state.proxy_factor > 2 {
        return Err(Error::invalid(format!("prototype slots beyond 2 are not defined (P = {})", state.proxy_factor)));
    }
    if labels.len() != inputs.rows() {
        return Err(Error::invalid("build_prototypes: one label per input row required"));
    }
    if !(0.0..=1.0).contains(&mix.delta) {
        return Err(Error::invalid(format!("delta must lie in [0,1], got {}", mix.delta)));
    }
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&y| (0..labels.len()).filter(|&i| labels[i] == y).collect())
        .collect();
    if let Some(k) = members.iter().position(Vec::is_empty) {
        return Err(Error::Session(format!("class {} has no samples", classes[k])));
    }
    state.register_session(classes)?;
    for (&y, idx) in classes.iter().zip(&members) {
        let x = inputs.gather_rows(idx)?;
        let feats = forward_features(params, &x)?;
        state.set_prototype(y, 0, &mean_rows(&feats))?;
        if state.proxy_factor < 2 {
            continue;
        }
        let (expanded, _) = expand_batch(&x, &vec![y; idx.len()], transforms)?;
        let z = forward_features(params, &expanded)?;
        let slot1 = mixed_class_features(&z, idx.len(), mix, rng::derive_seed(seed, &[tag::PROTOTYPE, y as u64]))?;
        state.set_prototype(y, 1, &mean_rows(&slot1))?;
    }
    Ok(())
}

/// δ-mix within one class. `z` holds the class's expanded features, whose
/// first `originals` rows are the untransformed samples.
fn mixed_class_features(z: &Tensor, originals: usize, mix: &PrototypeMix, seed: u64) -> Result<Tensor> {
    let n = z.rows();
    let d = z.cols();
    let source = |s: MixSource, i: usize| -> usize {
        match s {
            MixSource::Ori => i % originals,
            _ => i,
        }
    };
    if mix.mixture.anchor == MixSource::Noise {
        return Err(Error::invalid("noise cannot be the anchor stream"));
    }
    let anchor_idx: Vec<usize> = (0..n).map(|i| source(mix.mixture.anchor, i)).collect();
    let anchor = z.gather_rows(&anchor_idx)?;
    if !mix.mix {
        return Ok(anchor);
    }
    let partner = if mix.mixture.partner == MixSource::Noise {
        let mut r = rng::stream(seed, &[tag::NOISE]);
        let data = (0..n * d)
            .map(|_| mix.noise_scale * r.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(vec![n, d], data)?
    } else {
        let pairing = if n >= 2 {
            sample_pairing(n, &mut rng::stream(seed, &[tag::PAIRING]))?
        } else {
            vec![0]
        };
        let idx: Vec<usize> = pairing.iter().map(|&j| source(mix.mixture.partner, j)).collect();
        z.gather_rows(&idx)?
    };
    anchor.scale(mix.delta).add(&partner.scale(1.0 - mix.delta))
}

/// Integrated nearest-class-mean prediction: each real class scores the sum
/// (or max) of cosine similarities between the query and its slot
/// prototypes. Ties go to the smallest class id.
pub fn ncm_integrated_predict(state: &SessionState, queries: &Tensor, aggregation: Aggregation) -> Result<Vec<usize>> {
    if state.prototypes.is_empty() {
        return Err(Error::Session("no prototypes registered".into()));
    }
    let (_, d) = queries.dims2("ncm_integrated_predict")?;
    if d != state.feature_dim {
        return Err(Error::ShapeMismatch {
            op: "ncm_integrated_predict",
            left: vec![state.feature_dim],
            right: queries.shape().to_vec(),
        });
    }
    // Classes in ascending order, each with its slot prototypes.
    let mut table: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (&key, c) in &state.prototypes {
        table.entry(key / state.proxy_factor).or_default().push(c);
    }
    let mut out = Vec::with_capacity(queries.rows());
    for i in 0..queries.rows() {
        let q = queries.row(i);
        let qn = l2_norm(q);
        let mut best: Option<(usize, f64)> = None;
        for (&y, slots) in &table {
            let sims = slots.iter().map(|c| if qn > 0.0 { dot(q, c) / qn } else { 0.0 });
            let score = match aggregation {
                Aggregation::Sum => sims.sum(),
                Aggregation::Max => sims.fold(f64::NEG_INFINITY, f64::max),
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((y, score));
            }
        }
        out.push(best.expect("nonempty table").0);
    }
    Ok(out)
}

/// Outcome of scoring one test pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Percent correct.
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// Counts with rows = true label, columns = predicted label, over ids `0..classes`.
    pub fn confusion(&self, classes: usize) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; classes]; classes];
        for (&t, &p) in self.labels.iter().zip(&self.predictions) {
            if t < classes && p < classes {
                m[t][p] += 1;
            }
        }
        m
    }
}

/// Accuracy over test samples `queries`/`labels`; every label must be registered.
pub fn evaluate_session(
    state: &SessionState,
    params: &ModelParams,
    queries: &Tensor,
    labels: &[usize],
    aggregation: Aggregation,
) -> Result<Evaluation> {
    if labels.len() != queries.rows() {
        return Err(Error::invalid("evaluate_session: one label per query required"));
    }
    if labels.is_empty() {
        return Err(Error::Session("empty test pool".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| !state.is_registered(y)) {
        return Err(Error::Session(format!("test sample with unregistered class {y}")));
    }
    let feats = forward_features(params, queries)?;
    let predictions = ncm_integrated_predict(state, &feats, aggregation)?;
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
        correct,
        total: labels.len(),
        labels: labels.to_vec(),
        predictions,
    })
}

/// Per-session accuracies (percent) and the summaries derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracies: Vec<f64>,
    pub average_acc: f64,
    /// First-session minus last-session accuracy.
    pub pd: f64,
    /// Last-session gain over a baseline's last session.
    pub delta_fi: Option<f64>,
}

pub fn compute_metrics(accuracies: &[f64], baseline: Option<&[f64]>) -> Result<MetricsReport> {
    let (&first, &last) = match (accuracies.first(), accuracies.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::invalid("metrics need at least one session")),
    };
    let delta_fi = match baseline {
        Some(b) => Some(last - b.last().ok_or_else(|| Error::invalid("empty baseline"))?),
        None => None,
    };
    Ok(MetricsReport {
        accuracies: accuracies.to_vec(),
        average_acc: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
        pd: first - last,
        delta_fi,
    })
}
