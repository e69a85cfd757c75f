//! Supervised contrastive loss over a key batch plus a FIFO feature/label
//! queue, the proxy-class cross-entropy, and their unweighted sum.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numcore::{check_finite, dot, l2_norm, softmax_cross_entropy, Tape, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_QUEUE: usize = 1024;

/// Tolerance on the unit-norm precondition of contrastive inputs.
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub queue_capacity: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            queue_capacity: DEFAULT_QUEUE,
        }
    }
}

/// Bounded FIFO of unit-norm key embeddings and their proxy labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQueue {
    capacity: usize,
    width: Option<usize>,
    entries: VecDeque<(Vec<f64>, usize)>,
}

impl FeatureQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("queue capacity must be positive"));
        }
        Ok(Self {
            capacity,
            width: None,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|(_, l)| *l).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.entries.iter().map(|(v, l)| (v.as_slice(), *l))
    }

    /// Stored embeddings as a `[len × width]` matrix, oldest first.
    pub fn embeddings(&self) -> Tensor {
        let width = self.width.unwrap_or(0);
        let data: Vec<f64> = self.entries.iter().flat_map(|(v, _)| v.iter().copied()).collect();
        Tensor::from_parts_unchecked(vec![self.entries.len(), width], data)
    }

    /// Appends every key in order, evicting the oldest entries beyond capacity.
    pub fn push(&mut self, keys: &Tensor, labels: &[usize]) -> Result<()> {
        let (rows, width) = keys.dims2("queue_push")?;
        if labels.len() != rows {
            return Err(Error::invalid(format!("queue_push: {rows} keys but {} labels", labels.len())));
        }
        if rows == 0 {
            return Ok(());
        }
        if let Some(w) = self.width {
            if w != width {
                return Err(Error::ShapeMismatch {
                    op: "queue_push",
                    left: vec![w],
                    right: vec![width],
                });
            }
        }
        check_unit_rows(keys)?;
        self.width = Some(width);
        for (i, &label) in labels.iter().enumerate() {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((keys.row(i).to_vec(), label));
        }
        Ok(())
    }
}

fn check_unit_rows(t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let norm = l2_norm(t.row(i));
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { row: i, norm });
        }
    }
    Ok(())
}

/// Contrastive loss value and its gradient with respect to the anchors.
///
/// For anchor `a` with candidate set `N` (keys then queue) and positives
/// `S = {k ∈ N : label(k) = label(a)}`:
///
/// `ℓ_a = −(1/|S|) Σ_{k⁺∈S} log( exp(a·k⁺/τ) / Σ_{k∈N} exp(a·k/τ) )`
///
/// The loss is the mean of `ℓ_a` over anchors with `|S| > 0`; anchors
/// without a positive contribute nothing.
pub fn sscl_loss_with_grad(
    anchors: &Tensor,
    anchor_labels: &[usize],
    candidates: &Tensor,
    candidate_labels: &[usize],
    tau: f64,
) -> Result<(f64, Tensor)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (na, d) = anchors.dims2("sscl_loss")?;
    let (nc, dc) = candidates.dims2("sscl_loss")?;
    if d != dc {
        return Err(Error::ShapeMismatch {
            op: "sscl_loss",
            left: anchors.shape().to_vec(),
            right: candidates.shape().to_vec(),
        });
    }
    if anchor_labels.len() != na || candidate_labels.len() != nc {
        return Err(Error::invalid("sscl_loss: one label per row required"));
    }
    check_unit_rows(anchors)?;
    check_unit_rows(candidates)?;

    let mut grad = Tensor::zeros(&[na, d]);
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut logits = vec![0.0; nc];
    let mut weights = vec![0.0; nc];
    for (i, &label) in anchor_labels.iter().enumerate() {
        let positives = candidate_labels.iter().filter(|&&l| l == label).count();
        if positives == 0 {
            continue;
        }
        let a = anchors.row(i);
        for (k, lg) in logits.iter_mut().enumerate() {
            *lg = dot(a, candidates.row(k)) / tau;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let pos_mean = logits
            .iter()
            .zip(candidate_labels)
            .filter(|(_, &l)| l == label)
            .map(|(lg, _)| lg)
            .sum::<f64>()
            / positives as f64;
        total += lse - pos_mean;
        counted += 1;
        // dℓ/da = (1/τ)·(Σ_k p_k k − mean_{S} k)
        for (k, w) in weights.iter_mut().enumerate() {
            let p = (logits[k] - lse).exp();
            let s = if candidate_labels[k] == label { 1.0 / positives as f64 } else { 0.0 };
            *w = (p - s) / tau;
        }
        let g = grad.row_mut(i);
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (gv, &cv) in g.iter_mut().zip(candidates.row(k)) {
                *gv += w * cv;
            }
        }
    }
    if counted == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / counted as f64;
    for v in grad.data_mut() {
        *v *= scale;
    }
    let loss = total * scale;
    check_finite("sscl_loss", &[loss])?;
    Ok((loss, grad))
}

/// Builds the candidate set `N`: the key batch followed by the queue.
pub fn candidate_set(keys: &Tensor, key_labels: &[usize], queue: &FeatureQueue) -> Result<(Tensor, Vec<usize>)> {
    let mut labels = key_labels.to_vec();
    if queue.is_empty() {
        return Ok((keys.clone(), labels));
    }
    labels.extend(queue.labels());
    Ok((keys.concat_rows(&queue.embeddings())?, labels))
}

/// Contrastive loss of anchors against `keys ∪ queue`.
pub fn sscl_loss(
    anchors: &Tensor,
    keys: &Tensor,
    anchor_labels: &[usize],
    key_labels: &[usize],
    queue: &FeatureQueue,
    tau: f64,
) -> Result<f64> {
    let (cands, cand_labels) = candidate_set(keys, key_labels, queue)?;
    sscl_loss_with_grad(anchors, anchor_labels, &cands, &cand_labels, tau).map(|(l, _)| l)
}

/// Records the contrastive loss on a tape. Keys and queue are constants:
/// only the anchors receive gradient.
pub fn sscl_on_tape(
    tape: &mut Tape,
    anchors: Var,
    anchor_labels: &[usize],
    keys: &Tensor,
    key_labels: &[usize],
    queue: &FeatureQueue,
    tau: f64,
) -> Result<Var> {
    let (cands, cand_labels) = candidate_set(keys, key_labels, queue)?;
    let (value, grad) = sscl_loss_with_grad(tape.value(anchors), anchor_labels, &cands, &cand_labels, tau)?;
    tape.scalar_with_grad(anchors, value, grad)
}

/// Mean cross-entropy over every row of the expanded-label logits. Each
/// sample contributes its `P` rows, so the row mean carries the `1/P` factor.
pub fn class_loss(logits: &Tensor, proxy_labels: &[usize]) -> Result<f64> {
    softmax_cross_entropy(logits, proxy_labels)
}

pub fn class_loss_on_tape(tape: &mut Tape, logits: Var, proxy_labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, proxy_labels)
}

/// Unweighted sum of the two terms.
pub fn joint_loss(class_term: f64, sscont_term: f64) -> Result<f64> {
    if !class_term.is_finite() || !sscont_term.is_finite() {
        return Err(Error::NonFinite { op: "joint_loss" });
    }
    Ok(class_term + sscont_term)
}

pub fn joint_loss_on_tape(tape: &mut Tape, class_term: Var, sscont_term: Var) -> Result<Var> {
    tape.add(class_term, sscont_term)
}
