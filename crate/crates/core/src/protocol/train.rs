use super::{mixed_class_features, PrototypeMix, SessionState};
use crate::config::RunConfig;
use crate::data::{make_batches, SampleStore, Session};
use crate::encoder::{
    classify_on_tape, features_on_tape, forward_features, forward_projection, init_params_with, project_on_tape,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::feataug::{combine_on_tape, expand_batch, perturb, views_on_tape, PairPlan, TransformSet, ViewSeeds};
use crate::losses::{class_loss_on_tape, joint_loss_on_tape, sscl_on_tape, FeatureQueue};
use crate::numcore::{sgd_momentum_step, OptimizerState, Tape, Tensor};
use crate::rng::{self, tag};

/// Result of base-session training.
#[derive(Debug, Clone)]
pub struct BaseTraining {
    pub params: ModelParams,
    pub queue: FeatureQueue,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub transforms: TransformSet,
}

pub(crate) fn transforms_for(cfg: &RunConfig) -> TransformSet {
    TransformSet::vector(cfg.input_dim, cfg.transforms, rng::derive_seed(cfg.seed, &[tag::TRANSFORM]))
}

/// Trains extractor, projection head and classifier on the base session with
/// the loss terms selected by the config's variant flags.
pub fn train_base(cfg: &RunConfig, store: &SampleStore, base: &Session) -> Result<BaseTraining> {
    cfg.variant().validate()?;
    if base.classes.len() < 2 {
        return Err(Error::Dataset(format!("base session needs at least 2 classes, has {}", base.classes.len())));
    }
    if base.classes.iter().enumerate().any(|(i, &y)| i != y) {
        return Err(Error::Dataset("base classes must be the ids 0..base_classes".into()));
    }
    let mut params = init_params_with(&cfg.encoder_spec(), cfg.seed, cfg.ema, cfg.proxy_factor())?;
    params.register_classes_random(base.classes.len(), cfg.seed)?;
    let transforms = transforms_for(cfg);
    let mut queue = FeatureQueue::new(cfg.queue_size)?;
    let mut opt = OptimizerState::new(&params.trainable(), cfg.lr, cfg.sgd_momentum)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_base);
    for epoch in 0..cfg.epochs_base {
        let batches = make_batches(&base.train, cfg.batch_size, rng::derive_seed(cfg.seed, &[tag::SHUFFLE, epoch as u64]))?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let x = store.rows(idx)?;
            let y = store.labels_of(idx);
            let seeds = ViewSeeds::derive(rng::derive_seed(cfg.seed, &[tag::VIEW_A, epoch as u64, b as u64]));
            total += train_step(cfg, &mut params, &mut queue, &mut opt, &x, &y, &transforms, &seeds)?;
        }
        epoch_losses.push(total / batches.len() as f64);
    }
    Ok(BaseTraining {
        params,
        queue,
        epoch_losses,
        transforms,
    })
}

/// One optimiser step; returns the batch loss.
#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &RunConfig,
    params: &mut ModelParams,
    queue: &mut FeatureQueue,
    opt: &mut OptimizerState,
    x: &Tensor,
    y: &[usize],
    transforms: &TransformSet,
    seeds: &ViewSeeds,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut pending_keys = None;
    let root = if !cfg.use_sscl && !cfg.use_proxy {
        let xv = tape.constant(x.clone());
        let f = features_on_tape(&mut tape, &vars.layers, xv)?;
        let logits = classify_on_tape(&mut tape, vars.classifier, f)?;
        class_loss_on_tape(&mut tape, logits, y)?
    } else {
        let view = cfg.view_config();
        let (expanded, expanded_labels) = expand_batch(x, y, transforms)?;
        let plan = PairPlan::new(&expanded_labels, x.rows(), cfg.feature_dim, &view, seeds)?;
        let (view_a, view_b) = if cfg.use_sscl {
            let (a, b) = views_on_tape(&mut tape, params, &vars, &expanded, &plan, &view, seeds)?;
            (a, Some(b))
        } else {
            let xa = perturb(&expanded, view.jitter, seeds.view_a)?;
            let xa = tape.constant(xa);
            let za = features_on_tape(&mut tape, &vars.layers, xa)?;
            (combine_on_tape(&mut tape, za, &plan, &view)?, None)
        };
        let logits = classify_on_tape(&mut tape, vars.classifier, view_a.combined)?;
        let ce = class_loss_on_tape(&mut tape, logits, &plan.labels)?;
        match view_b {
            Some(b) => {
                let anchors = project_on_tape(&mut tape, vars.projection, view_a.combined)?;
                let keys = forward_projection(params, tape.value(b.combined), true)?;
                let con = sscl_on_tape(&mut tape, anchors, &plan.labels, &keys, &plan.labels, queue, cfg.tau)?;
                pending_keys = Some((keys, plan.labels));
                joint_loss_on_tape(&mut tape, ce, con)?
            }
            None => ce,
        }
    };
    let loss = tape.value(root).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "train_step" });
    }
    let grads = tape.backward(root)?;
    let g: Vec<Tensor> = vars.ordered().into_iter().map(|v| grads.get(v)).collect();
    sgd_momentum_step(&mut params.trainable_mut(), &g, opt)?;
    if let Some((keys, labels)) = pending_keys {
        params.momentum_sync()?;
        queue.push(&keys, &labels)?;
    }
    Ok(loss)
}

/// Trains only the classifier rows of `classes` (already appended, in id
/// order, at the end of the classifier) on frozen features of the session's
/// few shots, then makes the trained rows those classes' prototypes.
#[allow(clippy::too_many_arguments)]
pub fn finetune_new_rows(
    params: &mut ModelParams,
    state: &mut SessionState,
    inputs: &Tensor,
    labels: &[usize],
    classes: &[usize],
    transforms: &TransformSet,
    mix: &PrototypeMix,
    cfg: &RunConfig,
) -> Result<()> {
    let p = params.proxy_factor;
    let new_rows = classes.len() * p;
    let total_rows = params.classifier_width();
    if new_rows > total_rows || classes.first().is_some_and(|&y| y * p != total_rows - new_rows) {
        return Err(Error::Session("fine-tuned classes must own the last classifier rows".into()));
    }
    let mut feats: Vec<Vec<f64>> = Vec::new();
    let mut targets = Vec::new();
    for &y in classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == y).collect();
        if idx.is_empty() {
            return Err(Error::Session(format!("class {y} has no samples")));
        }
        let x = inputs.gather_rows(&idx)?;
        let (expanded, _) = expand_batch(&x, &vec![y; idx.len()], transforms)?;
        let z = forward_features(params, &expanded)?;
        for i in 0..z.rows() {
            feats.push(z.row(i).to_vec());
            targets.push(y * p);
        }
        if p == 2 {
            let m = mixed_class_features(&z, idx.len(), mix, rng::derive_seed(cfg.seed, &[tag::FINETUNE, y as u64]))?;
            for i in 0..m.rows() {
                feats.push(m.row(i).to_vec());
                targets.push(y * p + 1);
            }
        }
    }
    let feats = Tensor::from_rows(&feats)?;
    let split = total_rows - new_rows;
    let d = params.spec.feature_dim;
    let old = Tensor::new(vec![split, d], params.classifier.data()[..split * d].to_vec())?;
    let mut rows = Tensor::new(vec![new_rows, d], params.classifier.data()[split * d..].to_vec())?;
    let mut opt = OptimizerState::new(&[&rows], cfg.lr, cfg.sgd_momentum)?;
    for _ in 0..cfg.epochs_incremental {
        let mut tape = Tape::new();
        let w_new = tape.leaf(rows.clone());
        let w_old = tape.constant(old.clone());
        let w = tape.concat_rows(w_old, w_new)?;
        let f = tape.constant(feats.clone());
        let logits = classify_on_tape(&mut tape, w, f)?;
        let loss = class_loss_on_tape(&mut tape, logits, &targets)?;
        let g = tape.backward(loss)?.get(w_new);
        sgd_momentum_step(&mut [&mut rows], &[g], &mut opt)?;
    }
    params.classifier = old.concat_rows(&rows)?;
    for (k, &y) in classes.iter().enumerate() {
        for slot in 0..p {
            state.set_prototype(y, slot, rows.row(k * p + slot))?;
        }
    }
    Ok(())
}
