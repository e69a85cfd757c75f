use super::train::train_base;
use super::{
    build_prototypes, compute_metrics, evaluate_session, finetune_new_rows, AblationVariant, Evaluation, MetricsReport,
    PrototypeMix, SessionState,
};
use crate::config::RunConfig;
use crate::data::{gen_synthetic, load_store, split_sessions, SampleStore, SyntheticOptions};
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session: usize,
    pub classes: Vec<usize>,
    pub evaluation: Evaluation,
    /// Backbone and earlier classifier rows were bit-identical before and
    /// after this session. Always true for session 0.
    pub frozen_ok: bool,
    /// Classifier rows once the session's classes are in.
    pub classifier_rows: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub metrics: MetricsReport,
    pub epoch_losses: Vec<f64>,
    pub sessions: Vec<SessionRecord>,
    pub params: ModelParams,
    pub state: SessionState,
}

impl RunOutcome {
    pub fn final_accuracy(&self) -> f64 {
        *self.metrics.accuracies.last().expect("at least one session")
    }
}

/// The configured store, or synthetic clusters drawn from the run seed.
pub fn load_data(cfg: &RunConfig) -> Result<SampleStore> {
    match &cfg.store {
        Some(path) => load_store(path),
        None => gen_synthetic(
            &cfg.dataset_spec(),
            cfg.seed,
            SyntheticOptions {
                separation: cfg.separation,
                noise_sd: cfg.noise_sd,
            },
        ),
    }
}

fn prototype_mix(cfg: &RunConfig) -> PrototypeMix {
    PrototypeMix {
        delta: cfg.delta,
        mixture: cfg.mixture,
        mix: cfg.use_feataug,
        noise_scale: cfg.noise_scale,
    }
}

fn frozen_digest(params: &ModelParams, rows: usize) -> ([u8; 32], [u8; 32]) {
    (params.backbone_checksum(), params.classifier_prefix_checksum(rows))
}

/// Full run: base training, base prototypes, then every incremental session
/// on the frozen backbone, evaluating after each session.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome> {
    let store = load_data(cfg)?;
    run_on_store(cfg, &store)
}

pub fn run_on_store(cfg: &RunConfig, store: &SampleStore) -> Result<RunOutcome> {
    cfg.validate()?;
    let spec = cfg.dataset_spec();
    let split = split_sessions(store, &spec, cfg.seed)?;
    let base = &split[0];
    let trained = train_base(cfg, store, base)?;
    let mut params = trained.params;
    let transforms = trained.transforms;
    let mix = prototype_mix(cfg);
    let mut state = SessionState::new(params.proxy_factor, cfg.feature_dim);
    let mut records = Vec::with_capacity(split.len());

    for session in &split {
        let rows_before = params.classifier_width();
        let before = frozen_digest(&params, rows_before);
        let x = store.rows(&session.train)?;
        let y = store.labels_of(&session.train);
        let seed = rng::derive_seed(cfg.seed, &[tag::PROTOTYPE, session.index as u64]);
        build_prototypes(&mut state, &params, &x, &y, &session.classes, &transforms, &mix, seed)?;
        if session.index > 0 {
            let expected: Vec<usize> = (params.registered_classes()..params.registered_classes() + session.classes.len()).collect();
            if session.classes != expected {
                return Err(Error::Session(format!(
                    "session {} classes {:?} do not continue the classifier ids {:?}",
                    session.index, session.classes, expected
                )));
            }
            params.extend_classifier(&state.prototype_rows(&session.classes)?)?;
            if cfg.incremental_finetune {
                finetune_new_rows(&mut params, &mut state, &x, &y, &session.classes, &transforms, &mix, cfg)?;
            }
        }
        let frozen_ok = before == frozen_digest(&params, rows_before);
        if !frozen_ok {
            return Err(Error::Session(format!("frozen weights changed during session {}", session.index)));
        }
        let queries = store.rows(&session.test)?;
        let evaluation = evaluate_session(&state, &params, &queries, &store.labels_of(&session.test), cfg.aggregation)?;
        records.push(SessionRecord {
            session: session.index,
            classes: session.classes.clone(),
            evaluation,
            frozen_ok,
            classifier_rows: params.classifier_width(),
        });
    }

    let accuracies: Vec<f64> = records.iter().map(|r| r.evaluation.accuracy).collect();
    Ok(RunOutcome {
        config: cfg.clone(),
        metrics: compute_metrics(&accuracies, None)?,
        epoch_losses: trained.epoch_losses,
        sessions: records,
        params,
        state,
    })
}

/// One run with the variant's flags in place of the config's.
pub fn run_ablation(variant: &AblationVariant, cfg: &RunConfig) -> Result<RunOutcome> {
    variant.validate()?;
    run_pipeline(&cfg.with_variant(variant))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// `delta_fi` is relative to the cross-entropy-only variant when the grid
    /// contains it.
    pub metrics: MetricsReport,
}

/// Runs every variant of `cfg.ablations` on the same data and seed.
pub fn run_ablation_grid(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let store = load_data(cfg)?;
    let mut runs = Vec::with_capacity(cfg.ablations.len());
    for v in &cfg.ablations {
        v.validate()?;
        runs.push((*v, run_on_store(&cfg.with_variant(v), &store)?.metrics));
    }
    let baseline = runs
        .iter()
        .find(|(v, _)| *v == AblationVariant::CE)
        .map(|(_, m)| m.accuracies.clone());
    runs.into_iter()
        .map(|(variant, m)| {
            Ok(AblationRow {
                variant,
                metrics: compute_metrics(&m.accuracies, baseline.as_deref())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub delta: f64,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunOutcome>,
    pub mean_final: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub sd_final: f64,
    pub mean_average: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One full run per δ and seed (`cfg.seed`, `cfg.seed + 1`, …), sequentially.
pub fn sweep_delta(deltas: &[f64], cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one delta".into()));
    }
    let seeds: Vec<u64> = (0..cfg.sweep_seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let mut stores = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        stores.push(load_data(&RunConfig { seed: s, ..cfg.clone() })?);
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Config(format!("delta {delta} outside [0,1]")));
        }
        let mut runs = Vec::with_capacity(seeds.len());
        for (&seed, store) in seeds.iter().zip(&stores) {
            runs.push(run_on_store(&RunConfig { seed, delta, ..cfg.clone() }, store)?);
        }
        let finals: Vec<f64> = runs.iter().map(RunOutcome::final_accuracy).collect();
        let averages: Vec<f64> = runs.iter().map(|r| r.metrics.average_acc).collect();
        let (mean_final, sd_final) = mean_sd(&finals);
        rows.push(SweepRow {
            delta,
            seeds: seeds.clone(),
            runs,
            mean_final,
            sd_final,
            mean_average: mean_sd(&averages).0,
        });
    }
    Ok(rows)
}
