//! Mini-batch training with Riemannian SGD and early stopping on validation AUC.
//!
//! Each step draws a recommendation batch and a social batch of the same
//! size, then applies one RSGD update of `Lr + λ·Ls` computed on the taped
//! model. Batches are cut into fixed-size chunks that are differentiated
//! independently and summed in chunk order, so results do not depend on the
//! number of worker threads.

use std::ops::ControlFlow;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{InteractionData, SplitTag};
use crate::diff::{rsgd_step, Gradients, OptState, ParamStore, Tape};
use crate::error::{HsrError, Result};
use crate::eval::{ctr_metrics, score_records, DEFAULT_THRESHOLD};
use crate::model::{Geometry, Model, ModelConfig, SocialGraph, TapedModel};
use crate::objective::{rec_loss, social_loss, stream_rng, total_loss, RecSampler, RecTriple, SocialSampler, SocialTriple};

const INIT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const TRUNCATE_STREAM: u64 = 3;

/// Triples per independently differentiated chunk.
pub const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-step total loss.
    pub train_loss: f64,
    pub rec_loss: f64,
    pub social_loss: f64,
    pub val_auc: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,rec_loss,social_loss,val_auc,val_accuracy";

    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.rec_loss,
            self.social_loss,
            cell(self.val_auc),
            cell(self.val_accuracy)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    NumericFailure,
    /// The epoch callback asked to stop.
    Interrupted,
}

pub struct TrainOutcome {
    /// Best parameters by validation AUC, or the last finite ones after a failure.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
    /// Set when training aborted on a non-finite loss or gradient.
    pub failure: Option<HsrError>,
}

pub fn init_params(data: &InteractionData, cfg: &TrainConfig) -> Result<ParamStore> {
    let model_cfg = cfg.model_config();
    let ball = match cfg.geometry {
        Geometry::Hyperbolic => Some(model_cfg.ball()?),
        Geometry::Euclidean => None,
    };
    let mut rng = stream_rng(cfg.seed, INIT_STREAM, 0);
    Ok(ParamStore::init(
        data.num_users,
        data.num_items,
        cfg.dim,
        cfg.layers,
        ball.as_ref(),
        &mut rng,
    ))
}

struct StepResult {
    grads: Gradients,
    rec: f64,
    social: f64,
    total: f64,
}

fn chunk_gradients(
    params: &ParamStore,
    graph: &SocialGraph,
    cfg: &ModelConfig,
    rec: &[RecTriple],
    social: &[SocialTriple],
    lambda: f64,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let mut model = TapedModel::new(params, graph, cfg)?;
    let lr = rec_loss(&mut tape, &mut model, rec)?;
    let ls = if lambda > 0.0 {
        social_loss(&mut tape, &mut model, social)?
    } else {
        None
    };
    let value = |n: Option<_>| n.map_or(0.0, |n| tape.scalar_value(n));
    let (rec_v, social_v) = (value(lr), value(ls));
    let Some(loss) = total_loss(&mut tape, lr, ls, lambda)? else {
        return Ok(StepResult {
            grads: Gradients::default(),
            rec: 0.0,
            social: 0.0,
            total: 0.0,
        });
    };
    let total = tape.scalar_value(loss);
    if !total.is_finite() {
        return Err(HsrError::Numeric(format!("training loss became {total}")));
    }
    Ok(StepResult {
        grads: tape.backward(loss)?,
        rec: rec_v,
        social: social_v,
        total,
    })
}

/// Loss and summed gradients for one step, chunked for parallelism.
fn step_gradients(
    params: &ParamStore,
    graph: &SocialGraph,
    cfg: &ModelConfig,
    rec: &[RecTriple],
    social: &[SocialTriple],
    lambda: f64,
) -> Result<StepResult> {
    let chunks = rec.len().max(social.len()).div_ceil(CHUNK);
    let slice = |len: usize, c: usize| ((c * CHUNK).min(len), ((c + 1) * CHUNK).min(len));
    let parts: Vec<Result<StepResult>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let (ra, rb) = slice(rec.len(), c);
            let (sa, sb) = slice(social.len(), c);
            chunk_gradients(params, graph, cfg, &rec[ra..rb], &social[sa..sb], lambda)
        })
        .collect();
    let mut acc = StepResult {
        grads: Gradients::default(),
        rec: 0.0,
        social: 0.0,
        total: 0.0,
    };
    for part in parts {
        let part = part?;
        acc.grads.accumulate(&part.grads);
        acc.rec += part.rec;
        acc.social += part.social;
        acc.total += part.total;
    }
    Ok(acc)
}

/// Validation `(AUC, accuracy)` of `params` with full neighbor lists.
pub fn validate(params: &ParamStore, data: &InteractionData, cfg: &ModelConfig) -> Result<(Option<f64>, Option<f64>)> {
    let model = Model::new(params, &data.social, cfg)?;
    let scored = score_records(&model, data, SplitTag::Val)?;
    Ok(ctr_metrics(&scored, DEFAULT_THRESHOLD))
}

/// Runs training from freshly initialized parameters. `on_epoch` sees every
/// log row as soon as it is produced.
pub fn train(data: &InteractionData, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    train_until(data, cfg, |row| {
        on_epoch(row);
        ControlFlow::Continue(())
    })
}

/// Like [`train`], but stops after any epoch for which `on_epoch` breaks.
/// The outcome then holds the best parameters seen so far.
pub fn train_until(
    data: &InteractionData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let model_cfg = cfg.model_config();
    let ball = match cfg.geometry {
        Geometry::Hyperbolic => Some(model_cfg.ball()?),
        Geometry::Euclidean => None,
    };
    let mut params = init_params(data, cfg)?;
    let mut outcome = TrainOutcome {
        params: params.clone(),
        best_epoch: 0,
        best_val_auc: None,
        log: Vec::new(),
        stop: StopReason::MaxEpochs,
        failure: None,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }

    let rec_sampler = RecSampler::new(data);
    let social_sampler = SocialSampler::new(&data.social);
    if rec_sampler.num_pairs() == 0 {
        return Err(HsrError::Input("no training positives to learn from".into()));
    }
    let steps = rec_sampler.num_pairs().div_ceil(cfg.batch_size);
    let mut opt = OptState::new(cfg.learning_rate)?;
    let needs_truncation = (0..data.num_users).any(|u| data.social.out_degree(u) > cfg.k_max);
    let mut since_best = 0;
    info!(
        "training {} users, {} items, {} train positives, {steps} steps per epoch",
        data.num_users,
        data.num_items,
        rec_sampler.num_pairs()
    );

    for epoch in 1..=cfg.epochs {
        let truncated;
        let graph = if needs_truncation {
            truncated = data.social.truncated(cfg.k_max, &mut stream_rng(cfg.seed, TRUNCATE_STREAM, epoch as u64));
            &truncated
        } else {
            &data.social
        };
        let mut rng = stream_rng(cfg.seed, SAMPLE_STREAM, epoch as u64);
        let (mut sum_total, mut sum_rec, mut sum_social) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let rec = rec_sampler.sample(cfg.batch_size, &mut rng);
            let social = if cfg.lambda > 0.0 {
                social_sampler.sample(cfg.batch_size, &mut rng)
            } else {
                Vec::new()
            };
            let applied = step_gradients(&params, graph, &model_cfg, &rec, &social, cfg.lambda)
                .and_then(|r| rsgd_step(&mut params, &r.grads, &mut opt, ball.as_ref()).map(|_| r));
            match applied {
                Ok(r) => {
                    sum_total += r.total;
                    sum_rec += r.rec;
                    sum_social += r.social;
                }
                Err(e @ HsrError::Numeric(_)) => {
                    warn!("epoch {epoch} step {step}: {e}; keeping the last finite parameters");
                    if outcome.best_val_auc.is_none() {
                        outcome.params = params;
                    }
                    outcome.stop = StopReason::NumericFailure;
                    outcome.failure = Some(e);
                    return Ok(outcome);
                }
                Err(e) => return Err(e),
            }
        }
        let (val_auc, val_accuracy) = validate(&params, data, &model_cfg)?;
        let row = EpochLog {
            epoch,
            train_loss: sum_total / steps as f64,
            rec_loss: sum_rec / steps as f64,
            social_loss: sum_social / steps as f64,
            val_auc,
            val_accuracy,
        };
        debug!("{row:?}");
        let flow = on_epoch(&row);
        outcome.log.push(row);

        match val_auc {
            Some(a) if outcome.best_val_auc.map_or(true, |b| a > b) => {
                outcome.best_val_auc = Some(a);
                outcome.best_epoch = epoch;
                outcome.params = params.clone();
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    info!("early stop at epoch {epoch}; best epoch {}", outcome.best_epoch);
                    outcome.stop = StopReason::EarlyStopped;
                    return Ok(outcome);
                }
            }
            None => {
                outcome.params = params.clone();
                outcome.best_epoch = epoch;
            }
        }
        if flow.is_break() {
            outcome.stop = StopReason::Interrupted;
            return Ok(outcome);
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Source;
    use crate::data::{synth_generate, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro() -> InteractionData {
        synth_generate(&SynthConfig::new(40, 60, 2.5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::default();
        for (k, v) in [("dim", "4"), ("batch_size", "64"), ("learning_rate", "0.01"), ("patience", "1000")] {
            c.set(k, v, Source::Flag).unwrap();
        }
        c.epochs = epochs;
        c
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = micro();
        let out = train(&d, &cfg(0), |_| {}).unwrap();
        assert_eq!(out.params, init_params(&d, &cfg(0)).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let d = micro();
        let a = train(&d, &cfg(15), |_| {}).unwrap();
        assert!(a.failure.is_none());
        let first = a.log.first().unwrap().train_loss;
        let last = a.log.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one.install(|| train(&d, &cfg(15), |_| {})).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn euclidean_and_ablations_train() {
        let d = micro();
        for (k, v) in [("geometry", "euclidean"), ("attention", "mean"), ("lambda", "0")] {
            let mut c = cfg(3);
            c.set(k, v, Source::Flag).unwrap();
            let out = train(&d, &c, |_| {}).unwrap();
            assert_eq!(out.log.len(), 3);
            assert!(out.log.iter().all(|r| r.train_loss.is_finite()));
        }
    }

    #[test]
    fn early_stopping_keeps_best() {
        let d = micro();
        let mut c = cfg(40);
        c.patience = 2;
        let out = train(&d, &c, |_| {}).unwrap();
        if out.stop == StopReason::EarlyStopped {
            assert_eq!(out.log.len(), out.best_epoch + 2);
        }
        let best = out.log.iter().filter_map(|r| r.val_auc).fold(f64::MIN, f64::max);
        assert_eq!(out.best_val_auc, Some(best));
        let (auc, _) = validate(&out.params, &d, &c.model_config()).unwrap();
        assert_eq!(auc, Some(best));
    }

    #[test]
    fn callback_can_stop_training() {
        let d = micro();
        let c = cfg(20);
        let out = train_until(&d, &c, |row| if row.epoch == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
            .unwrap();
        assert_eq!(out.stop, StopReason::Interrupted);
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn numeric_failure_keeps_finite_params() {
        let d = micro();
        let mut c = cfg(5);
        c.learning_rate = 1e300;
        c.geometry = Geometry::Euclidean;
        let out = train(&d, &c, |_| {}).unwrap();
        assert_eq!(out.stop, StopReason::NumericFailure);
        assert!(matches!(out.failure, Some(HsrError::Numeric(_))));
        for id in out.params.ids().collect::<Vec<_>>() {
            assert!(out.params.get(id).iter().all(|v| v.is_finite()));
        }
    }
}
