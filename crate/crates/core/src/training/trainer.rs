use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{shuffled, Model, Targets};
use super::optim::{GradBuffer, Optimizer};
use crate::data::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::eval::{score, Prf};
use crate::numerics::Tape;

/// Loss components of one batch: `total = outer + lambda2 * inner`, with
/// `outer` summed over sentences and `inner` averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub outer: f64,
    pub inner: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_outer: f64,
    pub l_inner: f64,
    pub loss: f64,
    pub dev: Option<Prf>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_dev: Option<Prf>,
}

/// Model, optimizer state and the run's random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Optimizer,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let optimizer = Optimizer::new(model.hp.lr_flat, model.hp.lr_graph);
        let rng = model.training_rng();
        Self { model, optimizer, rng }
    }

    pub fn with_optimizer(model: Model, optimizer: Optimizer) -> Self {
        let rng = model.training_rng();
        Self { model, optimizer, rng }
    }

    /// Gradients of `outer_weight * sum(L_outer) + lambda2 * mean(L_inner)`
    /// over a batch, one tape per sentence. The reported losses are
    /// unweighted by `outer_weight`.
    pub fn batch_gradients(&mut self, batch: &[&AnnotatedSentence], outer_weight: f64) -> Result<(StepLoss, GradBuffer)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let model = &self.model;
        let inner_weight = model.hp.lambda2 / batch.len() as f64;
        let mut buf = GradBuffer::new();
        let (mut outer_sum, mut inner_sum) = (0.0, 0.0);
        for (i, sentence) in batch.iter().enumerate() {
            let targets = Targets::new(sentence, &model.labels)?;
            let mut tape = Tape::with_params(&model.store);
            let fwd = model.forward(&mut tape, &sentence.tokens, Some(&mut self.rng));
            let lv = model.losses(&mut tape, &fwd, &targets)?;
            let (outer, inner) = (tape.value(lv.outer).item(), tape.value(lv.inner).item());
            if !(outer.is_finite() && inner.is_finite()) {
                return Err(Error::Numeric(format!(
                    "loss of batch sentence {i} is not finite (outer {outer}, inner {inner})"
                )));
            }
            outer_sum += outer;
            inner_sum += inner;
            let a = tape.scale(lv.outer, outer_weight);
            let b = tape.scale(lv.inner, inner_weight);
            let total = tape.add(a, b);
            buf.accumulate(tape.backward(total).into_params());
        }
        let inner = inner_sum / batch.len() as f64;
        let loss = StepLoss {
            outer: outer_sum,
            inner,
            total: outer_sum + model.hp.lambda2 * inner,
            grad_norm: buf.norm(),
        };
        Ok((loss, buf))
    }

    /// One clipped update of both parameter groups.
    pub fn train_step(&mut self, batch: &[&AnnotatedSentence]) -> Result<StepLoss> {
        let (loss, mut grads) = self.batch_gradients(batch, 1.0)?;
        if !grads.is_finite() {
            return Err(Error::Numeric("gradient is not finite".into()));
        }
        // The batch gradient is a sum over sentences, so the bound grows
        // with the batch.
        grads.clip(self.model.hp.clip_norm * batch.len() as f64);
        self.optimizer.step(&mut self.model.store, &grads);
        Ok(loss)
    }

    /// Runs one epoch over `train` in a freshly shuffled order.
    pub fn train_epoch(&mut self, train: &[AnnotatedSentence]) -> Result<(f64, f64, f64)> {
        let order = shuffled(train.len(), &mut self.rng);
        let (mut outer, mut inner, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.model.hp.batch_size) {
            let batch: Vec<&AnnotatedSentence> = chunk.iter().map(|&i| &train[i]).collect();
            let l = self.train_step(&batch)?;
            outer += l.outer;
            inner += l.inner;
            total += l.total;
        }
        Ok((outer, inner, total))
    }

    /// Trains for up to `hp.epochs` epochs. With a dev set, keeps the
    /// parameters of the best dev F1 and stops after `hp.patience` epochs
    /// without improvement. `on_epoch` may stop training early by
    /// returning `false`.
    pub fn fit(
        &mut self,
        train: &[AnnotatedSentence],
        dev: Option<&[AnnotatedSentence]>,
        mut on_epoch: impl FnMut(&EpochMetrics, &Model) -> bool,
    ) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::Empty("training corpus".into()));
        }
        let mut summary = TrainSummary {
            epochs: Vec::new(),
            best_epoch: None,
            best_dev: None,
        };
        let mut best_store = None;
        let mut stale = 0;
        for epoch in 1..=self.model.hp.epochs {
            let t0 = Instant::now();
            let (l_outer, l_inner, loss) = self.train_epoch(train)?;
            let dev_prf = match dev {
                Some(d) => {
                    let gold: Vec<_> = d.iter().map(|s| s.entities.clone()).collect();
                    Some(score(&gold, &self.model.predict_all(d))?)
                }
                None => None,
            };
            let metrics = EpochMetrics {
                epoch,
                l_outer,
                l_inner,
                loss,
                dev: dev_prf,
                seconds: t0.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: L_outer {l_outer:.4} L_inner {l_inner:.4} L {loss:.4}{}",
                dev_prf.map_or(String::new(), |p| format!(" dev {p}"))
            );
            if let Some(p) = dev_prf {
                if summary.best_dev.map_or(true, |b| p.f1 > b.f1) {
                    summary.best_dev = Some(p);
                    summary.best_epoch = Some(epoch);
                    best_store = Some(self.model.store.clone());
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            let keep_going = on_epoch(&metrics, &self.model);
            summary.epochs.push(metrics);
            if !keep_going || (dev.is_some() && stale >= self.model.hp.patience) {
                break;
            }
        }
        if let Some(store) = best_store {
            self.model.store = store;
        }
        Ok(summary)
    }
}
