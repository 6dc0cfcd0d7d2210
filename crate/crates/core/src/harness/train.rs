use serde::{Deserialize, Serialize};

use super::model::{threshold_decisions, Model};
use crate::autodiff::AdamState;
use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_iterations: usize,
    pub target_accuracy: f64,
    pub eval_every: usize,
    /// Evaluations without improvement tolerated once the target is met.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            lr: AdamState::LEARNING_RATE,
            max_iterations: 2000,
            target_accuracy: 0.985,
            eval_every: 10,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub model: String,
    pub records: Vec<TrainRecord>,
    /// First evaluated iteration whose test accuracy met the target.
    pub iterations_to_target: Option<usize>,
    pub iterations_run: usize,
}

impl TrainTrace {
    pub fn converged(&self) -> bool {
        self.iterations_to_target.is_some()
    }
}

/// Exact error count of a decision pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerCount {
    pub errors: u64,
    pub count: u64,
}

impl BerCount {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.count as f64
    }

    /// Defined as `1 − ber` so the two always sum to one.
    pub fn accuracy(&self) -> f64 {
        1.0 - self.ber()
    }
}

fn count_errors(decisions: &[u8], labels: &[u8]) -> BerCount {
    let errors = decisions.iter().zip(labels).filter(|(d, l)| d != l).count();
    BerCount {
        errors: errors as u64,
        count: labels.len() as u64,
    }
}

/// Argmax decisions against labels. 2-PAM carries one bit per symbol, so
/// the symbol error rate is the bit error rate.
pub fn evaluate_ber(model: &Model, dataset: &WindowedDataset) -> Result<BerCount> {
    if dataset.is_empty() {
        return Err(Error::Size("cannot evaluate on an empty dataset".into()));
    }
    Ok(count_errors(&model.predict(dataset)?, &dataset.labels))
}

/// The no-network receiver: sign of the decided sample.
pub fn hard_decision_baseline(dataset: &WindowedDataset) -> Result<BerCount> {
    if dataset.is_empty() {
        return Err(Error::Size("cannot evaluate on an empty dataset".into()));
    }
    Ok(count_errors(&threshold_decisions(dataset), &dataset.labels))
}

/// Endless stream of window indices, reshuffled every epoch.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 20);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// Trains with Adam on shuffled mini-batches, evaluating test accuracy
/// every `eval_every` iterations. Stops at `max_iterations`, or once the
/// target has been met and `patience` evaluations pass without a new best.
pub fn train(
    model: &mut Model,
    train_set: &WindowedDataset,
    test_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    let mut trace = TrainTrace {
        model: model.kind().to_string(),
        records: Vec::new(),
        iterations_to_target: None,
        iterations_run: 0,
    };
    if !model.is_trainable() {
        return Ok(trace);
    }
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Size("training needs non-empty train and test sets".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch_size and eval_every must be positive".into()));
    }
    let batch = cfg.batch_size.min(train_set.len());
    let mut stream = BatchStream::new(train_set.len(), cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for iteration in 1..=cfg.max_iterations {
        let (x, labels) = train_set.batch(&stream.next(batch))?;
        let loss = match model.train_step(x, &labels, &mut adam) {
            Ok(l) => l,
            Err(Error::NumericDomain(_)) => return Err(Error::Divergence { iteration, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        trace.iterations_run = iteration;
        if iteration % cfg.eval_every != 0 && iteration != cfg.max_iterations {
            continue;
        }
        let accuracy = evaluate_ber(model, test_set)?.accuracy();
        trace.records.push(TrainRecord {
            iteration,
            loss,
            accuracy,
        });
        if accuracy >= cfg.target_accuracy && trace.iterations_to_target.is_none() {
            trace.iterations_to_target = Some(iteration);
        }
        if accuracy > best {
            best = accuracy;
            stale = 0;
        } else {
            stale += 1;
        }
        if trace.iterations_to_target.is_some() && stale >= cfg.patience {
            break;
        }
    }
    Ok(trace)
}
