use std::fmt;
use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Seq2Seq};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Example = (Vec<usize>, Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            clip_norm: 5.0,
            max_epochs: 30,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainHyper {
    /// Defaults for continued training on a new domain.
    pub fn fine_tune_default() -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate, batch size and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for the evaluation before the first update.
    pub train_loss: Option<f64>,
    pub dev_perplexity: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best_dev_perplexity(&self) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == self.best_epoch).map(|r| r.dev_perplexity)
    }
}

impl fmt::Display for TrainingHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch\ttrain_loss\tdev_ppl\tseconds")?;
        for r in &self.records {
            let loss = r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
            writeln!(f, "{}\t{loss}\t{:.4}\t{:.2}", r.epoch, r.dev_perplexity, r.seconds)?;
        }
        write!(f, "best epoch {}{}", self.best_epoch, if self.stopped_early { " (early stop)" } else { "" })
    }
}

/// `exp` of the mean token cross-entropy over `data`, dropout off.
pub fn perplexity<T: Scalar>(model: &Seq2Seq<T>, data: &[Example], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("perplexity needs at least one sentence".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in data.chunks(batch_size.max(1)) {
        let batch = Batch::new(&chunk.iter().collect::<Vec<_>>());
        let n = batch.target_tokens();
        total += model.loss(&batch).to_f64_lossy() * n as f64;
        tokens += n;
    }
    Ok((total / tokens as f64).exp())
}

struct Adam<T> {
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Array2<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let step = T::of(lr * (1.0 - Self::BETA2.powi(self.t)).sqrt() / (1.0 - Self::BETA1.powi(self.t)));
        let eps = T::of(Self::EPS);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            });
        }
    }
}

fn clip<T: Scalar>(grads: &mut [Array2<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

/// Trains with Adam on shuffled mini-batches, evaluating dev perplexity
/// before the first epoch and after each one. The returned model is the
/// best one seen on dev; training stops after `patience` epochs without
/// improvement.
pub fn train<T: Scalar>(
    model: Seq2Seq<T>,
    train_data: &[Example],
    dev_data: &[Example],
    hyper: &TrainHyper,
) -> Result<(Seq2Seq<T>, TrainingHistory)> {
    hyper.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut model = model;
    let mut history = TrainingHistory::default();
    let started = Instant::now();
    let initial = perplexity(&model, dev_data, hyper.batch_size)?;
    history.records.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        dev_perplexity: initial,
        seconds: started.elapsed().as_secs_f64(),
    });
    let mut best = model.clone();
    let mut best_ppl = initial;
    let mut since_best = 0;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5bd1_e995);
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let pairs: Vec<&Example> = chunk.iter().map(|&i| &train_data[i]).collect();
            let batch = Batch::new(&pairs);
            let (loss, mut grads) = model.forward_loss_dropout(&batch, &mut dropout_rng);
            let loss = loss.to_f64_lossy();
            let norm = clip(&mut grads, hyper.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    loss: if loss.is_finite() { norm } else { loss },
                });
            }
            adam.update(model.params_mut(), &grads, hyper.learning_rate);
            loss_sum += loss * batch.target_tokens() as f64;
            tokens += batch.target_tokens();
        }
        let dev = perplexity(&model, dev_data, hyper.batch_size)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: Some(loss_sum / tokens as f64),
            dev_perplexity: dev,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if dev < best_ppl {
            best_ppl = dev;
            best = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, history))
}

/// Continues training an existing model on new data; the loop is the same
/// as [`train`], with a fresh optimiser state and history.
pub fn fine_tune<T: Scalar>(
    model: Seq2Seq<T>,
    train_data: &[Example],
    dev_data: &[Example],
    hyper: &TrainHyper,
) -> Result<(Seq2Seq<T>, TrainingHistory)> {
    train(model, train_data, dev_data, hyper)
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_model;
    use super::*;

    fn copy_data(n: usize, seed: u64) -> Vec<Example> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..5);
                let s: Vec<usize> = (0..len).map(|_| rng.gen_range(4..10)).collect();
                (s.clone(), s)
            })
            .collect()
    }

    #[test]
    fn best_checkpoint_is_kept_and_runs_repeat() {
        let data = copy_data(24, 1);
        let dev = copy_data(8, 2);
        let hyper = TrainHyper {
            batch_size: 8,
            max_epochs: 4,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (m, h) = train(toy_model::<f64>(10, 4, 6, 1), &data, &dev, &hyper).unwrap();
        let min = h.records.iter().map(|r| r.dev_perplexity).fold(f64::INFINITY, f64::min);
        assert_eq!(h.best_dev_perplexity(), Some(min));
        assert!((perplexity(&m, &dev, 8).unwrap() - min).abs() < 1e-9);
        assert!(min <= h.records[1].dev_perplexity);

        let (m2, h2) = train(toy_model::<f64>(10, 4, 6, 1), &data, &dev, &hyper).unwrap();
        assert_eq!(m.params(), m2.params());
        assert_eq!(
            h.records.iter().map(|r| (r.train_loss, r.dev_perplexity)).collect::<Vec<_>>(),
            h2.records.iter().map(|r| (r.train_loss, r.dev_perplexity)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let data = copy_data(5, 3);
        let m = toy_model::<f64>(10, 4, 6, 2);
        let hyper = TrainHyper {
            max_epochs: 0,
            ..TrainHyper::fine_tune_default()
        };
        let (tuned, h) = fine_tune(m.clone(), &data, &data, &hyper).unwrap();
        assert_eq!(tuned.params(), m.params());
        assert_eq!(h.records.len(), 1);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let m = toy_model::<f64>(10, 4, 6, 2);
        assert!(train(m.clone(), &[], &copy_data(2, 1), &TrainHyper::default()).is_err());
        assert!(train(m, &copy_data(2, 1), &[], &TrainHyper::default()).is_err());
    }
}
