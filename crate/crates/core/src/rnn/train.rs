//! Identification: Adam over backpropagation through time with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Activation, NormStats, RnnModel};
use crate::error::{Error, Result};
use crate::synth::{Dataset, GroupSamples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_activation: Activation,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    /// Samples per Adam step; 0 means the whole training split.
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Not read from config files; runs derive it from their master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![10, 10],
            activations: vec![Activation::Relu, Activation::Selu],
            output_activation: Activation::Identity,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 2000,
            batch_size: 4,
            patience: 200,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        if self.hidden.len() != self.activations.len() || self.hidden.is_empty() {
            return Err(Error::Config(format!(
                "{} hidden widths but {} activations",
                self.hidden.len(),
                self.activations.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose weights were kept (0 = initial weights).
    pub best_epoch: usize,
    /// Mean normalized loss of the minibatches seen in each epoch.
    pub train_loss: Vec<f64>,
    /// Normalized validation MSE after each epoch.
    pub val_loss: Vec<f64>,
    /// Normalized MSE of the kept weights on the validation split.
    pub val_mse: f64,
    /// Root mean squared error in kWh.
    pub val_rmse: f64,
    /// Mean absolute error divided by mean absolute label.
    pub val_mape: f64,
    /// Per validation day, actual minus predicted ΔD in kWh.
    pub residuals: Vec<Vec<f64>>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains one model on the first `train_len` samples of `group`, validating on the rest.
pub fn train(group: &GroupSamples, train_len: usize, config: &TrainConfig) -> Result<(RnnModel, TrainReport)> {
    config.validate()?;
    if train_len == 0 || train_len > group.len() {
        return Err(Error::Training(format!(
            "training split of {train_len} samples out of {} is empty or too large",
            group.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RnnModel::init(&config.hidden, &config.activations, config.output_activation, &mut rng)?;
    let norm = NormStats::fit(
        &group.prices[..train_len].iter().collect::<Vec<_>>(),
        &group.deltas[..train_len].iter().collect::<Vec<_>>(),
    );
    model.set_norm(norm)?;

    let xs: Vec<Vec<f64>> = group.prices.iter().map(|p| model.normalize_price(p.values())).collect();
    let ys: Vec<Vec<f64>> = group.deltas.iter().map(|d| model.normalize_dd(d.values())).collect();
    let (train_x, val_x) = xs.split_at(train_len);
    let (train_y, val_y) = ys.split_at(train_len);
    let val_xr: Vec<&[f64]> = val_x.iter().map(Vec::as_slice).collect();
    let val_yr: Vec<&[f64]> = val_y.iter().map(Vec::as_slice).collect();
    let monitor = |m: &RnnModel| -> f64 {
        if val_xr.is_empty() {
            let xr: Vec<&[f64]> = train_x.iter().map(Vec::as_slice).collect();
            let yr: Vec<&[f64]> = train_y.iter().map(Vec::as_slice).collect();
            m.normalized_loss(&xr, &yr)
        } else {
            m.normalized_loss(&val_xr, &val_yr)
        }
    };

    let batch = if config.batch_size == 0 { train_len } else { config.batch_size.min(train_len) };
    let mut adam = Adam::new(model.n_params());
    let mut order: Vec<usize> = (0..train_len).collect();
    let mut best = (monitor(&model), 0usize, model.params().to_vec());
    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::with_capacity(config.epochs);
    let mut params = model.params().to_vec();

    for epoch in 1..=config.epochs {
        if batch < train_len {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
            let by: Vec<&[f64]> = chunk.iter().map(|&i| train_y[i].as_slice()).collect();
            let (loss, grad) = model.normalized_batch_gradient(&bx, &by);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch}; try a lower learning rate than {}",
                    config.learning_rate
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.update(&mut params, &grad, config);
            model.params.copy_from_slice(&params);
        }
        train_curve.push(epoch_loss / train_len as f64);
        let val = monitor(&model);
        if !val.is_finite() {
            return Err(Error::Training(format!(
                "validation loss diverged at epoch {epoch}; try a lower learning rate than {}",
                config.learning_rate
            )));
        }
        val_curve.push(val);
        if val < best.0 {
            best = (val, epoch, params.clone());
        } else if config.patience > 0 && epoch - best.1 >= config.patience {
            break;
        }
    }

    model.set_params(best.2)?;
    let epochs_run = train_curve.len();
    let report = evaluate(&model, group, train_len, best.1, epochs_run, train_curve, val_curve);
    Ok((model, report))
}

fn evaluate(
    model: &RnnModel,
    group: &GroupSamples,
    train_len: usize,
    best_epoch: usize,
    epochs_run: usize,
    train_loss: Vec<f64>,
    val_loss: Vec<f64>,
) -> TrainReport {
    let norm = model.norm();
    let mut residuals = Vec::new();
    let (mut sq_norm, mut sq, mut abs_err, mut abs_label, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (p, d) in group.prices[train_len..].iter().zip(&group.deltas[train_len..]) {
        let pred = model.forward(p);
        let r: Vec<f64> = d.values().iter().zip(pred.values()).map(|(a, b)| a - b).collect();
        for (e, y) in r.iter().zip(d.values()) {
            sq += e * e;
            sq_norm += (e / norm.dd_std) * (e / norm.dd_std);
            abs_err += e.abs();
            abs_label += y.abs();
            count += 1;
        }
        residuals.push(r);
    }
    let n = count.max(1) as f64;
    TrainReport {
        epochs_run,
        best_epoch,
        train_loss,
        val_loss,
        val_mse: sq_norm / n,
        val_rmse: (sq / n).sqrt(),
        val_mape: if abs_label > 0.0 { abs_err / abs_label } else { 0.0 },
        residuals,
    }
}

/// Per-group seed derived from the master training seed.
pub fn group_seed(seed: u64, group: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(group as u64 + 1)
}

/// Trains one model per group in parallel. Results are in group order.
pub fn train_group_models(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<(RnnModel, TrainReport)>> {
    let train_len = dataset.train_len();
    dataset
        .groups
        .par_iter()
        .map(|g| {
            let cfg = TrainConfig {
                seed: group_seed(config.seed, g.group),
                ..config.clone()
            };
            train(g, train_len, &cfg)
        })
        .collect()
}
