//! Minibatch SGD and finite-difference gradient checks.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{flatten_gradients, Loss, Mlp};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step decay: `lr_t = lr₀ / (1 + decay·t)` with `t` the global step.
    pub decay: f64,
    pub epochs: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.1,
            decay: 1e-6,
            epochs: 500,
            loss: Loss::L2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !(self.decay >= 0.0) {
            return Err(Error::Config(format!(
                "batch {} / learning rate {} / decay {} out of range",
                self.batch_size, self.learning_rate, self.decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, accumulated over its batches.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains `mlp` in place on samples stored as columns of `inputs` and
/// `labels`.
pub fn train(mlp: &mut Mlp, inputs: &DMatrix<f64>, labels: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let m = inputs.ncols();
    if m == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    check_len("label columns", m, labels.ncols())?;
    check_len("label rows", mlp.output_dim(), labels.nrows())?;
    check_len("input rows", mlp.input_dim(), inputs.nrows())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut step: u64 = 0;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = inputs.select_columns(batch);
            let y = labels.select_columns(batch);
            let (loss, grads) = mlp.gradient(&x, &y, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            let lr = cfg.learning_rate / (1.0 + cfg.decay * step as f64);
            if lr != 0.0 {
                mlp.apply_step(&grads, lr);
            }
            step += 1;
        }
        let mean = total / m as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.push(mean);
    }
    Ok(TrainReport {
        loss_trace: trace,
        steps: step,
    })
}

/// Options of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    /// Parameters sampled; all of them when the network has fewer.
    pub params: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            params: 200,
            seed: 0,
        }
    }
}

/// Largest relative difference between backpropagated and central-difference
/// gradients over a random parameter subset.
pub fn grad_check(mlp: &Mlp, input: &DMatrix<f64>, label: &DMatrix<f64>, loss: Loss, opts: GradCheck) -> Result<f64> {
    let (_, grads) = mlp.gradient(input, label, loss)?;
    let analytic = flatten_gradients(&grads);
    let mut indices: Vec<usize> = (0..mlp.param_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    indices.shuffle(&mut rng);
    indices.truncate(opts.params.max(1));

    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for &i in &indices {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + opts.step;
        let up = loss.value(&probe.forward(input)?, label);
        *probe.param_mut(i) = orig - opts.step;
        let down = loss.value(&probe.forward(input)?, label);
        *probe.param_mut(i) = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        // absolute floor for parameters with a vanishing gradient
        let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Layer;
    use nalgebra::DVector;
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = Mlp::new(&[7, 12, 10, 4], 3).unwrap();
        let x = random_batch(7, 6, 1);
        let y = random_batch(4, 6, 2) * 3.0;
        for loss in [Loss::L1, Loss::L2] {
            let err = grad_check(&net, &x, &y, loss, GradCheck::default()).unwrap();
            assert!(err < 1e-4, "{loss:?}: {err}");
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let net = Mlp::zeros(&[3, 4, 2]).unwrap();
        let x = random_batch(3, 5, 0);
        let (loss, grads) = net.gradient(&x, &DMatrix::zeros(2, 5), Loss::L2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(flatten_gradients(&grads).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn learns_a_linear_map() {
        let w = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 0.25, 2.0, 0.0, -0.75]);
        let x = random_batch(3, 256, 4);
        let y = &w * &x;
        let mut net = Mlp::new(&[3, 2], 9).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            learning_rate: 0.1,
            decay: 0.0,
            epochs: 250,
            loss: Loss::L2,
            seed: 1,
        };
        let report = train(&mut net, &x, &y, &cfg).unwrap();
        assert!(report.steps <= 2000);
        assert!(report.final_loss() < 1e-6, "{}", report.final_loss());
        // least-squares oracle: the exact map is attainable
        assert!((&net.layers()[0].weights - &w).abs().max() < 1e-3);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut net = Mlp::new(&[4, 8, 2], 6).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            batch_size: 3,
            ..TrainConfig::default()
        };
        train(&mut net, &random_batch(4, 10, 1), &random_batch(2, 10, 2), &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut net = Mlp::new(&[4, 16, 3], 2).unwrap();
            let cfg = TrainConfig {
                epochs: 20,
                batch_size: 8,
                learning_rate: 0.05,
                loss: Loss::L1,
                ..TrainConfig::default()
            };
            let r = train(&mut net, &random_batch(4, 50, 5), &random_batch(3, 50, 6), &cfg).unwrap();
            (net, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = Mlp::from_layers(vec![Layer {
            weights: DMatrix::from_element(1, 1, 1.0),
            bias: DVector::zeros(1),
        }])
        .unwrap();
        let x = DMatrix::from_element(1, 4, 1e3);
        let y = DMatrix::from_element(1, 4, -1e3);
        let cfg = TrainConfig {
            learning_rate: 10.0,
            epochs: 100,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut net, &x, &y, &cfg), Err(Error::Diverged { .. })));
    }
}
