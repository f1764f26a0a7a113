//! Fully connected ReLU networks with a linear output layer.
//!
//! Batches are matrices with one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    L1,
    L2,
}

impl Loss {
    /// Mean over output components and batch samples.
    pub fn value(self, pred: &DMatrix<f64>, label: &DMatrix<f64>) -> f64 {
        let b = pred.len().max(1) as f64;
        let total: f64 = match self {
            Loss::L1 => pred.iter().zip(label.iter()).map(|(p, y)| (p - y).abs()).sum(),
            Loss::L2 => pred.iter().zip(label.iter()).map(|(p, y)| (p - y) * (p - y)).sum(),
        };
        total / b
    }

    /// `∂loss/∂pred`; the L1 subgradient at a zero residual is 0.
    pub fn gradient(self, pred: &DMatrix<f64>, label: &DMatrix<f64>) -> DMatrix<f64> {
        let b = pred.len().max(1) as f64;
        pred.zip_map(label, |p, y| match self {
            Loss::L1 => {
                let r = p - y;
                if r > 0.0 {
                    1.0 / b
                } else if r < 0.0 {
                    -1.0 / b
                } else {
                    0.0
                }
            }
            Loss::L2 => 2.0 * (p - y) / b,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }
}

/// ReLU on every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Same layout as the network's layers.
pub type Gradients = Vec<Layer>;

impl Mlp {
    /// Weights uniform in `±√(6/(fan_in + fan_out))`, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weights: DMatrix::zeros(w[1], w[0]),
                    bias: DVector::zeros(w[1]),
                })
                .collect(),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            check_len("layer bias", l.output_dim(), l.bias.len())?;
            if k > 0 {
                check_len("consecutive layer dims", layers[k - 1].output_dim(), l.input_dim())?;
            }
        }
        Ok(Self { layers })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("network input", self.input_dim(), input.nrows())?;
        let last = self.layers.len() - 1;
        let mut a = self.layers[0].affine(input);
        if last > 0 {
            relu(&mut a);
        }
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            a = layer.affine(&a);
            if k < last {
                relu(&mut a);
            }
        }
        Ok(a)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?.as_slice().to_vec())
    }

    /// Loss of a batch and the gradient of every parameter.
    pub fn gradient(&self, input: &DMatrix<f64>, label: &DMatrix<f64>, loss: Loss) -> Result<(f64, Gradients)> {
        check_len("network input", self.input_dim(), input.nrows())?;
        check_len("label rows", self.output_dim(), label.nrows())?;
        check_len("label columns", input.ncols(), label.ncols())?;
        let last = self.layers.len() - 1;
        // activations[k] is the input of layer k
        let mut activations: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&activations[k]);
            if k < last {
                relu(&mut z);
            }
            activations.push(z);
        }
        let pred = &activations[self.layers.len()];
        let value = loss.value(pred, label);
        let mut delta = loss.gradient(pred, label);
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            if k < last {
                // ReLU derivative from the stored post-activation
                delta.zip_apply(&activations[k + 1], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            let weights = &delta * activations[k].transpose();
            let bias = delta.column_sum();
            if k > 0 {
                delta = self.layers[k].weights.transpose() * &delta;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Ok((value, grads))
    }

    /// `θ ← θ − lr·g`.
    pub fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weights.zip_apply(&g.weights, |w, g| *w -= lr * g);
            l.bias.zip_apply(&g.bias, |b, g| *b -= lr * g);
        }
    }

    /// Parameters in layer order, each layer's weights column-major then its
    /// bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("flat parameters", self.param_count(), params.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&params[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let w = l.weights.len();
            if index < w {
                return &mut l.weights.as_mut_slice()[index];
            }
            index -= w;
            let b = l.bias.len();
            if index < b {
                return &mut l.bias.as_mut_slice()[index];
            }
            index -= b;
        }
        panic!("parameter index out of range")
    }
}

pub(crate) fn flatten_gradients(grads: &Gradients) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
        .collect()
}

fn relu(m: &mut DMatrix<f64>) {
    m.apply(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::from_layers(vec![Layer {
            weights: DMatrix::identity(4, 4),
            bias: DVector::zeros(4),
        }])
        .unwrap();
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.5, 0.0]).unwrap(), vec![1.0, -2.0, 3.5, 0.0]);
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let mut net = Mlp::zeros(&[3, 5, 2]).unwrap();
        net.layers_mut()[1].bias = DVector::from_vec(vec![0.25, -4.0]);
        assert_eq!(net.forward_one(&[9.0, 8.0, 7.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn negative_preactivations_are_gated() {
        let net = Mlp::from_layers(vec![
            Layer {
                weights: DMatrix::from_element(3, 2, -1.0),
                bias: DVector::zeros(3),
            },
            Layer {
                weights: DMatrix::from_element(1, 3, 1.0),
                bias: DVector::from_element(1, 0.5),
            },
        ])
        .unwrap();
        assert_eq!(net.forward_one(&[1.0, 2.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Mlp::new(&[6, 16, 16, 3], 42).unwrap();
        let x = DMatrix::from_fn(6, 5, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert_eq!(Mlp::new(&[6, 16, 16, 3], 42).unwrap(), net);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::new(&[4, 3], 0).unwrap();
        assert!(matches!(
            net.forward(&DMatrix::zeros(5, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Mlp::new(&[4], 0).is_err());
    }

    #[test]
    fn initialization_respects_glorot_bound() {
        let net = Mlp::new(&[100, 50], 1).unwrap();
        let limit = (6.0f64 / 150.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].weights.abs().max() > 0.9 * limit);
    }

    #[test]
    fn loss_values_by_hand() {
        let p = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = DMatrix::from_column_slice(2, 2, &[0.0, 2.0, 5.0, 4.0]);
        assert_eq!(Loss::L1.value(&p, &y), 0.75);
        assert_eq!(Loss::L2.value(&p, &y), 1.25);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut net = Mlp::new(&[3, 4, 2], 5).unwrap();
        let p = net.flat_params();
        assert_eq!(p.len(), net.param_count());
        let mut q = p.clone();
        q[7] += 1.0;
        net.set_flat_params(&q).unwrap();
        assert_eq!(net.flat_params(), q);
        *net.param_mut(7) -= 1.0;
        assert_eq!(net.flat_params(), p);
    }
}
