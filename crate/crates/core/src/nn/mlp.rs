use serde::{Deserialize, Serialize};

use super::{matmul, Scalar};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputActivation {
    Linear,
    /// `scale · tanh(z)`, bounding outputs to `[-scale, scale]`.
    Tanh {
        scale: f64,
    },
}

/// Dense layer; `weight` is `fan_in × fan_out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

/// ReLU hidden layers followed by an output layer with [`OutputActivation`].
/// The same type stores parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<F> {
    pub layers: Vec<Layer<F>>,
    pub output: OutputActivation,
}

/// Post-activations of every layer, `acts[0]` being the input.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    pub batch: usize,
    pub acts: Vec<Vec<F>>,
}

impl<F> ForwardCache<F> {
    pub fn output(&self) -> &[F] {
        self.acts.last().expect("cache holds the input at least")
    }
}

impl<F: Scalar> MlpParams<F> {
    /// `sizes = [input, hidden.., output]`; weights uniform in `±1/√fan_in`,
    /// biases zero.
    pub fn new(sizes: &[usize], output: OutputActivation, rng: &mut impl rand::Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight: (0..w[0] * w[1])
                        .map(|_| F::of(rng.random_range(-bound..bound)))
                        .collect(),
                    bias: vec![F::zero(); w[1]],
                }
            })
            .collect();
        Ok(MlpParams { layers, output })
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                fan_in: w[0],
                fan_out: w[1],
                weight: vec![F::zero(); w[0] * w[1]],
                bias: vec![F::zero(); w[1]],
            })
            .collect();
        MlpParams { layers, output }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes(), self.output)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.fan_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.sizes() == other.sizes()
    }

    /// Parameter tensors in storage order: weight then bias per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[F]> {
        self.layers.iter().flat_map(|l| [&l.weight[..], &l.bias[..]])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<F>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> MlpParams<G> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    weight: l.weight.iter().map(|&x| G::of(x.as_f64())).collect(),
                    bias: l.bias.iter().map(|&x| G::of(x.as_f64())).collect(),
                })
                .collect(),
            output: self.output,
        }
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward(&self, input: &[F], batch: usize) -> Result<(Vec<F>, ForwardCache<F>)> {
        self.check_input(input, batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let y = self.apply_layer(idx, layer, acts.last().expect("nonempty"), batch);
            acts.push(y);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((out, ForwardCache { batch, acts }))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, input: &[F], batch: usize) -> Result<Vec<F>> {
        self.check_input(input, batch)?;
        let mut x = None::<Vec<F>>;
        for (idx, layer) in self.layers.iter().enumerate() {
            let y = self.apply_layer(idx, layer, x.as_deref().unwrap_or(input), batch);
            x = Some(y);
        }
        Ok(x.unwrap_or_else(|| input.to_vec()))
    }

    fn check_input(&self, input: &[F], batch: usize) -> Result<()> {
        if input.len() != batch * self.input_dim() {
            return Err(invalid(format!(
                "input length {} != batch {batch} × input dim {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn apply_layer(&self, idx: usize, layer: &Layer<F>, x: &[F], batch: usize) -> Vec<F> {
        let mut y = Vec::with_capacity(batch * layer.fan_out);
        for _ in 0..batch {
            y.extend_from_slice(&layer.bias);
        }
        matmul(
            batch,
            layer.fan_in,
            layer.fan_out,
            x,
            false,
            &layer.weight,
            false,
            F::one(),
            &mut y,
        );
        if idx + 1 < self.layers.len() {
            for v in &mut y {
                *v = v.max(F::zero());
            }
        } else if let OutputActivation::Tanh { scale } = self.output {
            let scale = F::of(scale);
            for v in &mut y {
                *v = scale * v.tanh();
            }
        }
        y
    }

    /// Parameter gradients of `Σ grad_output ⊙ output` for the cached pass.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_output: &[F]) -> Result<MlpParams<F>> {
        Ok(self.backward_full(cache, grad_output)?.0)
    }

    /// Like [`backward`](Self::backward), also returning the input gradient.
    pub fn backward_full(&self, cache: &ForwardCache<F>, grad_output: &[F]) -> Result<(MlpParams<F>, Vec<F>)> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(invalid("cache does not match network depth"));
        }
        if grad_output.len() != batch * self.output_dim() {
            return Err(invalid("grad_output length mismatch"));
        }
        let mut delta = grad_output.to_vec();
        if let OutputActivation::Tanh { scale } = self.output {
            // d(s·tanh z)/dz = s − y²/s
            let s = F::of(scale);
            for (d, &y) in delta.iter_mut().zip(cache.output()) {
                *d = *d * (s - y * y / s);
            }
        }
        let mut grads = self.zeros_like();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let x = &cache.acts[idx];
            let g = &mut grads.layers[idx];
            matmul(
                layer.fan_in,
                batch,
                layer.fan_out,
                x,
                true,
                &delta,
                false,
                F::zero(),
                &mut g.weight,
            );
            for row in delta.chunks_exact(layer.fan_out) {
                for (b, &d) in g.bias.iter_mut().zip(row) {
                    *b = *b + d;
                }
            }
            let mut dx = vec![F::zero(); batch * layer.fan_in];
            matmul(
                batch,
                layer.fan_out,
                layer.fan_in,
                &delta,
                false,
                &layer.weight,
                true,
                F::zero(),
                &mut dx,
            );
            if idx > 0 {
                for (d, &h) in dx.iter_mut().zip(x) {
                    if h <= F::zero() {
                        *d = F::zero();
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }
}
