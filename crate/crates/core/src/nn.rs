//! Dense networks with hand-written reverse-mode gradients.
//!
//! Layers are affine with rectified-linear hidden activations; the output
//! head is hyperbolic-tangent for actors and identity for critics.
//! Parameters live in one flat vector, laid out per layer as the weight
//! matrix in row-major output-by-input order followed by the biases, which
//! keeps checkpointing and the optimizer trivial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2D array of f64. Rows are batch entries unless stated
/// otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Dimension {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Tanh,
    Linear,
}

/// Multilayer perceptron. `sizes` runs input, hidden layers, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    output_activation: OutputActivation,
    params: Vec<f64>,
    revision: u64,
}

/// Cached activations from one batched forward pass, consumed by
/// `backward`. Bound to the parameter revision it was computed under.
#[derive(Clone, Debug)]
pub struct GradientTape {
    activations: Vec<Matrix>,
    revision: u64,
}

impl Mlp {
    /// Network with uniform initialization in the variance-preserving range
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]` per layer;
    /// biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "network needs at least input and output sizes, got {sizes:?}"
            )));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..=limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output_activation,
            params,
            revision: 0,
        })
    }

    /// Rebuild from a flat parameter vector, e.g. a checkpoint.
    pub fn from_params(
        sizes: &[usize],
        output_activation: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("bad layer sizes {sizes:?}")));
        }
        if params.len() != param_count(sizes) {
            return Err(Error::Dimension {
                expected: param_count(sizes),
                got: params.len(),
            });
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output_activation,
            params,
            revision: 0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.sizes)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.revision += 1;
        &mut self.params
    }

    /// Single-input forward pass without gradient caching.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut current = input.to_vec();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let mut next = vec![0.0; fan_out];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (w, x) in row.iter().zip(&current) {
                    acc += w * x;
                }
                *out = if l < last {
                    acc.max(0.0)
                } else {
                    match self.output_activation {
                        OutputActivation::Tanh => acc.tanh(),
                        OutputActivation::Linear => acc,
                    }
                };
            }
            current = next;
            offset += (fan_in + 1) * fan_out;
        }
        Ok(current)
    }

    /// Batched forward pass that records the activations needed for
    /// `backward`.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<(Matrix, GradientTape)> {
        if inputs.cols != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: inputs.cols,
            });
        }
        let batch = inputs.rows;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.clone());
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let prev = activations.last().unwrap();
            let mut next = Matrix::zeros(batch, fan_out);
            for b in 0..batch {
                let x = prev.row(b);
                let out = next.row_mut(b);
                for (o, slot) in out.iter_mut().enumerate() {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let mut acc = biases[o];
                    for (w, v) in row.iter().zip(x) {
                        acc += w * v;
                    }
                    *slot = if l < last {
                        acc.max(0.0)
                    } else {
                        match self.output_activation {
                            OutputActivation::Tanh => acc.tanh(),
                            OutputActivation::Linear => acc,
                        }
                    };
                }
            }
            activations.push(next);
            offset += (fan_in + 1) * fan_out;
        }
        let outputs = activations.last().unwrap().clone();
        Ok((
            outputs,
            GradientTape {
                activations,
                revision: self.revision,
            },
        ))
    }

    /// Reverse-mode gradients of `sum_b output[b] . output_grads[b]` with
    /// respect to parameters and inputs. Gradients are summed over the
    /// batch; divide by the batch size for a mean-loss gradient.
    pub fn backward(
        &self,
        tape: &GradientTape,
        output_grads: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        if tape.revision != self.revision {
            return Err(Error::StaleTape);
        }
        let outputs = tape.activations.last().unwrap();
        if output_grads.rows != outputs.rows || output_grads.cols != outputs.cols {
            return Err(Error::Dimension {
                expected: outputs.rows * outputs.cols,
                got: output_grads.rows * output_grads.cols,
            });
        }
        let batch = output_grads.rows;
        let mut param_grads = vec![0.0; self.params.len()];

        // Output activation derivative.
        let mut delta = output_grads.clone();
        if self.output_activation == OutputActivation::Tanh {
            for (d, y) in delta.data.iter_mut().zip(&outputs.data) {
                *d *= 1.0 - y * y;
            }
        }

        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }

        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = offsets[l];
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let prev = &tape.activations[l];

            {
                let (w_grads, b_grads) = param_grads[offset..offset + (fan_in + 1) * fan_out]
                    .split_at_mut(fan_in * fan_out);
                for b in 0..batch {
                    let x = prev.row(b);
                    let d = delta.row(b);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv != 0.0 {
                            let row = &mut w_grads[o * fan_in..(o + 1) * fan_in];
                            for (g, v) in row.iter_mut().zip(x) {
                                *g += dv * v;
                            }
                        }
                        b_grads[o] += dv;
                    }
                }
            }

            let mut prev_delta = Matrix::zeros(batch, fan_in);
            for b in 0..batch {
                let d = delta.row(b);
                let out = prev_delta.row_mut(b);
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        let row = &weights[o * fan_in..(o + 1) * fan_in];
                        for (g, w) in out.iter_mut().zip(row) {
                            *g += dv * w;
                        }
                    }
                }
                if l > 0 {
                    // Rectifier gate of the layer below.
                    for (g, &a) in out.iter_mut().zip(prev.row(b)) {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
            delta = prev_delta;
        }
        Ok((param_grads, delta))
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// First-order adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// One adaptive-moment descent step with bias correction. Gradients must be
/// finite; the caller gets a diagnostic otherwise.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: grads.len().min(state.first_moment.len()),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient {g} at parameter {i} of {}",
                params.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        let v = &mut state.second_moment[i];
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}
