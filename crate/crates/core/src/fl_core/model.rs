//! Fully connected ReLU network stored as one flat parameter vector.
//!
//! For layer sizes `[d, h1, .., c]` each layer contributes a row-major
//! `in x out` weight block followed by an `out` bias block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub shapes: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn param_count(shapes: &[usize]) -> usize {
    shapes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn check_shapes(shapes: &[usize]) -> Result<(), FlError> {
    if shapes.len() < 3 || shapes.contains(&0) {
        return Err(FlError::InvalidShapes(shapes.to_vec()));
    }
    Ok(())
}

impl WeightVector {
    pub fn new(shapes: Vec<usize>, values: Vec<f64>) -> Result<Self, FlError> {
        check_shapes(&shapes)?;
        if param_count(&shapes) != values.len() {
            return Err(FlError::ShapeMismatch(format!(
                "{} values for shapes {:?}",
                values.len(),
                shapes
            )));
        }
        Ok(WeightVector { shapes, values })
    }

    pub fn zeros(shapes: &[usize]) -> Result<Self, FlError> {
        Self::new(shapes.to_vec(), vec![0.0; param_count(shapes)])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.shapes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.shapes.last().expect("validated shapes")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` per layer.
    pub(crate) fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.shapes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let layer = (off, off + i * o, i, o);
                off += i * o + o;
                layer
            })
            .collect()
    }

    /// Per-layer activations for one sample; the last entry holds logits.
    pub(crate) fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (li, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate() {
            let input = acts.last().expect("non-empty");
            let mut out = self.values[b_off..b_off + fan_out].to_vec();
            for (i, &xi) in input.iter().enumerate().take(fan_in) {
                if xi == 0.0 {
                    continue;
                }
                let row = &self.values[w_off + i * fan_out..w_off + (i + 1) * fan_out];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
            if li + 1 < layers.len() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let acts = self.forward(x);
        argmax(acts.last().expect("logits"))
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases.
pub fn init_weights(shapes: &[usize], seed: u64) -> Result<WeightVector, FlError> {
    let mut w = WeightVector::zeros(shapes)?;
    let mut rng = seed::rng(seed, "init_weights", 0);
    for (w_off, _, fan_in, fan_out) in w.layers() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut w.values[w_off..w_off + fan_in * fan_out] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(w)
}
