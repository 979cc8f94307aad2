//! Local training: mini-batch Adam on cross-entropy, optionally with the
//! FedProx anchor `mu/2 * ||w - w_global||^2`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, SplitDataset};
use super::metrics::{evaluate, MetricsReport};
use super::model::{softmax, WeightVector};
use super::FlError;
use crate::seed;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FedAvg,
    FedProx,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub method: Method,
    pub mu: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            local_epochs: 2,
            method: Method::FedAvg,
            mu: 0.001,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(FlError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(FlError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(FlError::InvalidConfig("mu must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn prox_penalty(w: &[f64], anchor: &[f64], mu: f64) -> f64 {
    assert_eq!(w.len(), anchor.len(), "prox_penalty length mismatch");
    let sq: f64 = w.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * mu * sq
}

pub fn prox_gradient(w: &[f64], anchor: &[f64], mu: f64) -> Vec<f64> {
    assert_eq!(w.len(), anchor.len(), "prox_gradient length mismatch");
    w.iter().zip(anchor).map(|(a, b)| mu * (a - b)).collect()
}

/// Mean cross-entropy of `w` over `data`.
pub fn cross_entropy(w: &WeightVector, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let total: f64 = (0..data.len())
        .map(|i| {
            let acts = w.forward(data.row(i));
            let p = softmax(acts.last().expect("logits"));
            -p[data.labels[i]].max(f64::MIN_POSITIVE).ln()
        })
        .sum();
    total / data.len() as f64
}

/// Mean cross-entropy gradient over the rows in `batch`.
fn batch_gradient(w: &WeightVector, data: &Dataset, batch: &[usize], grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let layers = w.layers();
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let acts = w.forward(data.row(i));
        let mut delta = softmax(acts.last().expect("logits"));
        delta[data.labels[i]] -= 1.0;
        for (li, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &acts[li];
            for (o, d) in delta.iter().enumerate() {
                grad[b_off + o] += d * scale;
            }
            for (k, &x) in input.iter().enumerate().take(fan_in) {
                if x == 0.0 {
                    continue;
                }
                let row = &mut grad[w_off + k * fan_out..w_off + (k + 1) * fan_out];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += x * d * scale;
                }
            }
            if li == 0 {
                break;
            }
            // back through the ReLU of the previous layer
            let mut prev = vec![0.0; fan_in];
            for (k, p) in prev.iter_mut().enumerate() {
                if input[k] <= 0.0 {
                    continue;
                }
                let row = &w.values[w_off + k * fan_out..w_off + (k + 1) * fan_out];
                *p = row.iter().zip(&delta).map(|(a, b)| a * b).sum();
            }
            delta = prev;
        }
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

fn check_compatible(w: &WeightVector, data: &Dataset) -> Result<(), FlError> {
    if w.n_inputs() != data.n_features || w.n_classes() != data.n_classes {
        return Err(FlError::ShapeMismatch(format!(
            "model {:?} vs data {}x{} classes",
            w.shapes, data.n_features, data.n_classes
        )));
    }
    Ok(())
}

/// Train from `w_global` on `data` for `cfg.local_epochs` epochs.
/// An empty shard returns `w_global` unchanged.
pub fn local_train(
    w_global: &WeightVector,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<WeightVector, FlError> {
    cfg.validate()?;
    check_compatible(w_global, data)?;
    if data.is_empty() {
        return Ok(w_global.clone());
    }
    let mut w = w_global.clone();
    let mut adam = Adam::new(w.len(), cfg.learning_rate);
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng(cfg.rng_seed, "local_train", 0);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            batch_gradient(&w, data, batch, &mut grad);
            if cfg.method == Method::FedProx {
                let prox = prox_gradient(&w.values, &w_global.values, cfg.mu);
                for (g, p) in grad.iter_mut().zip(prox) {
                    *g += p;
                }
            }
            adam.step(&mut w.values, &grad);
        }
    }
    Ok(w)
}

/// Same model and optimizer trained on the whole training split for
/// `epochs` passes; the reference upper bound for federated runs.
pub fn centralized_baseline(
    data: &SplitDataset,
    init: &WeightVector,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<(WeightVector, MetricsReport), FlError> {
    let cfg = TrainConfig {
        local_epochs: epochs,
        method: Method::FedAvg,
        ..cfg.clone()
    };
    let w = local_train(init, &data.train, &cfg)?;
    let report = evaluate(&w, &data.test)?;
    Ok((w, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl_core::dataset::{make_synthetic_dataset, DatasetSpec};
    use crate::fl_core::model::init_weights;
    use rand::{Rng, SeedableRng};

    #[test]
    fn penalty_hand_values() {
        assert_eq!(prox_penalty(&[1.0, 1.0], &[1.0, 1.0], 0.3), 0.0);
        assert_eq!(prox_penalty(&[1.0, 1.0], &[0.0, 0.0], 0.001), 0.001);
    }

    #[test]
    fn gradient_zero_at_anchor_and_linear_in_mu() {
        let w = [0.5, -2.0, 3.0];
        assert!(prox_gradient(&w, &w, 0.1).iter().all(|g| *g == 0.0));
        let a = [0.0, 1.0, -1.0];
        let g1 = prox_gradient(&w, &a, 0.25);
        let g2 = prox_gradient(&w, &a, 0.5);
        for (x, y) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn penalty_matches_reverse_order_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(1..500);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mu = rng.gen_range(0.0..1.0);
            let mut rev = 0.0;
            for i in (0..n).rev() {
                let d = w[i] - a[i];
                rev += d * d;
            }
            let oracle = mu / 2.0 * rev;
            assert!((prox_penalty(&w, &a, mu) - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }

    fn tiny_problem() -> (WeightVector, Dataset) {
        let spec = DatasetSpec {
            n_samples: 200,
            n_features: 4,
            class_proportions: vec![0.5, 0.5],
            separation: 4.0,
        };
        let ds = make_synthetic_dataset(3, &spec).unwrap();
        (init_weights(&[4, 8, 2], 3).unwrap(), ds.train)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (w, data) = tiny_problem();
        let batch: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; w.len()];
        batch_gradient(&w, &data, &batch, &mut grad);
        let h = 1e-6;
        for i in (0..w.len()).step_by(3) {
            let mut plus = w.clone();
            plus.values[i] += h;
            let mut minus = w.clone();
            minus.values[i] -= h;
            let fd = (cross_entropy(&plus, &data) - cross_entropy(&minus, &data)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1e-3),
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn one_epoch_lowers_loss_on_separable_data() {
        let (w, data) = tiny_problem();
        let cfg = TrainConfig {
            local_epochs: 1,
            rng_seed: 1,
            ..TrainConfig::default()
        };
        let before = cross_entropy(&w, &data);
        let after = cross_entropy(&local_train(&w, &data, &cfg).unwrap(), &data);
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn fedprox_with_zero_mu_is_fedavg() {
        let (w, data) = tiny_problem();
        let avg = TrainConfig {
            rng_seed: 4,
            ..TrainConfig::default()
        };
        let prox = TrainConfig {
            method: Method::FedProx,
            mu: 0.0,
            ..avg.clone()
        };
        let a = local_train(&w, &data, &avg).unwrap();
        let b = local_train(&w, &data, &prox).unwrap();
        let bits = |v: &WeightVector| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn fedprox_stays_closer_to_anchor() {
        let (w, data) = tiny_problem();
        let cfg = TrainConfig {
            local_epochs: 5,
            learning_rate: 0.05,
            rng_seed: 4,
            ..TrainConfig::default()
        };
        let avg = local_train(&w, &data, &cfg).unwrap();
        let prox = local_train(
            &w,
            &data,
            &TrainConfig {
                method: Method::FedProx,
                mu: 1.0,
                ..cfg
            },
        )
        .unwrap();
        assert!(prox_penalty(&prox.values, &w.values, 1.0) < prox_penalty(&avg.values, &w.values, 1.0));
    }

    #[test]
    fn empty_shard_returns_global() {
        let (w, data) = tiny_problem();
        let empty = Dataset::empty(data.n_features, data.n_classes);
        assert_eq!(local_train(&w, &empty, &TrainConfig::default()).unwrap(), w);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (_, data) = tiny_problem();
        let w = init_weights(&[5, 8, 2], 1).unwrap();
        assert!(matches!(
            local_train(&w, &data, &TrainConfig::default()),
            Err(FlError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (w, data) = tiny_problem();
        let cfg = TrainConfig {
            rng_seed: 9,
            ..TrainConfig::default()
        };
        assert_eq!(
            local_train(&w, &data, &cfg).unwrap(),
            local_train(&w, &data, &cfg).unwrap()
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let (w, data) = tiny_problem();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { mu: -1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(local_train(&w, &data, &cfg), Err(FlError::InvalidConfig(_))));
        }
    }
}
