//! Single-hidden-layer perceptron: `tanh` hidden units, softmax output,
//! mean cross-entropy loss, full-batch gradient descent.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LabeledFeature;
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_units: 32,
            epochs: 500,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Class index `i` stands for subject `labels[i]`.
    pub labels: Vec<u32>,
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub seed: u64,
    pub epochs_trained: usize,
    /// Training loss before each epoch's update, then the final loss.
    pub loss_history: Vec<f64>,
}

/// Gradient of the mean loss, same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Mlp {
    /// Random Xavier-uniform weights, zero biases.
    pub fn new(inputs: usize, hidden: usize, labels: Vec<u32>, seed: u64) -> Self {
        let classes = labels.len();
        let mut rng = SeededRng::new(seed);
        let a1 = libm::sqrt(6.0 / (inputs + hidden) as f64);
        let a2 = libm::sqrt(6.0 / (hidden + classes) as f64);
        let w1 = (0..hidden * inputs).map(|_| rng.range(-a1, a1)).collect();
        let w2 = (0..classes * hidden).map(|_| rng.range(-a2, a2)).collect();
        Self {
            labels,
            inputs,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
            seed,
            epochs_trained: 0,
            loss_history: Vec::new(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.inputs
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                libm::tanh(self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes())
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
        let total: f64 = exps.iter().sum();
        Forward {
            hidden,
            probs: exps.iter().map(|e| e / total).collect(),
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    fn class_of(&self, label: u32) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or(Error::InvalidConfig(alloc::format!("unknown label {label}")))
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &[LabeledFeature]) -> Result<f64> {
        let mut total = 0.0;
        for item in data {
            let c = self.class_of(item.subject_id)?;
            let p = self.forward(&item.vector).probs[c];
            total -= libm::log(p.max(1e-300));
        }
        Ok(total / data.len() as f64)
    }

    /// Analytic gradient of [`Mlp::loss`] by backpropagation.
    pub fn gradient(&self, data: &[LabeledFeature]) -> Result<MlpGradient> {
        let mut g = MlpGradient {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        let scale = 1.0 / data.len() as f64;
        let mut delta_h = vec![0.0; self.hidden];
        for item in data {
            let c = self.class_of(item.subject_id)?;
            let f = self.forward(&item.vector);
            delta_h.iter_mut().for_each(|d| *d = 0.0);
            for k in 0..self.classes() {
                let dlogit = (f.probs[k] - if k == c { 1.0 } else { 0.0 }) * scale;
                g.b2[k] += dlogit;
                for j in 0..self.hidden {
                    g.w2[k * self.hidden + j] += dlogit * f.hidden[j];
                    delta_h[j] += dlogit * self.w2[k * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                let dpre = delta_h[j] * (1.0 - f.hidden[j] * f.hidden[j]);
                g.b1[j] += dpre;
                let row = &mut g.w1[j * self.inputs..(j + 1) * self.inputs];
                row.iter_mut().zip(&item.vector).for_each(|(w, x)| *w += dpre * x);
            }
        }
        Ok(g)
    }

    /// All parameters in the order `w1, b1, w2, b2`.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            buf.iter_mut().for_each(|v| *v = it.next().expect("parameter count"));
        }
    }

    fn step(&mut self, g: &MlpGradient, lr: f64) {
        let pairs = [
            (&mut self.w1, &g.w1),
            (&mut self.b1, &g.b1),
            (&mut self.w2, &g.w2),
            (&mut self.b2, &g.b2),
        ];
        for (p, d) in pairs {
            p.iter_mut().zip(d).for_each(|(w, dw)| *w -= lr * dw);
        }
    }

    /// Runs `epochs` full-batch gradient steps.
    pub fn fit(&mut self, data: &[LabeledFeature], epochs: usize, learning_rate: f64) -> Result<()> {
        for _ in 0..epochs {
            self.loss_history.push(self.loss(data)?);
            let g = self.gradient(data)?;
            self.step(&g, learning_rate);
            self.epochs_trained += 1;
        }
        self.loss_history.push(self.loss(data)?);
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    pub fn train(data: &[LabeledFeature], cfg: &MlpConfig) -> Result<Mlp> {
        if cfg.hidden_units == 0 {
            return Err(Error::InvalidConfig("hidden_units must be positive".into()));
        }
        if !(cfg.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        let inputs = data.first().map_or(0, |d| d.vector.len());
        let mut labels: Vec<u32> = data.iter().map(|d| d.subject_id).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut mlp = Mlp::new(inputs, cfg.hidden_units, labels, cfg.seed);
        mlp.fit(data, cfg.epochs, cfg.learning_rate)?;
        Ok(mlp)
    }
}
