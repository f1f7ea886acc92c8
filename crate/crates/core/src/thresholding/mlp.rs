//! Feature projector: a stack of affine layers, each followed by ReLU.


use crate::error::{Error, Result};
use crate::linalg::round_to_f32;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations from a forward pass.
pub(crate) struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|i| Layer::zeros(if i == 0 { input } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    /// Glorot-uniform weights, bias 0.1, rounded to f32.
    pub fn random<R: rand::Rng>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(input, hidden, layers);
        for layer in &mut mlp.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..limit);
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.1);
            round_to_f32(&mut layer.weights);
            round_to_f32(&mut layer.bias);
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP has no layers".into()));
        }
        let mut prev = self.layers[0].inputs;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != prev || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape(format!("MLP layer {i} is inconsistent")));
            }
            prev = l.outputs;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.trace(x).output)
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for l in &self.layers {
            let z: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    l.bias[o] + row.iter().zip(&cur).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let a = z.iter().map(|v| v.max(0.0)).collect();
            inputs.push(std::mem::replace(&mut cur, a));
            pre.push(z);
        }
        Trace {
            inputs,
            pre,
            output: cur,
        }
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    pub(crate) fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut Mlp) {
        let mut g = grad_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[li];
            let x = &trace.inputs[li];
            let delta: Vec<f64> = g.iter().zip(z).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
            let gl = &mut grad.layers[li];
            let mut g_in = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                if delta[o] == 0.0 {
                    continue;
                }
                gl.bias[o] += delta[o];
                for i in 0..l.inputs {
                    gl.weights[o * l.inputs + i] += delta[o] * x[i];
                    g_in[i] += delta[o] * l.weights[o * l.inputs + i];
                }
            }
            g = g_in;
        }
    }

    /// Smallest |pre-activation| over a forward pass; distance to a ReLU kink.
    pub fn kink_margin(&self, x: &[f64]) -> f64 {
        self.trace(x)
            .pre
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}
