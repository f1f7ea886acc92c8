//! Trainable state and its JSON file format.
//!
//! Arrays are stored as base64 of little-endian f32. Parameters are kept at
//! f32 precision in memory (training rounds after every update), so a write
//! followed by a read reproduces the model bit for bit.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelrep::check_beta;
use crate::linalg::{round_to_f32, Mat};
use crate::thresholding::mlp::{Layer, Mlp};
use crate::thresholding::ThresholdParams;

pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_R: f64 = 0.5;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed_dim: usize,
    /// `dim_out x embed_dim`, applied to sentence and label-name embeddings alike.
    pub proj: Mat,
    pub beta: f64,
    pub threshold: ThresholdParams,
}

impl ModelParams {
    /// Identity projection, `rho = 0`, and the given feature MLP.
    pub fn init(embed_dim: usize, beta: f64, alpha: f64, mlp: Mlp) -> Result<Self> {
        let m = Self {
            embed_dim,
            proj: Mat::identity(embed_dim),
            beta,
            threshold: ThresholdParams {
                r: DEFAULT_R,
                alpha,
                rho: 0.0,
                mlp,
                epsilon: DEFAULT_EPSILON,
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Model("embed_dim must be positive".into()));
        }
        if self.proj.cols != self.embed_dim || self.proj.rows == 0 || self.proj.data.len() != self.proj.rows * self.proj.cols {
            return Err(Error::Shape(format!(
                "projection is {}x{}, embeddings have dim {}",
                self.proj.rows, self.proj.cols, self.embed_dim
            )));
        }
        check_beta(self.beta)?;
        self.threshold.validate()
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        round_to_f32(&mut self.proj.data);
        let t = &mut self.threshold;
        for x in [&mut t.r, &mut t.alpha, &mut t.rho, &mut t.epsilon] {
            *x = *x as f32 as f64;
        }
        self.beta = self.beta as f32 as f64;
        for p in t.mlp.params_mut() {
            *p = *p as f32 as f64;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            embed_dim: self.embed_dim,
            proj: encode(&self.proj.data),
            beta: self.beta,
            r: self.threshold.r,
            alpha: self.threshold.alpha,
            rho: self.threshold.rho,
            mlp: MlpFile {
                layers: self
                    .threshold
                    .mlp
                    .layers
                    .iter()
                    .map(|l| LayerFile {
                        inputs: l.inputs,
                        outputs: l.outputs,
                        weights: encode(&l.weights),
                        bias: encode(&l.bias),
                    })
                    .collect(),
            },
            epsilon: self.threshold.epsilon,
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        let proj = decode(&f.proj, "proj")?;
        if f.embed_dim == 0 || proj.len() % f.embed_dim != 0 {
            return Err(Error::Model(format!(
                "proj has {} values, not a multiple of embed_dim {}",
                proj.len(),
                f.embed_dim
            )));
        }
        let layers = f
            .mlp
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: decode(&l.weights, &format!("mlp layer {i} weights"))?,
                    bias: decode(&l.bias, &format!("mlp layer {i} bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Self {
            embed_dim: f.embed_dim,
            proj: Mat::from_vec(proj.len() / f.embed_dim, f.embed_dim, proj),
            beta: f.beta,
            threshold: ThresholdParams {
                r: f.r,
                alpha: f.alpha,
                rho: f.rho,
                mlp: Mlp { layers },
                epsilon: f.epsilon,
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    embed_dim: usize,
    proj: String,
    beta: f64,
    r: f64,
    alpha: f64,
    rho: f64,
    mlp: MlpFile,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    weights: String,
    bias: String,
}

fn encode(xs: &[f64]) -> String {
    let bytes: Vec<u8> = xs.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(s: &str, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Model(format!("{what}: invalid base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Model(format!("{what}: {} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::thresholding::features::N_FEATURES;
    use proptest::prelude::*;

    fn random_model(seed: u64) -> ModelParams {
        use rand::Rng as _;
        let mut rng = rng_from(seed, "model-test");
        let mlp = Mlp::random(N_FEATURES, 10, 2, &mut rng);
        let mut m = ModelParams::init(6, 0.5, 0.3, mlp).unwrap();
        for w in &mut m.proj.data {
            *w += rng.gen_range(-0.3..0.3);
        }
        m.threshold.r = rng.gen_range(0.0..1.0);
        m.threshold.rho = rng.gen_range(-2.0..2.0);
        m.round_to_f32();
        m
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>()) {
            let m = random_model(seed);
            let back = ModelParams::from_json(&m.to_json().unwrap()).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_shapes() {
        let m = random_model(1);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(ModelParams::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["embed_dim"] = 7.into();
        assert!(ModelParams::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["beta"] = 1.5.into();
        assert!(ModelParams::from_json(&v.to_string()).is_err());
    }
}
