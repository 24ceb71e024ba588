use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vf_tensor::{ParamStore, Scalar, Tape, Tensor, Var};

use crate::nn::{LayerNorm, Linear};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_width: usize,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig { layers: 3, heads: 8, d_model: 768, ffn_width: 4 * 768, dropout: 0.1 }
    }
}

impl TransformerConfig {
    pub fn desk() -> Self {
        TransformerConfig { layers: 2, heads: 4, d_model: 64, ffn_width: 256, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.ffn_width == 0 {
            return Err(CoreError::Config("transformer dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Softmax attention weights captured during a forward pass,
/// `layers[l][h]` of shape `[n × n]`.
#[derive(Debug, Clone, Default)]
pub struct AttentionMap {
    pub layers: Vec<Vec<Tensor<f64>>>,
}

impl AttentionMap {
    /// Head-averaged attention of the first layer.
    pub fn first_layer_mean(&self) -> Option<Tensor<f64>> {
        let heads = self.layers.first()?;
        let first = heads.first()?;
        let mut acc = vec![0.0; first.len()];
        for h in heads {
            acc.iter_mut().zip(h.data()).for_each(|(a, v)| *a += v);
        }
        let n = heads.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Tensor::new(first.shape().to_vec(), acc).ok()
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

/// Post-norm Transformer encoder with full (unmasked) self-attention.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub cfg: TransformerConfig,
    layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, prefix: &str, cfg: &TransformerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                Ok(EncoderLayer {
                    query: Linear::new(store, &format!("{p}.query"), d, d, rng)?,
                    key: Linear::new(store, &format!("{p}.key"), d, d, rng)?,
                    value: Linear::new(store, &format!("{p}.value"), d, d, rng)?,
                    out: Linear::new(store, &format!("{p}.out"), d, d, rng)?,
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d)?,
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.ffn_width, rng)?,
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.ffn_width, d, rng)?,
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TransformerEncoder { cfg: cfg.clone(), layers })
    }

    /// Parameter-name prefix of layer `l`, for freezing policies.
    pub fn layer_prefix(prefix: &str, l: usize) -> String {
        format!("{prefix}.layer{l}.")
    }

    /// Encodes `z: [n × d_model]`. Dropout is active only when `rng` is given.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        z: Var,
        mut rng: Option<&mut ChaCha8Rng>,
        capture: bool,
    ) -> Result<(Var, AttentionMap)> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_model {
            return Err(CoreError::Config(format!(
                "transformer d_model {} does not match input width {:?}",
                self.cfg.d_model, shape
            )));
        }
        let mut map = AttentionMap::default();
        let mut x = z;
        for layer in &self.layers {
            let (attn, probs) = self.attention(tape, store, layer, x, capture)?;
            let attn = self.dropout(tape, attn, rng.as_deref_mut())?;
            let h = tape.add(x, attn)?;
            let h = layer.norm1.forward(tape, store, h)?;
            let f = layer.ff1.forward(tape, store, h)?;
            let f = tape.relu(f)?;
            let f = layer.ff2.forward(tape, store, f)?;
            let f = self.dropout(tape, f, rng.as_deref_mut())?;
            let y = tape.add(h, f)?;
            x = layer.norm2.forward(tape, store, y)?;
            if capture {
                map.layers.push(probs);
            }
        }
        Ok((x, map))
    }

    fn dropout<F: Scalar>(&self, tape: &mut Tape<F>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) if self.cfg.dropout > 0.0 => Ok(tape.dropout(x, self.cfg.dropout, r)?),
            _ => Ok(x),
        }
    }

    fn attention<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        layer: &EncoderLayer,
        x: Var,
        capture: bool,
    ) -> Result<(Var, Vec<Tensor<f64>>)> {
        let q = layer.query.forward(tape, store, x)?;
        let k = layer.key.forward(tape, store, x)?;
        let v = layer.value.forward(tape, store, x)?;
        let dk = self.cfg.d_model / self.cfg.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut probs = Vec::new();
        for h in 0..self.cfg.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let p = tape.softmax(scores)?;
            if capture {
                probs.push(tape.value(p).cast::<f64>());
            }
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        Ok((layer.out.forward(tape, store, cat)?, probs))
    }
}
