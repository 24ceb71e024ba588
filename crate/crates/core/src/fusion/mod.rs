//! Temporal concatenation of the encoded streams, the Transformer
//! bottleneck, the recurrent baseline, and attention-map export.

mod recurrent;
mod transformer;

use std::io::Write;
use std::path::Path;

use vf_tensor::{Scalar, Tape, TensorError, Var};

pub use recurrent::{nearest_frames, RecurrentBottleneck};
pub use transformer::{AttentionMap, TransformerConfig, TransformerEncoder};

use crate::conditioning::EncodedStreams;
use crate::{CoreError, Result};

/// `Z = [A; V; Q]` with its segment lengths.
#[derive(Debug, Clone, Copy)]
pub struct FusedSequence {
    pub z: Var,
    pub t_a: usize,
    pub t_v: usize,
    pub t_q: usize,
}

impl FusedSequence {
    /// Row offsets where the video and text segments start.
    pub fn boundaries(&self) -> (usize, usize) {
        (self.t_a, self.t_a + self.t_v)
    }

    pub fn len(&self) -> usize {
        self.t_a + self.t_v + self.t_q
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn concat_streams<F: Scalar>(tape: &mut Tape<F>, streams: &EncodedStreams) -> Result<FusedSequence> {
    let width = tape.shape(streams.audio)[1];
    let mut parts = vec![streams.audio];
    let mut lens = [tape.shape(streams.audio)[0], 0, 0];
    for (slot, s) in [(1, streams.video), (2, streams.text)] {
        if let Some(v) = s {
            if tape.shape(v)[1] != width {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_streams",
                    lhs: tape.shape(streams.audio).to_vec(),
                    rhs: tape.shape(v).to_vec(),
                }
                .into());
            }
            lens[slot] = tape.shape(v)[0];
            parts.push(v);
        }
    }
    let z = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    Ok(FusedSequence { z, t_a: lens[0], t_v: lens[1], t_q: lens[2] })
}

/// The encoder outputs at the audio positions, `Y[0..t_a]`.
pub fn take_audio_output<F: Scalar>(tape: &mut Tape<F>, fused: &FusedSequence, y: Var) -> Result<Var> {
    if fused.t_a == 0 {
        return Err(CoreError::Contract("fused sequence has no audio tokens".into()));
    }
    if tape.shape(y)[0] != fused.len() {
        return Err(CoreError::Contract(format!(
            "encoder output has {} rows, boundaries describe {}",
            tape.shape(y)[0],
            fused.len()
        )));
    }
    if fused.t_a == fused.len() {
        return Ok(y);
    }
    Ok(tape.slice_rows(y, 0, fused.t_a)?)
}

/// A dense rectangular slice of an attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl AttentionBlock {
    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// CSV with a header of column indices and a leading row-index column.
    pub fn write_csv(&self, path: impl AsRef<Path>, row_label: &str, col_label: &str) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(row_label);
        for j in 0..self.cols {
            out.push_str(&format!(",{col_label}_{j}"));
        }
        out.push('\n');
        for i in 0..self.rows {
            out.push_str(&i.to_string());
            for v in self.row(i) {
                out.push_str(&format!(",{v:.6e}"));
            }
            out.push('\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| CoreError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalAttention {
    pub audio_video: AttentionBlock,
    pub audio_text: AttentionBlock,
}

/// Audio-row blocks of the head-averaged first-layer attention.
pub fn extract_attention_rows(map: &AttentionMap, fused: &FusedSequence) -> Result<CrossModalAttention> {
    let mean = map
        .first_layer_mean()
        .ok_or_else(|| CoreError::Contract("attention map is empty; run a forward pass with capture".into()))?;
    let n = fused.len();
    if mean.shape() != [n, n] {
        return Err(CoreError::Contract(format!("attention map {:?} does not match {n} tokens", mean.shape())));
    }
    let block = |c0: usize, cols: usize| AttentionBlock {
        rows: fused.t_a,
        cols,
        values: (0..fused.t_a).flat_map(|i| mean.row(i)[c0..c0 + cols].to_vec()).collect(),
    };
    let (v0, q0) = fused.boundaries();
    Ok(CrossModalAttention { audio_video: block(v0, fused.t_v), audio_text: block(q0, fused.t_q) })
}
