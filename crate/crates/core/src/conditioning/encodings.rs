use rand::Rng;
use vf_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

use super::phonemes::{PhonemeSequence, INVENTORY_SIZE};
use crate::{CoreError, Result};

pub const TEXT_POSITIONS: usize = 512;
const ENCODING_STD: f64 = 0.02;

/// `PE[pos, 2i] = sin(pos / 10000^(2i/c))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_pe<F: Scalar>(len: usize, c: usize) -> Result<Tensor<F>> {
    sinusoidal_pe_at(&(0..len).map(|p| p as f64).collect::<Vec<_>>(), c)
}

/// Sinusoidal rows at arbitrary (possibly fractional) positions.
pub fn sinusoidal_pe_at<F: Scalar>(positions: &[f64], c: usize) -> Result<Tensor<F>> {
    if c == 0 || !c.is_multiple_of(2) {
        return Err(CoreError::InvalidInput(format!("sinusoidal encoding width must be even, got {c}")));
    }
    let len = positions.len();
    if len == 0 {
        return Err(CoreError::InvalidInput("sinusoidal encoding length must be positive".into()));
    }
    let mut data = Vec::with_capacity(len * c);
    for &pos in positions {
        for i in 0..c / 2 {
            let angle = pos / 10_000f64.powf(2.0 * i as f64 / c as f64);
            data.push(F::of(angle.sin()));
            data.push(F::of(angle.cos()));
        }
    }
    Ok(Tensor::new(vec![len, c], data)?)
}

/// First `len` rows of a learned position table.
pub fn learned_pe<F: Scalar>(tape: &mut Tape<F>, table: Var, len: usize) -> Result<Var> {
    let capacity = tape.shape(table)[0];
    if len > capacity {
        return Err(TensorError::IndexOutOfRange { op: "learned_pe", index: len - 1, size: capacity }.into());
    }
    Ok(tape.slice_rows(table, 0, len)?)
}

/// Learned phoneme embedding table `[V_p × c]`.
#[derive(Debug, Clone)]
pub struct PhonemeEmbedding {
    pub table: ParamId,
}

impl PhonemeEmbedding {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, c: usize, rng: &mut R) -> Result<Self> {
        let table = store.add(format!("{name}.table"), Tensor::normal(vec![INVENTORY_SIZE, c], 1.0, rng))?;
        Ok(PhonemeEmbedding { table })
    }

    /// `Q = table[ids]`, or `None` for an empty sequence.
    pub fn embed<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, seq: &PhonemeSequence) -> Result<Option<Var>> {
        if seq.is_empty() {
            return Ok(None);
        }
        let table = tape.param(store, self.table);
        Ok(Some(tape.embedding_lookup(table, &seq.ids)?))
    }
}

/// Three modality vectors plus the learned text position table.
#[derive(Debug, Clone)]
pub struct ModalityEncodings {
    pub me_audio: ParamId,
    pub me_video: ParamId,
    pub me_text: ParamId,
    pub pe_text: ParamId,
    pub width: usize,
    /// Audio-token positions per video frame, so that both sinusoidal
    /// encodings index the same timeline.
    pub video_step: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedStreams {
    pub audio: Var,
    pub video: Option<Var>,
    pub text: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Video,
    Text,
}

impl ModalityEncodings {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        c: usize,
        text_positions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !c.is_multiple_of(2) {
            return Err(CoreError::Config(format!("model width c must be even, got {c}")));
        }
        let mut me = |name: &str, store: &mut ParamStore<F>| store.add(format!("{prefix}.{name}"), Tensor::normal(vec![c], ENCODING_STD, rng));
        let me_audio = me("me_audio", store)?;
        let me_video = me("me_video", store)?;
        let me_text = me("me_text", store)?;
        let pe_text = store.add(format!("{prefix}.pe_text"), Tensor::normal(vec![text_positions, c], ENCODING_STD, rng))?;
        Ok(ModalityEncodings { me_audio, me_video, me_text, pe_text, width: c, video_step: 1.0 })
    }

    /// Positional plus modality encoding that is added to a `[t × c]` stream.
    pub fn encoding<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, modality: Modality, len: usize) -> Result<Var> {
        let (pe, me) = match modality {
            Modality::Audio => (tape.constant(sinusoidal_pe(len, self.width)?), self.me_audio),
            Modality::Video => {
                let positions: Vec<f64> = (0..len).map(|j| j as f64 * self.video_step).collect();
                (tape.constant(sinusoidal_pe_at(&positions, self.width)?), self.me_video)
            }
            Modality::Text => {
                let table = tape.param(store, self.pe_text);
                (learned_pe(tape, table, len)?, self.me_text)
            }
        };
        let me = tape.param(store, me);
        Ok(tape.add_broadcast_row(pe, me)?)
    }

    fn encode<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, modality: Modality, x: Var) -> Result<Var> {
        let (len, width) = {
            let s = tape.shape(x);
            (s[0], s[1])
        };
        if width != self.width {
            return Err(TensorError::ShapeMismatch {
                op: "apply_encodings",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![len, self.width],
            }
            .into());
        }
        let enc = self.encoding(tape, store, modality, len)?;
        Ok(tape.add(x, enc)?)
    }

    /// `A + PE_a + ME_a`, `V + PE_v + ME_v`, `Q + PE_q + ME_q`.
    pub fn apply<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        audio: Var,
        video: Option<Var>,
        text: Option<Var>,
    ) -> Result<EncodedStreams> {
        let audio = self.encode(tape, store, Modality::Audio, audio)?;
        let video = video.map(|v| self.encode(tape, store, Modality::Video, v)).transpose()?;
        let text = text.map(|q| self.encode(tape, store, Modality::Text, q)).transpose()?;
        Ok(EncodedStreams { audio, video, text })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = sinusoidal_pe::<f64>(4, 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn entries_bounded_and_rows_distinct() {
        let pe = sinusoidal_pe::<f64>(4096, 64).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        // compare each row against every other via a sorted fingerprint
        let mut rows: Vec<Vec<u64>> = (0..4096).map(|p| pe.row(p).iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 4096);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(sinusoidal_pe::<f64>(3, 5).is_err());
    }
}
