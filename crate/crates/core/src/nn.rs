//! Parameterized layers shared by the networks. Each layer only stores
//! [`ParamId`]s; values live in a [`ParamStore`] so one layout serves both
//! precisions.

use rand::Rng;
use vf_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use crate::Result;

fn he_uniform<F: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<F> {
    Tensor::uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), he_uniform(vec![cout, cin, kernel], cin * kernel, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]))?;
        Ok(Conv1d { weight, bias, stride, pad })
    }

    pub fn pointwise<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, cin, cout, 1, 1, 0, rng)
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        Ok(tape.conv1d(x, w, Some(b), self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = cin * kernel / stride.max(1);
        let weight = store.add(format!("{name}.weight"), he_uniform(vec![cin, cout, kernel], fan_in, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]))?;
        Ok(ConvTranspose1d { weight, bias, stride, pad })
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        Ok(tape.conv_transpose1d(x, w, Some(b), self.stride, self.pad)?)
    }
}

/// `y = x W + b` over rows of a `[T × in]` input.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (3.0 / input.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(vec![input, output], bound, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![output]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_broadcast_row(y, b)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, width: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![width], F::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![width]))?;
        Ok(LayerNorm { gamma, beta, eps: 1e-5 })
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b, self.eps)?)
    }
}
