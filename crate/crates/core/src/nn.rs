//! Layer helpers shared by the encoder and the compatibility network.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, ParamId, ParamSet, Tape, Tensor, Var};

/// `x · W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::new(vec![fan_in, fan_out], w).expect("shape matches data"),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![1, fan_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound[self.weight])?;
        tape.add_bias(h, bound[self.bias])
    }
}

/// Per-row normalization with learnable gain and bias.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        let gain = params.add(format!("{name}.gain"), Tensor::row(vec![1.0; width]));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![1, width]));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, bound[self.gain], bound[self.bias], LN_EPS)
    }
}

pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
