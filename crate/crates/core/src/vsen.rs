//! Variational style encoder.
//!
//! An outfit is a set of item feature vectors. The encoder projects each item
//! to the hidden width, runs self-attention set blocks over the whole set,
//! mean-pools, and maps the pooled vector to the mean and log-variance of a
//! diagonal Gaussian in style space. A small MLP classifies style samples.
//!
//! Rows are sorted into a canonical order before anything is computed, so an
//! outfit's encoding is bitwise independent of the order its items arrive in.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{Axis, Bound, ParamFile, ParamSet, Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsenConfig {
    pub input_dim: usize,
    pub num_styles: usize,
    pub hidden: usize,
    pub style_dim: usize,
    pub blocks: usize,
    pub attn_heads: usize,
    pub classifier_hidden: usize,
}

impl VsenConfig {
    pub fn new(input_dim: usize, num_styles: usize) -> Self {
        Self {
            input_dim,
            num_styles,
            hidden: 32,
            style_dim: 64,
            blocks: 1,
            attn_heads: 2,
            classifier_hidden: 32,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.attn_heads == 0 || !self.hidden.is_multiple_of(self.attn_heads) {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible into {} heads",
                self.hidden, self.attn_heads
            )));
        }
        if self.num_styles < 2 || self.input_dim == 0 || self.style_dim == 0 {
            return Err(Error::Config("encoder needs ≥2 styles and nonzero dimensions".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over style space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl StyleGaussian {
    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }
}

/// `z = mu + exp(0.5·log_var) ⊙ eps`, with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSample {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    pub source: StyleGaussian,
}

/// Draws `eps ~ N(0, I)` and returns the reparameterized sample.
pub fn reparameterize<R: Rng + ?Sized>(g: &StyleGaussian, rng: &mut R) -> StyleSample {
    let eps: Vec<f64> = g.mu.iter().map(|_| rng.sample(StandardNormal)).collect();
    let z = g
        .mu
        .iter()
        .zip(&g.log_var)
        .zip(&eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    StyleSample {
        z,
        eps,
        source: g.clone(),
    }
}

/// `½ Σ (mu² + exp(log_var) − log_var − 1)`: KL divergence to `N(0, I)`.
pub fn kl_to_unit(g: &StyleGaussian) -> f64 {
    0.5 * g
        .mu
        .iter()
        .zip(&g.log_var)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Differentiable reparameterization with fixed noise.
pub fn reparameterize_on_tape(tape: &mut Tape, mu: Var, log_var: Var, eps: &[f64]) -> Result<Var> {
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let noise = tape.constant_row(eps);
    let scaled = tape.mul(std, noise)?;
    tape.add(mu, scaled)
}

pub fn kl_on_tape(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let sq = tape.mul(mu, mu)?;
    let var = tape.exp(log_var);
    let t = tape.add(sq, var)?;
    let t = tape.sub(t, log_var)?;
    let t = tape.add_scalar(t, -1.0);
    let s = tape.sum(t);
    Ok(tape.scale(s, 0.5))
}

#[derive(Debug, Clone)]
struct SetBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Vsen {
    config: VsenConfig,
    params: ParamSet,
    input: Linear,
    blocks: Vec<SetBlock>,
    mu_head: Linear,
    log_var_head: Linear,
    cls_hidden: Linear,
    cls_out: Linear,
}

/// Lexicographic total order on feature rows.
fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

impl Vsen {
    pub fn new(config: VsenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = config.hidden;
        let input = Linear::new(&mut params, "vsen.input", config.input_dim, h, &mut rng);
        let blocks = (0..config.blocks)
            .map(|b| {
                let p = format!("vsen.block{b}");
                SetBlock {
                    query: Linear::new(&mut params, &format!("{p}.query"), h, h, &mut rng),
                    key: Linear::new(&mut params, &format!("{p}.key"), h, h, &mut rng),
                    value: Linear::new(&mut params, &format!("{p}.value"), h, h, &mut rng),
                    out: Linear::new(&mut params, &format!("{p}.out"), h, h, &mut rng),
                    norm1: LayerNorm::new(&mut params, &format!("{p}.norm1"), h),
                    ff1: Linear::new(&mut params, &format!("{p}.ff1"), h, h, &mut rng),
                    ff2: Linear::new(&mut params, &format!("{p}.ff2"), h, h, &mut rng),
                    norm2: LayerNorm::new(&mut params, &format!("{p}.norm2"), h),
                }
            })
            .collect();
        let mu_head = Linear::new(&mut params, "vsen.mu", h, config.style_dim, &mut rng);
        let log_var_head = Linear::new(&mut params, "vsen.log_var", h, config.style_dim, &mut rng);
        let cls_hidden = Linear::new(&mut params, "vsen.cls.hidden", config.style_dim, config.classifier_hidden, &mut rng);
        let cls_out = Linear::new(&mut params, "vsen.cls.out", config.classifier_hidden, config.num_styles, &mut rng);
        Ok(Self {
            config,
            params,
            input,
            blocks,
            mu_head,
            log_var_head,
            cls_hidden,
            cls_out,
        })
    }

    pub fn config(&self) -> &VsenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Names of the classifier parameters (the last two layers).
    pub fn classifier_param_names(&self) -> Vec<String> {
        ["vsen.cls.hidden", "vsen.cls.out"]
            .iter()
            .flat_map(|p| [format!("{p}.weight"), format!("{p}.bias")])
            .collect()
    }

    fn block_forward(&self, tape: &mut Tape, bound: &Bound, block: &SetBlock, x: Var) -> Result<Var> {
        let heads = self.config.attn_heads;
        let dh = self.config.hidden / heads;
        let q = block.query.forward(tape, bound, x)?;
        let k = block.key.forward(tape, bound, x)?;
        let v = block.value.forward(tape, bound, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice(q, Axis::Cols, head * dh, dh)?;
            let kh = tape.slice(k, Axis::Cols, head * dh, dh)?;
            let vh = tape.slice(v, Axis::Cols, head * dh, dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, Axis::Cols)?;
            outs.push(tape.matmul(attn, vh)?);
        }
        let merged = if heads == 1 { outs[0] } else { tape.concat(&outs, Axis::Cols)? };
        let attended = block.out.forward(tape, bound, merged)?;
        let h = tape.add(x, attended)?;
        let h = block.norm1.forward(tape, bound, h)?;
        let f = block.ff1.forward(tape, bound, h)?;
        let f = tape.relu(f);
        let f = block.ff2.forward(tape, bound, f)?;
        let h2 = tape.add(h, f)?;
        block.norm2.forward(tape, bound, h2)
    }

    /// Records the encoder on `tape`; returns `(mu, log_var)` as `1 × style_dim` nodes.
    pub fn encode_on_tape(&self, tape: &mut Tape, bound: &Bound, items: &[&[f64]]) -> Result<(Var, Var)> {
        if items.is_empty() {
            return Err(Error::contract("cannot encode an empty outfit"));
        }
        let dim = self.config.input_dim;
        if let Some(bad) = items.iter().find(|f| f.len() != dim) {
            return Err(Error::shape("encode", format!("item has {} features, expected {dim}", bad.len())));
        }
        let mut rows: Vec<&[f64]> = items.to_vec();
        rows.sort_by(|a, b| cmp_rows(a, b));
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let x = tape.constant(rows.len(), dim, flat)?;
        let mut h = self.input.forward(tape, bound, x)?;
        for block in &self.blocks {
            h = self.block_forward(tape, bound, block, h)?;
        }
        let pooled = tape.mean_axis(h, Axis::Rows)?;
        let mu = self.mu_head.forward(tape, bound, pooled)?;
        let log_var = self.log_var_head.forward(tape, bound, pooled)?;
        Ok((mu, log_var))
    }

    /// Raw style logits for a `1 × style_dim` node.
    pub fn classify_on_tape(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let h = self.cls_hidden.forward(tape, bound, z)?;
        let h = tape.relu(h);
        self.cls_out.forward(tape, bound, h)
    }

    /// Inference-mode encoding on frozen parameters.
    pub fn encode(&self, items: &[&[f64]]) -> Result<StyleGaussian> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let (mu, log_var) = self.encode_on_tape(&mut tape, &bound, items)?;
        Ok(StyleGaussian {
            mu: tape.value(mu).to_vec(),
            log_var: tape.value(log_var).to_vec(),
        })
    }

    pub fn classify_style(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.config.style_dim {
            return Err(Error::shape("classify_style", format!("{} vs {}", z.len(), self.config.style_dim)));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let zv = tape.constant_row(z);
        let logits = self.classify_on_tape(&mut tape, &bound, zv)?;
        Ok(tape.value(logits).to_vec())
    }

    pub fn predict_style(&self, z: &[f64]) -> Result<usize> {
        let logits = self.classify_style(z)?;
        Ok(argmax(&logits))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "model": "vsen", "config": self.config });
        self.params.to_file(meta).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = ParamFile::load(path)?;
        if file.meta.get("model").and_then(|m| m.as_str()) != Some("vsen") {
            return Err(Error::Checkpoint("not an encoder checkpoint".into()));
        }
        let config: VsenConfig = serde_json::from_value(file.meta["config"].clone())?;
        let mut model = Self::new(config, 0)?;
        model.params.load_values(&file)?;
        Ok(model)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
