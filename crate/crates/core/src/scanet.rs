//! Style-conditioned subspace attention network.
//!
//! An item's features go through a linear backbone to a 64-d vector `f`. Each
//! of the learned masks `m_k` gates `f` into a subspace. Attention weights over
//! the subspaces come from the item category, the target category and a style
//! vector: the concatenated one-hot categories and the style vector are each
//! projected to `proj_dim`, concatenated, and fed through a two-layer MLP and a
//! softmax. The embedding is `Σ_k w_k (f ⊙ m_k)`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Axis, Bound, ParamFile, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaConfig {
    pub input_dim: usize,
    pub num_categories: usize,
    pub style_dim: usize,
    pub embed_dim: usize,
    pub subspaces: usize,
    pub proj_dim: usize,
    pub attn_hidden: usize,
    pub margin: f64,
    pub margin_s: f64,
}

impl ScaConfig {
    pub fn new(input_dim: usize, num_categories: usize) -> Self {
        Self {
            input_dim,
            num_categories,
            style_dim: 64,
            embed_dim: 64,
            subspaces: 5,
            proj_dim: 32,
            attn_hidden: 32,
            margin: 0.2,
            margin_s: 0.2,
        }
    }
}

/// One embedding request: an item seen from `target_category` under `style`.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingQuery<'a> {
    pub features: &'a [f64],
    pub item_category: usize,
    pub target_category: usize,
    pub style: &'a [f64],
}

/// Intermediate values of one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParts {
    pub base: Vec<f64>,
    pub masked: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedVars {
    pub base: Var,
    pub masked: Var,
    pub weights: Var,
    pub embedding: Var,
}

#[derive(Debug, Clone)]
pub struct ScaNet {
    config: ScaConfig,
    params: ParamSet,
    backbone: Linear,
    masks: ParamId,
    cat_proj: Linear,
    style_proj: Linear,
    attn_hidden: Linear,
    attn_out: Linear,
}

impl ScaNet {
    pub fn new(config: ScaConfig, seed: u64) -> Result<Self> {
        if config.subspaces == 0 || config.num_categories == 0 {
            return Err(Error::Config("need at least one subspace and one category".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let backbone = Linear::new(&mut params, "sca.backbone", config.input_dim, config.embed_dim, &mut rng);
        let around_one = Normal::new(1.0, 0.1).expect("valid normal");
        let mask_values = (0..config.subspaces * config.embed_dim)
            .map(|_| around_one.sample(&mut rng))
            .collect();
        let masks = params.add(
            "sca.masks",
            Tensor::new(vec![config.subspaces, config.embed_dim], mask_values)?,
        );
        let cat_proj = Linear::new(&mut params, "sca.cat_proj", 2 * config.num_categories, config.proj_dim, &mut rng);
        let style_proj = Linear::new(&mut params, "sca.style_proj", config.style_dim, config.proj_dim, &mut rng);
        let attn_hidden = Linear::new(&mut params, "sca.attn.hidden", 2 * config.proj_dim, config.attn_hidden, &mut rng);
        let attn_out = Linear::new(&mut params, "sca.attn.out", config.attn_hidden, config.subspaces, &mut rng);
        Ok(Self {
            config,
            params,
            backbone,
            masks,
            cat_proj,
            style_proj,
            attn_hidden,
            attn_out,
        })
    }

    pub fn config(&self) -> &ScaConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn style_proj_param_names(&self) -> [&'static str; 2] {
        ["sca.style_proj.weight", "sca.style_proj.bias"]
    }

    fn check(&self, q: &EmbeddingQuery) -> Result<()> {
        let c = self.config.num_categories;
        if q.item_category >= c || q.target_category >= c {
            return Err(Error::contract(format!(
                "category pair ({}, {}) outside vocabulary of {c}",
                q.item_category, q.target_category
            )));
        }
        if q.features.len() != self.config.input_dim {
            return Err(Error::shape("embed", format!("{} features, expected {}", q.features.len(), self.config.input_dim)));
        }
        if q.style.len() != self.config.style_dim {
            return Err(Error::shape("embed", format!("style of {} dims, expected {}", q.style.len(), self.config.style_dim)));
        }
        Ok(())
    }

    pub fn embed_on_tape(&self, tape: &mut Tape, bound: &Bound, q: &EmbeddingQuery) -> Result<EmbedVars> {
        self.check(q)?;
        let c = self.config.num_categories;
        let k = self.config.subspaces;
        let x = tape.constant_row(q.features);
        let base = self.backbone.forward(tape, bound, x)?;
        let stacked = tape.concat(&vec![base; k], Axis::Rows)?;
        let masked = tape.mul(stacked, bound[self.masks])?;

        let mut onehot = vec![0.0; 2 * c];
        onehot[q.item_category] = 1.0;
        onehot[c + q.target_category] = 1.0;
        let cats = tape.constant_row(&onehot);
        let cats = self.cat_proj.forward(tape, bound, cats)?;
        let style = tape.constant_row(q.style);
        let style = self.style_proj.forward(tape, bound, style)?;
        let joint = tape.concat(&[cats, style], Axis::Cols)?;
        let h = self.attn_hidden.forward(tape, bound, joint)?;
        let h = tape.relu(h);
        let logits = self.attn_out.forward(tape, bound, h)?;
        let weights = tape.softmax(logits, Axis::Cols)?;
        let embedding = tape.matmul(weights, masked)?;
        Ok(EmbedVars {
            base,
            masked,
            weights,
            embedding,
        })
    }

    /// Frozen-parameter embedding with all intermediates.
    pub fn embed_parts(&self, q: &EmbeddingQuery) -> Result<EmbedParts> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let vars = self.embed_on_tape(&mut tape, &bound, q)?;
        Ok(EmbedParts {
            base: tape.value(vars.base).to_vec(),
            masked: tape.value(vars.masked).chunks(self.config.embed_dim).map(<[f64]>::to_vec).collect(),
            weights: tape.value(vars.weights).to_vec(),
            embedding: tape.value(vars.embedding).to_vec(),
        })
    }

    pub fn embed(&self, q: &EmbeddingQuery) -> Result<Vec<f64>> {
        self.session()?.embed(q)
    }

    /// Binds frozen parameters once for many embeddings on one thread.
    pub fn session(&self) -> Result<EmbedSession<'_>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let mark = tape.len();
        Ok(EmbedSession {
            net: self,
            tape,
            bound,
            mark,
        })
    }

    /// `max(0, ‖a − p‖² − ‖a − n‖² + margin)`.
    pub fn triplet_compat_loss(&self, anchor: &EmbeddingQuery, positive: &EmbeddingQuery, negative: &EmbeddingQuery) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let loss = self.triplet_on_tape(&mut tape, &bound, anchor, positive, negative)?;
        tape.scalar(loss)
    }

    pub fn triplet_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        anchor: &EmbeddingQuery,
        positive: &EmbeddingQuery,
        negative: &EmbeddingQuery,
    ) -> Result<Var> {
        let a = self.embed_on_tape(tape, bound, anchor)?.embedding;
        let p = self.embed_on_tape(tape, bound, positive)?.embedding;
        let n = self.embed_on_tape(tape, bound, negative)?.embedding;
        hinge(tape, a, p, a, n, self.config.margin)
    }

    /// `max(0, ‖a_s − p_s‖² − ‖a_w − p_w‖² + margin_s)` where `s` is the pair's
    /// own style (carried by the queries) and `w` is `wrong_style`.
    pub fn wrong_style_loss(&self, anchor: &EmbeddingQuery, positive: &EmbeddingQuery, wrong_style: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape)?;
        let loss = self.wrong_style_on_tape(&mut tape, &bound, anchor, positive, wrong_style)?;
        tape.scalar(loss)
    }

    pub fn wrong_style_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        anchor: &EmbeddingQuery,
        positive: &EmbeddingQuery,
        wrong_style: &[f64],
    ) -> Result<Var> {
        if anchor.style == wrong_style || positive.style == wrong_style {
            return Err(Error::contract("wrong style vector equals the outfit's own style vector"));
        }
        let a = self.embed_on_tape(tape, bound, anchor)?.embedding;
        let p = self.embed_on_tape(tape, bound, positive)?.embedding;
        let wa = self.embed_on_tape(tape, bound, &EmbeddingQuery { style: wrong_style, ..*anchor })?.embedding;
        let wp = self.embed_on_tape(tape, bound, &EmbeddingQuery { style: wrong_style, ..*positive })?.embedding;
        hinge(tape, a, p, wa, wp, self.config.margin_s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "model": "scanet", "config": self.config });
        self.params.to_file(meta).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = ParamFile::load(path)?;
        if file.meta.get("model").and_then(|m| m.as_str()) != Some("scanet") {
            return Err(Error::Checkpoint("not a compatibility-network checkpoint".into()));
        }
        let config: ScaConfig = serde_json::from_value(file.meta["config"].clone())?;
        let mut model = Self::new(config, 0)?;
        model.params.load_values(&file)?;
        Ok(model)
    }
}

/// `relu(‖a − b‖² − ‖c − d‖² + margin)`.
fn hinge(tape: &mut Tape, a: Var, b: Var, c: Var, d: Var, margin: f64) -> Result<Var> {
    let near = tape.sq_distance(a, b)?;
    let far = tape.sq_distance(c, d)?;
    let diff = tape.sub(near, far)?;
    let shifted = tape.add_scalar(diff, margin);
    Ok(tape.relu(shifted))
}

/// Reusable single-threaded inference context over frozen parameters.
pub struct EmbedSession<'a> {
    net: &'a ScaNet,
    tape: Tape,
    bound: Bound,
    mark: usize,
}

impl EmbedSession<'_> {
    pub fn embed(&mut self, q: &EmbeddingQuery) -> Result<Vec<f64>> {
        let vars = self.net.embed_on_tape(&mut self.tape, &self.bound, q);
        let out = vars.map(|v| self.tape.value(v.embedding).to_vec());
        self.tape.truncate(self.mark);
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn weights_form_a_distribution() {
        let net = ScaNet::new(ScaConfig::new(10, 5), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f = random_vec(&mut rng, 10);
            let z = random_vec(&mut rng, 64);
            let q = EmbeddingQuery {
                features: &f,
                item_category: rng.random_range(0..5),
                target_category: rng.random_range(0..5),
                style: &z,
            };
            let parts = net.embed_parts(&q).unwrap();
            assert_eq!(parts.weights.len(), 5);
            assert!((parts.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(parts.weights.iter().all(|w| *w >= 0.0));
            assert_eq!(parts.embedding.len(), 64);
            assert_eq!(net.embed(&q).unwrap(), parts.embedding);
        }
    }

    #[test]
    fn equal_masks_make_attention_irrelevant() {
        let mut net = ScaNet::new(ScaConfig::new(6, 3), 4).unwrap();
        let id = net.params().id("sca.masks").unwrap();
        let row: Vec<f64> = (0..64).map(|i| 0.5 + i as f64 / 64.0).collect();
        let masks = net.params_mut().get_mut(id).data_mut();
        for k in 0..5 {
            masks[k * 64..(k + 1) * 64].copy_from_slice(&row);
        }
        let f = vec![0.3, -0.1, 0.8, 0.0, 1.2, -0.7];
        let z1 = vec![0.1; 64];
        let z2 = vec![-2.0; 64];
        let q = |style| EmbeddingQuery {
            features: &f,
            item_category: 0,
            target_category: 2,
            style,
        };
        let a = net.embed_parts(&q(&z1)).unwrap();
        let b = net.embed_parts(&q(&z2)).unwrap();
        assert_ne!(a.weights, b.weights);
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, (f, m)) in a.embedding.iter().zip(a.base.iter().zip(&row)) {
            assert!((x - f * m).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_categories_are_rejected() {
        let net = ScaNet::new(ScaConfig::new(3, 2), 0).unwrap();
        let z = vec![0.0; 64];
        let q = EmbeddingQuery {
            features: &[0.0; 3],
            item_category: 2,
            target_category: 0,
            style: &z,
        };
        assert!(matches!(net.embed(&q), Err(Error::Contract(_))));
    }

    fn query<'a>(features: &'a [f64], item_category: usize, target_category: usize, style: &'a [f64]) -> EmbeddingQuery<'a> {
        EmbeddingQuery {
            features,
            item_category,
            target_category,
            style,
        }
    }

    #[test]
    fn triplet_hinge_cases() {
        let net = ScaNet::new(ScaConfig::new(4, 2), 0).unwrap();
        let z = vec![0.2; 64];
        let fa = [1.0, 0.0, 0.5, -0.5];
        let fp = [0.9, 0.1, 0.4, -0.4];
        let far = [50.0, -50.0, 50.0, -50.0];
        let (a, p) = (query(&fa, 0, 1, &z), query(&fp, 1, 0, &z));
        // identical positive and negative: loss is exactly the margin
        let loss = net.triplet_compat_loss(&a, &p, &p).unwrap();
        assert!((loss - 0.2).abs() < 1e-15);
        let loss = net.triplet_compat_loss(&a, &p, &query(&far, 1, 0, &z)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn wrong_style_preconditions_and_ablation() {
        let mut net = ScaNet::new(ScaConfig::new(4, 2), 0).unwrap();
        let z = vec![0.2; 64];
        let w = vec![-0.7; 64];
        let fa = [1.0, 0.0, 0.5, -0.5];
        let fp = [0.9, 0.1, 0.4, -0.4];
        let a = EmbeddingQuery {
            features: &fa,
            item_category: 0,
            target_category: 1,
            style: &z,
        };
        let p = EmbeddingQuery {
            features: &fp,
            item_category: 1,
            target_category: 0,
            style: &z,
        };
        assert!(matches!(net.wrong_style_loss(&a, &p, &z), Err(Error::Contract(_))));
        for name in net.style_proj_param_names() {
            let id = net.params().id(name).unwrap();
            net.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let loss = net.wrong_style_loss(&a, &p, &w).unwrap();
        assert_eq!(loss, 0.2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = ScaNet::new(ScaConfig::new(5, 4), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sca.json");
        net.save(&path).unwrap();
        assert_eq!(ScaNet::load(&path).unwrap().params().checksum(), net.params().checksum());
    }
}
