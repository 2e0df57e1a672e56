//! Synthetic catalogs with planted style-conditional structure.
//!
//! Every (coarse category, style) pair owns a hidden prototype direction.
//! Items are sampled around the prototype of their cluster, and an outfit of
//! style `s` draws each of its items from the `s` cluster of its category, so
//! compatibility is a function of style by construction. Fine categories are
//! assigned per cluster (`style mod n_fine`), which makes fine-category
//! negatives more likely to come from the outfit's own style than coarse ones.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Catalog, CategoryVocabulary, Dataset, Item, Outfit, StyleVocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    #[serde(default)]
    pub fine: Vec<String>,
}

/// Contents of `synth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub styles: Vec<String>,
    /// Relative outfit share per style; normalized internally.
    pub proportions: Vec<f64>,
    pub categories: Vec<CategorySpec>,
    pub feature_dim: usize,
    pub items_per_cluster: usize,
    pub n_outfits: usize,
    /// Inclusive `[min, max]` number of items per outfit.
    pub template_lengths: [usize; 2],
    /// Norm of the per-item noise relative to a unit-norm prototype.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let cat = |name: &str, fine: &[&str]| CategorySpec {
            name: name.into(),
            fine: fine.iter().map(|f| f.to_string()).collect(),
        };
        Self {
            styles: StyleVocabulary::fashion_default().names().to_vec(),
            // train-split outfit counts per style of the reference dataset
            proportions: vec![841.0, 13062.0, 1215.0, 473.0, 2128.0, 1160.0, 534.0],
            categories: vec![
                cat("topwear", &["t-shirt", "shirt", "blouse"]),
                cat("bottomwear", &["jeans", "skirt", "leggings"]),
                cat("footwear", &["heels", "trainer-shoes", "boots"]),
                cat("bag", &["tote", "clutch", "backpack"]),
                cat("jewellery", &["necklace", "earrings", "bracelet"]),
            ],
            feature_dim: 64,
            items_per_cluster: 30,
            n_outfits: 6000,
            template_lengths: [3, 5],
            noise: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.proportions.len() != self.styles.len() {
            return err(format!("{} proportions for {} styles", self.proportions.len(), self.styles.len()));
        }
        if self.proportions.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return err("proportions must be positive".into());
        }
        let [lo, hi] = self.template_lengths;
        if lo < 2 || lo > hi {
            return err(format!("template lengths [{lo}, {hi}] must satisfy 2 <= min <= max"));
        }
        if hi > self.categories.len() {
            return err(format!(
                "outfits of {hi} items need {hi} categories, only {} configured",
                self.categories.len()
            ));
        }
        if self.items_per_cluster == 0 {
            return err("items_per_cluster must be at least 1".into());
        }
        if self.feature_dim == 0 {
            return err("feature_dim must be positive".into());
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return err("noise must be nonnegative".into());
        }
        Ok(())
    }

    /// Outfit count per style by largest remainder, summing to `n_outfits`.
    pub fn style_counts(&self) -> Vec<usize> {
        let total: f64 = self.proportions.iter().sum();
        let exact: Vec<f64> = self.proportions.iter().map(|p| p / total * self.n_outfits as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|a, b| {
            let ra = exact[*a] - exact[*a].floor();
            let rb = exact[*b] - exact[*b].floor();
            rb.total_cmp(&ra).then(a.cmp(b))
        });
        let missing = self.n_outfits - counts.iter().sum::<usize>();
        for i in order.into_iter().take(missing) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Style cluster each catalog item was drawn from, aligned with catalog order.
    pub item_style: Vec<usize>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

/// Pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles = StyleVocabulary::new(config.styles.clone())?;
    let categories = CategoryVocabulary::new(config.categories.iter().map(|c| (c.name.clone(), c.fine.clone())).collect())?;
    let n_styles = styles.len();
    let n_cats = categories.num_coarse();
    let dim = config.feature_dim;
    let unit = 1.0 / (dim as f64).sqrt();

    let prototypes: Vec<Vec<Vec<f64>>> = (0..n_cats)
        .map(|_| (0..n_styles).map(|_| gaussian_vec(&mut rng, dim, unit)).collect())
        .collect();

    // (coarse, style, fine, features) before ids are assigned
    let mut raw = Vec::with_capacity(n_cats * n_styles * config.items_per_cluster);
    for (c, per_style) in prototypes.iter().enumerate() {
        let fines: Vec<usize> = categories.fine_of(c).map(|(i, _)| i).collect();
        for (s, proto) in per_style.iter().enumerate() {
            let fine = (!fines.is_empty()).then(|| fines[s % fines.len()]);
            for _ in 0..config.items_per_cluster {
                let noise = gaussian_vec(&mut rng, dim, unit * config.noise);
                let features = proto.iter().zip(&noise).map(|(p, n)| p + n).collect();
                raw.push((c, s, fine, features));
            }
        }
    }
    raw.shuffle(&mut rng);

    let width = raw.len().to_string().len().max(5);
    let mut items = Vec::with_capacity(raw.len());
    let mut item_style = Vec::with_capacity(raw.len());
    let mut clusters = vec![vec![Vec::new(); n_styles]; n_cats];
    for (i, (c, s, fine, features)) in raw.into_iter().enumerate() {
        clusters[c][s].push(i);
        item_style.push(s);
        items.push(Item {
            item_id: format!("item-{i:0width$}"),
            coarse: c,
            fine,
            features,
        });
    }

    let mut styled: Vec<usize> = Vec::with_capacity(config.n_outfits);
    for (s, n) in config.style_counts().into_iter().enumerate() {
        styled.extend(std::iter::repeat_n(s, n));
    }
    styled.shuffle(&mut rng);

    let cat_ids: Vec<usize> = (0..n_cats).collect();
    let width = config.n_outfits.to_string().len().max(6);
    let mut outfits = Vec::with_capacity(config.n_outfits);
    for (k, style) in styled.into_iter().enumerate() {
        let len = rng.random_range(config.template_lengths[0]..=config.template_lengths[1]);
        let chosen: Vec<usize> = cat_ids.choose_multiple(&mut rng, len).copied().collect();
        let ids = chosen
            .iter()
            .map(|c| {
                let pick = *clusters[*c][style].choose(&mut rng).expect("clusters are non-empty");
                items[pick].item_id.clone()
            })
            .collect();
        outfits.push(Outfit::new(format!("outfit-{k:0width$}"), ids, style)?);
    }

    let catalog = Catalog::new(items, &categories)?;
    Ok(SyntheticData {
        dataset: Dataset {
            styles,
            categories,
            catalog,
            outfits,
        },
        item_style,
    })
}
