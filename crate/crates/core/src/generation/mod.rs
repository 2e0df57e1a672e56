//! Style-guided outfit generation from an anchor item.
//!
//! Each style gets a Gaussian pooled from the encoded moments of its outfits.
//! Item embeddings toward every target category are precomputed under that
//! style's vector, and a template-driven beam search grows outfits slot by slot.

mod beam;
mod store;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use beam::{
    benchmark, beam_search, generate_batch, AnchorResult, BeamParams, BenchmarkConfig, BenchmarkReport, GeneratedOutfit,
    WorkerTiming,
};
pub use store::{precompute_embeddings, EmbeddingStore, STORE_FORMAT};

use crate::dataset::{CategoryVocabulary, Catalog, Outfit};
use crate::error::{Error, Result};
use crate::vsen::{StyleGaussian, Vsen};

/// How per-outfit variances are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Arithmetic mean of the per-outfit variances.
    #[default]
    Mean,
    /// Moment-matched mixture: also adds the spread of the per-outfit means.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStyle {
    pub style: usize,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub n_outfits: usize,
}

/// Pools the encoded moments of one style's outfits.
pub fn pool_style(style: usize, moments: &[StyleGaussian], mode: PoolMode) -> Result<PooledStyle> {
    let first = moments.first().ok_or_else(|| {
        Error::Generation(format!(
            "style {style} has no outfits to pool; fall back to the unit Gaussian N(0, I)"
        ))
    })?;
    let dim = first.mu.len();
    let n = moments.len() as f64;
    let mut mu = vec![0.0; dim];
    let mut var = vec![0.0; dim];
    for g in moments {
        for (k, (m, lv)) in g.mu.iter().zip(&g.log_var).enumerate() {
            mu[k] += m / n;
            var[k] += lv.exp() / n;
        }
    }
    if mode == PoolMode::Mixture {
        for g in moments {
            for (k, m) in g.mu.iter().enumerate() {
                var[k] += (m - mu[k]).powi(2) / n;
            }
        }
    }
    if var.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Invariant(format!("pooled variance of style {style} is not positive")));
    }
    Ok(PooledStyle {
        style,
        mu,
        var,
        n_outfits: moments.len(),
    })
}

/// Encodes every outfit with the frozen encoder and pools per style.
/// Styles without outfits are `None`.
pub fn pool_styles(
    outfits: &[Outfit],
    catalog: &Catalog,
    vsen: &Vsen,
    mode: PoolMode,
) -> Result<Vec<Option<PooledStyle>>> {
    let num_styles = vsen.config().num_styles;
    let mut by_style: Vec<Vec<StyleGaussian>> = vec![Vec::new(); num_styles];
    for o in outfits {
        let items = catalog.resolve(&o.item_ids)?;
        let feats: Vec<&[f64]> = items.iter().map(|i| catalog.item(*i).features.as_slice()).collect();
        let slot = by_style
            .get_mut(o.style)
            .ok_or_else(|| Error::contract(format!("style {} out of range", o.style)))?;
        slot.push(vsen.encode(&feats)?);
    }
    by_style
        .iter()
        .enumerate()
        .map(|(s, moments)| {
            if moments.is_empty() {
                Ok(None)
            } else {
                pool_style(s, moments, mode).map(Some)
            }
        })
        .collect()
}

/// The pooled mean, or one draw from `N(mu, diag(var))`.
pub fn style_vector_for_generation<R: Rng + ?Sized>(pooled: &PooledStyle, rng: &mut R, deterministic: bool) -> Vec<f64> {
    if deterministic {
        return pooled.mu.clone();
    }
    pooled
        .mu
        .iter()
        .zip(&pooled.var)
        .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Ordered coarse-category slots; the anchor's category comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub slots: Vec<usize>,
}

impl Template {
    pub fn new(name: impl Into<String>, slots: Vec<usize>, num_categories: usize) -> Result<Self> {
        let name = name.into();
        if slots.len() < 2 {
            return Err(Error::Generation(format!("template {name:?} needs at least two slots")));
        }
        for (k, s) in slots.iter().enumerate() {
            if *s >= num_categories {
                return Err(Error::Generation(format!("template {name:?} slot {k} has unknown category {s}")));
            }
            if slots[..k].contains(s) {
                return Err(Error::Generation(format!("template {name:?} repeats category {s}")));
            }
        }
        Ok(Self { name, slots })
    }

    pub fn from_names(name: impl Into<String>, slots: &[String], categories: &CategoryVocabulary) -> Result<Self> {
        let name = name.into();
        let idx = slots
            .iter()
            .map(|s| {
                categories
                    .coarse_index(s)
                    .ok_or_else(|| Error::Generation(format!("template {name:?} names unknown category {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, idx, categories.num_coarse())
    }

    pub fn anchor_category(&self) -> usize {
        self.slots[0]
    }

    pub fn slot_names<'a>(&self, categories: &'a CategoryVocabulary) -> Vec<&'a str> {
        self.slots.iter().map(|s| categories.coarse_name(*s).unwrap_or("?")).collect()
    }
}

/// Named templates as stored in `templates.json`: `{"name": ["topwear", ...]}`.
pub fn load_templates(path: impl AsRef<Path>, categories: &CategoryVocabulary) -> Result<Vec<Template>> {
    let text = std::fs::read_to_string(path)?;
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|(name, slots)| Template::from_names(name, &slots, categories))
        .collect()
}

pub fn save_templates(path: impl AsRef<Path>, templates: &[Template], categories: &CategoryVocabulary) -> Result<()> {
    let raw: BTreeMap<&str, Vec<&str>> = templates
        .iter()
        .map(|t| (t.name.as_str(), t.slot_names(categories)))
        .collect();
    crate::dataset::write_json(path, &raw)
}

/// One template per coarse category: that category first, then the others in index order.
pub fn default_templates(categories: &CategoryVocabulary) -> Vec<Template> {
    let n = categories.num_coarse();
    (0..n)
        .map(|anchor| {
            let mut slots = vec![anchor];
            slots.extend((0..n).filter(|c| *c != anchor));
            Template {
                name: format!("{}-first", categories.coarse_name(anchor).unwrap_or("?")),
                slots,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
