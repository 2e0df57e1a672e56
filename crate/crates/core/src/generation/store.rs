use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{style_vector_for_generation, PooledStyle};
use crate::dataset::{set_rng, Catalog};
use crate::error::{Error, Result};
use crate::scanet::{EmbeddingQuery, ScaNet};

pub const STORE_FORMAT: &str = "outfitgen-store/v1";
const SHARD_MAGIC: &[u8; 8] = b"OGSHARD1";
const MISSING: u32 = u32::MAX;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShardEntry {
    style: usize,
    category: usize,
    file: String,
    count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dim: usize,
    categories: Vec<usize>,
    styles: Vec<usize>,
    pooled: Vec<PooledStyle>,
    style_vectors: BTreeMap<usize, Vec<f64>>,
    shards: Vec<ShardEntry>,
}

/// Embeddings of every item toward one target category under one style.
#[derive(Debug, Clone)]
struct Shard {
    ids: Vec<String>,
    data: Vec<f64>,
    /// Row per catalog index, `MISSING` for items not in the shard.
    row_of: Vec<u32>,
}

/// Immutable map `(item, target category, style) → embedding`.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    categories: Vec<usize>,
    styles: Vec<usize>,
    pooled: Vec<PooledStyle>,
    style_vectors: BTreeMap<usize, Vec<f64>>,
    shards: BTreeMap<(usize, usize), Shard>,
}

impl EmbeddingStore {
    /// Fills every `(item, target ≠ item category, style)` entry over items whose
    /// category is in `categories`. Shards are built in parallel; each gets its own
    /// embedder from `make_embedder`, called as `embed(item, target, style)`.
    pub fn from_fn<M, F>(catalog: &Catalog, categories: &[usize], styles: &[usize], dim: usize, make_embedder: M) -> Result<Self>
    where
        M: Fn() -> Result<F> + Sync,
        F: FnMut(usize, usize, usize) -> Result<Vec<f64>>,
    {
        let keys: Vec<(usize, usize)> = styles
            .iter()
            .flat_map(|s| categories.iter().map(move |c| (*s, *c)))
            .collect();
        let shards = keys
            .par_iter()
            .map(|&(style, target)| {
                let members: Vec<usize> = categories
                    .iter()
                    .filter(|c| **c != target)
                    .flat_map(|c| catalog.in_coarse(*c).iter().copied())
                    .collect();
                let mut embed = make_embedder()?;
                let mut shard = Shard {
                    ids: Vec::with_capacity(members.len()),
                    data: Vec::with_capacity(members.len() * dim),
                    row_of: vec![MISSING; catalog.len()],
                };
                for (row, &item) in members.iter().enumerate() {
                    let e = embed(item, target, style)?;
                    if e.len() != dim {
                        return Err(Error::shape("store", format!("embedding of width {} in a {dim}-d store", e.len())));
                    }
                    if e.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Invariant(format!(
                            "non-finite embedding for {} toward category {target}",
                            catalog.item(item).item_id
                        )));
                    }
                    shard.ids.push(catalog.item(item).item_id.clone());
                    shard.data.extend_from_slice(&e);
                    shard.row_of[item] = row as u32;
                }
                Ok(((style, target), shard))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            dim,
            categories: categories.to_vec(),
            styles: styles.to_vec(),
            pooled: Vec::new(),
            style_vectors: BTreeMap::new(),
            shards,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn styles(&self) -> &[usize] {
        &self.styles
    }

    pub fn has_style(&self, style: usize) -> bool {
        self.styles.contains(&style)
    }

    pub fn pooled(&self, style: usize) -> Option<&PooledStyle> {
        self.pooled.iter().find(|p| p.style == style)
    }

    /// The style vector the store was built with, when built from pooled styles.
    pub fn style_vector(&self, style: usize) -> Option<&[f64]> {
        self.style_vectors.get(&style).map(Vec::as_slice)
    }

    pub fn get(&self, item: usize, target_category: usize, style: usize) -> Option<&[f64]> {
        let shard = self.shards.get(&(style, target_category))?;
        let row = *shard.row_of.get(item)?;
        if row == MISSING {
            return None;
        }
        let start = row as usize * self.dim;
        Some(&shard.data[start..start + self.dim])
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.shards.len());
        for (&(style, category), shard) in &self.shards {
            let file = format!("style{style}-cat{category}.bin");
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            w.write_all(SHARD_MAGIC)?;
            for v in [self.dim, shard.ids.len(), style, category] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
            for (row, id) in shard.ids.iter().enumerate() {
                let bytes = id.as_bytes();
                let len = u16::try_from(bytes.len()).map_err(|_| Error::contract(format!("item id too long: {id}")))?;
                w.write_all(&len.to_le_bytes())?;
                w.write_all(bytes)?;
                for v in &shard.data[row * self.dim..(row + 1) * self.dim] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
            entries.push(ShardEntry {
                style,
                category,
                file,
                count: shard.ids.len(),
            });
        }
        let manifest = Manifest {
            format: STORE_FORMAT.into(),
            dim: self.dim,
            categories: self.categories.clone(),
            styles: self.styles.clone(),
            pooled: self.pooled.clone(),
            style_vectors: self.style_vectors.clone(),
            shards: entries,
        };
        crate::dataset::write_json(dir.join("manifest.json"), &manifest)
    }

    /// Loads a saved store and indexes it against `catalog`.
    pub fn load(dir: impl AsRef<Path>, catalog: &Catalog) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
        if manifest.format != STORE_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported store format {:?}", manifest.format)));
        }
        let dim = manifest.dim;
        let mut shards = BTreeMap::new();
        for entry in &manifest.shards {
            let path = dir.join(&entry.file);
            let corrupt = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
            let mut r = BufReader::new(File::open(&path)?);
            let mut magic = [0u8; 8];
            r.read_exact(&mut magic)?;
            if &magic != SHARD_MAGIC {
                return Err(corrupt("bad magic"));
            }
            let mut header = [0usize; 4];
            for h in &mut header {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *h = u32::from_le_bytes(b) as usize;
            }
            if header != [dim, entry.count, entry.style, entry.category] {
                return Err(corrupt("header disagrees with manifest"));
            }
            let mut shard = Shard {
                ids: Vec::with_capacity(entry.count),
                data: Vec::with_capacity(entry.count * dim),
                row_of: vec![MISSING; catalog.len()],
            };
            for row in 0..entry.count {
                let mut len = [0u8; 2];
                r.read_exact(&mut len)?;
                let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
                r.read_exact(&mut id)?;
                let id = String::from_utf8(id).map_err(|_| corrupt("item id is not UTF-8"))?;
                let item = catalog
                    .index_of(&id)
                    .ok_or_else(|| corrupt(&format!("item {id} is not in the catalog")))?;
                for _ in 0..dim {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b)?;
                    shard.data.push(f64::from_le_bytes(b));
                }
                shard.row_of[item] = row as u32;
                shard.ids.push(id);
            }
            shards.insert((entry.style, entry.category), shard);
        }
        Ok(Self {
            dim,
            categories: manifest.categories,
            styles: manifest.styles,
            pooled: manifest.pooled,
            style_vectors: manifest.style_vectors,
            shards,
        })
    }
}

/// Embeds every catalog item of `categories` toward each other category under
/// each pooled style's generation vector.
pub fn precompute_embeddings(
    catalog: &Catalog,
    categories: &[usize],
    pooled: &[PooledStyle],
    sca: &ScaNet,
    deterministic: bool,
    seed: u64,
) -> Result<EmbeddingStore> {
    if pooled.is_empty() {
        return Err(Error::Generation("no pooled styles to precompute".into()));
    }
    let style_vectors: BTreeMap<usize, Vec<f64>> = pooled
        .iter()
        .map(|p| {
            let mut rng = set_rng(seed, p.style as u64);
            (p.style, style_vector_for_generation(p, &mut rng, deterministic))
        })
        .collect();
    let styles: Vec<usize> = style_vectors.keys().copied().collect();
    let mut store = EmbeddingStore::from_fn(catalog, categories, &styles, sca.config().embed_dim, || {
        let mut session = sca.session()?;
        let vectors = &style_vectors;
        Ok(move |item: usize, target: usize, style: usize| {
            let it = catalog.item(item);
            session.embed(&EmbeddingQuery {
                features: &it.features,
                item_category: it.coarse,
                target_category: target,
                style: &vectors[&style],
            })
        })
    })?;
    store.pooled = pooled.to_vec();
    store.style_vectors = style_vectors;
    Ok(store)
}
