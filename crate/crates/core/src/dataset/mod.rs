//! Catalog and outfit data model, JSONL file formats, and evaluation-set builders.
//!
//! A data directory holds:
//!
//! - `styles.json`: ordered style names
//! - `categories.json`: coarse categories, each with its fine categories
//! - `catalog.jsonl`: one item per line
//! - `outfits.jsonl`: one outfit per line
//! - `split.json` (optional): outfit ids per train/val/test partition

mod sampling;
mod split;
mod synth;

pub use sampling::{
    build_compat_set, build_fitb_set, sample_hard_negative, sample_negative, sample_soft_negative,
    set_rng, BlankCategory, FitbQuestion, LabeledOutfit, NegativeMode, RESAMPLE_CAP,
};
pub use split::{split, Split, SplitIds};
pub use synth::{generate_synthetic, CategorySpec, SynthConfig, SyntheticData};

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered style names. Names are unique and there are at least two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StyleVocabulary {
    names: Vec<String>,
}

impl StyleVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(format!("need at least 2 styles, got {}", names.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("duplicate style {dup:?}")));
        }
        Ok(Self { names })
    }

    /// The seven styles of the reference fashion dataset.
    pub fn fashion_default() -> Self {
        let names = ["Work", "Casual", "Party", "Relax", "Travel", "Athleisure", "Sporty"];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for StyleVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<StyleVocabulary> for Vec<String> {
    fn from(v: StyleVocabulary) -> Self {
        v.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineCategory {
    pub name: String,
    pub coarse: usize,
}

/// Coarse categories and the fine categories refining them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocabulary {
    coarse: Vec<String>,
    fine: Vec<FineCategory>,
}

#[derive(Serialize, Deserialize)]
struct CategoryEntry {
    name: String,
    #[serde(default)]
    fine: Vec<String>,
}

impl CategoryVocabulary {
    /// Builds from `(coarse name, fine names)` pairs. All names must be unique.
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("empty category vocabulary".into()));
        }
        let mut seen = HashSet::new();
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        for (ci, (name, fines)) in entries.into_iter().enumerate() {
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate category {name:?}")));
            }
            coarse.push(name);
            for f in fines {
                if !seen.insert(f.clone()) {
                    return Err(Error::Config(format!("duplicate category {f:?}")));
                }
                fine.push(FineCategory { name: f, coarse: ci });
            }
        }
        Ok(Self { coarse, fine })
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn coarse_names(&self) -> &[String] {
        &self.coarse
    }

    pub fn coarse_name(&self, index: usize) -> Option<&str> {
        self.coarse.get(index).map(String::as_str)
    }

    pub fn coarse_index(&self, name: &str) -> Option<usize> {
        self.coarse.iter().position(|n| n == name)
    }

    pub fn fine(&self) -> &[FineCategory] {
        &self.fine
    }

    pub fn fine_index(&self, name: &str) -> Option<usize> {
        self.fine.iter().position(|f| f.name == name)
    }

    pub fn fine_of(&self, coarse: usize) -> impl Iterator<Item = (usize, &FineCategory)> {
        self.fine.iter().enumerate().filter(move |(_, f)| f.coarse == coarse)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries: Vec<CategoryEntry> = self
            .coarse
            .iter()
            .enumerate()
            .map(|(ci, name)| CategoryEntry {
                name: name.clone(),
                fine: self.fine_of(ci).map(|(_, f)| f.name.clone()).collect(),
            })
            .collect();
        write_json(path, &entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<CategoryEntry> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::new(entries.into_iter().map(|e| (e.name, e.fine)).collect())
    }
}

/// A catalog entry with its raw feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: String,
    pub coarse: usize,
    pub fine: Option<usize>,
    pub features: Vec<f64>,
}

/// An unordered set of items with exactly one style. `item_ids` is kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outfit {
    pub outfit_id: String,
    pub item_ids: Vec<String>,
    pub style: usize,
}

impl Outfit {
    /// Canonicalizes item order; rejects duplicates and sets smaller than two.
    pub fn new(outfit_id: impl Into<String>, mut item_ids: Vec<String>, style: usize) -> Result<Self> {
        let outfit_id = outfit_id.into();
        item_ids.sort();
        if item_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract(format!("outfit {outfit_id} repeats an item")));
        }
        if item_ids.len() < 2 {
            return Err(Error::contract(format!("outfit {outfit_id} has fewer than 2 items")));
        }
        Ok(Self {
            outfit_id,
            item_ids,
            style,
        })
    }
}

/// Items plus lookup indices by id, coarse category and fine category.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    index: HashMap<String, usize>,
    by_coarse: Vec<Vec<usize>>,
    by_fine: Vec<Vec<usize>>,
    feature_dim: usize,
}

impl Catalog {
    pub fn new(items: Vec<Item>, categories: &CategoryVocabulary) -> Result<Self> {
        let feature_dim = items.first().map_or(0, |i| i.features.len());
        let mut index = HashMap::with_capacity(items.len());
        let mut by_coarse = vec![Vec::new(); categories.num_coarse()];
        let mut by_fine = vec![Vec::new(); categories.fine().len()];
        for (i, item) in items.iter().enumerate() {
            validate_item(item, categories, feature_dim)?;
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate item id {}", item.item_id)));
            }
            by_coarse[item.coarse].push(i);
            if let Some(f) = item.fine {
                by_fine[f].push(i);
            }
        }
        Ok(Self {
            items,
            index,
            by_coarse,
            by_fine,
            feature_dim,
        })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index_of(item_id).map(|i| &self.items[i])
    }

    /// Catalog indices of every item in a coarse category, in catalog order.
    pub fn in_coarse(&self, coarse: usize) -> &[usize] {
        self.by_coarse.get(coarse).map_or(&[], Vec::as_slice)
    }

    pub fn in_fine(&self, fine: usize) -> &[usize] {
        self.by_fine.get(fine).map_or(&[], Vec::as_slice)
    }

    pub fn resolve(&self, item_ids: &[String]) -> Result<Vec<usize>> {
        item_ids
            .iter()
            .map(|id| {
                self.index_of(id)
                    .ok_or_else(|| Error::contract(format!("unknown item id {id}")))
            })
            .collect()
    }
}

fn validate_item(item: &Item, categories: &CategoryVocabulary, dim: usize) -> Result<()> {
    if item.coarse >= categories.num_coarse() {
        return Err(Error::contract(format!("{}: coarse category out of range", item.item_id)));
    }
    if let Some(f) = item.fine {
        match categories.fine().get(f) {
            Some(fc) if fc.coarse == item.coarse => {}
            Some(fc) => {
                return Err(Error::contract(format!(
                    "{}: fine category {} does not refine {}",
                    item.item_id,
                    fc.name,
                    categories.coarse[item.coarse]
                )))
            }
            None => return Err(Error::contract(format!("{}: fine category out of range", item.item_id))),
        }
    }
    if item.features.len() != dim {
        return Err(Error::contract(format!(
            "{}: {} features, expected {dim}",
            item.item_id,
            item.features.len()
        )));
    }
    if item.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract(format!("{}: non-finite feature", item.item_id)));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    item_id: String,
    coarse_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fine_category: Option<String>,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OutfitRecord {
    outfit_id: String,
    item_ids: Vec<String>,
    style: String,
}

fn load_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads non-blank JSONL lines as `(1-based line number, record)`.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| load_error(path, i + 1, e.to_string()))?;
        out.push((i + 1, record));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_catalog(path: impl AsRef<Path>, categories: &CategoryVocabulary) -> Result<Catalog> {
    let path = path.as_ref();
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (line, rec) in read_jsonl::<ItemRecord>(path)? {
        let coarse = categories
            .coarse_index(&rec.coarse_category)
            .ok_or_else(|| load_error(path, line, format!("unknown category {:?}", rec.coarse_category)))?;
        let fine = match &rec.fine_category {
            Some(name) => {
                let f = categories
                    .fine_index(name)
                    .ok_or_else(|| load_error(path, line, format!("unknown fine category {name:?}")))?;
                Some(f)
            }
            None => None,
        };
        if !seen.insert(rec.item_id.clone()) {
            return Err(load_error(path, line, format!("duplicate item id {}", rec.item_id)));
        }
        let expected = *dim.get_or_insert(rec.features.len());
        let item = Item {
            item_id: rec.item_id,
            coarse,
            fine,
            features: rec.features,
        };
        validate_item(&item, categories, expected).map_err(|e| load_error(path, line, e.to_string()))?;
        items.push(item);
    }
    Catalog::new(items, categories)
}

pub fn save_catalog(path: impl AsRef<Path>, catalog: &Catalog, categories: &CategoryVocabulary) -> Result<()> {
    write_jsonl(
        path.as_ref(),
        catalog.items().iter().map(|item| ItemRecord {
            item_id: item.item_id.clone(),
            coarse_category: categories.coarse[item.coarse].clone(),
            fine_category: item.fine.map(|f| categories.fine[f].name.clone()),
            features: item.features.clone(),
        }),
    )
}

pub fn load_outfits(path: impl AsRef<Path>, catalog: &Catalog, styles: &StyleVocabulary) -> Result<Vec<Outfit>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut outfits = Vec::new();
    for (line, rec) in read_jsonl::<OutfitRecord>(path)? {
        let style = styles
            .index_of(&rec.style)
            .ok_or_else(|| load_error(path, line, format!("unknown style {:?}", rec.style)))?;
        if let Some(missing) = rec.item_ids.iter().find(|id| catalog.index_of(id).is_none()) {
            return Err(load_error(path, line, format!("unknown item id {missing}")));
        }
        if !seen.insert(rec.outfit_id.clone()) {
            return Err(load_error(path, line, format!("duplicate outfit id {}", rec.outfit_id)));
        }
        let outfit = Outfit::new(rec.outfit_id, rec.item_ids, style).map_err(|e| load_error(path, line, e.to_string()))?;
        outfits.push(outfit);
    }
    Ok(outfits)
}

pub fn save_outfits(path: impl AsRef<Path>, outfits: &[Outfit], styles: &StyleVocabulary) -> Result<()> {
    write_jsonl(
        path.as_ref(),
        outfits.iter().map(|o| OutfitRecord {
            outfit_id: o.outfit_id.clone(),
            item_ids: o.item_ids.clone(),
            style: styles.names[o.style].clone(),
        }),
    )
}

/// Everything loaded from a data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub styles: StyleVocabulary,
    pub categories: CategoryVocabulary,
    pub catalog: Catalog,
    pub outfits: Vec<Outfit>,
}

pub struct DataPaths {
    pub styles: PathBuf,
    pub categories: PathBuf,
    pub catalog: PathBuf,
    pub outfits: PathBuf,
    pub split: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            styles: d.join("styles.json"),
            categories: d.join("categories.json"),
            catalog: d.join("catalog.jsonl"),
            outfits: d.join("outfits.jsonl"),
            split: d.join("split.json"),
        }
    }
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let paths = DataPaths::in_dir(dir);
        let styles: StyleVocabulary = serde_json::from_reader(BufReader::new(File::open(&paths.styles)?))?;
        let categories = CategoryVocabulary::load(&paths.categories)?;
        let catalog = load_catalog(&paths.catalog, &categories)?;
        let outfits = load_outfits(&paths.outfits, &catalog, &styles)?;
        Ok(Self {
            styles,
            categories,
            catalog,
            outfits,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        let paths = DataPaths::in_dir(dir);
        write_json(&paths.styles, &self.styles)?;
        self.categories.save(&paths.categories)?;
        save_catalog(&paths.catalog, &self.catalog, &self.categories)?;
        save_outfits(&paths.outfits, &self.outfits, &self.styles)
    }

    /// Reads `split.json` if present; otherwise splits 80/10/10 with `seed`.
    pub fn load_split(&self, dir: impl AsRef<Path>, seed: u64) -> Result<Split> {
        let path = DataPaths::in_dir(dir).split;
        if path.exists() {
            let ids: SplitIds = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
            ids.apply(&self.outfits)
        } else {
            split(&self.outfits, [0.8, 0.1, 0.1], seed)
        }
    }
}
