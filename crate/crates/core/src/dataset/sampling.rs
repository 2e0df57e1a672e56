use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, Outfit};
use crate::error::{Error, Result};

/// Attempts allowed per negative before giving up.
pub const RESAMPLE_CAP: usize = 100;

/// Soft negatives share the blank's coarse category, hard negatives its fine category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeMode {
    #[serde(rename = "sn")]
    Soft,
    #[serde(rename = "hn")]
    Hard,
}

impl NegativeMode {
    pub fn label(self) -> &'static str {
        match self {
            NegativeMode::Soft => "sn",
            NegativeMode::Hard => "hn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlankCategory {
    Coarse(usize),
    Fine(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitbQuestion {
    pub query_items: Vec<String>,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub style: usize,
    pub blank_category: BlankCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledOutfit {
    pub item_ids: Vec<String>,
    pub style: usize,
    pub label: bool,
}

/// Independent stream for test set `set_index` under `master_seed`.
pub fn set_rng(master_seed: u64, set_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(set_index);
    rng
}

fn pick_excluding<R: Rng + ?Sized>(pool: &[usize], exclude: &[usize], rng: &mut R) -> Option<usize> {
    let candidates: Vec<usize> = pool.iter().copied().filter(|i| !exclude.contains(i)).collect();
    candidates.choose(rng).copied()
}

/// Uniform item of the blank's coarse category that is not in the outfit.
pub fn sample_soft_negative<R: Rng + ?Sized>(outfit: &[usize], blank: usize, catalog: &Catalog, rng: &mut R) -> Result<usize> {
    let coarse = catalog.item(blank).coarse;
    pick_excluding(catalog.in_coarse(coarse), outfit, rng).ok_or_else(|| {
        Error::Sampling(format!(
            "no soft negative for {}: category {coarse} has no item outside the outfit",
            catalog.item(blank).item_id
        ))
    })
}

/// Uniform item of the blank's fine category that is not in the outfit.
pub fn sample_hard_negative<R: Rng + ?Sized>(outfit: &[usize], blank: usize, catalog: &Catalog, rng: &mut R) -> Result<usize> {
    let item = catalog.item(blank);
    let fine = item
        .fine
        .ok_or_else(|| Error::Sampling(format!("{} has no fine category", item.item_id)))?;
    pick_excluding(catalog.in_fine(fine), outfit, rng).ok_or_else(|| {
        Error::Sampling(format!(
            "no hard negative for {}: fine category {fine} has no item outside the outfit",
            item.item_id
        ))
    })
}

pub fn sample_negative<R: Rng + ?Sized>(
    mode: NegativeMode,
    outfit: &[usize],
    blank: usize,
    catalog: &Catalog,
    rng: &mut R,
) -> Result<usize> {
    match mode {
        NegativeMode::Soft => sample_soft_negative(outfit, blank, catalog, rng),
        NegativeMode::Hard => sample_hard_negative(outfit, blank, catalog, rng),
    }
}

/// `count` distinct negatives for `blank`, each not in the outfit or in `taken`.
fn distinct_negatives<R: Rng + ?Sized>(
    mode: NegativeMode,
    outfit: &[usize],
    blank: usize,
    taken: &[usize],
    count: usize,
    catalog: &Catalog,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    while chosen.len() < count {
        let mut attempts = 0;
        loop {
            let n = sample_negative(mode, outfit, blank, catalog, rng)?;
            if !chosen.contains(&n) && !taken.contains(&n) {
                chosen.push(n);
                break;
            }
            attempts += 1;
            if attempts >= RESAMPLE_CAP {
                return Err(Error::Sampling(format!(
                    "could not draw {count} distinct {} negatives for {} in {RESAMPLE_CAP} attempts",
                    mode.label(),
                    catalog.item(blank).item_id
                )));
            }
        }
    }
    Ok(chosen)
}

fn fitb_question<R: Rng + ?Sized>(
    outfit: &Outfit,
    items: &[usize],
    catalog: &Catalog,
    mode: NegativeMode,
    rng: &mut R,
) -> Result<FitbQuestion> {
    let mut positions: Vec<usize> = (0..items.len()).collect();
    positions.shuffle(rng);
    let mut last_err = None;
    for pos in positions {
        let blank = items[pos];
        match distinct_negatives(mode, items, blank, &[], 3, catalog, rng) {
            Ok(negatives) => {
                let answer_index = rng.random_range(0..4);
                let mut options: Vec<String> = negatives.iter().map(|n| catalog.item(*n).item_id.clone()).collect();
                options.insert(answer_index, catalog.item(blank).item_id.clone());
                let item = catalog.item(blank);
                let blank_category = match mode {
                    NegativeMode::Soft => BlankCategory::Coarse(item.coarse),
                    // a hard negative was drawn, so the fine category exists
                    NegativeMode::Hard => BlankCategory::Fine(item.fine.unwrap_or_default()),
                };
                return Ok(FitbQuestion {
                    query_items: items
                        .iter()
                        .filter(|i| **i != blank)
                        .map(|i| catalog.item(*i).item_id.clone())
                        .collect(),
                    options,
                    answer_index,
                    style: outfit.style,
                    blank_category,
                });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Sampling(format!("outfit {} has no items", outfit.outfit_id))))
}

/// `n_sets` FITB sets with one question per outfit; set `k` draws from `set_rng(seed, k)`.
pub fn build_fitb_set(
    outfits: &[Outfit],
    catalog: &Catalog,
    mode: NegativeMode,
    n_sets: usize,
    seed: u64,
) -> Result<Vec<Vec<FitbQuestion>>> {
    let resolved: Vec<Vec<usize>> = outfits.iter().map(|o| catalog.resolve(&o.item_ids)).collect::<Result<_>>()?;
    (0..n_sets)
        .map(|k| {
            let mut rng = set_rng(seed, k as u64);
            outfits
                .iter()
                .zip(&resolved)
                .map(|(o, items)| fitb_question(o, items, catalog, mode, &mut rng))
                .collect()
        })
        .collect()
}

/// `n_sets` compatibility sets: each positive followed by a negative in which
/// every item is replaced by a `mode` negative of the same category.
pub fn build_compat_set(
    outfits: &[Outfit],
    catalog: &Catalog,
    mode: NegativeMode,
    n_sets: usize,
    seed: u64,
) -> Result<Vec<Vec<LabeledOutfit>>> {
    let resolved: Vec<Vec<usize>> = outfits.iter().map(|o| catalog.resolve(&o.item_ids)).collect::<Result<_>>()?;
    // distinct stream range from the FITB builder under the same seed
    let stream_base = 1 << 32;
    (0..n_sets)
        .map(|k| {
            let mut rng = set_rng(seed, stream_base + k as u64);
            let mut set = Vec::with_capacity(outfits.len() * 2);
            for (o, items) in outfits.iter().zip(&resolved) {
                let mut negatives: Vec<usize> = Vec::with_capacity(items.len());
                for &blank in items {
                    let n = distinct_negatives(mode, items, blank, &negatives, 1, catalog, &mut rng)?;
                    negatives.push(n[0]);
                }
                let mut neg_ids: Vec<String> = negatives.iter().map(|n| catalog.item(*n).item_id.clone()).collect();
                neg_ids.sort();
                set.push(LabeledOutfit {
                    item_ids: o.item_ids.clone(),
                    style: o.style,
                    label: true,
                });
                set.push(LabeledOutfit {
                    item_ids: neg_ids,
                    style: o.style,
                    label: false,
                });
            }
            Ok(set)
        })
        .collect()
}
