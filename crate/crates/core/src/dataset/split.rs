use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{set_rng, write_json, Outfit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Outfit>,
    pub val: Vec<Outfit>,
    pub test: Vec<Outfit>,
}

/// Outfit ids per partition, as stored in `split.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn ids(&self) -> SplitIds {
        let ids = |v: &[Outfit]| v.iter().map(|o| o.outfit_id.clone()).collect();
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

impl SplitIds {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn apply(&self, outfits: &[Outfit]) -> Result<Split> {
        let by_id: HashMap<&str, &Outfit> = outfits.iter().map(|o| (o.outfit_id.as_str(), o)).collect();
        let pick = |ids: &[String]| -> Result<Vec<Outfit>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|o| (*o).clone())
                        .ok_or_else(|| Error::contract(format!("split references unknown outfit {id}")))
                })
                .collect()
        };
        Ok(Split {
            train: pick(&self.train)?,
            val: pick(&self.val)?,
            test: pick(&self.test)?,
        })
    }
}

/// Stratified train/val/test split. Each style's outfits are shuffled
/// independently and cut by `ratios`; partitions keep input order.
pub fn split(outfits: &[Outfit], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n_styles = outfits.iter().map(|o| o.style + 1).max().unwrap_or(0);
    let mut assignment = vec![2u8; outfits.len()];
    for style in 0..n_styles {
        let mut members: Vec<usize> = (0..outfits.len()).filter(|i| outfits[*i].style == style).collect();
        let mut rng = set_rng(seed, style as u64);
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * ratios[1]).round() as usize).min(members.len() - n_train);
        for (rank, i) in members.into_iter().enumerate() {
            assignment[i] = if rank < n_train {
                0
            } else if rank < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let part = |p: u8| {
        outfits
            .iter()
            .zip(&assignment)
            .filter(|(_, a)| **a == p)
            .map(|(o, _)| o.clone())
            .collect()
    };
    Ok(Split {
        train: part(0),
        val: part(1),
        test: part(2),
    })
}
