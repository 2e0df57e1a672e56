use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig};
use crate::dataset::{build_fitb_set, sample_negative, set_rng, Catalog, NegativeMode, Outfit};
use crate::error::{Error, Result};
use crate::evaluation::{fitb_accuracy, StyleCompatModel};
use crate::generation::{pool_style, style_vector_for_generation, PoolMode, PooledStyle};
use crate::scanet::{EmbeddingQuery, ScaNet};
use crate::tensor::{Tape, Var};
use crate::vsen::{argmax, kl_on_tape, kl_to_unit, reparameterize, reparameterize_on_tape, StyleGaussian, Vsen};

/// Per-epoch means of the stage-1 loss terms and validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub val_accuracy: Option<f64>,
    pub val_kl: Option<f64>,
}

/// Per-epoch means of the stage-2 loss terms and validation FITB accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub triplet: f64,
    pub wrong_style: f64,
    pub val_fitb: Option<f64>,
}

/// Catalog indices: `anchor` and `positive` from outfit `outfit`, `negative`
/// replacing `positive` with an item of the same category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub outfit: usize,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One triplet per outfit, in shuffled outfit order.
pub fn sample_triplets<R: Rng + ?Sized>(
    outfits: &[Outfit],
    catalog: &Catalog,
    rng: &mut R,
    mode: NegativeMode,
) -> Result<Vec<Triplet>> {
    let mut order: Vec<usize> = (0..outfits.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .map(|k| {
            let items = catalog.resolve(&outfits[k].item_ids)?;
            if items.len() < 2 {
                return Err(Error::Sampling(format!("outfit {} has fewer than two items", outfits[k].outfit_id)));
            }
            let a = rng.random_range(0..items.len());
            let mut p = rng.random_range(0..items.len() - 1);
            if p >= a {
                p += 1;
            }
            let negative = sample_negative(mode, &items, items[p], catalog, rng)?;
            Ok(Triplet {
                outfit: k,
                anchor: items[a],
                positive: items[p],
                negative,
            })
        })
        .collect()
}

fn features<'a>(outfits: &[Outfit], catalog: &'a Catalog) -> Result<Vec<Vec<&'a [f64]>>> {
    outfits
        .iter()
        .map(|o| {
            let idx = catalog.resolve(&o.item_ids)?;
            Ok(idx.iter().map(|i| catalog.item(*i).features.as_slice()).collect())
        })
        .collect()
}

fn accumulate(tape: &mut Tape, total: Option<Var>, term: Var) -> Result<Var> {
    match total {
        Some(t) => tape.add(t, term),
        None => Ok(term),
    }
}

/// Validation accuracy of the classifier on encoder means, and mean KL.
fn stage1_validation(vsen: &Vsen, sets: &[Vec<&[f64]>], styles: &[usize]) -> Result<(f64, f64)> {
    let per = sets
        .par_iter()
        .zip(styles)
        .map(|(items, style)| {
            let g = vsen.encode(items)?;
            let hit = argmax(&vsen.classify_style(&g.mu)?) == *style;
            Ok((usize::from(hit), kl_to_unit(&g)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let hits: usize = per.iter().map(|p| p.0).sum();
    let kl: f64 = per.iter().map(|p| p.1).sum();
    Ok((hits as f64 / n, kl / n))
}

struct Patience {
    limit: Option<usize>,
    best: f64,
    since_best: usize,
}

impl Patience {
    fn new(limit: Option<usize>) -> Self {
        Self {
            limit,
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    /// Returns `(improved, stop)`.
    fn observe(&mut self, metric: Option<f64>) -> (bool, bool) {
        let Some(m) = metric else { return (false, false) };
        if m > self.best {
            self.best = m;
            self.since_best = 0;
            return (true, false);
        }
        self.since_best += 1;
        (false, self.limit.is_some_and(|l| self.since_best >= l))
    }
}

/// Trains the style encoder and classifier on cross-entropy plus weighted KL.
/// With patience set, returns the parameters of the best validation epoch.
pub fn train_vsen(
    train: &[Outfit],
    val: &[Outfit],
    catalog: &Catalog,
    num_styles: usize,
    config: &TrainConfig,
) -> Result<(Vsen, Vec<Stage1Record>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training outfits".into()));
    }
    let s1 = &config.stage1;
    let mut vsen = Vsen::new(config.model.vsen(catalog.feature_dim(), num_styles), config.seed)?;
    let style_dim = vsen.config().style_dim;
    let mut rng = set_rng(config.seed, 1);
    let train_sets = features(train, catalog)?;
    let val_sets = features(val, catalog)?;
    let val_styles: Vec<usize> = val.iter().map(|o| o.style).collect();
    let mut adam = Adam::new(vsen.params(), s1.lr, config.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut patience = Patience::new(s1.patience);
    let mut best: Option<Vsen> = None;
    let mut step = 0;
    for epoch in 1..=s1.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut batches = 0;
        for batch in order.chunks(s1.batch) {
            let mut tape = Tape::new();
            let bound = vsen.params().bind(&mut tape)?;
            let (mut ce_total, mut kl_total) = (None, None);
            for &k in batch {
                let (mu, log_var) = vsen.encode_on_tape(&mut tape, &bound, &train_sets[k])?;
                let eps: Vec<f64> = (0..style_dim).map(|_| rng.sample(StandardNormal)).collect();
                let z = reparameterize_on_tape(&mut tape, mu, log_var, &eps)?;
                let logits = vsen.classify_on_tape(&mut tape, &bound, z)?;
                let ce = tape.cross_entropy(logits, &[train[k].style])?;
                let kl = kl_on_tape(&mut tape, mu, log_var)?;
                ce_total = Some(accumulate(&mut tape, ce_total, ce)?);
                kl_total = Some(accumulate(&mut tape, kl_total, kl)?);
            }
            let inv = 1.0 / batch.len() as f64;
            let (ce_total, kl_total) = (ce_total.expect("non-empty batch"), kl_total.expect("non-empty batch"));
            let ce = tape.scale(ce_total, inv);
            let kl = tape.scale(kl_total, inv);
            let wce = tape.scale(ce, s1.ce_weight);
            let wkl = tape.scale(kl, s1.kl_weight);
            let loss = tape.add(wce, wkl)?;
            step += 1;
            let values = [tape.scalar(loss)?, tape.scalar(ce)?, tape.scalar(kl)?];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("encoder epoch {epoch}: loss {}, ce {}, kl {}", values[0], values[1], values[2]),
                });
            }
            let grads = tape.backward(loss)?;
            let params = vsen.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &grads)?;
            adam.step(params)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            batches += 1;
        }
        let (val_accuracy, val_kl) = if val.is_empty() {
            (None, None)
        } else {
            let (a, k) = stage1_validation(&vsen, &val_sets, &val_styles)?;
            (Some(a), Some(k))
        };
        let n = batches as f64;
        let record = Stage1Record {
            epoch,
            step,
            loss: sums[0] / n,
            ce: sums[1] / n,
            kl: sums[2] / n,
            val_accuracy,
            val_kl,
        };
        log::info!(
            "encoder epoch {epoch}: loss {:.4} ce {:.4} kl {:.4} val acc {:?}",
            record.loss,
            record.ce,
            record.kl,
            record.val_accuracy
        );
        records.push(record);
        let (improved, stop) = patience.observe(val_accuracy);
        if s1.patience.is_some() && improved {
            best = Some(vsen.clone());
        }
        if stop {
            break;
        }
    }
    Ok((best.unwrap_or(vsen), records))
}

/// Pools encoder moments of the training outfits per style.
fn pooled_by_style(gaussians: &[StyleGaussian], outfits: &[Outfit], num_styles: usize) -> Result<Vec<Option<PooledStyle>>> {
    let mut by_style: Vec<Vec<StyleGaussian>> = vec![Vec::new(); num_styles];
    for (g, o) in gaussians.iter().zip(outfits) {
        by_style[o.style].push(g.clone());
    }
    by_style
        .iter()
        .enumerate()
        .map(|(s, gs)| if gs.is_empty() { Ok(None) } else { pool_style(s, gs, PoolMode::Mean).map(Some) })
        .collect()
}

/// Trains the compatibility network on triplet and wrong-style losses with the
/// encoder frozen. The wrong style for each triplet is drawn from another
/// style's pooled Gaussian. With patience set, returns the parameters of the
/// best validation-FITB epoch.
pub fn train_scanet(
    train: &[Outfit],
    val: &[Outfit],
    catalog: &Catalog,
    num_categories: usize,
    vsen: &Vsen,
    config: &TrainConfig,
) -> Result<(ScaNet, Vec<Stage2Record>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training outfits".into()));
    }
    let before = vsen.params().checksum();
    let s2 = &config.stage2;
    let mut sca = ScaNet::new(config.model.sca(catalog.feature_dim(), num_categories), config.seed.wrapping_add(1))?;
    let mut rng = set_rng(config.seed, 2);
    let train_sets = features(train, catalog)?;
    let gaussians = train_sets
        .par_iter()
        .map(|items| vsen.encode(items))
        .collect::<Result<Vec<_>>>()?;
    let num_styles = vsen.config().num_styles;
    if let Some(o) = train.iter().find(|o| o.style >= num_styles) {
        return Err(Error::contract(format!("outfit {} has style {} beyond the encoder's {num_styles}", o.outfit_id, o.style)));
    }
    let pooled = pooled_by_style(&gaussians, train, num_styles)?;
    let available: Vec<usize> = (0..num_styles).filter(|s| pooled[*s].is_some()).collect();
    if available.len() < 2 {
        return Err(Error::Config("the wrong-style loss needs training outfits of at least two styles".into()));
    }
    let val_questions = if val.is_empty() {
        None
    } else {
        Some(build_fitb_set(val, catalog, NegativeMode::Soft, 1, config.seed)?.remove(0))
    };
    let mut adam = Adam::new(sca.params(), s2.lr, config.adam);
    let mut records = Vec::new();
    let mut patience = Patience::new(s2.patience);
    let mut best: Option<ScaNet> = None;
    let mut step = 0;
    for epoch in 1..=s2.epochs {
        let triplets = sample_triplets(train, catalog, &mut rng, NegativeMode::Soft)?;
        let mut sums = [0.0; 3];
        let mut batches = 0;
        for batch in triplets.chunks(s2.batch_triplets) {
            let mut tape = Tape::new();
            let bound = sca.params().bind(&mut tape)?;
            let (mut trip_total, mut ws_total) = (None, None);
            for t in batch {
                let g = &gaussians[t.outfit];
                let z = if s2.sample_style { reparameterize(g, &mut rng).z } else { g.mu.clone() };
                let own = train[t.outfit].style;
                let others: Vec<usize> = available.iter().copied().filter(|s| *s != own).collect();
                let wrong = *others.choose(&mut rng).expect("at least two pooled styles");
                let w = style_vector_for_generation(pooled[wrong].as_ref().expect("pooled"), &mut rng, false);
                let (a, p, n) = (catalog.item(t.anchor), catalog.item(t.positive), catalog.item(t.negative));
                let anchor = EmbeddingQuery {
                    features: &a.features,
                    item_category: a.coarse,
                    target_category: p.coarse,
                    style: &z,
                };
                let positive = EmbeddingQuery {
                    features: &p.features,
                    item_category: p.coarse,
                    target_category: a.coarse,
                    style: &z,
                };
                let negative = EmbeddingQuery {
                    features: &n.features,
                    ..positive
                };
                let trip = sca.triplet_on_tape(&mut tape, &bound, &anchor, &positive, &negative)?;
                let ws = sca.wrong_style_on_tape(&mut tape, &bound, &anchor, &positive, &w)?;
                trip_total = Some(accumulate(&mut tape, trip_total, trip)?);
                ws_total = Some(accumulate(&mut tape, ws_total, ws)?);
            }
            let inv = 1.0 / batch.len() as f64;
            let trip = tape.scale(trip_total.expect("non-empty batch"), inv);
            let ws = tape.scale(ws_total.expect("non-empty batch"), inv);
            let wt = tape.scale(trip, s2.compat_weight);
            let wws = tape.scale(ws, s2.style_weight);
            let loss = tape.add(wt, wws)?;
            step += 1;
            let values = [tape.scalar(loss)?, tape.scalar(trip)?, tape.scalar(ws)?];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    detail: format!(
                        "compatibility epoch {epoch}: loss {}, triplet {}, wrong-style {}",
                        values[0], values[1], values[2]
                    ),
                });
            }
            let grads = tape.backward(loss)?;
            let params = sca.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &grads)?;
            adam.step(params)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            batches += 1;
        }
        let val_fitb = match &val_questions {
            Some(q) => Some(fitb_accuracy(q, catalog, &StyleCompatModel::new(vsen, &sca, catalog))?),
            None => None,
        };
        let n = batches as f64;
        let record = Stage2Record {
            epoch,
            step,
            loss: sums[0] / n,
            triplet: sums[1] / n,
            wrong_style: sums[2] / n,
            val_fitb,
        };
        log::info!(
            "compatibility epoch {epoch}: loss {:.4} triplet {:.4} wrong-style {:.4} val FITB {:?}",
            record.loss,
            record.triplet,
            record.wrong_style,
            record.val_fitb
        );
        records.push(record);
        let (improved, stop) = patience.observe(val_fitb);
        if s2.patience.is_some() && improved {
            best = Some(sca.clone());
        }
        if stop {
            break;
        }
    }
    if vsen.params().checksum() != before {
        return Err(Error::Invariant("encoder parameters changed while training the compatibility network".into()));
    }
    Ok((best.unwrap_or(sca), records))
}
