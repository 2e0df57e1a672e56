//! Fill-in-the-blank accuracy and compatibility AUROC.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_compat_set, build_fitb_set, Catalog, FitbQuestion, LabeledOutfit, NegativeMode, Outfit};
use crate::error::{Error, Result};
use crate::nn::sq_distance;
use crate::scanet::{EmbeddingQuery, ScaNet};
use crate::vsen::{reparameterize, Vsen};

/// Scores a candidate outfit given as catalog indices; higher is more compatible.
pub trait OutfitScorer: Sync {
    fn score(&self, items: &[usize]) -> Result<f64>;
}

/// Mean over ordered item pairs `(i, j)` of `−‖e(i→cat_j) − e(j→cat_i)‖²`
/// under a fixed style vector. Items are visited in sorted index order.
pub fn outfit_score(items: &[usize], style: &[f64], sca: &ScaNet, catalog: &Catalog) -> Result<f64> {
    if items.len() < 2 {
        return Err(Error::contract("an outfit score needs at least two items"));
    }
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut session = sca.session()?;
    let mut total = 0.0;
    for (a, &i) in sorted.iter().enumerate() {
        for &j in &sorted[a + 1..] {
            let (ii, ij) = (catalog.item(i), catalog.item(j));
            let e_ij = session.embed(&EmbeddingQuery {
                features: &ii.features,
                item_category: ii.coarse,
                target_category: ij.coarse,
                style,
            })?;
            let e_ji = session.embed(&EmbeddingQuery {
                features: &ij.features,
                item_category: ij.coarse,
                target_category: ii.coarse,
                style,
            })?;
            total -= sq_distance(&e_ij, &e_ji);
        }
    }
    let n = sorted.len() as f64;
    // each unordered pair stands for both of its ordered pairs
    Ok(2.0 * total / (n * (n - 1.0)))
}

/// Where the style vector for scoring comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalStyle {
    /// The encoder mean of the candidate outfit.
    Mean,
    /// One reparameterized draw, seeded from `(seed, items)`.
    Sampled(u64),
}

/// Trained encoder plus compatibility network, scoring outfits from the catalog.
pub struct StyleCompatModel<'a> {
    pub vsen: &'a Vsen,
    pub sca: &'a ScaNet,
    pub catalog: &'a Catalog,
    pub style: EvalStyle,
}

impl<'a> StyleCompatModel<'a> {
    pub fn new(vsen: &'a Vsen, sca: &'a ScaNet, catalog: &'a Catalog) -> Self {
        Self {
            vsen,
            sca,
            catalog,
            style: EvalStyle::Mean,
        }
    }

    pub fn style_vector(&self, items: &[usize]) -> Result<Vec<f64>> {
        let mut sorted = items.to_vec();
        sorted.sort_unstable();
        let feats: Vec<&[f64]> = sorted.iter().map(|i| self.catalog.item(*i).features.as_slice()).collect();
        let g = self.vsen.encode(&feats)?;
        Ok(match self.style {
            EvalStyle::Mean => g.mu,
            EvalStyle::Sampled(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(mix(&sorted));
                reparameterize(&g, &mut rng).z
            }
        })
    }
}

fn mix(items: &[usize]) -> u64 {
    // FNV-1a over the sorted indices
    items.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, i| {
        (h ^ *i as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl OutfitScorer for StyleCompatModel<'_> {
    fn score(&self, items: &[usize]) -> Result<f64> {
        let z = self.style_vector(items)?;
        outfit_score(items, &z, self.sca, self.catalog)
    }
}

/// Index of the best-scoring option; the lowest index wins ties.
fn pick(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = k;
        }
    }
    best
}

/// Percent of questions whose best-scoring completion is the held-out item.
pub fn fitb_accuracy<S: OutfitScorer + ?Sized>(questions: &[FitbQuestion], catalog: &Catalog, scorer: &S) -> Result<f64> {
    if questions.is_empty() {
        return Err(Error::contract("no FITB questions"));
    }
    let correct = questions
        .par_iter()
        .map(|q| -> Result<usize> {
            let query = catalog.resolve(&q.query_items)?;
            let options = catalog.resolve(&q.options)?;
            let scores = options
                .iter()
                .map(|o| {
                    let mut outfit = query.clone();
                    outfit.push(*o);
                    scorer.score(&outfit)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(usize::from(pick(&scores) == q.answer_index))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(100.0 * correct as f64 / questions.len() as f64)
}

/// AUROC in `[0, 1]` by the rank-sum statistic, ties getting mid-ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auroc", format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUROC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|i| labels[**i]).count();
        rank_sum_pos += mid_rank * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Compatibility AUROC in percent.
pub fn compat_auroc<S: OutfitScorer + ?Sized>(outfits: &[LabeledOutfit], catalog: &Catalog, scorer: &S) -> Result<f64> {
    let scores = outfits
        .par_iter()
        .map(|o| scorer.score(&catalog.resolve(&o.item_ids)?))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<bool> = outfits.iter().map(|o| o.label).collect();
    Ok(100.0 * auroc(&scores, &labels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over the per-set values.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, values }
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub fitb: MetricSummary,
    pub auc: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_sets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sn: Option<ModeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hn: Option<ModeReport>,
}

impl EvalReport {
    pub fn mode(&self, mode: NegativeMode) -> Option<&ModeReport> {
        match mode {
            NegativeMode::Soft => self.sn.as_ref(),
            NegativeMode::Hard => self.hn.as_ref(),
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6}{:>18}{:>18}", "Type", "FITB Acc.", "Compat. AUC")?;
        for (name, r) in [("SN", &self.sn), ("HN", &self.hn)] {
            if let Some(r) = r {
                writeln!(f, "{name:<6}{:>18}{:>18}", r.fitb.to_string(), r.auc.to_string())?;
            }
        }
        Ok(())
    }
}

/// FITB and AUROC over `n_sets` independently sampled test sets per mode.
pub fn evaluate<S: OutfitScorer + ?Sized>(
    scorer: &S,
    outfits: &[Outfit],
    catalog: &Catalog,
    modes: &[NegativeMode],
    n_sets: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_sets == 0 {
        return Err(Error::Config("at least one test set is required".into()));
    }
    let mut report = EvalReport {
        n_sets,
        sn: None,
        hn: None,
    };
    for &mode in modes {
        let fitb_sets = build_fitb_set(outfits, catalog, mode, n_sets, seed)?;
        let compat_sets = build_compat_set(outfits, catalog, mode, n_sets, seed)?;
        let fitb = fitb_sets
            .iter()
            .map(|set| fitb_accuracy(set, catalog, scorer))
            .collect::<Result<Vec<_>>>()?;
        let auc = compat_sets
            .iter()
            .map(|set| compat_auroc(set, catalog, scorer))
            .collect::<Result<Vec<_>>>()?;
        let summary = ModeReport {
            fitb: MetricSummary::from_values(fitb),
            auc: MetricSummary::from_values(auc),
        };
        log::info!("{} FITB {} AUC {}", mode.label(), summary.fitb, summary.auc);
        match mode {
            NegativeMode::Soft => report.sn = Some(summary),
            NegativeMode::Hard => report.hn = Some(summary),
        }
    }
    Ok(report)
}
