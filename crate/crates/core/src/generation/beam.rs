use std::cmp::Ordering;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, Template};
use crate::dataset::{Catalog, CategoryVocabulary, Item};
use crate::error::{Error, Result};
use crate::nn::sq_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamParams {
    pub beam_width: usize,
    pub top_k: usize,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self { beam_width: 3, top_k: 5 }
    }
}

/// A complete outfit in template slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedOutfit {
    pub items: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone)]
struct BeamState {
    items: Vec<usize>,
    score: f64,
}

fn lookup<'a>(store: &'a EmbeddingStore, item: usize, target: usize, style: usize, catalog: &Catalog) -> Result<&'a [f64]> {
    store.get(item, target, style).ok_or_else(|| {
        Error::Generation(format!(
            "no embedding for {} toward category {target} under style {style}",
            catalog.item(item).item_id
        ))
    })
}

/// `−‖emb(a→cat_b) − emb(b→cat_a)‖²` from the store.
fn pair_score(store: &EmbeddingStore, catalog: &Catalog, style: usize, a: usize, b: usize) -> Result<f64> {
    let (ca, cb) = (catalog.item(a).coarse, catalog.item(b).coarse);
    let ea = lookup(store, a, cb, style, catalog)?;
    let eb = lookup(store, b, ca, style, catalog)?;
    Ok(-sq_distance(ea, eb))
}

fn by_score_then_ids(catalog: &Catalog) -> impl Fn(&BeamState, &BeamState) -> Ordering + '_ {
    move |a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            let ids = |s: &BeamState| s.items.iter().map(|i| catalog.item(*i).item_id.as_str()).collect::<Vec<_>>();
            ids(a).cmp(&ids(b))
        })
    }
}

/// Grows outfits from `anchor` through the template's slots, keeping the best
/// `beam_width` partial outfits after each slot (and at least `top_k` after the
/// last). Extending a beam by a candidate adds the pair scores between the
/// candidate and every item already chosen. Equal scores are ordered by the
/// lexicographic sequence of item ids.
pub fn beam_search(
    anchor: usize,
    template: &Template,
    style: usize,
    store: &EmbeddingStore,
    catalog: &Catalog,
    params: BeamParams,
) -> Result<Vec<GeneratedOutfit>> {
    if params.beam_width == 0 || params.top_k == 0 {
        return Err(Error::Config("beam width and top-k must be at least 1".into()));
    }
    let anchor_cat = catalog.item(anchor).coarse;
    if anchor_cat != template.anchor_category() {
        return Err(Error::contract(format!(
            "anchor {} has category {anchor_cat} but template {:?} starts with {}",
            catalog.item(anchor).item_id,
            template.name,
            template.anchor_category()
        )));
    }
    if !store.has_style(style) {
        return Err(Error::Generation(format!("the embedding store has no entries for style {style}")));
    }
    let order = by_score_then_ids(catalog);
    let mut beams = vec![BeamState {
        items: vec![anchor],
        score: 0.0,
    }];
    let last = template.slots.len() - 1;
    for (slot, &cat) in template.slots.iter().enumerate().skip(1) {
        let pool = catalog.in_coarse(cat);
        if pool.is_empty() {
            return Err(Error::Generation(format!("slot {slot} (category {cat}) has no candidates")));
        }
        let mut expanded = Vec::with_capacity(beams.len() * pool.len());
        for beam in &beams {
            for &cand in pool {
                let mut score = beam.score;
                for &chosen in &beam.items {
                    score += pair_score(store, catalog, style, chosen, cand)?;
                }
                let mut items = Vec::with_capacity(beam.items.len() + 1);
                items.extend_from_slice(&beam.items);
                items.push(cand);
                expanded.push(BeamState { items, score });
            }
        }
        let keep = if slot == last {
            params.beam_width.max(params.top_k)
        } else {
            params.beam_width
        };
        if expanded.len() > keep {
            expanded.select_nth_unstable_by(keep - 1, &order);
            expanded.truncate(keep);
        }
        expanded.sort_by(&order);
        beams = expanded;
    }
    beams.truncate(params.top_k);
    Ok(beams
        .into_iter()
        .map(|b| GeneratedOutfit {
            items: b.items,
            score: b.score,
        })
        .collect())
}

/// Outfits for one anchor under one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult {
    pub anchor: usize,
    pub style: usize,
    pub template: String,
    pub outfits: Vec<GeneratedOutfit>,
}

/// Runs beam search for every anchor and style on `parallelism` workers.
/// Each anchor uses the first template starting with its category. Results
/// are ordered by anchor item id, then by the order of `styles`, whatever the
/// worker count.
pub fn generate_batch(
    anchors: &[usize],
    templates: &[Template],
    styles: &[usize],
    store: &EmbeddingStore,
    catalog: &Catalog,
    params: BeamParams,
    parallelism: usize,
) -> Result<Vec<AnchorResult>> {
    let mut sorted = anchors.to_vec();
    sorted.sort_by(|a, b| catalog.item(*a).item_id.cmp(&catalog.item(*b).item_id));
    let jobs: Vec<(usize, usize)> = sorted
        .iter()
        .flat_map(|a| styles.iter().map(move |s| (*a, *s)))
        .collect();
    let run = |&(anchor, style): &(usize, usize)| -> Result<AnchorResult> {
        let cat = catalog.item(anchor).coarse;
        let template = templates
            .iter()
            .find(|t| t.anchor_category() == cat)
            .ok_or_else(|| Error::Generation(format!("no template starts with category {cat}")))?;
        Ok(AnchorResult {
            anchor,
            style,
            template: template.name.clone(),
            outfits: beam_search(anchor, template, style, store, catalog, params)?,
        })
    };
    if parallelism <= 1 {
        return jobs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {parallelism} workers: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub anchors: usize,
    pub candidates: usize,
    pub slots: usize,
    pub dim: usize,
    pub params: BeamParams,
    pub workers: Vec<usize>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            anchors: 600,
            candidates: 300,
            slots: 5,
            dim: 64,
            params: BeamParams::default(),
            workers: vec![1, 2, 4, 8],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTiming {
    pub workers: usize,
    pub seconds: f64,
    pub anchors_per_sec: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub available_cpus: usize,
    pub timings: Vec<WorkerTiming>,
    /// Whether every worker count produced the same results as the first.
    pub identical: bool,
}

impl BenchmarkReport {
    pub fn speedup_at(&self, workers: usize) -> Option<f64> {
        self.timings.iter().find(|t| t.workers == workers).map(|t| t.speedup)
    }
}

/// Times `generate_batch` on a random grid: `anchors` items in the anchor
/// category, `candidates` items in each other slot, random unit embeddings.
pub fn benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.slots < 2 || config.anchors == 0 || config.candidates == 0 || config.workers.is_empty() {
        return Err(Error::Config("benchmark needs ≥2 slots, anchors, candidates and worker counts".into()));
    }
    let categories = CategoryVocabulary::new((0..config.slots).map(|c| (format!("slot{c}"), Vec::new())).collect())?;
    let mut items = Vec::new();
    for c in 0..config.slots {
        let n = if c == 0 { config.anchors } else { config.candidates };
        for k in 0..n {
            items.push(Item {
                item_id: format!("c{c}-{k:06}"),
                coarse: c,
                fine: None,
                features: Vec::new(),
            });
        }
    }
    let catalog = Catalog::new(items, &categories)?;
    let slots: Vec<usize> = (0..config.slots).collect();
    let template = Template::new("bench", slots.clone(), config.slots)?;
    let dim = config.dim;
    let seed = config.seed;
    let store = EmbeddingStore::from_fn(&catalog, &slots, &[0], dim, || {
        Ok(move |item: usize, target: usize, _style: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((item as u64) << 8) | target as u64);
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(v.into_iter().map(|x| x / norm).collect())
        })
    })?;
    let anchors: Vec<usize> = catalog.in_coarse(0).to_vec();
    let templates = [template];
    let mut timings = Vec::new();
    let mut reference: Option<Vec<AnchorResult>> = None;
    let mut identical = true;
    for &workers in &config.workers {
        let start = Instant::now();
        let out = generate_batch(&anchors, &templates, &[0], &store, &catalog, config.params, workers)?;
        let seconds = start.elapsed().as_secs_f64();
        match &reference {
            None => reference = Some(out),
            Some(r) => identical &= *r == out,
        }
        timings.push(WorkerTiming {
            workers,
            seconds,
            anchors_per_sec: anchors.len() as f64 / seconds,
            speedup: 0.0,
        });
        log::info!("{workers} workers: {seconds:.3}s");
    }
    let base = timings
        .iter()
        .find(|t| t.workers == 1)
        .map_or(timings[0].seconds, |t| t.seconds);
    for t in &mut timings {
        t.speedup = base / t.seconds;
    }
    Ok(BenchmarkReport {
        config: config.clone(),
        available_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        timings,
        identical,
    })
}
