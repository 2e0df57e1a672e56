use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{generate_synthetic, Item, SynthConfig};
use crate::scanet::{EmbeddingQuery, ScaConfig, ScaNet};

fn gaussian(mu: Vec<f64>, log_var: Vec<f64>) -> StyleGaussian {
    StyleGaussian { mu, log_var }
}

#[test]
fn pooling_one_outfit_returns_its_moments() {
    let g = gaussian(vec![0.5, -1.0], vec![0.2, -0.3]);
    let p = pool_style(3, std::slice::from_ref(&g), PoolMode::Mean).unwrap();
    assert_eq!(p.mu, g.mu);
    assert_eq!(p.var, g.variance());
    assert_eq!(p.n_outfits, 1);
    let mixed = pool_style(3, &[g.clone(), g.clone(), g.clone()], PoolMode::Mixture).unwrap();
    for (a, b) in mixed.mu.iter().zip(&g.mu) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in mixed.var.iter().zip(g.variance()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn pooling_nothing_points_to_the_unit_gaussian() {
    let err = pool_style(2, &[], PoolMode::Mean).unwrap_err().to_string();
    assert!(err.contains("unit Gaussian"), "{err}");
}

#[test]
fn mixture_pooling_adds_mean_spread() {
    let a = gaussian(vec![1.0], vec![0.0]);
    let b = gaussian(vec![-1.0], vec![0.0]);
    let mean = pool_style(0, &[a.clone(), b.clone()], PoolMode::Mean).unwrap();
    let mix = pool_style(0, &[a, b], PoolMode::Mixture).unwrap();
    assert_eq!(mean.mu, vec![0.0]);
    assert_eq!(mean.var, vec![1.0]);
    assert_eq!(mix.var, vec![2.0]);
}

#[test]
fn generation_vector_modes() {
    let p = PooledStyle {
        style: 0,
        mu: vec![1.0, -2.0],
        var: vec![0.25, 4.0],
        n_outfits: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(style_vector_for_generation(&p, &mut rng, true), p.mu);
    let n = 50_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let v = style_vector_for_generation(&p, &mut rng, false);
        sum[0] += v[0];
        sum[1] += v[1];
    }
    for k in 0..2 {
        let se = (p.var[k] / n as f64).sqrt();
        assert!((sum[k] / n as f64 - p.mu[k]).abs() < 4.0 * se);
    }
}

#[test]
fn template_validation() {
    assert!(Template::new("t", vec![0], 3).is_err());
    assert!(Template::new("t", vec![0, 0], 3).is_err());
    assert!(Template::new("t", vec![0, 3], 3).is_err());
    assert!(Template::new("t", vec![2, 0, 1], 3).is_ok());
}

/// Toy instance: `sizes[c]` items in category `c`, random embeddings of width 4.
struct Toy {
    catalog: Catalog,
    store: EmbeddingStore,
    template: Template,
}

fn toy(sizes: &[usize], seed: u64) -> Toy {
    let n_cat = sizes.len();
    let categories = CategoryVocabulary::new((0..n_cat).map(|c| (format!("c{c}"), Vec::new())).collect()).unwrap();
    let mut items = Vec::new();
    for (c, n) in sizes.iter().enumerate() {
        for k in 0..*n {
            items.push(Item {
                item_id: format!("c{c}-{k}"),
                coarse: c,
                fine: None,
                features: vec![0.0],
            });
        }
    }
    let catalog = Catalog::new(items, &categories).unwrap();
    let slots: Vec<usize> = (0..n_cat).collect();
    let store = EmbeddingStore::from_fn(&catalog, &slots, &[0], 4, || {
        Ok(move |item: usize, target: usize, _: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((item * 16 + target) as u64);
            Ok((0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
    })
    .unwrap();
    let template = Template::new("toy", slots, n_cat).unwrap();
    Toy {
        catalog,
        store,
        template,
    }
}

fn pair(t: &Toy, a: usize, b: usize) -> f64 {
    let (ca, cb) = (t.catalog.item(a).coarse, t.catalog.item(b).coarse);
    let ea = t.store.get(a, cb, 0).unwrap();
    let eb = t.store.get(b, ca, 0).unwrap();
    -ea.iter().zip(eb).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
}

/// Best total score over every combination with the given anchor.
fn exhaustive(t: &Toy, anchor: usize) -> f64 {
    fn go(t: &Toy, slot: usize, chosen: &mut Vec<usize>, score: f64, best: &mut f64) {
        if slot == t.template.slots.len() {
            *best = best.max(score);
            return;
        }
        for &c in t.catalog.in_coarse(t.template.slots[slot]) {
            let add: f64 = chosen.iter().map(|i| pair(t, *i, c)).sum();
            chosen.push(c);
            go(t, slot + 1, chosen, score + add, best);
            chosen.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(t, 1, &mut vec![anchor], 0.0, &mut best);
    best
}

fn params(beam_width: usize, top_k: usize) -> BeamParams {
    BeamParams { beam_width, top_k }
}

#[test]
fn two_slots_rank_candidates_by_pair_score() {
    let t = toy(&[2, 6], 1);
    let out = beam_search(0, &t.template, 0, &t.store, &t.catalog, params(1, 4)).unwrap();
    let mut expected: Vec<(f64, usize)> = t.catalog.in_coarse(1).iter().map(|c| (pair(&t, 0, *c), *c)).collect();
    expected.sort_by(|a, b| b.0.total_cmp(&a.0));
    assert_eq!(out.len(), 4);
    for (o, e) in out.iter().zip(&expected) {
        assert_eq!(o.items, vec![0, e.1]);
        assert_eq!(o.score, e.0);
    }
}

#[test]
fn full_width_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..30 {
        let n_slots = rng.random_range(3..=4);
        let sizes: Vec<usize> = (0..n_slots).map(|_| rng.random_range(1..=5)).collect();
        let t = toy(&sizes, seed);
        let full = sizes.iter().product::<usize>();
        let out = beam_search(0, &t.template, 0, &t.store, &t.catalog, params(full, 1)).unwrap();
        assert!((out[0].score - exhaustive(&t, 0)).abs() < 1e-12);
    }
}

#[test]
fn outfits_follow_the_template_and_are_sorted() {
    let t = toy(&[3, 4, 5, 2], 9);
    let out = beam_search(1, &t.template, 0, &t.store, &t.catalog, params(3, 5)).unwrap();
    assert_eq!(out.len(), 5);
    for o in &out {
        let cats: Vec<usize> = o.items.iter().map(|i| t.catalog.item(*i).coarse).collect();
        assert_eq!(cats, t.template.slots);
        assert_eq!(o.items[0], 1);
    }
    assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn ties_fall_back_to_item_ids() {
    let t = toy(&[1, 3], 0);
    let flat = EmbeddingStore::from_fn(&t.catalog, &[0, 1], &[0], 2, || Ok(|_: usize, _: usize, _: usize| Ok(vec![0.0, 0.0])))
        .unwrap();
    let out = beam_search(0, &t.template, 0, &flat, &t.catalog, params(3, 3)).unwrap();
    let ids: Vec<&str> = out.iter().map(|o| t.catalog.item(o.items[1]).item_id.as_str()).collect();
    assert_eq!(ids, ["c1-0", "c1-1", "c1-2"]);
}

#[test]
fn search_errors() {
    let t = toy(&[2, 0, 3], 0);
    let err = beam_search(0, &t.template, 0, &t.store, &t.catalog, params(3, 1)).unwrap_err().to_string();
    assert!(err.contains("slot 1"), "{err}");
    let t = toy(&[2, 2], 0);
    assert!(beam_search(2, &t.template, 0, &t.store, &t.catalog, params(3, 1)).is_err());
    assert!(beam_search(0, &t.template, 5, &t.store, &t.catalog, params(3, 1)).is_err());
    assert!(beam_search(0, &t.template, 0, &t.store, &t.catalog, params(0, 1)).is_err());
}

#[test]
fn batch_results_ignore_worker_count() {
    let t = toy(&[12, 5, 5, 5], 4);
    let anchors: Vec<usize> = t.catalog.in_coarse(0).iter().rev().copied().collect();
    let templates = [t.template.clone()];
    let one = generate_batch(&anchors, &templates, &[0], &t.store, &t.catalog, params(3, 2), 1).unwrap();
    for workers in [2, 4, 8] {
        let many = generate_batch(&anchors, &templates, &[0], &t.store, &t.catalog, params(3, 2), workers).unwrap();
        assert_eq!(one, many);
    }
    let ids: Vec<&str> = one.iter().map(|r| t.catalog.item(r.anchor).item_id.as_str()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(generate_batch(&[], &templates, &[0], &t.store, &t.catalog, params(3, 2), 4)
        .unwrap()
        .is_empty());
}

#[test]
fn store_round_trips_through_disk() {
    let t = toy(&[3, 4, 2], 5);
    let dir = tempfile::tempdir().unwrap();
    t.store.save(dir.path()).unwrap();
    let back = EmbeddingStore::load(dir.path(), &t.catalog).unwrap();
    for item in 0..t.catalog.len() {
        for target in 0..3 {
            assert_eq!(t.store.get(item, target, 0), back.get(item, target, 0));
        }
    }
    assert!(t.store.get(0, 0, 0).is_none());
}

#[test]
fn precomputed_entries_match_direct_embedding() {
    let config = SynthConfig {
        n_outfits: 40,
        items_per_cluster: 2,
        feature_dim: 6,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&config, 3).unwrap().dataset;
    let sca = ScaNet::new(ScaConfig::new(6, 5), 1).unwrap();
    let pooled = vec![PooledStyle {
        style: 2,
        mu: vec![0.3; 64],
        var: vec![1.0; 64],
        n_outfits: 1,
    }];
    let store = precompute_embeddings(&data.catalog, &[0, 1, 2, 3, 4], &pooled, &sca, true, 0).unwrap();
    let item = data.catalog.item(7);
    let target = (item.coarse + 1) % 5;
    let direct = sca
        .embed(&EmbeddingQuery {
            features: &item.features,
            item_category: item.coarse,
            target_category: target,
            style: &pooled[0].mu,
        })
        .unwrap();
    assert_eq!(store.get(7, target, 2).unwrap(), direct.as_slice());
    assert!(store.get(7, target, 0).is_none());
    assert_eq!(store.style_vector(2).unwrap(), pooled[0].mu.as_slice());
}

#[test]
fn benchmark_reports_every_worker_count() {
    let config = BenchmarkConfig {
        anchors: 20,
        candidates: 10,
        slots: 3,
        workers: vec![1, 2],
        ..BenchmarkConfig::default()
    };
    let report = benchmark(&config).unwrap();
    assert!(report.identical);
    assert_eq!(report.timings.len(), 2);
    assert_eq!(report.speedup_at(1), Some(1.0));
}
