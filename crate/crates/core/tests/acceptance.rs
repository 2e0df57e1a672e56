//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{input_grad_error, param_grad_error, random_tensor, weighted_sum};
use outfitgen::dataset::{generate_synthetic, split, Catalog, CategoryVocabulary, Item, NegativeMode, SynthConfig};
use outfitgen::evaluation::{auroc, evaluate, outfit_score, EvalReport, StyleCompatModel};
use outfitgen::generation::{
    beam_search, benchmark, default_templates, generate_batch, pool_styles, precompute_embeddings, AnchorResult,
    BeamParams, BenchmarkConfig, EmbeddingStore, PoolMode, PooledStyle, Template,
};
use outfitgen::scanet::{EmbeddingQuery, ScaConfig, ScaNet};
use outfitgen::tensor::{Axis, Tape, Tensor, Var};
use outfitgen::training::{train_scanet, train_vsen, Stage1Record, Stage2Record, TrainConfig};
use outfitgen::vsen::{argmax, kl_on_tape, kl_to_unit, reparameterize_on_tape, StyleGaussian, Vsen, VsenConfig};

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;
const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// gradients

type OpCase = (&'static str, fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>));

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..6))
}

fn unary(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<Tensor> {
    let (r, c) = shape(rng);
    vec![random_tensor(rng, r, c, lo, hi)]
}

fn binary(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = shape(rng);
    vec![random_tensor(rng, r, c, -2.0, 2.0), random_tensor(rng, r, c, -2.0, 2.0)]
}

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", |rng| {
            let (r, k) = shape(rng);
            let c = rng.random_range(1..5);
            let s = rng.random();
            (vec![random_tensor(rng, r, k, -1.0, 1.0), random_tensor(rng, k, c, -1.0, 1.0)], Box::new(move |t, v| {
                let o = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("add", |rng| {
            let s = rng.random();
            (binary(rng), Box::new(move |t, v| {
                let o = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("sub", |rng| {
            let s = rng.random();
            (binary(rng), Box::new(move |t, v| {
                let o = t.sub(v[0], v[1]).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("mul", |rng| {
            let s = rng.random();
            (binary(rng), Box::new(move |t, v| {
                let o = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("add_bias", |rng| {
            let (r, c) = shape(rng);
            let s = rng.random();
            (vec![random_tensor(rng, r, c, -1.0, 1.0), random_tensor(rng, 1, c, -1.0, 1.0)], Box::new(move |t, v| {
                let o = t.add_bias(v[0], v[1]).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("scale", |rng| {
            let (s, f) = (rng.random(), rng.random_range(-3.0..3.0));
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.scale(v[0], f);
                weighted_sum(t, o, s)
            }))
        }),
        ("add_scalar", |rng| {
            let (s, f) = (rng.random(), rng.random_range(-3.0..3.0));
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.add_scalar(v[0], f);
                weighted_sum(t, o, s)
            }))
        }),
        ("exp", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.exp(v[0]);
                weighted_sum(t, o, s)
            }))
        }),
        ("log", |rng| {
            let s = rng.random();
            (unary(rng, 0.3, 3.0), Box::new(move |t, v| {
                let o = t.log(v[0]);
                weighted_sum(t, o, s)
            }))
        }),
        ("relu", |rng| {
            let s = rng.random();
            let mut x = unary(rng, -2.0, 2.0);
            // keep clear of the kink so central differences are valid
            for v in x[0].data_mut() {
                if v.abs() < 0.05 {
                    *v += 0.1_f64.copysign(*v);
                }
            }
            (x, Box::new(move |t, v| {
                let o = t.relu(v[0]);
                weighted_sum(t, o, s)
            }))
        }),
        ("softmax rows", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.softmax(v[0], Axis::Rows).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("softmax cols", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.softmax(v[0], Axis::Cols).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("mean", |rng| (unary(rng, -2.0, 2.0), Box::new(|t, v| t.mean(v[0])))),
        ("sum", |rng| {
            (unary(rng, -2.0, 2.0), Box::new(|t, v| {
                let o = t.exp(v[0]);
                t.sum(o)
            }))
        }),
        ("mean_axis rows", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.mean_axis(v[0], Axis::Rows).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("mean_axis cols", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.mean_axis(v[0], Axis::Cols).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("concat cols", |rng| {
            let r = rng.random_range(1..4);
            let (c1, c2) = (rng.random_range(1..4), rng.random_range(1..4));
            let s = rng.random();
            (vec![random_tensor(rng, r, c1, -1.0, 1.0), random_tensor(rng, r, c2, -1.0, 1.0)], Box::new(move |t, v| {
                let o = t.concat(&[v[0], v[1]], Axis::Cols).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("concat rows", |rng| {
            let c = rng.random_range(1..4);
            let (r1, r2) = (rng.random_range(1..4), rng.random_range(1..4));
            let s = rng.random();
            (vec![random_tensor(rng, r1, c, -1.0, 1.0), random_tensor(rng, r2, c, -1.0, 1.0)], Box::new(move |t, v| {
                let o = t.concat(&[v[0], v[1]], Axis::Rows).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("slice", |rng| {
            let (r, c) = (rng.random_range(1..4), rng.random_range(2..6));
            let start = rng.random_range(0..c - 1);
            let len = rng.random_range(1..=c - start);
            let s = rng.random();
            (vec![random_tensor(rng, r, c, -1.0, 1.0)], Box::new(move |t, v| {
                let o = t.slice(v[0], Axis::Cols, start, len).unwrap();
                weighted_sum(t, o, s)
            }))
        }),
        ("transpose", |rng| {
            let s = rng.random();
            (unary(rng, -2.0, 2.0), Box::new(move |t, v| {
                let o = t.transpose(v[0]);
                let o = t.exp(o);
                weighted_sum(t, o, s)
            }))
        }),
        ("sq_distance", |rng| {
            let c = rng.random_range(1..8);
            (vec![random_tensor(rng, 1, c, -1.0, 1.0), random_tensor(rng, 1, c, -1.0, 1.0)], Box::new(|t, v| {
                t.sq_distance(v[0], v[1]).unwrap()
            }))
        }),
        ("layer_norm", |rng| {
            let (r, c) = (rng.random_range(1..4), rng.random_range(2..6));
            let s = rng.random();
            (
                vec![
                    random_tensor(rng, r, c, -2.0, 2.0),
                    random_tensor(rng, 1, c, 0.5, 1.5),
                    random_tensor(rng, 1, c, -0.5, 0.5),
                ],
                Box::new(move |t, v| {
                    let o = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                    weighted_sum(t, o, s)
                }),
            )
        }),
        ("cross_entropy", |rng| {
            let (r, c) = (rng.random_range(1..4), rng.random_range(2..6));
            let targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
            (vec![random_tensor(rng, r, c, -2.0, 2.0)], Box::new(move |t, v| t.cross_entropy(v[0], &targets).unwrap()))
        }),
    ]
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn gradient_correctness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_op = (0.0_f64, "");
    for (name, make) in op_cases() {
        for _ in 0..INSTANCES {
            let (inputs, f) = make(&mut rng);
            let e = input_grad_error(&inputs, f.as_ref());
            if e > worst_op.0 {
                worst_op = (e, name);
            }
        }
    }

    // encoder head: cross-entropy on a reparameterized sample plus weighted KL
    let mut worst_vsen: f64 = 0.0;
    for k in 0..INSTANCES {
        let mut vsen = Vsen::new(VsenConfig::new(6, 4), k as u64).unwrap();
        let n = rng.random_range(2..6);
        let items = random_features(&mut rng, n, 6);
        let eps: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let style = rng.random_range(0..4);
        let loss = move |m: &Vsen, tape: &mut Tape| {
            let bound = m.params().bind(tape).unwrap();
            let rows: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
            let (mu, lv) = m.encode_on_tape(tape, &bound, &rows).unwrap();
            let z = reparameterize_on_tape(tape, mu, lv, &eps).unwrap();
            let logits = m.classify_on_tape(tape, &bound, z).unwrap();
            let ce = tape.cross_entropy(logits, &[style]).unwrap();
            let kl = kl_on_tape(tape, mu, lv).unwrap();
            let kl = tape.scale(kl, 0.05);
            (tape.add(ce, kl).unwrap(), bound)
        };
        worst_vsen = worst_vsen.max(param_grad_error(&mut vsen, Vsen::params_mut, &loss, 40, k as u64));
    }

    // compatibility head: triplet and wrong-style hinges, margins large enough to stay active
    let mut worst_sca: f64 = 0.0;
    for k in 0..INSTANCES {
        let config = ScaConfig {
            margin: 50.0,
            margin_s: 50.0,
            ..ScaConfig::new(6, 4)
        };
        let mut sca = ScaNet::new(config, k as u64).unwrap();
        let f = random_features(&mut rng, 3, 6);
        let z: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ca, cp) = (rng.random_range(0..2), rng.random_range(2..4));
        let loss = move |m: &ScaNet, tape: &mut Tape| {
            let bound = m.params().bind(tape).unwrap();
            let a = EmbeddingQuery {
                features: &f[0],
                item_category: ca,
                target_category: cp,
                style: &z,
            };
            let p = EmbeddingQuery {
                features: &f[1],
                item_category: cp,
                target_category: ca,
                style: &z,
            };
            let n = EmbeddingQuery { features: &f[2], ..p };
            let trip = m.triplet_on_tape(tape, &bound, &a, &p, &n).unwrap();
            let ws = m.wrong_style_on_tape(tape, &bound, &a, &p, &w).unwrap();
            let ws = tape.scale(ws, 0.5);
            (tape.add(trip, ws).unwrap(), bound)
        };
        worst_sca = worst_sca.max(param_grad_error(&mut sca, ScaNet::params_mut, &loss, 40, k as u64));
    }
    let elapsed = started.elapsed();
    let pass = worst_op.0 < GRAD_TOL && worst_vsen < GRAD_TOL && worst_sca < GRAD_TOL && elapsed < Duration::from_secs(60);
    verdict(
        pass,
        format!(
            "{} ops x {INSTANCES} instances, worst op error {:.2e} ({}); encoder head {:.2e}; compatibility head {:.2e}; {:.1}s",
            op_cases().len(),
            worst_op.0,
            worst_op.1,
            worst_vsen,
            worst_sca,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// encoder contracts

/// 2-d KL to N(0, I) by composite Simpson quadrature over ±10 standard deviations.
fn kl_quadrature(g: &StyleGaussian) -> f64 {
    let n = 800;
    let sd: Vec<f64> = g.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let axis = |d: usize| -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = (g.mu[d] - 10.0 * sd[d], g.mu[d] + 10.0 * sd[d]);
        let h = (hi - lo) / n as f64;
        let xs = (0..=n).map(|i| lo + i as f64 * h).collect();
        let ws = (0..=n)
            .map(|i| {
                let c = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * h / 3.0
            })
            .collect();
        (xs, ws)
    };
    let (xs, wx) = axis(0);
    let (ys, wy) = axis(1);
    let log_p = |x: f64, d: usize| {
        let v = sd[d] * sd[d];
        -0.5 * (x - g.mu[d]).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
    };
    let log_q = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (x, a) in xs.iter().zip(&wx) {
        let (lpx, lqx) = (log_p(*x, 0), log_q(*x));
        for (y, b) in ys.iter().zip(&wy) {
            let lp = lpx + log_p(*y, 1);
            total += a * b * lp.exp() * (lp - lqx - log_q(*y));
        }
    }
    total
}

fn encoder_contracts() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let vsen = Vsen::new(VsenConfig::new(8, 7), 3).unwrap();
    let mut permutation_ok = true;
    let mut checked = 0;
    for n in 1..=7 {
        for _ in 0..3 {
            let items = random_features(&mut rng, n, 8);
            let rows: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
            let reference = vsen.encode(&rows).unwrap();
            let bits = |g: &StyleGaussian| g.mu.iter().chain(&g.log_var).map(|v| v.to_bits()).collect::<Vec<_>>();
            let perms: Vec<Vec<&[f64]>> = if n <= 5 {
                rows.iter().copied().permutations(n).collect()
            } else {
                (0..50)
                    .map(|_| {
                        let mut p = rows.clone();
                        rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
                        p
                    })
                    .collect()
            };
            for p in perms {
                permutation_ok &= bits(&vsen.encode(&p).unwrap()) == bits(&reference);
                checked += 1;
            }
        }
    }

    let zero = StyleGaussian {
        mu: vec![0.0; 64],
        log_var: vec![0.0; 64],
    };
    let mut tape = Tape::new();
    let (m, l) = (tape.constant_row(&zero.mu), tape.constant_row(&zero.log_var));
    let kl_tape = kl_on_tape(&mut tape, m, l).unwrap();
    let zero_exact = kl_to_unit(&zero) == 0.0 && tape.scalar(kl_tape).unwrap() == 0.0;
    let mut nonneg = true;
    let mut positive_off_zero = true;
    for _ in 0..1000 {
        let g = StyleGaussian {
            mu: (0..64).map(|_| rng.random_range(-2.0..2.0)).collect(),
            log_var: (0..64).map(|_| rng.random_range(-3.0..3.0)).collect(),
        };
        let kl = kl_to_unit(&g);
        nonneg &= kl >= 0.0;
        positive_off_zero &= kl > 0.0;
    }

    let mut worst_quad: f64 = 0.0;
    for _ in 0..20 {
        let g = StyleGaussian {
            mu: (0..2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            log_var: (0..2).map(|_| rng.random_range(-1.5..1.5)).collect(),
        };
        worst_quad = worst_quad.max((kl_to_unit(&g) - kl_quadrature(&g)).abs());
    }
    let pass = permutation_ok && zero_exact && nonneg && positive_off_zero && worst_quad < 1e-6;
    verdict(
        pass,
        format!(
            "permutations bitwise equal: {permutation_ok} ({checked} orderings); KL(0,0) exactly 0: {zero_exact}; \
             KL > 0 on 1000 random: {}; closed form vs quadrature max |diff| {worst_quad:.2e}",
            nonneg && positive_off_zero
        ),
    )
}

// ---------------------------------------------------------------------------
// synthetic end-to-end pipeline

#[derive(Debug, PartialEq)]
struct PipelineRun {
    stage1: Vec<Stage1Record>,
    stage2: Vec<Stage2Record>,
    style_accuracy: f64,
    report: EvalReport,
    wrong_style_wins: f64,
    generated: Vec<AnchorResult>,
    elapsed: Duration,
}

fn run_pipeline(seed: u64) -> PipelineRun {
    let started = Instant::now();
    let synth = generate_synthetic(&SynthConfig::default(), seed).unwrap();
    let data = synth.dataset;
    let parts = split(&data.outfits, [0.8, 0.1, 0.1], seed).unwrap();
    let config = TrainConfig {
        seed,
        ..TrainConfig::synthetic()
    };
    let (vsen, stage1) = train_vsen(&parts.train, &parts.val, &data.catalog, data.styles.len(), &config).unwrap();
    let (sca, stage2) = train_scanet(&parts.train, &parts.val, &data.catalog, data.categories.num_coarse(), &vsen, &config).unwrap();

    let features = |ids: &[String]| -> Vec<usize> { data.catalog.resolve(ids).unwrap() };
    let hits = parts
        .test
        .iter()
        .filter(|o| {
            let rows: Vec<&[f64]> = features(&o.item_ids)
                .iter()
                .map(|i| data.catalog.item(*i).features.as_slice())
                .collect();
            let g = vsen.encode(&rows).unwrap();
            argmax(&vsen.classify_style(&g.mu).unwrap()) == o.style
        })
        .count();
    let style_accuracy = hits as f64 / parts.test.len() as f64;

    let model = StyleCompatModel::new(&vsen, &sca, &data.catalog);
    let report = evaluate(&model, &parts.test, &data.catalog, &[NegativeMode::Soft, NegativeMode::Hard], 5, seed).unwrap();

    let pooled: Vec<PooledStyle> = pool_styles(&parts.train, &data.catalog, &vsen, PoolMode::Mean)
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wins = parts
        .test
        .iter()
        .filter(|o| {
            let items = features(&o.item_ids);
            let own = pooled.iter().find(|p| p.style == o.style).unwrap();
            let others: Vec<&PooledStyle> = pooled.iter().filter(|p| p.style != o.style).collect();
            let wrong = others.choose(&mut rng).unwrap();
            outfit_score(&items, &own.mu, &sca, &data.catalog).unwrap()
                > outfit_score(&items, &wrong.mu, &sca, &data.catalog).unwrap()
        })
        .count();
    let wrong_style_wins = wins as f64 / parts.test.len() as f64;

    let categories: Vec<usize> = (0..data.categories.num_coarse()).collect();
    let store = precompute_embeddings(&data.catalog, &categories, &pooled, &sca, true, seed).unwrap();
    let templates = default_templates(&data.categories);
    let anchors: Vec<usize> = (0..data.catalog.len()).step_by(37).collect();
    let styles: Vec<usize> = pooled.iter().map(|p| p.style).collect();
    let generated = generate_batch(&anchors, &templates, &styles, &store, &data.catalog, BeamParams::default(), 2).unwrap();
    PipelineRun {
        stage1,
        stage2,
        style_accuracy,
        report,
        wrong_style_wins,
        generated,
        elapsed: started.elapsed(),
    }
}

fn pipeline() -> &'static PipelineRun {
    static RUN: OnceLock<PipelineRun> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(SEED))
}

fn synthetic_end_to_end() -> Verdict {
    let run = pipeline();
    let sn = run.report.sn.as_ref().unwrap();
    let hn = run.report.hn.as_ref().unwrap();
    let pass = run.style_accuracy > 0.85
        && sn.fitb.mean > 45.0
        && sn.auc.mean > 85.0
        && hn.fitb.mean <= sn.fitb.mean
        && hn.auc.mean <= sn.auc.mean
        && run.elapsed < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "style accuracy {:.3}; SN FITB {} AUC {}; HN FITB {} AUC {}; {:.1}s",
            run.style_accuracy,
            sn.fitb,
            sn.auc,
            hn.fitb,
            hn.auc,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn wrong_style_effect() -> Verdict {
    let run = pipeline();
    verdict(
        run.wrong_style_wins > 0.70,
        format!("true pooled style scores higher for {:.1}% of test outfits", 100.0 * run.wrong_style_wins),
    )
}

fn determinism() -> Verdict {
    let first = pipeline();
    let second = run_pipeline(SEED);
    let same_train = first.stage1 == second.stage1 && first.stage2 == second.stage2;
    let same_eval = first.report == second.report;
    let same_gen = first.generated == second.generated;
    verdict(
        same_train && same_eval && same_gen,
        format!(
            "training curves identical: {same_train}; eval reports identical: {same_eval}; \
             generation identical: {same_gen} ({} results)",
            first.generated.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// beam search oracle

struct Instance {
    catalog: Catalog,
    store: EmbeddingStore,
    template: Template,
}

fn instance(rng: &mut ChaCha8Rng, seed: u64) -> Instance {
    let slots = rng.random_range(3..=4);
    let sizes: Vec<usize> = (0..slots).map(|s| if s == 0 { 1 } else { rng.random_range(2..=5) }).collect();
    let categories = CategoryVocabulary::new((0..slots).map(|c| (format!("c{c}"), Vec::new())).collect()).unwrap();
    let items = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, n)| {
            (0..*n).map(move |k| Item {
                item_id: format!("c{c}-{k}"),
                coarse: c,
                fine: None,
                features: vec![0.0],
            })
        })
        .collect();
    let catalog = Catalog::new(items, &categories).unwrap();
    let order: Vec<usize> = (0..slots).collect();
    let store = EmbeddingStore::from_fn(&catalog, &order, &[0], 8, || {
        Ok(move |item: usize, target: usize, _: usize| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream((item * 8 + target) as u64);
            Ok((0..8).map(|_| r.random_range(-1.0..1.0)).collect())
        })
    })
    .unwrap();
    let template = Template::new("oracle", order, slots).unwrap();
    Instance {
        catalog,
        store,
        template,
    }
}

fn exhaustive_best(inst: &Instance) -> f64 {
    let pools: Vec<&[usize]> = inst.template.slots.iter().map(|c| inst.catalog.in_coarse(*c)).collect();
    let pair = |a: usize, b: usize| {
        let (ca, cb) = (inst.catalog.item(a).coarse, inst.catalog.item(b).coarse);
        let (ea, eb) = (inst.store.get(a, cb, 0).unwrap(), inst.store.get(b, ca, 0).unwrap());
        -ea.iter().zip(eb).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
    };
    pools
        .iter()
        .map(|p| p.iter().copied())
        .multi_cartesian_product()
        .map(|combo| combo.iter().tuple_combinations().map(|(a, b)| pair(*a, *b)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn beam_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut full_hits, mut width3_hits, mut monotone) = (0, 0, 0);
    let n: usize = 100;
    for k in 0..n {
        let inst = instance(&mut rng, k as u64);
        let best = exhaustive_best(&inst);
        let full: usize = inst.template.slots.iter().map(|c| inst.catalog.in_coarse(*c).len()).product();
        let top1 = |width: usize| {
            let params = BeamParams {
                beam_width: width,
                top_k: 1,
            };
            beam_search(0, &inst.template, 0, &inst.store, &inst.catalog, params).unwrap()[0].score
        };
        let scores: Vec<f64> = (1..=full).map(top1).collect();
        full_hits += usize::from((scores[full - 1] - best).abs() < 1e-12);
        width3_hits += usize::from((scores[2.min(full - 1)] - best).abs() < 1e-12);
        monotone += usize::from(scores.windows(2).all(|w| w[1] >= w[0]));
    }
    verdict(
        full_hits == n && width3_hits * 100 >= 90 * n && monotone == n,
        format!(
            "full width optimal {full_hits}/{n}; width 3 optimal {width3_hits}/{n}; non-decreasing in width {monotone}/{n}"
        ),
    )
}

// ---------------------------------------------------------------------------
// AUROC

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (s_pos, _) in scores.iter().zip(labels).filter(|(_, l)| **l) {
        for (s_neg, _) in scores.iter().zip(labels).filter(|(_, l)| !**l) {
            pairs += 1.0;
            wins += match s_pos.total_cmp(s_neg) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    wins / pairs
}

fn auroc_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.1).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            continue;
        }
        worst = worst.max((auroc(&scores, &labels).unwrap() - brute_force_auc(&scores, &labels)).abs());
        cases += 1;
    }
    verdict(worst < 1e-9, format!("{cases} tied samples with n <= 200, max |diff| {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// parallel generation

fn parallel_generation() -> Verdict {
    let report = benchmark(&BenchmarkConfig::default()).unwrap();
    let speedup = report.speedup_at(4).unwrap_or(0.0);
    let timings = report
        .timings
        .iter()
        .map(|t| format!("{}w {:.2}s", t.workers, t.seconds))
        .join(", ");
    verdict(
        report.identical && speedup >= 2.0,
        format!(
            "outputs identical across workers: {}; speedup at 4 workers {speedup:.2}x on {} available CPU(s) [{timings}]",
            report.identical, report.available_cpus
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("gradient correctness", gradient_correctness),
        ("encoder contracts", encoder_contracts),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("wrong-style effect", wrong_style_effect),
        ("beam-search oracle", beam_oracle),
        ("AUROC correctness", auroc_correctness),
        ("parallel generation", parallel_generation),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !outcome.pass {
            failures += 1;
        }
        println!("{} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
