use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use outfitgen::dataset::{generate_synthetic, split, Dataset, NegativeMode, SynthConfig};
use outfitgen::evaluation::{evaluate, EvalStyle, StyleCompatModel};
use outfitgen::generation::{
    beam_search, benchmark, default_templates, load_templates, pool_styles, precompute_embeddings, BeamParams,
    BenchmarkConfig, EmbeddingStore, PoolMode, Template,
};
use outfitgen::scanet::ScaNet;
use outfitgen::training::{train_scanet, train_vsen, write_metrics_csv, TrainConfig};
use outfitgen::vsen::Vsen;
use outfitgen_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "outfitgen", version, about = "Style-guided outfit generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Learning rates sized for the synthetic catalog.
    Synthetic,
    /// Library defaults.
    Default,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modes {
    Sn,
    Hn,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pooling {
    Mean,
    Mixture,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its train/val/test split.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the set encoder and style classifier.
    TrainVsen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Synthetic)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the compatibility network against a frozen encoder.
    TrainSca {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vsen: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Synthetic)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Fill-in-the-blank accuracy and compatibility AUC on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vsen: PathBuf,
        #[arg(long)]
        sca: PathBuf,
        #[arg(long, value_enum, default_value_t = Modes::Both)]
        mode: Modes,
        #[arg(long, default_value_t = 5)]
        sets: usize,
        /// Score with a sampled style vector instead of the mean.
        #[arg(long)]
        sample_style: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool per-style moments and embed the catalog for generation.
    Precompute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vsen: PathBuf,
        #[arg(long)]
        sca: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Pooling::Mean)]
        pooling: Pooling,
        /// Draw one style vector per style instead of using the pooled mean.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate outfits around one anchor item.
    Generate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        anchor: String,
        /// Style name, or "all".
        #[arg(long, default_value = "all")]
        style: String,
        /// Template name from --templates, or comma-separated categories.
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        beam: usize,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Time batch generation across worker counts.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        /// JSON service settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        addr: Option<std::net::SocketAddr>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn train_config(path: Option<&Path>, preset: Preset) -> Result<TrainConfig> {
    let config = match path {
        Some(p) => TrainConfig::load(p)?,
        None => match preset {
            Preset::Synthetic => TrainConfig::synthetic(),
            Preset::Default => TrainConfig::default(),
        },
    };
    config.validate()?;
    Ok(config)
}

fn load_data(dir: &Path, seed: u64) -> Result<(Dataset, outfitgen::dataset::Split)> {
    let data = Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let parts = data.load_split(dir, seed)?;
    Ok((data, parts))
}

fn style_index(data: &Dataset, name: &str) -> Result<usize> {
    data.styles
        .names()
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
        .with_context(|| format!("unknown style {name:?}; known: {}", data.styles.names().join(", ")))
}

fn pick_template(data: &Dataset, anchor_cat: usize, choice: Option<&str>, file: Option<&Path>) -> Result<Template> {
    let templates = match file {
        Some(p) => load_templates(p, &data.categories)?,
        None => default_templates(&data.categories),
    };
    let template = match choice {
        None => templates
            .into_iter()
            .find(|t| t.anchor_category() == anchor_cat)
            .context("no template starts with the anchor's category")?,
        Some(s) if s.contains(',') => {
            let slots: Vec<String> = s.split(',').map(|x| x.trim().to_string()).collect();
            Template::from_names("custom", &slots, &data.categories)?
        }
        Some(s) => templates
            .into_iter()
            .find(|t| t.name == s)
            .with_context(|| format!("no template named {s:?}"))?,
    };
    Ok(template)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, config, seed } => {
            let config = match config {
                Some(p) => read_json(&p)?,
                None => SynthConfig::default(),
            };
            let data = generate_synthetic(&config, seed)?.dataset;
            data.save(&out)?;
            let parts = split(&data.outfits, [0.8, 0.1, 0.1], seed)?;
            parts.ids().save(out.join("split.json"))?;
            println!(
                "{} items, {} outfits ({} train / {} val / {} test) in {}",
                data.catalog.len(),
                data.outfits.len(),
                parts.train.len(),
                parts.val.len(),
                parts.test.len(),
                out.display()
            );
        }
        Command::TrainVsen {
            data,
            config,
            preset,
            out,
            metrics,
        } => {
            let config = train_config(config.as_deref(), preset)?;
            let (data, parts) = load_data(&data, config.seed)?;
            let (vsen, records) = train_vsen(&parts.train, &parts.val, &data.catalog, data.styles.len(), &config)?;
            vsen.save(&out)?;
            if let Some(path) = metrics {
                write_metrics_csv(path, &records)?;
            }
            if let Some(last) = records.last() {
                println!(
                    "epoch {}: loss {:.4}, val accuracy {}",
                    last.epoch,
                    last.loss,
                    last.val_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
                );
            }
        }
        Command::TrainSca {
            data,
            vsen,
            config,
            preset,
            out,
            metrics,
        } => {
            let config = train_config(config.as_deref(), preset)?;
            let (data, parts) = load_data(&data, config.seed)?;
            let vsen = Vsen::load(&vsen)?;
            let (sca, records) =
                train_scanet(&parts.train, &parts.val, &data.catalog, data.categories.num_coarse(), &vsen, &config)?;
            sca.save(&out)?;
            if let Some(path) = metrics {
                write_metrics_csv(path, &records)?;
            }
            if let Some(last) = records.last() {
                println!(
                    "epoch {}: loss {:.4}, val FITB {}",
                    last.epoch,
                    last.loss,
                    last.val_fitb.map_or("-".into(), |a| format!("{a:.2}"))
                );
            }
        }
        Command::Eval {
            data,
            vsen,
            sca,
            mode,
            sets,
            sample_style,
            seed,
            out,
        } => {
            let (data, parts) = load_data(&data, seed)?;
            let vsen = Vsen::load(&vsen)?;
            let sca = ScaNet::load(&sca)?;
            let mut model = StyleCompatModel::new(&vsen, &sca, &data.catalog);
            if sample_style {
                model.style = EvalStyle::Sampled(seed);
            }
            let modes: &[NegativeMode] = match mode {
                Modes::Sn => &[NegativeMode::Soft],
                Modes::Hn => &[NegativeMode::Hard],
                Modes::Both => &[NegativeMode::Soft, NegativeMode::Hard],
            };
            let report = evaluate(&model, &parts.test, &data.catalog, modes, sets, seed)?;
            println!("{report}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
        }
        Command::Precompute {
            data,
            vsen,
            sca,
            out,
            pooling,
            sample,
            seed,
        } => {
            let (data, parts) = load_data(&data, seed)?;
            let vsen = Vsen::load(&vsen)?;
            let sca = ScaNet::load(&sca)?;
            let mode = match pooling {
                Pooling::Mean => PoolMode::Mean,
                Pooling::Mixture => PoolMode::Mixture,
            };
            let pooled = pool_styles(&parts.train, &data.catalog, &vsen, mode)?;
            for (style, p) in pooled.iter().enumerate() {
                if p.is_none() {
                    log::warn!(
                        "style {} has no training outfits and is left out of the store",
                        data.styles.name(style).unwrap_or("?")
                    );
                }
            }
            let pooled: Vec<_> = pooled.into_iter().flatten().collect();
            let categories: Vec<usize> = (0..data.categories.num_coarse()).collect();
            let store = precompute_embeddings(&data.catalog, &categories, &pooled, &sca, !sample, seed)?;
            store.save(&out)?;
            println!("{} styles, {} categories stored in {}", store.styles().len(), categories.len(), out.display());
        }
        Command::Generate {
            data,
            store,
            anchor,
            style,
            template,
            templates,
            beam,
            topk,
        } => {
            let data = Dataset::load(&data)?;
            let store = EmbeddingStore::load(&store, &data.catalog)?;
            let anchor_index = data.catalog.index_of(&anchor).with_context(|| format!("unknown item {anchor:?}"))?;
            let anchor_cat = data.catalog.item(anchor_index).coarse;
            let template = pick_template(&data, anchor_cat, template.as_deref(), templates.as_deref())?;
            let styles: Vec<usize> = if style.eq_ignore_ascii_case("all") {
                store.styles().to_vec()
            } else {
                vec![style_index(&data, &style)?]
            };
            if beam == 0 || topk == 0 {
                bail!("--beam and --topk must be at least 1");
            }
            let params = BeamParams {
                beam_width: beam,
                top_k: topk,
            };
            for s in styles {
                println!("{}:", data.styles.name(s).unwrap_or("?"));
                for outfit in beam_search(anchor_index, &template, s, &store, &data.catalog, params)? {
                    let ids: Vec<&str> = outfit.items.iter().map(|i| data.catalog.item(*i).item_id.as_str()).collect();
                    println!("  {:>9.4}  {}", outfit.score, ids.join(" "));
                }
            }
        }
        Command::Benchmark { config, out } => {
            let config: BenchmarkConfig = match config {
                Some(p) => read_json(&p)?,
                None => BenchmarkConfig::default(),
            };
            let report = benchmark(&config)?;
            println!("{} CPUs available", report.available_cpus);
            for t in &report.timings {
                println!(
                    "{:>3} workers  {:>8.3}s  {:>9.1} anchors/s  {:.2}x",
                    t.workers, t.seconds, t.anchors_per_sec, t.speedup
                );
            }
            println!("identical results: {}", report.identical);
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
        }
        Command::Serve {
            config,
            addr,
            data,
            store,
            static_dir,
        } => {
            let mut config: ServiceConfig = match config {
                Some(p) => read_json(&p)?,
                None => ServiceConfig::default(),
            };
            if let Some(a) = addr {
                config.addr = a;
            }
            if let Some(d) = data {
                config.data_dir = d;
            }
            if let Some(s) = store {
                config.store_dir = s;
            }
            if static_dir.is_some() {
                config.static_dir = static_dir;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(outfitgen_service::serve(config))?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
