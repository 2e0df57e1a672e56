use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use outfitgen::dataset::{Catalog, CategoryVocabulary, Dataset, StyleVocabulary};
use outfitgen::generation::{default_templates, load_templates, BeamParams, EmbeddingStore, Template};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::error::ServiceError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub store_dir: PathBuf,
    /// `{"name": ["category", ...]}`; one template per category when absent.
    pub templates: Option<PathBuf>,
    /// `{"category": ["style", ...]}`; every style is allowed when absent.
    pub legitimate_styles: Option<PathBuf>,
    /// Static files served for paths outside the API.
    pub static_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub beam: BeamParams,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            store_dir: PathBuf::from("store"),
            templates: None,
            legitimate_styles: None,
            static_dir: None,
            max_in_flight: 8,
            beam: BeamParams::default(),
        }
    }
}

/// Immutable artifacts shared by every request.
pub struct AppState {
    pub styles: StyleVocabulary,
    pub categories: CategoryVocabulary,
    pub catalog: Catalog,
    pub store: EmbeddingStore,
    pub templates: Vec<Template>,
    /// Allowed style indices per coarse category.
    pub legitimate: Vec<Vec<usize>>,
    pub beam: BeamParams,
    pub limiter: Arc<Semaphore>,
}

impl AppState {
    /// Every style allowed for every category, one template per category.
    pub fn new(styles: StyleVocabulary, categories: CategoryVocabulary, catalog: Catalog, store: EmbeddingStore) -> Self {
        let all: Vec<usize> = (0..styles.len()).collect();
        Self {
            legitimate: vec![all; categories.num_coarse()],
            templates: default_templates(&categories),
            styles,
            categories,
            catalog,
            store,
            beam: BeamParams::default(),
            limiter: Arc::new(Semaphore::new(ServiceConfig::default().max_in_flight)),
        }
    }

    pub fn with_templates(mut self, templates: Vec<Template>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_legitimate(mut self, legitimate: Vec<Vec<usize>>) -> Result<Self, ServiceError> {
        if legitimate.len() != self.categories.num_coarse() {
            return Err(ServiceError::Config("legitimate styles must cover every category".into()));
        }
        self.legitimate = legitimate;
        Ok(self)
    }

    pub fn with_beam(mut self, beam: BeamParams) -> Self {
        self.beam = beam;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Result<Self, ServiceError> {
        if max_in_flight == 0 {
            return Err(ServiceError::Config("max_in_flight must be at least 1".into()));
        }
        self.limiter = Arc::new(Semaphore::new(max_in_flight));
        Ok(self)
    }

    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let Dataset {
            styles,
            categories,
            catalog,
            ..
        } = Dataset::load(&config.data_dir)?;
        let store = EmbeddingStore::load(&config.store_dir, &catalog)?;
        let templates = match &config.templates {
            Some(path) => load_templates(path, &categories)?,
            None => default_templates(&categories),
        };
        let legitimate = match &config.legitimate_styles {
            Some(path) => Some(load_legitimate(path, &styles, &categories)?),
            None => None,
        };
        let mut state = Self::new(styles, categories, catalog, store)
            .with_templates(templates)
            .with_beam(config.beam)
            .with_max_in_flight(config.max_in_flight)?;
        if let Some(l) = legitimate {
            state = state.with_legitimate(l)?;
        }
        Ok(state)
    }
}

/// Reads a category → style-name map; categories left out allow every style.
fn load_legitimate(
    path: &std::path::Path,
    styles: &StyleVocabulary,
    categories: &CategoryVocabulary,
) -> Result<Vec<Vec<usize>>, ServiceError> {
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    let mut out: Vec<Vec<usize>> = vec![(0..styles.len()).collect(); categories.num_coarse()];
    for (category, names) in raw {
        let c = categories
            .coarse_index(&category)
            .ok_or_else(|| ServiceError::Config(format!("unknown category {category:?} in legitimate styles")))?;
        out[c] = names
            .iter()
            .map(|n| {
                styles
                    .index_of(n)
                    .ok_or_else(|| ServiceError::Config(format!("unknown style {n:?} in legitimate styles")))
            })
            .collect::<Result<_, _>>()?;
    }
    Ok(out)
}
