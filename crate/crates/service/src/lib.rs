//! JSON-over-HTTP demo backend: catalog browsing and on-demand outfit generation.
//!
//! Every failure answers with an `{code, message}` envelope and a matching status.

mod error;
mod state;

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use outfitgen::generation::{beam_search, BeamParams, Template};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::{ApiError, ErrorEnvelope, ServiceError};
pub use state::{AppState, ServiceConfig};

pub const MAX_PAGE_SIZE: usize = 500;
pub const DEFAULT_PAGE_SIZE: usize = 50;

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryView {
    pub index: usize,
    pub name: String,
    pub fine: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleView {
    pub index: usize,
    pub name: String,
    /// Whether the embedding store holds this style.
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateView {
    pub name: String,
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fine_category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPage {
    pub category: Option<String>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ItemsQuery {
    pub category: Option<String>,
    /// Zero-based page index.
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct StylesQuery {
    /// Restrict to the styles allowed for this anchor's category.
    pub anchor: Option<String>,
}

fn default_style() -> String {
    "all".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub anchor_item_id: String,
    /// A style name, or `"all"` for every legitimate style of the anchor.
    #[serde(default = "default_style")]
    pub style: String,
    #[serde(default)]
    pub template: Option<String>,
    /// Explicit category slots, anchor category first.
    #[serde(default)]
    pub slots: Option<Vec<String>>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub beam_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutfitView {
    pub items: Vec<ItemView>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleOutfits {
    pub style: String,
    pub outfits: Vec<OutfitView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub anchor_item_id: String,
    pub template: TemplateView,
    pub results: Vec<StyleOutfits>,
}

fn api_routes() -> Router<Shared> {
    Router::new()
        .route("/health", get(health))
        .route("/categories", get(categories))
        .route("/styles", get(styles))
        .route("/templates", get(templates))
        .route("/items", get(items))
        .route("/generate", post(generate))
        .method_not_allowed_fallback(method_not_allowed)
}

pub fn router(state: Shared) -> Router {
    api_routes().fallback(not_found).with_state(state)
}

/// The API router with unknown paths served from `static_dir`.
pub fn router_with_static(state: Shared, static_dir: &std::path::Path) -> Router {
    let missing = Router::new().fallback(not_found).into_service();
    api_routes()
        .fallback_service(ServeDir::new(static_dir).not_found_service(missing))
        .with_state(state)
}

/// Loads artifacts and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&config)?);
    let app = match &config.static_dir {
        Some(dir) => router_with_static(state, dir),
        None => router(state),
    };
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

async fn not_found() -> ApiError {
    ApiError::not_found("route_not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not supported on this endpoint")
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    let loaded: Vec<&str> = s.store.styles().iter().filter_map(|i| s.styles.name(*i)).collect();
    Json(serde_json::json!({
        "status": "ok",
        "items": s.catalog.len(),
        "styles_loaded": loaded,
    }))
}

async fn categories(State(s): State<Shared>) -> Json<Vec<CategoryView>> {
    let views = (0..s.categories.num_coarse())
        .map(|c| CategoryView {
            index: c,
            name: s.categories.coarse_name(c).unwrap_or_default().to_string(),
            fine: s.categories.fine_of(c).map(|(_, f)| f.name.clone()).collect(),
        })
        .collect();
    Json(views)
}

fn find_anchor(s: &AppState, item_id: &str) -> Result<usize, ApiError> {
    s.catalog
        .index_of(item_id)
        .ok_or_else(|| ApiError::not_found("unknown_item", format!("no item with id {item_id:?}")))
}

fn style_view(s: &AppState, index: usize) -> StyleView {
    StyleView {
        index,
        name: s.styles.name(index).unwrap_or_default().to_string(),
        available: s.store.has_style(index),
    }
}

async fn styles(State(s): State<Shared>, query: Result<Query<StylesQuery>, QueryRejection>) -> ApiResult<Vec<StyleView>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))?;
    let indices: Vec<usize> = match q.anchor {
        Some(id) => {
            let anchor = find_anchor(&s, &id)?;
            s.legitimate[s.catalog.item(anchor).coarse].clone()
        }
        None => (0..s.styles.len()).collect(),
    };
    Ok(Json(indices.into_iter().map(|i| style_view(&s, i)).collect()))
}

fn template_view(s: &AppState, t: &Template) -> TemplateView {
    TemplateView {
        name: t.name.clone(),
        slots: t.slot_names(&s.categories).into_iter().map(String::from).collect(),
    }
}

async fn templates(State(s): State<Shared>) -> Json<Vec<TemplateView>> {
    Json(s.templates.iter().map(|t| template_view(&s, t)).collect())
}

fn item_view(s: &AppState, index: usize) -> ItemView {
    let item = s.catalog.item(index);
    ItemView {
        item_id: item.item_id.clone(),
        category: s.categories.coarse_name(item.coarse).unwrap_or_default().to_string(),
        fine_category: item.fine.and_then(|f| s.categories.fine().get(f)).map(|f| f.name.clone()),
    }
}

async fn items(State(s): State<Shared>, query: Result<Query<ItemsQuery>, QueryRejection>) -> ApiResult<ItemPage> {
    let Query(q) = query.map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))?;
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(
            "invalid_query",
            format!("page_size must be between 1 and {MAX_PAGE_SIZE}"),
        ));
    }
    let pool: Vec<usize> = match &q.category {
        Some(name) => {
            let c = s
                .categories
                .coarse_index(name)
                .ok_or_else(|| ApiError::not_found("unknown_category", format!("no category named {name:?}")))?;
            s.catalog.in_coarse(c).to_vec()
        }
        None => (0..s.catalog.len()).collect(),
    };
    let items = pool
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .map(|i| item_view(&s, *i))
        .collect();
    Ok(Json(ItemPage {
        category: q.category,
        page,
        page_size,
        total: pool.len(),
        items,
    }))
}

fn resolve_template(s: &AppState, req: &GenerateRequest, anchor_cat: usize) -> Result<Template, ApiError> {
    let invalid = |m: String| ApiError::bad_request("invalid_template", m);
    let template = match (&req.template, &req.slots) {
        (Some(_), Some(_)) => return Err(invalid("give either a template name or slots, not both".into())),
        (Some(name), None) => s
            .templates
            .iter()
            .find(|t| &t.name == name)
            .cloned()
            .ok_or_else(|| invalid(format!("no template named {name:?}")))?,
        (None, Some(slots)) => {
            Template::from_names("custom", slots, &s.categories).map_err(|e| invalid(e.to_string()))?
        }
        (None, None) => s
            .templates
            .iter()
            .find(|t| t.anchor_category() == anchor_cat)
            .cloned()
            .ok_or_else(|| invalid("no template starts with the anchor's category".into()))?,
    };
    if template.anchor_category() != anchor_cat {
        return Err(invalid(format!(
            "template {:?} starts with {} but the anchor is {}",
            template.name,
            s.categories.coarse_name(template.anchor_category()).unwrap_or("?"),
            s.categories.coarse_name(anchor_cat).unwrap_or("?")
        )));
    }
    if let Some(missing) = template.slots.iter().find(|c| !s.store.categories().contains(c)) {
        return Err(invalid(format!(
            "category {} has no precomputed embeddings",
            s.categories.coarse_name(*missing).unwrap_or("?")
        )));
    }
    Ok(template)
}

fn resolve_styles(s: &AppState, requested: &str, anchor_cat: usize) -> Result<Vec<usize>, ApiError> {
    let allowed = &s.legitimate[anchor_cat];
    if requested.eq_ignore_ascii_case("all") {
        let styles: Vec<usize> = allowed.iter().copied().filter(|i| s.store.has_style(*i)).collect();
        if styles.is_empty() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "style_unavailable",
                "no legitimate style of this anchor has pooled moments",
            ));
        }
        return Ok(styles);
    }
    let index = s
        .styles
        .names()
        .iter()
        .position(|n| n.eq_ignore_ascii_case(requested))
        .ok_or_else(|| ApiError::not_found("unknown_style", format!("no style named {requested:?}")))?;
    if !allowed.contains(&index) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "style_not_allowed",
            format!("style {requested:?} is not offered for this anchor's category"),
        ));
    }
    if !s.store.has_style(index) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "style_unavailable",
            format!("style {requested:?} has no pooled moments in the loaded store"),
        ));
    }
    Ok(vec![index])
}

fn run_generation(s: &AppState, req: &GenerateRequest) -> Result<GenerateResponse, ApiError> {
    let anchor = find_anchor(s, &req.anchor_item_id)?;
    let anchor_cat = s.catalog.item(anchor).coarse;
    let params = BeamParams {
        beam_width: req.beam_width.unwrap_or(s.beam.beam_width),
        top_k: req.top_k.unwrap_or(s.beam.top_k),
    };
    if params.top_k == 0 || params.beam_width == 0 {
        return Err(ApiError::bad_request("invalid_request", "top_k and beam_width must be at least 1"));
    }
    let template = resolve_template(s, req, anchor_cat)?;
    let styles = resolve_styles(s, &req.style, anchor_cat)?;
    let results = styles
        .into_iter()
        .map(|style| {
            let outfits = beam_search(anchor, &template, style, &s.store, &s.catalog, params)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "generation_failed", e.to_string()))?;
            Ok(StyleOutfits {
                style: s.styles.name(style).unwrap_or_default().to_string(),
                outfits: outfits
                    .into_iter()
                    .map(|o| OutfitView {
                        items: o.items.iter().map(|i| item_view(s, *i)).collect(),
                        score: o.score,
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(GenerateResponse {
        anchor_item_id: req.anchor_item_id.clone(),
        template: template_view(s, &template),
        results,
    })
}

async fn generate(State(s): State<Shared>, body: Result<Json<GenerateRequest>, JsonRejection>) -> ApiResult<GenerateResponse> {
    let Json(req) = body.map_err(|e| ApiError::bad_request("invalid_request", e.body_text()))?;
    let permit = s.limiter.clone().try_acquire_owned().map_err(|_| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "overloaded",
            "too many generation requests in flight",
        )
    })?;
    let out = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        run_generation(&s, &req)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}
