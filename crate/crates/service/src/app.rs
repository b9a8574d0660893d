//! HTTP API: live chat sessions, arena annotation and reports.

// Handlers bail out with a ready `Response`.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use roleplay_core::arena::{
    aggregate_scores, render_elo_table, render_score_table, update, BattleResult, Criterion,
    EloConfig, EloTable, LedgerError, Verdict,
};
use roleplay_core::filter::{error_report, ReportError, RuleId};
use roleplay_core::pipeline::PipelineError;
use roleplay_core::prompt::{Speaker, TaskId};
use roleplay_core::selfchat::build_arena_pairs;
use roleplay_core::stats::{stats_report, Grouping};
use roleplay_core::store::{Conversation, SessionConfig, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Runtime;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug)]
pub struct AppState {
    pub rt: Arc<Runtime>,
    /// Ratings after every ledger battle, in ledger order.
    elo: Mutex<EloTable>,
}

/// Criteria judged for a battle over conversations of `task`.
pub fn battle_config(base: &EloConfig, task: Option<TaskId>) -> EloConfig {
    let mut cfg = base.clone();
    if task == Some(TaskId::Int) && !cfg.criteria.contains(&Criterion::Achievement) {
        cfg.criteria.push(Criterion::Achievement);
    }
    cfg
}

impl AppState {
    /// Replays the ledger into the Elo table.
    pub fn new(rt: Arc<Runtime>) -> Result<Self, String> {
        let mut table = EloTable::default();
        for b in rt.ledger.snapshot() {
            let task = rt.store.get(&b.conversation_a).ok().map(|c| c.task());
            update(&mut table, &b, &battle_config(&rt.config.elo, task)).map_err(|e| {
                format!(
                    "ledger battle {} vs {}: {e}",
                    b.conversation_a, b.conversation_b
                )
            })?;
        }
        Ok(Self {
            rt,
            elo: Mutex::new(table),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/arena/next-pair", get(next_pair))
        .route("/arena/battles", post(post_battle))
        .route("/reports/{kind}", get(report))
        .with_state(state)
}

type Shared = State<Arc<AppState>>;

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body)
        .map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn create_session(State(st): Shared, body: Bytes) -> Response {
    let config: SessionConfig = match parse(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let mut violations = match config.validate() {
        Ok(()) => Vec::new(),
        Err(v) => v.0,
    };
    if !config.backend_id.is_empty() && !st.rt.pipeline.gateway.contains(&config.backend_id) {
        violations.push(roleplay_core::store::FieldViolation {
            field: "backend_id",
            message: format!("unknown backend `{}`", config.backend_id),
        });
    }
    if !violations.is_empty() {
        return (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "error": "invalid session config", "violations": violations })),
        )
            .into_response();
    }
    match st.rt.store.create_session(config) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn get_session(State(st): Shared, Path(id): Path<String>) -> Response {
    match st.rt.store.get(&id) {
        Ok(c) => Json(c).into_response(),
        Err(StoreError::UnknownSession(_)) => {
            error(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
}

#[derive(Debug, Serialize)]
struct FilterFlags {
    detected: Vec<RuleId>,
    fixed: Vec<RuleId>,
}

async fn post_message(State(st): Shared, Path(id): Path<String>, body: Bytes) -> Response {
    let msg: MessageBody = match parse(&body) {
        Ok(m) => m,
        Err(r) => return r,
    };
    let rt = Arc::clone(&st.rt);
    // the gateway blocks on network calls
    let result =
        tokio::task::spawn_blocking(move || rt.pipeline.user_turn(&rt.store, &id, &msg.text)).await;
    match result {
        Ok(Ok(turn)) => {
            let o = &turn.reply.outcome;
            Json(json!({
                "agent_reply": o.final_text,
                "filter_flags": FilterFlags {
                    detected: o.detected.iter().copied().collect(),
                    fixed: o.fixed.iter().copied().collect(),
                },
                "user_index": turn.user_index,
                "agent_index": turn.agent_index,
            }))
            .into_response()
        }
        Ok(Err(e)) => match e {
            PipelineError::Store(StoreError::UnknownSession(s)) => {
                error(StatusCode::NOT_FOUND, format!("unknown session `{s}`"))
            }
            PipelineError::EmptyMessage => error(StatusCode::UNPROCESSABLE_ENTITY, e),
            PipelineError::Backend(_) => error(StatusCode::BAD_GATEWAY, e),
            other => error(StatusCode::INTERNAL_SERVER_ERROR, other),
        },
        Err(join) => error(StatusCode::INTERNAL_SERVER_ERROR, join),
    }
}

fn annotator(headers: &HeaderMap) -> Result<String, Response> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .ok_or_else(|| {
            error(
                StatusCode::BAD_REQUEST,
                format!("missing {ANNOTATOR_HEADER} header"),
            )
        })
}

/// Self-chats eligible for battles.
fn arena_corpus(st: &AppState) -> Vec<Conversation> {
    st.rt
        .store
        .all()
        .into_iter()
        .filter(|c| c.valid && c.partner.is_some())
        .collect()
}

/// What an annotator sees of a conversation: no setup identity.
fn blind(c: &Conversation) -> Value {
    let turns: Vec<Value> = c
        .turns
        .iter()
        .map(|t| {
            let side = if t.speaker == Speaker::Agent {
                "a"
            } else {
                "b"
            };
            json!({ "side": side, "text": t.text })
        })
        .collect();
    json!({
        "session_id": c.session_id,
        "task": c.task(),
        "image_description": c.config.image_description,
        "turns": turns,
    })
}

async fn next_pair(State(st): Shared, headers: HeaderMap) -> Response {
    let who = match annotator(&headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let corpus = arena_corpus(&st);
    let arena = &st.rt.config.arena;
    let pairs = match build_arena_pairs(&corpus, arena.quota(), arena.seed) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::NOT_FOUND, e),
    };
    let Some(pair) = pairs.iter().find(|p| {
        !st.rt
            .ledger
            .has_judged(&who, &p.conversation_a, &p.conversation_b)
    }) else {
        return error(
            StatusCode::NOT_FOUND,
            "no unjudged pair left for this annotator",
        );
    };
    let find = |id: &str| {
        corpus
            .iter()
            .find(|c| c.session_id == id)
            .expect("paired from corpus")
    };
    let (a, b) = (find(&pair.conversation_a), find(&pair.conversation_b));
    Json(json!({
        "conversation_a": blind(a),
        "conversation_b": blind(b),
        "criteria": Criterion::battle_criteria(a.task()),
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BattleBody {
    conversation_a: String,
    conversation_b: String,
    verdicts: BTreeMap<Criterion, Verdict>,
}

async fn post_battle(State(st): Shared, headers: HeaderMap, body: Bytes) -> Response {
    let who = match annotator(&headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    let b: BattleBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let mut convs = Vec::new();
    for id in [&b.conversation_a, &b.conversation_b] {
        match st.rt.store.get(id) {
            Ok(c) => convs.push(c),
            Err(_) => {
                return error(
                    StatusCode::NOT_FOUND,
                    format!("unknown conversation `{id}`"),
                )
            }
        }
    }
    let cfg = battle_config(&st.rt.config.elo, Some(convs[0].task()));
    let battle = BattleResult {
        conversation_a: b.conversation_a,
        conversation_b: b.conversation_b,
        setup_a: convs[0].setup_id.clone(),
        setup_b: convs[1].setup_id.clone(),
        verdicts: b.verdicts,
        annotator_id: who,
        timestamp: st.rt.clock.now(),
    };
    if let Err(e) = battle.validate(&cfg.criteria) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e);
    }
    let mut elo = st.elo.lock().expect("elo lock");
    match st.rt.ledger.append(battle.clone()) {
        Ok(()) => {}
        Err(e @ LedgerError::AlreadyJudged { .. }) => return error(StatusCode::CONFLICT, e),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
    match update(&mut elo, &battle, &cfg) {
        Ok(changes) => (StatusCode::CREATED, Json(json!({ "changes": changes }))).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    group: Option<String>,
}

/// Rating criteria covering every task in `corpus`.
pub fn score_criteria(corpus: &[Conversation]) -> Vec<Criterion> {
    let task = if corpus.iter().any(|c| c.task() == TaskId::Int) {
        TaskId::Int
    } else {
        TaskId::PersonaAdvanced
    };
    Criterion::rating_criteria(task)
}

/// Persona layout unless every conversation is an INT one.
pub fn default_grouping(corpus: &[Conversation]) -> Grouping {
    if !corpus.is_empty() && corpus.iter().all(|c| c.task() == TaskId::Int) {
        Grouping::Int
    } else {
        Grouping::Persona
    }
}

async fn report(
    State(st): Shared,
    Path(kind): Path<String>,
    Query(q): Query<ReportQuery>,
) -> Response {
    let rt = Arc::clone(&st.rt);
    match kind.as_str() {
        "elo" => {
            if rt.ledger.is_empty() {
                return error(StatusCode::NOT_FOUND, "no battle recorded");
            }
            let table = st.elo.lock().expect("elo lock").clone();
            let mut criteria = rt.config.elo.criteria.clone();
            if table.ratings.contains_key(&Criterion::Achievement) {
                criteria.push(Criterion::Achievement);
            }
            Json(
                json!({ "kind": kind, "text": render_elo_table(&table, &criteria), "data": table }),
            )
            .into_response()
        }
        "scores" => {
            let corpus = rt.store.all();
            if corpus.is_empty() {
                return error(StatusCode::NOT_FOUND, "empty corpus");
            }
            let table = aggregate_scores(&corpus);
            let text = render_score_table(&table, &score_criteria(&corpus));
            Json(json!({ "kind": kind, "text": text, "data": table })).into_response()
        }
        "stats" => {
            let corpus = rt.store.all();
            if corpus.is_empty() {
                return error(StatusCode::NOT_FOUND, "empty corpus");
            }
            let grouping = match q.group.as_deref().map(str::parse::<Grouping>) {
                None => default_grouping(&corpus),
                Some(Ok(g)) => g,
                Some(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
            };
            let result = tokio::task::spawn_blocking(move || {
                let normalizer = rt.config.normalizer()?;
                stats_report(&corpus, grouping, normalizer.as_ref())
            })
            .await;
            match result {
                Ok(Ok(r)) => Json(json!({ "kind": kind, "text": r.render_text(), "data": r }))
                    .into_response(),
                Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
            }
        }
        "errors" => {
            let corpus = rt.store.all();
            match error_report(&corpus) {
                Ok(r) => {
                    Json(json!({ "kind": kind, "text": r.render_text(), "data": r.to_json() }))
                        .into_response()
                }
                Err(e @ ReportError::NoFilterRecords) => error(StatusCode::NOT_FOUND, e),
                Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
            }
        }
        other => error(StatusCode::NOT_FOUND, format!("unknown report `{other}`")),
    }
}
