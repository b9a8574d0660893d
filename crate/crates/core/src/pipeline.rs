//! One agent turn: build the prompt sections, truncate the history (with an
//! episode summary of what was dropped), render, generate, filter, and
//! refresh the user memory.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::filter::{FilterContext, FilterOutcome, ResponseFilter};
use crate::gateway::{
    complete_with_retry, Backend, Completion, Gateway, GatewayError, GenerationRequest,
};
use crate::memory::{AuxTemplates, MemoryModules, MemorySettings, MemoryState};
use crate::prompt::{
    render_demonstration, truncate_history, ContextKind, ConversationHistory, HistoryTurn,
    PromptError, PromptSections, RenderedPrompt, SituationalContext, Speaker, TaskCatalog,
    TaskProfile, DEFAULT_MIN_KEEP_PAIRS, DEFAULT_TOKEN_BUDGET,
};
use crate::store::{ConversationStore, SessionConfig, StoreError};
use crate::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    /// Prompt size limit, in estimated tokens.
    pub token_budget: usize,
    pub min_keep_pairs: usize,
    /// Gateway retries per generation.
    pub max_retries: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            min_keep_pairs: DEFAULT_MIN_KEEP_PAIRS,
            max_retries: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("no filter named `{0}`")]
    UnknownFilter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub outcome: FilterOutcome,
    pub prompt: RenderedPrompt,
    /// Leading turns of the history left out of the prompt.
    pub removed_turns: usize,
    /// Auxiliary-call failures that were absorbed.
    pub memory_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub user_index: usize,
    pub agent_index: usize,
    pub reply: Reply,
}

/// Shared, session-independent machinery.
#[derive(Debug)]
pub struct TurnPipeline {
    pub catalog: Arc<TaskCatalog>,
    pub gateway: Arc<Gateway>,
    pub filters: Registry<dyn ResponseFilter>,
    pub aux: AuxTemplates,
    pub memory: MemorySettings,
    pub settings: PipelineSettings,
}

impl TurnPipeline {
    /// Situational context for `config`, with the memory entries installed.
    pub fn build_context(
        &self,
        config: &SessionConfig,
        memory: &MemoryState,
    ) -> SituationalContext {
        let mut ctx = SituationalContext::new();
        for t in config.persona.iter().flatten() {
            ctx.push(ContextKind::PersonaTraits, t.clone());
        }
        if let Some(img) = &config.image_description {
            ctx.set(ContextKind::ImageDescription, img.clone());
        }
        for d in &config.demonstrations {
            let turns: Vec<(Speaker, String)> = d
                .dialogue
                .iter()
                .map(|t| (t.speaker, t.text.clone()))
                .collect();
            ctx.push(
                ContextKind::Demonstrations,
                render_demonstration(&d.persona, &turns),
            );
        }
        memory.install(&mut ctx);
        ctx
    }

    /// Auxiliary calls go through the gateway so backend permits apply.
    fn modules<'a>(&'a self, config: &'a SessionConfig) -> MemoryModules<'a> {
        MemoryModules {
            backend: &*self.gateway,
            backend_id: &config.backend_id,
            templates: &self.aux,
            settings: self.memory,
            decoding: config.decoding,
            max_retries: self.settings.max_retries,
        }
    }

    fn render(
        &self,
        profile: &TaskProfile,
        ctx: &SituationalContext,
        history: ConversationHistory,
        config: &SessionConfig,
        latest: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let sections = PromptSections {
            context: ctx.clone(),
            history,
            target_language: config.target_language.clone(),
        };
        profile.render(&sections, latest, self.catalog.estimator())
    }

    /// Prompt for `latest` given the agent-side `history`; drops leading
    /// pairs until the prompt fits and keeps the episode summary in step
    /// with what was dropped.
    pub fn prepare(
        &self,
        config: &SessionConfig,
        memory: &mut MemoryState,
        history: &[HistoryTurn],
        latest: &str,
        errors: &mut Vec<String>,
    ) -> Result<
        (
            SituationalContext,
            ConversationHistory,
            RenderedPrompt,
            usize,
        ),
        PipelineError,
    > {
        let profile = self.catalog.profile(config.task);
        let full = ConversationHistory::new(history.to_vec())?;
        let summarizes = profile.template.references("summary");
        let mut ctx = self.build_context(config, memory);
        loop {
            let cost = |h: &ConversationHistory| {
                self.render(&profile, &ctx, h.clone(), config, latest)
                    .map_or(usize::MAX, |p| p.token_estimate)
            };
            let t = truncate_history(
                &full,
                self.settings.token_budget,
                self.settings.min_keep_pairs,
                cost,
            );
            let mut removed = t.removed_turns();
            let covered = memory
                .summary
                .as_ref()
                .map_or(0, |s| s.covers_turn_range.1 + 1);
            if summarizes && removed > covered {
                let m = self.modules(config);
                if let Some(e) = m.refresh_summary(memory, &mut ctx, history, removed) {
                    errors.push(e.to_string());
                } else {
                    // The new summary changes the prompt size: truncate again.
                    continue;
                }
            }
            if summarizes {
                // The kept history starts right after the summarized range.
                let covered = memory
                    .summary
                    .as_ref()
                    .map_or(0, |s| s.covers_turn_range.1 + 1);
                removed = removed.max(covered);
            }
            let kept = full.suffix_from_pair(removed.div_ceil(2));
            let prompt = self.render(&profile, &ctx, kept.clone(), config, latest)?;
            return Ok((ctx, kept, prompt, removed));
        }
    }

    /// Generates and filters the agent message answering `latest`.
    pub fn reply(
        &self,
        config: &SessionConfig,
        memory: &mut MemoryState,
        history: &[HistoryTurn],
        latest: &str,
    ) -> Result<Reply, PipelineError> {
        let mut memory_errors = Vec::new();
        let (ctx, kept, prompt, removed_turns) =
            self.prepare(config, memory, history, latest, &mut memory_errors)?;
        let profile = self.catalog.profile(config.task);
        let backend: &dyn Backend = &*self.gateway;
        let generate = |prompt_text: String| -> Result<Completion, GatewayError> {
            let req = GenerationRequest::new(
                prompt_text,
                &config.decoding,
                profile.stop_markers.clone(),
                &config.backend_id,
            );
            req.validate(true)?;
            Ok(complete_with_retry(backend, &req, self.settings.max_retries)?.completion)
        };
        let raw = generate(prompt.text.clone())?;
        let filter = self
            .filters
            .get(config.task.filter_name())
            .map_err(|_| PipelineError::UnknownFilter(config.task.filter_name().to_string()))?;
        let fctx = FilterContext {
            target_language: config.target_language.clone(),
            is_first_agent_message: !history.iter().any(|t| t.speaker == Speaker::Agent),
        };
        let mut regen = |extra: Option<&str>| -> Result<Completion, GatewayError> {
            let text = match extra {
                None => prompt.text.clone(),
                Some(instruction) => {
                    let latest = format!("{latest} {instruction}");
                    self.render(&profile, &ctx, kept.clone(), config, &latest)
                        .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?
                        .text
                }
            };
            generate(text)
        };
        let outcome = filter.apply(&raw, &fctx, &mut regen);
        Ok(Reply {
            outcome,
            prompt,
            removed_turns,
            memory_errors,
        })
    }

    /// Runs the user-memory cadence over the agent-side `turns`, when the
    /// task's template has a memory slot.
    pub fn after_turn(
        &self,
        config: &SessionConfig,
        memory: &mut MemoryState,
        turns: &[HistoryTurn],
    ) -> Option<String> {
        let profile = self.catalog.profile(config.task);
        if !profile.template.references("user_memory") {
            return None;
        }
        let m = self.modules(config);
        let mut ctx = SituationalContext::new();
        m.maybe_update_user_memory(memory, &mut ctx, turns)
            .1
            .map(|e| e.to_string())
    }

    /// Full live-chat turn: append the user message, answer it, append the
    /// answer, refresh memory. A failed generation leaves the session as it
    /// was before the call.
    pub fn user_turn(
        &self,
        store: &ConversationStore,
        session_id: &str,
        text: &str,
    ) -> Result<TurnResult, PipelineError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(PipelineError::EmptyMessage);
        }
        store.update(session_id, |conv, clock| {
            let history = conv.history_for(Speaker::Agent);
            let user_index = conv.push_turn(Speaker::User, text, None, clock.now())?;
            let config = conv.config.clone();
            let mut memory = conv.memory.clone();
            let mut reply = match self.reply(&config, &mut memory, &history, text) {
                Ok(r) => r,
                Err(e) => {
                    conv.turns.pop();
                    return Err(e);
                }
            };
            let agent_index = conv.push_turn(
                Speaker::Agent,
                reply.outcome.final_text.clone(),
                Some(reply.outcome.clone()),
                clock.now(),
            )?;
            if let Some(e) =
                self.after_turn(&config, &mut memory, &conv.history_for(Speaker::Agent))
            {
                reply.memory_errors.push(e);
            }
            conv.memory = memory;
            Ok(TurnResult {
                user_index,
                agent_index,
                reply,
            })
        })?
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::filter::{filter_registry, FilterConfig, LanguageDetector, RuleId};
    use crate::gateway::FnBackend;
    use crate::prompt::{estimate_tokens, TaskId};
    use crate::store::LogicalClock;

    type Log = Arc<Mutex<Vec<String>>>;

    /// Summary prompts get `RÉSUMÉ-n`, memory prompts `MÉMOIRE-n`, chat
    /// prompts `reply`.
    fn pipeline(reply: &'static str, budget: usize) -> (TurnPipeline, Log) {
        let log: Log = Arc::default();
        let seen = Arc::clone(&log);
        let backend = FnBackend::new(move |req: &GenerationRequest| {
            let mut log = seen.lock().unwrap();
            log.push(req.prompt.clone());
            let n = log.len();
            let text = if req.prompt.starts_with("Summarize") {
                format!("RÉSUMÉ-{n}")
            } else if req.prompt.starts_with("In one line") {
                format!("MÉMOIRE-{n}")
            } else {
                reply.to_string()
            };
            Ok(Completion::stopped(text))
        });
        let mut gateway = Gateway::new();
        gateway.register("m", Arc::new(backend));
        let p = TurnPipeline {
            catalog: Arc::new(TaskCatalog::builtin()),
            gateway: Arc::new(gateway),
            filters: filter_registry(&FilterConfig::default(), LanguageDetector::builtin())
                .unwrap(),
            aux: AuxTemplates::builtin(),
            memory: MemorySettings::default(),
            settings: PipelineSettings {
                token_budget: budget,
                ..PipelineSettings::default()
            },
        };
        (p, log)
    }

    fn config() -> SessionConfig {
        SessionConfig::persona(
            TaskId::PersonaAdvanced,
            vec!["J'ai un chien.".into(), "J'aime le jazz.".into()],
            "m",
        )
    }

    #[test]
    fn long_conversation_under_tight_budget() {
        let reply = "Oui, je comprends très bien, et toi, qu'est-ce que tu fais le week-end ?";
        // base prompt plus roughly four pairs of history
        let base = estimate_tokens(
            &TaskCatalog::builtin()
                .render(
                    TaskId::PersonaAdvanced,
                    &PromptSections::new(
                        {
                            let mut c = SituationalContext::new();
                            c.push(ContextKind::PersonaTraits, "J'ai un chien.");
                            c.push(ContextKind::PersonaTraits, "J'aime le jazz.");
                            c
                        },
                        ConversationHistory::empty(),
                        "fr",
                    ),
                    "x",
                )
                .unwrap()
                .text,
        );
        let budget = base + 160;
        let (p, log) = pipeline(reply, budget);
        let store = ConversationStore::in_memory(Arc::new(LogicalClock::new()));
        let id = store.create_session(config()).unwrap();
        let mut last = None;
        for i in 0..20 {
            let msg = format!(
                "Message numéro {i} : je travaille dans une boulangerie et j'aime courir le matin."
            );
            let r = p.user_turn(&store, &id, &msg).unwrap();
            assert_eq!(r.user_index, 2 * i);
            assert_eq!(r.agent_index, 2 * i + 1);
            assert!(r.reply.prompt.token_estimate <= budget, "turn {i}");
            assert!(r.reply.memory_errors.is_empty());
            last = Some(r);
        }
        let conv = store.get(&id).unwrap();
        assert_eq!(conv.turns.len(), 40);
        let last = last.unwrap();
        let summary = conv.memory.summary.clone().expect("summary written");
        assert!(last.reply.removed_turns > 0);
        assert_eq!(summary.covers_turn_range, (0, last.reply.removed_turns - 1));

        let prompt = &last.reply.prompt.text;
        assert_eq!(prompt.matches("RÉSUMÉ-").count(), 1);
        assert!(prompt.contains(&summary.text));
        // the first kept turn is the one right after the summarized range
        let first_kept = &conv.turns[last.reply.removed_turns].text;
        assert!(prompt.contains(first_kept.as_str()));
        let dropped = &conv.turns[last.reply.removed_turns - 2].text;
        assert!(!prompt.contains(dropped.as_str()));

        // user memory every 4 user turns over 20 user turns; the last update
        // lands after the final reply
        assert_eq!(conv.memory.updates, 5);
        assert_eq!(conv.memory.user_memory.unwrap().last_updated_turn, 39);
        assert_eq!(prompt.matches("MÉMOIRE-").count(), 1);
        assert!(log.lock().unwrap().len() > 20);
    }

    #[test]
    fn persona_claim_is_stripped_from_the_stored_turn() {
        let (p, _) = pipeline(
            "En tant qu'IA, je ne peux pas. J'adore les chiens !",
            10_000,
        );
        let store = ConversationStore::in_memory(Arc::new(LogicalClock::new()));
        let id = store.create_session(config()).unwrap();
        let r = p.user_turn(&store, &id, "Tu aimes les animaux ?").unwrap();
        assert_eq!(
            r.reply.outcome.final_text,
            "Je ne peux pas. J'adore les chiens !"
        );
        assert!(r.reply.outcome.fixed.contains(&RuleId::PersonaClaim));
        let conv = store.get(&id).unwrap();
        assert_eq!(conv.turns[1].text, "Je ne peux pas. J'adore les chiens !");
        assert!(conv.turns[1].filter.is_some());
    }

    #[test]
    fn failed_generation_leaves_session_unchanged() {
        let mut gateway = Gateway::new();
        gateway.register(
            "m",
            Arc::new(FnBackend::new(|_: &GenerationRequest| {
                Err(GatewayError::Fatal {
                    backend: "m".into(),
                    message: "down".into(),
                })
            })),
        );
        let (mut p, _) = pipeline("x", 10_000);
        p.gateway = Arc::new(gateway);
        let store = ConversationStore::in_memory(Arc::new(LogicalClock::new()));
        let id = store.create_session(config()).unwrap();
        let err = p.user_turn(&store, &id, "Bonjour").unwrap_err();
        assert!(matches!(err, PipelineError::Backend(_)));
        assert!(store.get(&id).unwrap().turns.is_empty());
        assert!(matches!(
            p.user_turn(&store, &id, "   "),
            Err(PipelineError::EmptyMessage)
        ));
    }
}
