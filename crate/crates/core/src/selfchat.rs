//! Conversations between two agent setups, and their pairing into arena
//! battles.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::filter::FilterOutcome;
use crate::pipeline::TurnPipeline;
use crate::prompt::Speaker;
use crate::store::{Clock, Conversation, Partner, SessionConfig};

/// One side of a self-chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub id: String,
    pub config: SessionConfig,
}

/// How side A's first message comes about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpenerPolicy {
    /// Generated from side A's prompt with an empty history, answering this
    /// cue; `None` picks a greeting in the target language.
    GreetingCue(Option<String>),
    /// Side A's first message is this text verbatim.
    Fixed(String),
}

impl Default for OpenerPolicy {
    fn default() -> Self {
        OpenerPolicy::GreetingCue(None)
    }
}

pub fn greeting(lang: &str) -> &'static str {
    match lang {
        "en" => "Hello!",
        "es" => "¡Hola!",
        "de" => "Hallo!",
        _ => "Bonjour !",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfChatJob {
    pub setup_a: Setup,
    pub setup_b: Setup,
    pub n_rounds: usize,
    pub n_conversations: usize,
    pub seed: u64,
    pub opener: OpenerPolicy,
    /// When set, persona-task sides draw their persona from this pool, each
    /// side independently.
    pub personas: Option<Vec<Vec<String>>>,
}

impl SelfChatJob {
    pub fn new(setup_a: Setup, setup_b: Setup, n_conversations: usize) -> Self {
        Self {
            setup_a,
            setup_b,
            n_rounds: 10,
            n_conversations,
            seed: 0,
            opener: OpenerPolicy::default(),
            personas: None,
        }
    }

    pub fn validate(&self) -> Result<(), SelfChatError> {
        if self.n_rounds == 0 {
            return Err(SelfChatError::ZeroRounds);
        }
        if self.personas.as_ref().is_some_and(|p| p.is_empty()) {
            return Err(SelfChatError::EmptyPersonaPool);
        }
        for s in [&self.setup_a, &self.setup_b] {
            s.config
                .validate()
                .map_err(|e| SelfChatError::InvalidSetup(s.id.clone(), e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SelfChatError {
    #[error("n_rounds must be at least 1")]
    ZeroRounds,
    #[error("persona pool is empty")]
    EmptyPersonaPool,
    #[error("setup `{0}`: {1}")]
    InvalidSetup(String, String),
}

/// Blank-line-separated blocks, one trait per line.
pub fn parse_persona_file(src: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut block = Vec::new();
    for line in src.lines().map(str::trim) {
        if line.is_empty() {
            if !block.is_empty() {
                out.push(std::mem::take(&mut block));
            }
        } else {
            block.push(line.to_string());
        }
    }
    if !block.is_empty() {
        out.push(block);
    }
    out
}

fn draw_persona(
    config: &SessionConfig,
    pool: Option<&Vec<Vec<String>>>,
    rng: &mut ChaCha8Rng,
) -> SessionConfig {
    let mut c = config.clone();
    if let (Some(pool), true) = (pool, c.task.is_persona_family()) {
        c.persona = Some(pool[rng.gen_range(0..pool.len())].clone());
    }
    c
}

/// Runs the job sequentially. Session ids are `{a}-{b}-{n:04}`; a backend
/// failure invalidates that conversation and the job moves on.
pub fn run_selfchat(
    pipeline: &TurnPipeline,
    job: &SelfChatJob,
    clock: &dyn Clock,
) -> Result<Vec<Conversation>, SelfChatError> {
    job.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut out = Vec::with_capacity(job.n_conversations);
    for n in 0..job.n_conversations {
        let config_a = draw_persona(&job.setup_a.config, job.personas.as_ref(), &mut rng);
        let config_b = draw_persona(&job.setup_b.config, job.personas.as_ref(), &mut rng);
        let id = format!("{}-{}-{n:04}", job.setup_a.id, job.setup_b.id);
        let mut conv = Conversation::new(&id, &job.setup_a.id, config_a);
        conv.partner = Some(Partner {
            setup_id: job.setup_b.id.clone(),
            config: config_b,
            memory: Default::default(),
        });
        if let Err(reason) = play(pipeline, job, &mut conv, clock) {
            log::warn!("self-chat {id} invalid: {reason}");
            conv.invalidate(reason);
        }
        out.push(conv);
    }
    Ok(out)
}

/// Side A is stored as the agent, side B as the user.
fn play(
    pipeline: &TurnPipeline,
    job: &SelfChatJob,
    conv: &mut Conversation,
    clock: &dyn Clock,
) -> Result<(), String> {
    let partner = conv.partner.clone().expect("self-chat has a partner");
    let mut memory_b = partner.memory;
    for i in 0..2 * job.n_rounds {
        let me = if i % 2 == 0 {
            Speaker::Agent
        } else {
            Speaker::User
        };
        let (config, mut memory) = match me {
            Speaker::Agent => (conv.config.clone(), conv.memory.clone()),
            Speaker::User => (partner.config.clone(), memory_b.clone()),
        };
        let history = conv.history_for(me);
        let outcome = match (i, &job.opener) {
            (0, OpenerPolicy::Fixed(text)) => FilterOutcome::clean(text.clone()),
            _ => {
                let latest = match conv.turns.last() {
                    Some(t) => t.text.clone(),
                    None => match &job.opener {
                        OpenerPolicy::GreetingCue(Some(cue)) => cue.clone(),
                        _ => greeting(&config.target_language).to_string(),
                    },
                };
                // the latest message is the other side's last turn, not history
                let prior = &history[..history.len().saturating_sub(1)];
                pipeline
                    .reply(&config, &mut memory, prior, &latest)
                    .map_err(|e| format!("turn {i}: {e}"))?
                    .outcome
            }
        };
        let text = outcome.final_text.clone();
        conv.push_turn(me, text, Some(outcome), clock.now())
            .map_err(|e| e.to_string())?;
        let seen = conv.history_for(me);
        if let Some(e) = pipeline.after_turn(&config, &mut memory, &seen) {
            log::debug!("{}: memory update failed: {e}", conv.session_id);
        }
        match me {
            Speaker::Agent => conv.memory = memory,
            Speaker::User => memory_b = memory,
        }
    }
    if let Some(p) = conv.partner.as_mut() {
        p.memory = memory_b;
    }
    Ok(())
}

/// Number of battles each setup pair receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattleQuota {
    pub min: usize,
    pub max: usize,
}

impl BattleQuota {
    pub fn exact(n: usize) -> Self {
        Self { min: n, max: n }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaPair {
    pub conversation_a: String,
    pub conversation_b: String,
    pub setup_a: String,
    pub setup_b: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PairingError {
    #[error("corpus has {0} setup(s) with valid conversations, at least 2 are needed")]
    TooFewSetups(usize),
    #[error("battle quota min {min} exceeds max {max}")]
    BadQuota { min: usize, max: usize },
}

/// Pairs valid conversations across every pair of distinct setups.
///
/// Each setup serves its conversations from a shuffled queue, so none is
/// reused before all of that setup's conversations were used once. Output
/// is interleaved: the k-th battle of every setup pair comes before any
/// (k+1)-th battle.
pub fn build_arena_pairs(
    corpus: &[Conversation],
    quota: BattleQuota,
    seed: u64,
) -> Result<Vec<ArenaPair>, PairingError> {
    if quota.min > quota.max {
        return Err(PairingError::BadQuota {
            min: quota.min,
            max: quota.max,
        });
    }
    let mut by_setup: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in corpus.iter().filter(|c| c.valid) {
        by_setup
            .entry(c.setup_id.as_str())
            .or_default()
            .push(c.session_id.as_str());
    }
    if by_setup.len() < 2 {
        return Err(PairingError::TooFewSetups(by_setup.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setups: Vec<&str> = by_setup.keys().copied().collect();
    let mut pools: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut queues: BTreeMap<&str, VecDeque<&str>> = BTreeMap::new();
    for (s, ids) in &by_setup {
        let mut ids = ids.clone();
        ids.sort_unstable();
        pools.insert(s, ids);
        queues.insert(s, VecDeque::new());
    }
    let mut next = |setup: &str, rng: &mut ChaCha8Rng| -> String {
        let q = queues.get_mut(setup).expect("known setup");
        if q.is_empty() {
            let mut refill = pools[setup].clone();
            refill.shuffle(rng);
            q.extend(refill);
        }
        q.pop_front().expect("non-empty pool").to_string()
    };
    let mut counts = Vec::new();
    for (i, a) in setups.iter().enumerate() {
        for b in &setups[i + 1..] {
            counts.push((*a, *b, rng.gen_range(quota.min..=quota.max)));
        }
    }
    let rounds = counts.iter().map(|c| c.2).max().unwrap_or(0);
    let mut out = Vec::new();
    for k in 0..rounds {
        for &(a, b, n) in &counts {
            if k < n {
                let conversation_a = next(a, &mut rng);
                let conversation_b = next(b, &mut rng);
                out.push(ArenaPair {
                    conversation_a,
                    conversation_b,
                    setup_a: a.to_string(),
                    setup_b: b.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashMap};
    use std::sync::Arc;

    use super::*;
    use crate::filter::{filter_registry, FilterConfig, LanguageDetector};
    use crate::gateway::{Gateway, MockBackend, MockScript};
    use crate::memory::{AuxTemplates, MemorySettings};
    use crate::pipeline::PipelineSettings;
    use crate::prompt::{TaskCatalog, TaskId};
    use crate::store::LogicalClock;

    fn pipeline(scripts: &[(&str, Vec<&str>)]) -> TurnPipeline {
        let mut gateway = Gateway::new();
        for (id, lines) in scripts {
            let script = MockScript::ordered(lines.iter().map(|s| s.to_string()));
            gateway.register(*id, Arc::new(MockBackend::new(*id, script).cycling(true)));
        }
        TurnPipeline {
            catalog: Arc::new(TaskCatalog::builtin()),
            gateway: Arc::new(gateway),
            filters: filter_registry(&FilterConfig::default(), LanguageDetector::builtin())
                .unwrap(),
            aux: AuxTemplates::builtin(),
            memory: MemorySettings::default(),
            settings: PipelineSettings::default(),
        }
    }

    fn setup(id: &str, backend: &str) -> Setup {
        Setup {
            id: id.into(),
            config: SessionConfig::persona(
                TaskId::PersonaShallow,
                vec!["J'aime lire.".into()],
                backend,
            ),
        }
    }

    fn run(rounds: usize, count: usize) -> Vec<Conversation> {
        let p = pipeline(&[
            (
                "a",
                vec!["Salut, tu vas bien ?", "Moi aussi, je lis beaucoup."],
            ),
            ("b", vec!["Oui, très bien, merci.", "Super, quel livre ?"]),
        ]);
        let mut job = SelfChatJob::new(setup("sa", "a"), setup("sb", "b"), count);
        job.n_rounds = rounds;
        job.seed = 7;
        job.personas = Some(parse_persona_file(
            "J'ai un chat.\nJe cuisine.\n\n\nJe cours.\n",
        ));
        run_selfchat(&p, &job, &LogicalClock::new()).unwrap()
    }

    #[test]
    fn exact_turn_counts_and_determinism() {
        let a = run(10, 2);
        assert_eq!(a.len(), 2);
        for c in &a {
            assert!(c.valid);
            assert_eq!(c.turns.len(), 20);
            assert_eq!(c.turns[0].speaker, Speaker::Agent);
            assert!(c.turns.iter().all(|t| t.filter.is_some()));
            assert_eq!(c.partner.as_ref().unwrap().setup_id, "sb");
            c.validate().unwrap();
        }
        assert_eq!(a[0].session_id, "sa-sb-0000");
        assert_eq!(a[0].turns[0].text, "Salut, tu vas bien ?");
        assert_eq!(a[0].turns[1].text, "Oui, très bien, merci.");
        let b = run(10, 2);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(run(1, 1)[0].turns.len(), 2);
    }

    #[test]
    fn personas_are_drawn_from_the_pool() {
        let pool: BTreeSet<Vec<String>> =
            parse_persona_file("J'ai un chat.\nJe cuisine.\n\nJe cours.")
                .into_iter()
                .collect();
        assert_eq!(pool.len(), 2);
        for c in run(1, 6) {
            assert!(pool.contains(c.config.persona.as_ref().unwrap()));
            assert!(pool.contains(c.partner.unwrap().config.persona.as_ref().unwrap()));
        }
    }

    #[test]
    fn backend_failure_invalidates_and_continues() {
        let p = pipeline(&[("a", vec!["Salut !"])]);
        let job = SelfChatJob::new(setup("sa", "a"), setup("sb", "missing"), 2);
        let out = run_selfchat(&p, &job, &LogicalClock::new()).unwrap();
        assert_eq!(out.len(), 2);
        for c in out {
            assert!(!c.valid);
            assert_eq!(c.turns.len(), 1);
            assert!(c.invalid_reason.unwrap().contains("turn 1"));
        }
        let mut zero = SelfChatJob::new(setup("sa", "a"), setup("sb", "a"), 1);
        zero.n_rounds = 0;
        assert_eq!(
            run_selfchat(&p, &zero, &LogicalClock::new()),
            Err(SelfChatError::ZeroRounds)
        );
    }

    #[test]
    fn fixed_opener_is_used_verbatim() {
        let p = pipeline(&[("a", vec!["Très bien !"])]);
        let mut job = SelfChatJob::new(setup("sa", "a"), setup("sb", "a"), 1);
        job.n_rounds = 2;
        job.opener = OpenerPolicy::Fixed("Coucou, ça va ?".into());
        let c = &run_selfchat(&p, &job, &LogicalClock::new()).unwrap()[0];
        assert_eq!(c.turns[0].text, "Coucou, ça va ?");
        assert_eq!(c.turns.len(), 4);
    }

    fn corpus(setups: usize, per: usize) -> Vec<Conversation> {
        let mut out = Vec::new();
        for s in 0..setups {
            for n in 0..per {
                let sid = format!("s{s:02}");
                let c = Conversation::new(
                    &format!("{sid}-{n:03}"),
                    &sid,
                    SessionConfig::persona(TaskId::PersonaShallow, vec!["x".into()], "m"),
                );
                out.push(c);
            }
        }
        out
    }

    #[test]
    fn pairs_cover_all_setup_pairs() {
        let pairs = build_arena_pairs(&corpus(11, 3), BattleQuota::exact(1), 1).unwrap();
        let covered: BTreeSet<_> = pairs
            .iter()
            .map(|p| (p.setup_a.clone(), p.setup_b.clone()))
            .collect();
        // 11 choose 2 by enumeration
        let mut expected = 0;
        for i in 0..11 {
            for _ in i + 1..11 {
                expected += 1;
            }
        }
        assert_eq!(covered.len(), expected);
        assert!(pairs.iter().all(|p| p.setup_a != p.setup_b));
    }

    #[test]
    fn conversations_used_round_robin() {
        let pairs = build_arena_pairs(&corpus(2, 70), BattleQuota::exact(10), 3).unwrap();
        assert_eq!(pairs.len(), 10);
        let used: Vec<_> = pairs.iter().map(|p| p.conversation_a.clone()).collect();
        assert_eq!(used.iter().collect::<BTreeSet<_>>().len(), 10);

        // 3 conversations, 10 battles: use counts differ by at most one
        let pairs = build_arena_pairs(&corpus(2, 3), BattleQuota::exact(10), 3).unwrap();
        let mut uses: HashMap<String, usize> = HashMap::new();
        for p in &pairs {
            *uses.entry(p.conversation_a.clone()).or_default() += 1;
            *uses.entry(p.conversation_b.clone()).or_default() += 1;
        }
        for (i, p) in pairs.iter().enumerate().step_by(3) {
            let block: BTreeSet<_> = pairs[i..(i + 3).min(pairs.len())]
                .iter()
                .map(|q| q.conversation_a.as_str())
                .collect();
            assert_eq!(
                block.len(),
                (pairs.len() - i).min(3),
                "at {}",
                p.conversation_a
            );
        }
        assert!(uses.values().all(|&n| n == 3 || n == 4));
    }

    #[test]
    fn quota_range_and_errors() {
        let pairs = build_arena_pairs(&corpus(3, 5), BattleQuota { min: 5, max: 14 }, 9).unwrap();
        let mut per: HashMap<(String, String), usize> = HashMap::new();
        for p in &pairs {
            *per.entry((p.setup_a.clone(), p.setup_b.clone()))
                .or_default() += 1;
        }
        assert_eq!(per.len(), 3);
        assert!(per.values().all(|&n| (5..=14).contains(&n)));
        assert_eq!(
            build_arena_pairs(&corpus(1, 5), BattleQuota::exact(3), 0),
            Err(PairingError::TooFewSetups(1))
        );
        let mut invalid = corpus(2, 1);
        invalid[1].invalidate("x");
        assert_eq!(
            build_arena_pairs(&invalid, BattleQuota::exact(3), 0),
            Err(PairingError::TooFewSetups(1))
        );
    }
}
