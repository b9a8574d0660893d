//! Vocabulary sizes and words-per-message distributions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::prompt::Speaker;
use crate::store::Conversation;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("normalizer plugin `{command}`: {message}")]
    Plugin { command: String, message: String },
    #[error("unknown grouping `{0}`, expected persona or int")]
    UnknownGrouping(String),
    #[error("unknown normalizer `{0}`, expected surface or plugin")]
    UnknownNormalizer(String),
}

/// Word tokens of `text`: Unicode word segmentation, punctuation dropped,
/// elided articles split off at apostrophes.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.unicode_words()
        .flat_map(|w| w.split(['\'', '’']))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Words as counted for message length: Unicode words, without the
/// apostrophe split.
pub fn word_count(text: &str) -> usize {
    text.unicode_words().count()
}

/// Maps the tokens of one message to their normalized forms.
pub trait Normalizer: Send + Sync {
    fn normalize(&self, tokens: &[&str]) -> Result<Vec<String>, StatsError>;
}

/// Lowercased surface forms.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurfaceLower;

impl Normalizer for SurfaceLower {
    fn normalize(&self, tokens: &[&str]) -> Result<Vec<String>, StatsError> {
        Ok(tokens.iter().map(|t| t.to_lowercase()).collect())
    }
}

/// External lemmatizer speaking a line protocol: one token per input line,
/// one lemma per output line, in order. The process is started once and
/// kept for the normalizer's lifetime.
#[derive(Debug)]
pub struct PluginNormalizer {
    command: String,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl PluginNormalizer {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, StatsError> {
        let command = std::iter::once(program.to_string())
            .chain(args.iter().cloned())
            .collect::<Vec<_>>()
            .join(" ");
        let err = |message: String| StatsError::Plugin {
            command: command.clone(),
            message,
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| err(e.to_string()))?;
        let stdin = child.stdin.take().ok_or_else(|| err("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| err("no stdout".into()))?;
        Ok(Self {
            command,
            io: Mutex::new((child, stdin, BufReader::new(stdout))),
        })
    }

    fn err(&self, message: impl Into<String>) -> StatsError {
        StatsError::Plugin {
            command: self.command.clone(),
            message: message.into(),
        }
    }
}

impl Normalizer for PluginNormalizer {
    fn normalize(&self, tokens: &[&str]) -> Result<Vec<String>, StatsError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut io = self.io.lock().expect("plugin lock");
        let (_, stdin, stdout) = &mut *io;
        let mut batch = String::new();
        for t in tokens {
            batch.push_str(t);
            batch.push('\n');
        }
        stdin
            .write_all(batch.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| self.err(e.to_string()))?;
        let mut out = Vec::with_capacity(tokens.len());
        for _ in tokens {
            let mut line = String::new();
            let n = stdout
                .read_line(&mut line)
                .map_err(|e| self.err(e.to_string()))?;
            if n == 0 {
                return Err(self.err("plugin closed its output"));
            }
            out.push(line.trim_end_matches(['\n', '\r']).to_string());
        }
        Ok(out)
    }
}

impl Drop for PluginNormalizer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.0.kill();
            let _ = io.0.wait();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerFilter {
    Agent,
    User,
    All,
}

impl SpeakerFilter {
    fn admits(self, s: Speaker) -> bool {
        match self {
            SpeakerFilter::Agent => s == Speaker::Agent,
            SpeakerFilter::User => s == Speaker::User,
            SpeakerFilter::All => true,
        }
    }
}

/// Distinct normalized tokens over the matching turns.
pub fn vocabulary<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    speakers: SpeakerFilter,
    normalizer: &dyn Normalizer,
) -> Result<BTreeSet<String>, StatsError> {
    let mut set = BTreeSet::new();
    for c in conversations {
        for t in c.turns.iter().filter(|t| speakers.admits(t.speaker)) {
            set.extend(normalizer.normalize(&tokenize(&t.text))?);
        }
    }
    Ok(set)
}

pub fn vocabulary_size<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    speakers: SpeakerFilter,
    normalizer: &dyn Normalizer,
) -> Result<usize, StatsError> {
    Ok(vocabulary(conversations, speakers, normalizer)?.len())
}

/// Five-number summary plus mean. Quartiles interpolate linearly between
/// order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Distribution {
    /// `None` for an empty sample.
    pub fn of(values: &[usize]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

pub fn message_lengths<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    speakers: SpeakerFilter,
) -> Vec<usize> {
    conversations
        .into_iter()
        .flat_map(|c| c.turns.iter())
        .filter(|t| speakers.admits(t.speaker))
        .map(|t| word_count(&t.text))
        .collect()
}

pub fn words_per_message<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    speakers: SpeakerFilter,
) -> Option<Distribution> {
    Distribution::of(&message_lengths(conversations, speakers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Agent / User / Gap columns.
    Persona,
    /// Agent / User / Conv columns.
    Int,
}

impl FromStr for Grouping {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persona" => Ok(Grouping::Persona),
            "int" => Ok(Grouping::Int),
            other => Err(StatsError::UnknownGrouping(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub setup: String,
    pub conversations: usize,
    pub agent_vocab: usize,
    pub user_vocab: usize,
    /// |agent - user|; persona grouping only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<usize>,
    /// Whole-conversation vocabulary; int grouping only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conversation_vocab: Option<usize>,
    pub agent_words: Option<Distribution>,
    pub user_words: Option<Distribution>,
}

impl StatsRow {
    pub fn persona(setup: &str, agent_vocab: usize, user_vocab: usize) -> Self {
        Self {
            setup: setup.to_string(),
            conversations: 0,
            agent_vocab,
            user_vocab,
            gap: Some(agent_vocab.abs_diff(user_vocab)),
            conversation_vocab: None,
            agent_words: None,
            user_words: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub grouping: Grouping,
    pub rows: Vec<StatsRow>,
}

/// One row per setup id, in setup order.
pub fn stats_report(
    corpus: &[Conversation],
    grouping: Grouping,
    normalizer: &dyn Normalizer,
) -> Result<StatsReport, StatsError> {
    let mut by_setup: BTreeMap<&str, Vec<&Conversation>> = BTreeMap::new();
    for c in corpus {
        by_setup.entry(&c.setup_id).or_default().push(c);
    }
    let mut rows = Vec::new();
    for (setup, convs) in by_setup {
        let convs = || convs.iter().copied();
        let agent = vocabulary(convs(), SpeakerFilter::Agent, normalizer)?;
        let user = vocabulary(convs(), SpeakerFilter::User, normalizer)?;
        let (gap, conversation_vocab) = match grouping {
            Grouping::Persona => (Some(agent.len().abs_diff(user.len())), None),
            Grouping::Int => (None, Some(agent.union(&user).count())),
        };
        rows.push(StatsRow {
            setup: setup.to_string(),
            conversations: convs().count(),
            agent_vocab: agent.len(),
            user_vocab: user.len(),
            gap,
            conversation_vocab,
            agent_words: words_per_message(convs(), SpeakerFilter::Agent),
            user_words: words_per_message(convs(), SpeakerFilter::User),
        });
    }
    Ok(StatsReport { grouping, rows })
}

impl StatsReport {
    pub fn render_text(&self) -> String {
        let third = match self.grouping {
            Grouping::Persona => "Gap",
            Grouping::Int => "Conv",
        };
        let mut out = format!(
            "{:<24} | {:>8} | {:>8} | {:>8}\n",
            "Config.", "Agent", "User", third
        );
        for r in &self.rows {
            let last = match self.grouping {
                Grouping::Persona => r.gap,
                Grouping::Int => r.conversation_vocab,
            };
            let last = last.map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{:<24} | {:>8} | {:>8} | {:>8}",
                r.setup, r.agent_vocab, r.user_vocab, last
            );
        }
        out
    }
}

/// Per-message word counts, one CSV line each, for box plots.
pub fn plot_csv(corpus: &[Conversation]) -> String {
    let mut out = String::from("setup,speaker,session_id,turn,words\n");
    for c in corpus {
        for (i, t) in c.turns.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.setup_id,
                t.speaker,
                c.session_id,
                i,
                word_count(&t.text)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::SessionConfig;
    use proptest::prelude::*;

    fn conv(setup: &str, turns: &[&str]) -> Conversation {
        let mut c = Conversation::new(
            &format!("{setup}-{}", turns.len()),
            setup,
            SessionConfig::int("une poire", "m"),
        );
        for (i, t) in turns.iter().enumerate() {
            let s = if i % 2 == 0 {
                Speaker::User
            } else {
                Speaker::Agent
            };
            c.push_turn(s, *t, None, i as u64 + 1).unwrap();
        }
        c
    }

    #[test]
    fn tokenizer_splits_elision_and_drops_punctuation() {
        assert_eq!(
            tokenize("Je vois l'image, non ?"),
            ["Je", "vois", "l", "image", "non"]
        );
        assert_eq!(tokenize("C’est « bien » !"), ["C", "est", "bien"]);
        assert_eq!(word_count("Je vois l'image."), 3);
    }

    #[test]
    fn vocabulary_examples() {
        assert_eq!(
            vocabulary_size([], SpeakerFilter::All, &SurfaceLower).unwrap(),
            0
        );
        let c = conv(
            "x",
            &["bonjour", "je vois une poire", "ah", "une poire verte"],
        );
        // {je, vois, une, poire, verte}
        assert_eq!(
            vocabulary_size([&c], SpeakerFilter::Agent, &SurfaceLower).unwrap(),
            5
        );
        assert_eq!(
            vocabulary_size([&c], SpeakerFilter::User, &SurfaceLower).unwrap(),
            2
        );
        assert_eq!(
            vocabulary_size([&c], SpeakerFilter::All, &SurfaceLower).unwrap(),
            7
        );
    }

    #[test]
    fn words_per_message_examples() {
        let one = conv("x", &["bonjour"]);
        assert_eq!(
            words_per_message([&one], SpeakerFilter::All).unwrap().mean,
            1.0
        );
        let two = conv("x", &["a", "deux mots", "b", "quatre mots en tout"]);
        let d = words_per_message([&two], SpeakerFilter::Agent).unwrap();
        assert_eq!((d.mean, d.median), (3.0, 3.0));
        let d = Distribution::of(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!((d.q1, d.median, d.q3), (2.0, 3.0, 4.0));
        let d = Distribution::of(&[1, 2, 3, 4]).unwrap();
        assert_eq!((d.q1, d.median, d.q3), (1.75, 2.5, 3.25));
        assert!(Distribution::of(&[]).is_none());
    }

    #[test]
    fn persona_row_layout() {
        let report = StatsReport {
            grouping: Grouping::Persona,
            rows: vec![StatsRow::persona("BB1", 772, 687)],
        };
        let text = report.render_text();
        let lines: Vec<&str> = text.lines().collect();
        fn cells(l: &str) -> Vec<&str> {
            l.split('|').map(str::trim).collect()
        }
        assert_eq!(cells(lines[0]), ["Config.", "Agent", "User", "Gap"]);
        assert_eq!(cells(lines[1]), ["BB1", "772", "687", "85"]);
    }

    #[test]
    fn int_grouping_and_unknown() {
        let c = conv("vicuna", &["je vois", "une poire"]);
        let r = stats_report(&[c], Grouping::Int, &SurfaceLower).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].conversation_vocab, Some(4));
        assert!(r.render_text().lines().next().unwrap().ends_with("Conv"));
        assert!(matches!(
            "dialogue".parse::<Grouping>(),
            Err(StatsError::UnknownGrouping(_))
        ));
    }

    #[test]
    fn plugin_round_trip_and_unreachable() {
        // strips a trailing plural s
        let p = PluginNormalizer::spawn("sed", &["-u".into(), "s/s$//".into()]).unwrap();
        assert_eq!(p.normalize(&["poires", "vert"]).unwrap(), ["poire", "vert"]);
        let c = conv("x", &["a", "poire poires"]);
        assert_eq!(vocabulary_size([&c], SpeakerFilter::Agent, &p).unwrap(), 1);
        assert!(matches!(
            PluginNormalizer::spawn("no-such-lemmatizer-binary", &[]),
            Err(StatsError::Plugin { .. })
        ));
    }

    #[test]
    fn plot_csv_lines() {
        let c = conv("s", &["un deux", "trois"]);
        assert_eq!(
            plot_csv(&[c]),
            "setup,speaker,session_id,turn,words\ns,user,s-2,0,2\ns,agent,s-2,1,1\n"
        );
    }

    const WORDS: &[&str] = &[
        "je", "Je", "vois", "une", "poire", "verte", "l'image", "chat", "ÉTÉ", "été",
    ];

    fn arb_corpus() -> impl Strategy<Value = Vec<Vec<Vec<usize>>>> {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec(0..WORDS.len(), 1..6), 0..6),
            0..5,
        )
    }

    fn build(spec: &[Vec<Vec<usize>>]) -> Vec<Conversation> {
        spec.iter()
            .enumerate()
            .map(|(n, turns)| {
                let texts: Vec<String> = turns
                    .iter()
                    .map(|ws| ws.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" "))
                    .collect();
                let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                let mut c = conv(&format!("s{}", n % 2), &refs);
                c.session_id = format!("c{n}");
                c
            })
            .collect()
    }

    /// Independent recount: split on whitespace and apostrophes, lowercase,
    /// insert into a hash set.
    fn oracle(spec: &[Vec<Vec<usize>>], agent_only: bool) -> usize {
        let mut set = std::collections::HashSet::new();
        for turns in spec {
            for (i, ws) in turns.iter().enumerate() {
                if agent_only && i % 2 == 0 {
                    continue;
                }
                for &w in ws {
                    for part in WORDS[w].split('\'') {
                        set.insert(part.to_lowercase());
                    }
                }
            }
        }
        set.len()
    }

    proptest! {
        #[test]
        fn matches_set_oracle_and_properties(spec in arb_corpus()) {
            let corpus = build(&spec);
            let all = vocabulary_size(&corpus, SpeakerFilter::All, &SurfaceLower).unwrap();
            let agent = vocabulary_size(&corpus, SpeakerFilter::Agent, &SurfaceLower).unwrap();
            let user = vocabulary_size(&corpus, SpeakerFilter::User, &SurfaceLower).unwrap();
            prop_assert_eq!(all, oracle(&spec, false));
            prop_assert_eq!(agent, oracle(&spec, true));
            prop_assert!(all <= agent + user);
            let a = vocabulary(&corpus, SpeakerFilter::Agent, &SurfaceLower).unwrap();
            let u = vocabulary(&corpus, SpeakerFilter::User, &SurfaceLower).unwrap();
            prop_assert_eq!(all == agent + user, a.is_disjoint(&u));
            // monotone under adding a conversation
            if !corpus.is_empty() {
                let fewer = vocabulary_size(&corpus[1..], SpeakerFilter::All, &SurfaceLower).unwrap();
                prop_assert!(fewer <= all);
            }
            let report = stats_report(&corpus, Grouping::Persona, &SurfaceLower).unwrap();
            for r in &report.rows {
                prop_assert_eq!(r.gap, Some(r.agent_vocab.abs_diff(r.user_vocab)));
            }
            // mean recount
            let lens: Vec<usize> = spec.iter().flatten().map(Vec::len).collect();
            if let Some(d) = words_per_message(&corpus, SpeakerFilter::All) {
                let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
                prop_assert!((d.mean - mean).abs() < 1e-12);
            }
        }
    }
}
