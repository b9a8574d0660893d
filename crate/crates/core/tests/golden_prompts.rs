//! Every built-in template, rendered with fixture slots, must match its
//! golden file byte for byte.

use roleplay_core::prompt::{
    render_demonstration, render_prompt, ContextKind, ConversationHistory, HistoryTurn,
    PromptSections, Section, SituationalContext, Speaker,
};

const PERSONA: [&str; 2] = ["I have a husky named Claude.", "I am an accountant."];

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn persona_history() -> ConversationHistory {
    ConversationHistory::new(vec![
        HistoryTurn::new(Speaker::User, "Bonjour je m'appelle Jean-Claude"),
        HistoryTurn::new(
            Speaker::Agent,
            "Salut Jean, ravi de te rencontrer. Mon nom est John. Comment vas-tu?",
        ),
    ])
    .unwrap()
}

fn persona_context() -> SituationalContext {
    let mut ctx = SituationalContext::new();
    for p in PERSONA {
        ctx.push(ContextKind::PersonaTraits, p);
    }
    ctx
}

fn assert_golden(task: &str, sections: &PromptSections, latest: &str) {
    let rendered = render_prompt(task, sections, latest).unwrap();
    let expected = golden(task);
    assert_eq!(
        rendered.text, expected,
        "{task} differs from its golden file"
    );
    for slot in [
        "{persona}",
        "{history}",
        "{user_message}",
        "{summary}",
        "{language}",
    ] {
        assert!(!rendered.text.contains(slot));
    }
}

#[test]
fn vicuna_basis() {
    let s = PromptSections::new(SituationalContext::new(), persona_history(), "fr");
    assert_golden("vicuna_basis", &s, "Ça va bien John");
}

#[test]
fn fsb() {
    let mut ctx = persona_context();
    let shot = render_demonstration(
        &["I love cats.".to_string(), "I live in Lyon.".to_string()],
        &[
            (Speaker::User, "Salut !".to_string()),
            (Speaker::Agent, "Bonjour ! Tu aimes les chats ?".to_string()),
        ],
    );
    ctx.push(ContextKind::Demonstrations, shot);
    let s = PromptSections::new(ctx, persona_history(), "fr");
    assert_golden("fsb", &s, "Ça va bien John");
}

#[test]
fn persona_shallow() {
    let s = PromptSections::new(persona_context(), persona_history(), "fr");
    assert_golden("persona_shallow", &s, "Ça va bien John");
}

#[test]
fn persona_advanced() {
    let mut ctx = persona_context();
    ctx.set(
        ContextKind::UserMemory,
        "User is a computer specialist with a Yorkie named Nino",
    );
    ctx.set(
        ContextKind::EpisodeSummary,
        "The user is called Jean-Claude and likes classical music.",
    );
    let s = PromptSections::new(ctx, persona_history(), "fr");
    assert_golden("persona_advanced", &s, "Ça va bien John");
    let p = render_prompt("persona_advanced", &s, "Ça va bien John").unwrap();
    assert_eq!(
        p.order(),
        [
            Section::System,
            Section::Context,
            Section::Response,
            Section::History
        ]
    );
}

#[test]
fn int() {
    let mut ctx = SituationalContext::new();
    ctx.set(ContextKind::ImageDescription, "a pear with arms and legs");
    let history = ConversationHistory::new(vec![
        HistoryTurn::new(
            Speaker::User,
            "Bonjour Lilia, je vois une poire avec des bras et des pieds",
        ),
        HistoryTurn::new(
            Speaker::Agent,
            "Je vois également une poire avec des bras et des pieds. C'est plutôt original, non ?",
        ),
    ])
    .unwrap();
    let s = PromptSections::new(ctx, history, "fr");
    assert_golden("int", &s, "Oui, mais est-ce normal?");
    let p = render_prompt("int", &s, "Oui, mais est-ce normal?").unwrap();
    assert!(p.text.ends_with("ASSISTANT:\nASSISTANT:"));
    assert_eq!(
        p.order(),
        [
            Section::System,
            Section::History,
            Section::Context,
            Section::Response
        ]
    );
    assert!(p
        .section_text(Section::Context)
        .contains("The picture is as follows"));
    assert!(p
        .section_text(Section::Response)
        .starts_with("You always speak French."));
}
