//! Slot templates.
//!
//! Syntax:
//! - `{name}` is a slot, substituted verbatim;
//! - `{?name}...{/name}` is emitted only when `name` is supplied and non-empty;
//! - `{@system}`, `{@context}`, `{@response}`, `{@history}` mark where each
//!   prompt section starts and produce no output;
//! - `{{` and `}}` are literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use super::{PromptError, Section};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Text(String),
    Slot(String),
    Mark(Section),
    Optional { slot: String, body: Vec<Part> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    parts: Vec<Part>,
    required: Vec<String>,
    optional: Vec<String>,
    marks: Vec<Section>,
}

/// Rendered text and the byte range of each section, in output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub text: String,
    pub spans: Vec<(Section, Range<usize>)>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let syntax = |msg: String| PromptError::TemplateSyntax {
            template: name.to_string(),
            message: msg,
        };
        // stack of (open slot, parts collected so far)
        let mut stack: Vec<(Option<String>, Vec<Part>)> = vec![(None, Vec::new())];
        let mut text = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '}' => return Err(syntax(format!("stray `}}` at byte {pos}"))),
                '{' => {
                    let rest = &source[pos + 1..];
                    let end = rest
                        .find('}')
                        .ok_or_else(|| syntax(format!("unclosed `{{` at byte {pos}")))?;
                    let tag = &rest[..end];
                    for _ in 0..tag.chars().count() + 1 {
                        chars.next();
                    }
                    let top = &mut stack.last_mut().expect("root frame").1;
                    if !text.is_empty() {
                        top.push(Part::Text(std::mem::take(&mut text)));
                    }
                    if let Some(sec) = tag.strip_prefix('@') {
                        let section = Section::from_marker(sec)
                            .ok_or_else(|| syntax(format!("unknown section `{sec}`")))?;
                        if stack.len() > 1 {
                            return Err(syntax(format!(
                                "section marker `{sec}` inside an optional block"
                            )));
                        }
                        stack[0].1.push(Part::Mark(section));
                    } else if let Some(slot) = tag.strip_prefix('?') {
                        if !is_ident(slot) {
                            return Err(syntax(format!("bad slot name `{slot}`")));
                        }
                        stack.push((Some(slot.to_string()), Vec::new()));
                    } else if let Some(slot) = tag.strip_prefix('/') {
                        let (open, body) = stack.pop().expect("frame");
                        match open {
                            Some(o) if o == slot => stack
                                .last_mut()
                                .expect("parent frame")
                                .1
                                .push(Part::Optional { slot: o, body }),
                            _ => return Err(syntax(format!("unmatched `{{/{slot}}}`"))),
                        }
                    } else if is_ident(tag) {
                        top.push(Part::Slot(tag.to_string()));
                    } else {
                        return Err(syntax(format!("bad slot `{{{tag}}}`")));
                    }
                }
                c => text.push(c),
            }
        }
        if stack.len() != 1 {
            let open = stack.last().and_then(|f| f.0.clone()).unwrap_or_default();
            return Err(syntax(format!("optional block `{open}` is never closed")));
        }
        let mut parts = stack.pop().expect("root").1;
        if !text.is_empty() {
            parts.push(Part::Text(text));
        }

        let mut required = Vec::new();
        let mut optional = Vec::new();
        let mut marks = Vec::new();
        collect(&parts, false, &mut required, &mut optional, &mut marks);
        let mut seen = BTreeSet::new();
        for s in required.iter().chain(&optional) {
            if !seen.insert(s.as_str()) {
                return Err(syntax(format!("slot `{s}` appears more than once")));
            }
        }
        Ok(Self {
            name: name.to_string(),
            parts,
            required,
            optional,
            marks,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Slots that must be supplied.
    pub fn required_slots(&self) -> &[String] {
        &self.required
    }

    /// Slots inside optional blocks.
    pub fn optional_slots(&self) -> &[String] {
        &self.optional
    }

    pub fn references(&self, slot: &str) -> bool {
        self.required
            .iter()
            .chain(&self.optional)
            .any(|s| s == slot)
    }

    /// Section markers in the order they appear.
    pub fn section_order(&self) -> &[Section] {
        &self.marks
    }

    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<Rendered, PromptError> {
        if let Some(missing) = self.required.iter().find(|s| !values.contains_key(*s)) {
            return Err(PromptError::MissingSlot {
                template: self.name.clone(),
                slot: missing.clone(),
            });
        }
        let mut out = String::new();
        let mut starts = Vec::new();
        emit(&self.parts, values, &mut out, &mut starts);
        let spans = starts
            .iter()
            .enumerate()
            .map(|(i, &(sec, start))| {
                let end = starts.get(i + 1).map_or(out.len(), |&(_, s)| s);
                (sec, start..end)
            })
            .collect();
        Ok(Rendered { text: out, spans })
    }
}

fn collect(
    parts: &[Part],
    nested: bool,
    required: &mut Vec<String>,
    optional: &mut Vec<String>,
    marks: &mut Vec<Section>,
) {
    for p in parts {
        match p {
            Part::Text(_) => {}
            Part::Slot(s) if nested => optional.push(s.clone()),
            Part::Slot(s) => required.push(s.clone()),
            Part::Mark(m) => marks.push(*m),
            Part::Optional { body, .. } => collect(body, true, required, optional, marks),
        }
    }
}

fn emit(
    parts: &[Part],
    values: &BTreeMap<String, String>,
    out: &mut String,
    starts: &mut Vec<(Section, usize)>,
) {
    for p in parts {
        match p {
            Part::Text(t) => out.push_str(t),
            Part::Slot(s) => out.push_str(values.get(s).map_or("", String::as_str)),
            Part::Mark(m) => starts.push((*m, out.len())),
            Part::Optional { slot, body } => {
                if values.get(slot).is_some_and(|v| !v.is_empty()) {
                    emit(body, values, out, starts);
                }
            }
        }
    }
}
