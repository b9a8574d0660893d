//! Sentence segmentation used by the incomplete-output and too-long rules.

use std::ops::Range;

const TERMINALS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &[')', ']', '"', '\'', '»', '”', '’', '*'];

/// Lowercased words that take a period without ending a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "m", "mm", "mme", "mmes", "mlle", "mlles", "dr", "pr", "prof", "st", "ste", "mr", "mrs", "ms",
    "jr", "sr", "etc", "cf", "vs", "env", "p.ex", "e.g", "i.e", "av", "apr", "no", "n°", "vol",
    "chap", "fig", "tél", "bd",
];

fn is_abbreviation(word: &str) -> bool {
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Single-letter initials such as "J. K.".
    let mut chars = word.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase())
}

fn has_content(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

/// Byte ranges of the sentences of `text`, surrounding whitespace excluded.
/// A sentence ends after a run of terminal punctuation (plus closing quotes
/// or brackets) followed by whitespace or the end of text, or at a blank
/// line. Fragments without letters or digits attach to the previous sentence.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut raw: Vec<Range<usize>> = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' && chars.get(i + 1).is_some_and(|&(_, n)| n == '\n') {
            raw.push(start..pos);
            while i < chars.len() && chars[i].1.is_whitespace() {
                i += 1;
            }
            start = chars.get(i).map_or(text.len(), |&(p, _)| p);
            continue;
        }
        if !TERMINALS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && TERMINALS.contains(&chars[j].1) {
            j += 1;
        }
        loop {
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            // French spacing: "non. »".
            let spaced = matches!(chars.get(j), Some(&(_, ' ' | '\u{a0}' | '\u{202f}')))
                && chars.get(j + 1).is_some_and(|&(_, n)| n == '»');
            if !spaced {
                break;
            }
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        let single_period = c == '.' && j == i + 1;
        let abbreviated = single_period && {
            let word_start = text[..pos].rfind(char::is_whitespace).map_or(0, |k| {
                k + text[k..].chars().next().map_or(1, char::len_utf8)
            });
            let word = text[word_start..pos].trim_start_matches(['(', '"', '«', '\'']);
            !word.is_empty() && is_abbreviation(word)
        };
        if at_boundary && !abbreviated {
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            raw.push(start..end);
            start = end;
        }
        i = j.max(i + 1);
    }
    raw.push(start..text.len());

    let mut out: Vec<Range<usize>> = Vec::new();
    for r in raw {
        let s = &text[r.clone()];
        let lead = s.len() - s.trim_start().len();
        let trimmed = (r.start + lead)..(r.start + lead + s.trim().len());
        if trimmed.is_empty() {
            continue;
        }
        match out.last_mut() {
            Some(prev) if !has_content(&text[trimmed.clone()]) => prev.end = trimmed.end,
            _ => out.push(trimmed),
        }
    }
    out
}

pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

pub fn sentence_count(text: &str) -> usize {
    sentence_spans(text).len()
}

/// Whether `sentence` ends with terminal punctuation, closers aside.
pub fn is_complete(sentence: &str) -> bool {
    sentence
        .trim_end()
        .trim_end_matches(CLOSERS)
        .trim_end()
        .ends_with(TERMINALS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_examples() {
        assert_eq!(split_sentences("Bonjour. Ça va?"), ["Bonjour.", "Ça va?"]);
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }

    #[test]
    fn int_message_r2_has_three_sentences() {
        let r2 = "D'après la description que tu as donnée, cette image est en effet un peu étrange. \
Elle semble être un fruit pourri avec des yeux, des bras et des jambes, ce qui est plutôt inhabituel. \
Mais en termes de promotional campaign, cela pourrait être utilisé pour susciter l'interêt et \
l'engagement de la part des gens, en les incitant à se demander ce que cela signifie et ce que l'on \
veut leur transmettre avec cette image.";
        assert_eq!(sentence_count(r2), 3);
    }

    #[test]
    fn abbreviations_and_initials() {
        assert_eq!(sentence_count("M. Dupont est là. Il dort."), 2);
        assert_eq!(sentence_count("J'ai vu J. K. Rowling hier."), 1);
        assert_eq!(
            sentence_count("Des fruits, des légumes, etc. et du pain."),
            1
        );
        assert_eq!(sentence_count("Il coûte 3.5 euros."), 1);
    }

    #[test]
    fn french_spacing_quotes_and_ellipses() {
        assert_eq!(
            split_sentences("Comment vas-tu ? Moi, ça va !"),
            ["Comment vas-tu ?", "Moi, ça va !"]
        );
        assert_eq!(
            split_sentences("Il a dit « non. » Puis il est parti… Bizarre?!"),
            ["Il a dit « non. »", "Puis il est parti…", "Bizarre?!"]
        );
        assert_eq!(split_sentences("Salut ! 😊"), ["Salut ! 😊"]);
        assert_eq!(split_sentences("Oui\n\nNon"), ["Oui", "Non"]);
    }

    #[test]
    fn completeness() {
        assert!(is_complete("Je vais bien."));
        assert!(is_complete("Vraiment ?)"));
        assert!(!is_complete("Je pense que"));
    }

    proptest! {
        #[test]
        fn spans_are_ordered_trimmed_and_non_empty(s in "[a-zé .!?…\n]{0,60}") {
            let spans = sentence_spans(&s);
            let mut prev = 0;
            for r in &spans {
                prop_assert!(r.start >= prev && r.start < r.end);
                let t = &s[r.clone()];
                prop_assert_eq!(t, t.trim());
                prev = r.end;
            }
        }

        #[test]
        fn words_are_preserved(s in "[a-z]{1,6}([ ]?[.!?][ ][a-z]{1,6}){0,6}") {
            let joined: String = split_sentences(&s).concat();
            let strip = |x: &str| x.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&s));
        }
    }
}
