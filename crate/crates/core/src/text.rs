//! Word-level tokenization shared by language detection and corpus statistics.

use unicode_segmentation::UnicodeSegmentation;

const APOSTROPHES: &[char] = &['\'', '\u{2019}', '\u{02BC}'];

/// Unicode word segmentation with punctuation dropped and elided clitics
/// split off (`l'image` gives `l`, `image`).
pub fn word_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.unicode_words()
        .flat_map(|w| w.split(APOSTROPHES))
        .filter(|w| !w.is_empty())
}

/// Lowercased [`word_tokens`].
pub fn lower_tokens(text: &str) -> Vec<String> {
    word_tokens(text).map(str::to_lowercase).collect()
}

/// Number of words in a message, clitics not split.
pub fn word_count(text: &str) -> usize {
    text.unicode_words().count()
}

/// English display name for a language code, used to fill `{language}` slots.
pub fn language_name(code: &str) -> &str {
    match code {
        "fr" => "French",
        "en" => "English",
        "es" => "Spanish",
        "de" => "German",
        "it" => "Italian",
        "pt" => "Portuguese",
        "nl" => "Dutch",
        other => other,
    }
}
