use std::collections::HashMap;
use std::path::Path;

use crate::{CoreError, Result};

/// ARPAbet symbols without stress markers.
pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];
pub const WORD_BOUNDARY: usize = ARPABET.len();
pub const FIRST_CHAR: usize = WORD_BOUNDARY + 1;
pub const UNKNOWN: usize = FIRST_CHAR + 26;
pub const INVENTORY_SIZE: usize = UNKNOWN + 1;

pub static DEMO_LEXICON: &str = include_str!("../../data/demo_lexicon.txt");

pub fn symbol_id(symbol: &str) -> Option<usize> {
    let base = symbol.trim_end_matches(|c: char| c.is_ascii_digit());
    ARPABET.iter().position(|&s| s.eq_ignore_ascii_case(base))
}

pub fn symbol_name(id: usize) -> String {
    match id {
        i if i < WORD_BOUNDARY => ARPABET[i].to_string(),
        WORD_BOUNDARY => "|".to_string(),
        i if i < UNKNOWN => format!("<{}>", (b'a' + (i - FIRST_CHAR) as u8) as char),
        _ => "<unk>".to_string(),
    }
}

fn char_id(c: char) -> usize {
    let c = c.to_ascii_lowercase();
    if c.is_ascii_lowercase() {
        FIRST_CHAR + (c as u8 - b'a') as usize
    } else {
        UNKNOWN
    }
}

/// Case-insensitive word → phoneme-id map.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    /// Parses `WORD PH1 PH2 ...` lines; `;` and `#` start comment lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_lowercase();
            let ids = parts
                .map(|p| {
                    symbol_id(p).ok_or_else(|| CoreError::Format(format!("lexicon line {}: unknown phoneme {p:?}", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if ids.is_empty() {
                return Err(CoreError::Format(format!("lexicon line {}: {word:?} has no phonemes", n + 1)));
            }
            entries.entry(word).or_insert(ids);
        }
        Ok(Lexicon { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_LEXICON).expect("bundled lexicon is well formed")
    }

    pub fn get(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words in sorted order, for deterministic sampling.
    pub fn words(&self) -> Vec<&str> {
        let mut w: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        w.sort_unstable();
        w
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    /// Offset of the first phoneme of each word in `ids`.
    pub word_starts: Vec<usize>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn symbols(&self) -> Vec<String> {
        self.ids.iter().map(|&i| symbol_name(i)).collect()
    }
}

/// Lowercased words with surrounding punctuation stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Maps text to phoneme ids with a boundary token between words.
/// Out-of-lexicon words are spelled with character tokens.
pub fn phonemize(text: &str, lexicon: &Lexicon) -> PhonemeSequence {
    let mut seq = PhonemeSequence::default();
    for (i, word) in tokenize(text).iter().enumerate() {
        if i > 0 {
            seq.ids.push(WORD_BOUNDARY);
        }
        seq.word_starts.push(seq.ids.len());
        match lexicon.get(word) {
            Some(ids) => seq.ids.extend_from_slice(ids),
            None => seq.ids.extend(word.chars().map(char_id)),
        }
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Lexicon {
        Lexicon::parse("a AH0\n").unwrap()
    }

    #[test]
    fn inventory_has_67_ids() {
        assert_eq!(INVENTORY_SIZE, 67);
        assert_eq!(symbol_name(WORD_BOUNDARY), "|");
        assert_eq!(symbol_name(FIRST_CHAR), "<a>");
        assert_eq!(symbol_name(UNKNOWN), "<unk>");
    }

    #[test]
    fn single_word() {
        let s = phonemize("a", &tiny());
        assert_eq!(s.ids, vec![symbol_id("AH").unwrap()]);
    }

    #[test]
    fn boundaries_between_words() {
        let s = phonemize("a a", &tiny());
        let ah = symbol_id("AH").unwrap();
        assert_eq!(s.ids, vec![ah, WORD_BOUNDARY, ah]);
        assert_eq!(s.word_starts, vec![0, 2]);
    }

    #[test]
    fn unknown_word_falls_back_to_characters() {
        let s = phonemize("zzq", &tiny());
        assert_eq!(s.symbols(), vec!["<z>", "<z>", "<q>"]);
    }

    #[test]
    fn case_and_punctuation_ignored() {
        let lex = Lexicon::demo();
        assert_eq!(phonemize("The DOG.", &lex), phonemize("the dog", &lex));
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(phonemize("   ", &tiny()).is_empty());
    }

    #[test]
    fn bad_lexicon_line_reports_line_number() {
        let err = Lexicon::parse("ok AH\nbad QQ\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn demo_lexicon_loads() {
        let lex = Lexicon::demo();
        assert!(lex.len() > 80);
        assert_eq!(lex.get("BLUE").unwrap().len(), 3);
    }
}
