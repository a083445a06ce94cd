use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::TokenSequence;
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

pub trait Tokenizer {
    /// Token ids of `text`, without sentinels.
    fn encode(&self, text: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn bos_id(&self) -> u32;
    fn eos_id(&self) -> u32;
}

/// Wraps `text` in begin/end sentinels and truncates to `max_len` ids.
pub fn tokenize<T: Tokenizer + ?Sized>(text: &str, max_len: usize, tokenizer: &T) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be at least 2, got {max_len}")));
    }
    if text.trim().is_empty() {
        return Err(Error::domain("cannot tokenize empty text"));
    }
    let mut ids = Vec::with_capacity(max_len.min(text.len() + 2));
    ids.push(tokenizer.bos_id());
    ids.extend(tokenizer.encode(text).into_iter().take(max_len - 2));
    ids.push(tokenizer.eos_id());
    TokenSequence::new(ids, tokenizer.vocab_size())
}

/// Lowercasing whitespace tokenizer with a vocabulary fitted on a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitespaceTokenizer {
    /// Word for every id; ids 0..4 are the special tokens.
    pub words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];

fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
}

impl WhitespaceTokenizer {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, index }
    }

    /// Keeps words seen at least `min_count` times, most frequent first, up
    /// to `max_size` entries including the special tokens.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(ranked.into_iter().map(|(w, _)| w).take(max_size.saturating_sub(SPECIALS.len())));
        Self::from_words(words)
    }

    fn rebuild(mut self) -> Self {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        self
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .map(|w| self.index.get(&w).copied().unwrap_or(UNK_ID))
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.words.len()
    }

    fn bos_id(&self) -> u32 {
        BOS_ID
    }

    fn eos_id(&self) -> u32 {
        EOS_ID
    }
}

/// Greedy longest-match-first subword tokenizer over a `vocab.txt` file, as
/// shipped with BERT-family checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPieceTokenizer {
    pub tokens: Vec<String>,
    pub lowercase: bool,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

const MAX_WORD_CHARS: usize = 100;

impl WordPieceTokenizer {
    pub fn new(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        let t = Self {
            tokens,
            lowercase,
            index: HashMap::new(),
        }
        .rebuild();
        for special in ["[UNK]", "[CLS]", "[SEP]"] {
            if !t.index.contains_key(special) {
                return Err(Error::Config(format!("WordPiece vocabulary lacks {special}")));
            }
        }
        Ok(t)
    }

    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim_end().to_string()).collect(), lowercase)
    }

    fn rebuild(mut self) -> Self {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        self
    }

    fn id(&self, token: &str) -> u32 {
        self.index[token]
    }

    fn basic_split(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase { text.to_lowercase() } else { text.to_string() };
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut cur = String::new();
            for c in word.chars() {
                if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                } else {
                    cur.push(c);
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.id("[UNK]"));
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.id("[UNK]"));
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in self.basic_split(text) {
            self.word_pieces(&w, &mut out);
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn bos_id(&self) -> u32 {
        self.id("[CLS]")
    }

    fn eos_id(&self) -> u32 {
        self.id("[SEP]")
    }
}

/// The tokenizer persisted alongside a trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextTokenizer {
    Whitespace(WhitespaceTokenizer),
    WordPiece(WordPieceTokenizer),
}

impl TextTokenizer {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: TextTokenizer = serde_json::from_str(&text)?;
        Ok(match t {
            TextTokenizer::Whitespace(w) => TextTokenizer::Whitespace(w.rebuild()),
            TextTokenizer::WordPiece(w) => TextTokenizer::WordPiece(w.rebuild()),
        })
    }

    fn inner(&self) -> &dyn Tokenizer {
        match self {
            TextTokenizer::Whitespace(t) => t,
            TextTokenizer::WordPiece(t) => t,
        }
    }
}

impl Tokenizer for TextTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner().encode(text)
    }

    fn vocab_size(&self) -> usize {
        self.inner().vocab_size()
    }

    fn bos_id(&self) -> u32 {
        self.inner().bos_id()
    }

    fn eos_id(&self) -> u32 {
        self.inner().eos_id()
    }
}
