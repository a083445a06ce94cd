use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{ArticleRecord, MetadataVector, Normalizer};
use crate::{Error, Result};

/// Versioned English stop-word list used for the baseline vocabulary.
pub const STOP_WORDS: &str = include_str!("../../data/stopwords_en_v1.txt");

fn stop_words() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOP_WORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lowercases, strips punctuation and drops stop words.
pub fn normalize_words(text: &str) -> Vec<String> {
    let stops = stop_words();
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty() && !stops.contains(w))
        .map(str::to_string)
        .collect()
}

/// The top-k most frequent words of a corpus, most frequent first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineVocab {
    pub terms: Vec<String>,
}

impl BaselineVocab {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Counts word occurrences over title and abstract and keeps the `k` most
/// frequent; equal counts are ordered lexicographically.
pub fn build_vocab(records: &[ArticleRecord], k: usize) -> Result<BaselineVocab> {
    if records.is_empty() {
        return Err(Error::domain("cannot build a vocabulary from no records"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for w in normalize_words(&r.title).into_iter().chain(normalize_words(&r.abstract_text)) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() < k {
        log::warn!("only {} distinct words available for a top-{k} vocabulary", ranked.len());
    }
    ranked.truncate(k);
    Ok(BaselineVocab {
        terms: ranked.into_iter().map(|(w, _)| w).collect(),
    })
}

/// Feature vector for the classical baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeatures {
    /// Presence indicator per vocabulary term, each 0.0 or 1.0.
    pub onehot: Vec<f64>,
    pub metadata: MetadataVector,
}

impl BaselineFeatures {
    /// One-hot block followed by the normalized metadata.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.onehot.clone();
        v.extend_from_slice(&self.metadata.values);
        v
    }
}

pub fn featurize_baseline(record: &ArticleRecord, vocab: &BaselineVocab, normalizer: &Normalizer) -> BaselineFeatures {
    let present: BTreeSet<String> = normalize_words(&record.title)
        .into_iter()
        .chain(normalize_words(&record.abstract_text))
        .collect();
    BaselineFeatures {
        onehot: vocab
            .terms
            .iter()
            .map(|t| if present.contains(t) { 1.0 } else { 0.0 })
            .collect(),
        metadata: normalizer.transform_record(record),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_article;
    use proptest::prelude::*;

    fn doc(id: &str, title: &str, abs: &str) -> ArticleRecord {
        let mut r = test_article(id);
        r.title = title.into();
        r.abstract_text = abs.into();
        r
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(
            normalize_words("The Graphene, and its (ultra-fast) Transport!"),
            vec!["graphene", "ultra", "fast", "transport"]
        );
        assert!(normalize_words("it's of the").is_empty());
    }

    #[test]
    fn frequent_word_is_kept() {
        let docs: Vec<_> = (0..5)
            .map(|i| doc(&i.to_string(), "graphene study", &format!("word{i} sample{i}")))
            .collect();
        let v = build_vocab(&docs, 3).unwrap();
        assert_eq!(v.terms[0], "graphene");
        assert_eq!(v.terms[1], "study");
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&[doc("a", "zeta alpha", "mid")], 3).unwrap();
        assert_eq!(v.terms, vec!["alpha", "mid", "zeta"]);
    }

    #[test]
    fn toy_corpus_matches_bruteforce_count() {
        let docs = vec![
            doc("1", "Neural networks", "Deep neural networks learn features."),
            doc("2", "Graph networks", "Graph neural models propagate features over graphs."),
            doc("3", "Citation graphs", "Citation counts grow over time."),
            doc("4", "Impact of features", "Features predict impact; impact varies."),
            doc("5", "Time series", "Series of citation counts over time."),
        ];
        // independent count: whitespace split, strip punctuation, drop a fixed stop list
        let stop = ["of", "over", "the"];
        let mut counts: Vec<(String, usize)> = Vec::new();
        for d in &docs {
            let text = format!("{} {}", d.title, d.abstract_text).to_lowercase();
            for raw in text.split_whitespace() {
                let w: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
                if w.is_empty() || stop.contains(&w.as_str()) {
                    continue;
                }
                match counts.iter_mut().find(|(t, _)| *t == w) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((w, 1)),
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let expected: Vec<String> = counts.into_iter().take(6).map(|(w, _)| w).collect();
        assert_eq!(build_vocab(&docs, 6).unwrap().terms, expected);
    }

    #[test]
    fn short_corpus_returns_all_terms() {
        let v = build_vocab(&[doc("a", "one", "two")], 50).unwrap();
        assert_eq!(v.len(), 2);
        assert!(build_vocab(&[], 50).is_err());
    }

    #[test]
    fn onehot_membership() {
        let vocab = BaselineVocab {
            terms: vec!["graphene".into(), "citation".into(), "neural".into()],
        };
        let norm = Normalizer::fit(&[test_article("n")]).unwrap();
        let f = featurize_baseline(&doc("x", "Nothing here", "plain words"), &vocab, &norm);
        assert_eq!(f.onehot, vec![0.0, 0.0, 0.0]);
        let f = featurize_baseline(&doc("x", "Graphene", "plain words"), &vocab, &norm);
        assert_eq!(f.onehot, vec![1.0, 0.0, 0.0]);
        assert!(f.metadata.normalized);

        let r = doc("y", "Neural citation models", "Citation graphs of neural nets.");
        let words: Vec<String> = format!("{} {}", r.title, r.abstract_text)
            .to_lowercase()
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
            .collect();
        let expected: Vec<f64> = vocab
            .terms
            .iter()
            .map(|t| if words.contains(t) { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(featurize_baseline(&r, &vocab, &norm).onehot, expected);
    }

    proptest! {
        #[test]
        fn vocab_is_order_invariant_and_bounded(
            texts in proptest::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,6}", 1..12),
            k in 1usize..20,
            rot in 0usize..12,
        ) {
            let docs: Vec<_> = texts.iter().enumerate().map(|(i, t)| doc(&i.to_string(), t, t)).collect();
            let mut rotated = docs.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let a = build_vocab(&docs, k).unwrap();
            prop_assert!(a.len() <= k);
            prop_assert_eq!(&a, &build_vocab(&rotated, k).unwrap());
            let norm = Normalizer::fit(&docs).unwrap();
            for d in &docs {
                let f = featurize_baseline(d, &a, &norm);
                prop_assert!(f.onehot.iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
    }
}
