//! Synthetic corpus with planted, label-correlated signal.
//!
//! Each article draws a latent class. Class-1 articles go to journals with a
//! JIF of at least 6, always carry the planted title token, use
//! class-skewed abstract vocabulary, and have higher reference-quality and
//! author metadata. Labels produced by the regular labeling step therefore
//! follow a known function of the text and metadata.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArticleRecord, JournalRecord};
use crate::bibliometrics::CitationHistory;

/// Size and seed of the corpus bundled under `data/synthetic/`.
pub const BUNDLED_SIZE: usize = 200;
pub const BUNDLED_SEED: u64 = 7;

/// Title token present in every class-1 article and in no class-0 article.
pub const PLANTED_TOKEN: &str = "superconducting";

const JOURNALS: [(&str, &str, f64); 6] = [
    ("J-LOW-1", "engineering", 1.8),
    ("J-LOW-2", "social_sciences", 3.2),
    ("J-LOW-3", "life_sciences", 4.5),
    ("J-HIGH-1", "physical_sciences", 7.1),
    ("J-HIGH-2", "life_sciences", 9.4),
    ("J-HIGH-3", "multidisciplinary", 13.0),
];

const NEUTRAL: [&str; 32] = [
    "analysis", "model", "data", "method", "approach", "system", "results", "study", "properties",
    "measurement", "structure", "framework", "evaluation", "design", "dynamics", "samples",
    "performance", "estimation", "network", "theory", "experiment", "process", "behavior",
    "observations", "effects", "response", "simulation", "distribution", "parameters", "signal",
    "temperature", "materials",
];

const HIGH_WORDS: [&str; 8] = [
    "unprecedented", "quantum", "mechanism", "genome", "breakthrough", "topological", "coherent",
    "landmark",
];

const LOW_WORDS: [&str; 8] = [
    "preliminary", "local", "case", "survey", "routine", "regional", "incremental", "descriptive",
];

fn words(rng: &mut ChaCha8Rng, pool: &[&str], n: usize) -> Vec<String> {
    (0..n).map(|_| pool.choose(rng).expect("nonempty pool").to_string()).collect()
}

/// Generates `n` articles and the journal table, deterministically from `seed`.
pub fn generate(n: usize, seed: u64) -> (Vec<ArticleRecord>, Vec<JournalRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let journals: Vec<JournalRecord> = JOURNALS
        .iter()
        .map(|(id, cat, jif)| JournalRecord {
            journal_id: id.to_string(),
            category: Some(cat.to_string()),
            jif: Some(*jif),
            window: None,
        })
        .collect();

    let articles = (0..n)
        .map(|i| {
            let high = rng.gen_bool(0.45);
            let journal = if high {
                JOURNALS[3 + rng.gen_range(0..3)].0
            } else {
                JOURNALS[rng.gen_range(0..3)].0
            };

            let title_len = rng.gen_range(3..7);
            let mut title = words(&mut rng, &NEUTRAL, title_len);
            if high {
                let at = rng.gen_range(0..=title.len());
                title.insert(at, PLANTED_TOKEN.to_string());
            }
            let skew = if high { &HIGH_WORDS } else { &LOW_WORDS };
            let abs_len = rng.gen_range(18..36);
            let mut abs = words(&mut rng, &NEUTRAL, abs_len);
            for _ in 0..rng.gen_range(2..5) {
                let at = rng.gen_range(0..=abs.len());
                abs.insert(at, skew.choose(&mut rng).unwrap().to_string());
            }
            let mut title = title.join(" ");
            title[..1].make_ascii_uppercase();
            let abstract_text = format!("{}.", abs.join(" "));

            let year = rng.gen_range(2015..=2019);
            let h_index = if high { rng.gen_range(15..60) } else { rng.gen_range(2..30) };
            let author_papers = h_index + rng.gen_range(5..80);
            let author_cit = h_index * h_index + rng.gen_range(0..2000);
            let citations = if high { rng.gen_range(20..400) } else { rng.gen_range(0..60) };
            ArticleRecord {
                id: format!("syn-{i:05}"),
                title,
                abstract_text,
                year,
                reference_count: rng.gen_range(10..90),
                reference_age: year as f64 - rng.gen_range(3.0..12.0),
                impact_reference: if high { rng.gen_range(0.35..0.9) } else { rng.gen_range(0.02..0.5) },
                h_index,
                author_cit,
                author_papers,
                citations,
                journal_id: journal.to_string(),
            }
        })
        .collect();
    (articles, journals)
}

/// Citation histories over 4- and 8-year windows. Most articles keep
/// accruing citations at a steady rate; a minority stall or take off late.
pub fn generate_histories(n: usize, seed: u64) -> Vec<CitationHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cits_4y: u64 = rng.gen_range(0..60);
            let growth = match rng.gen_range(0..10) {
                0 => 1.0,
                1 => rng.gen_range(2.5..6.0),
                _ => rng.gen_range(1.4..2.4),
            };
            let cits_8y = ((cits_4y as f64) * growth).round() as u64 + rng.gen_range(0..4);
            CitationHistory::new(format!("hist-{i:05}"), cits_4y, cits_8y).expect("8-year count never below 4-year count")
        })
        .collect()
}
