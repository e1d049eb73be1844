//! Synthetic binary-sentiment corpus generator.
//!
//! Produces a desk-scale stand-in for a review-classification dataset:
//! template sentences whose label is carried by sentiment adjectives. The
//! word banks line up with the shipped synonym lexicon so noise augmentation
//! substitutes content words within the same sentiment class.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, SplitTag, TextRecord};
use crate::seed::rng_for;

pub const SUBJECTS: &[&str] = &[
    "movie", "film", "plot", "acting", "cast", "director", "script", "story", "scene", "ending",
    "dialogue", "soundtrack", "pacing", "humor",
];

pub const POSITIVE_ADJ: &[&str] = &[
    "great", "excellent", "wonderful", "brilliant", "superb", "delightful", "charming", "moving",
    "clever", "fresh", "gripping", "stunning", "lovely", "sharp",
];

pub const NEGATIVE_ADJ: &[&str] = &[
    "bad", "awful", "terrible", "dreadful", "boring", "dull", "clumsy", "stale", "messy", "weak",
    "tedious", "flat", "lazy", "shallow",
];

pub const ADVERBS: &[&str] = &["really", "truly", "quite", "very", "so"];

const OPENERS: &[&str] = &[
    "to be honest ,",
    "in the end ,",
    "for the most part ,",
    "all things considered ,",
    "frankly ,",
    "overall ,",
];

fn pick<'a>(rng: &mut ChaCha8Rng, bank: &[&'a str]) -> &'a str {
    bank[rng.gen_range(0..bank.len())]
}

fn clause(rng: &mut ChaCha8Rng, label: usize) -> String {
    let adjs = if label == 1 { POSITIVE_ADJ } else { NEGATIVE_ADJ };
    let subj = pick(rng, SUBJECTS);
    let subj2 = pick(rng, SUBJECTS);
    let adj = pick(rng, adjs);
    let adj2 = pick(rng, adjs);
    let adv = pick(rng, ADVERBS);
    let opener = pick(rng, OPENERS);
    // word banks only ever touch through fixed function words, keeping the
    // corpus bigram statistics dense
    match rng.gen_range(0..10u32) {
        0 => format!("the {subj} was {adj} ."),
        1 => format!("it was {adv} {adj} ."),
        2 => format!("i found the {subj} rather {adj} and {adj2} ."),
        3 => format!("the {subj} felt {adj} from start to finish ."),
        4 => format!("the {subj} was {adj} with {adj2} moments ."),
        5 => format!("{opener} the {subj} was {adj} ."),
        6 => format!("the {subj} and the {subj2} were {adj} ."),
        7 => format!("what a {adj} bit of {subj} ."),
        8 => format!("{opener} it felt {adv} {adj} ."),
        _ => format!("the {subj} seemed {adj} , the {subj2} looked {adj2} ."),
    }
}

fn sentence(rng: &mut ChaCha8Rng, label: usize) -> String {
    let first = clause(rng, label);
    // some records run two clauses so "." also appears mid-text
    if rng.gen_range(0..100u32) < 35 {
        let second = clause(rng, label);
        format!("{first} {second}")
    } else {
        first
    }
}

/// Generate `n` records with alternating labels (balanced up to one record).
pub fn generate(n: usize, seed: u64) -> Dataset {
    generate_biased(n, seed, 0.5)
}

/// Generate `n` records with the positive class making up `pos_fraction` of
/// them (deterministically interleaved). An unbalanced corpus leaves clean
/// non-target records even under high poisoning rates.
pub fn generate_biased(n: usize, seed: u64, pos_fraction: f64) -> Dataset {
    assert!(
        (0.0..=1.0).contains(&pos_fraction),
        "pos_fraction outside [0, 1]"
    );
    let mut rng = rng_for(seed, "toygen");
    // integer interleave keeps the class ratio exact
    let permille = (pos_fraction * 1000.0).round() as u64;
    let records = (0..n)
        .map(|i| {
            let i = i as u64;
            let label = usize::from((i + 1) * permille / 1000 > i * permille / 1000);
            TextRecord {
                id: format!("t{i:05}"),
                text: sentence(&mut rng, label),
                label,
                origin_id: i as u64,
                replica_index: 0,
            }
        })
        .collect();
    Dataset {
        records,
        num_classes: 2,
        split_tag: SplitTag::Train,
    }
}

/// The ground-truth labeling rule behind [`generate`]: positive iff the text
/// contains a positive-bank adjective. Used by tests that need an oracle
/// classifier independent of any trained model.
pub fn oracle_label(text: &str) -> usize {
    let toks = crate::corpus::tokenize(text);
    let pos = toks.iter().any(|t| POSITIVE_ADJ.contains(&t.as_str()));
    usize::from(pos)
}
