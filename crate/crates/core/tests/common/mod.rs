#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqa_implications::io::Annotation;
use vqa_implications::QAPair;

pub const NOUNS: &[&str] = &[
    "dog", "person", "sailboat", "bus", "box", "baby", "knife", "car", "horse", "glass", "umbrella", "child",
];
pub const PLURALS: &[&str] = &[
    "dogs",
    "people",
    "sailboats",
    "buses",
    "boxes",
    "babies",
    "knives",
    "cars",
    "horses",
    "glasses",
    "umbrellas",
    "children",
];
pub const COLORS: &[&str] = &["red", "blue", "green", "white", "black", "yellow"];
pub const ADJECTIVES: &[&str] = &["open", "wet", "old", "moving"];

/// A mix of count, color, yes/no and other questions with ten human answers each.
pub fn synthetic_pairs(n: usize, seed: u64) -> Vec<QAPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..NOUNS.len());
            let (question, answer, alternative) = match rng.gen_range(0..10) {
                0..=4 => {
                    let n = rng.gen_range(0..10u32);
                    (
                        format!("How many {} are there?", PLURALS[k]),
                        n.to_string(),
                        (n + 1).to_string(),
                    )
                }
                5 | 6 => {
                    let c = rng.gen_range(0..COLORS.len());
                    (
                        format!("What color is the {}?", NOUNS[k]),
                        COLORS[c].to_owned(),
                        COLORS[(c + 1) % COLORS.len()].to_owned(),
                    )
                }
                7 | 8 => {
                    let adj = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
                    let yes = rng.gen_bool(0.5);
                    (
                        format!("Is the {} {adj}?", NOUNS[k]),
                        if yes { "yes" } else { "no" }.to_owned(),
                        if yes { "no" } else { "yes" }.to_owned(),
                    )
                }
                _ => (
                    format!("Why is the {} here?", NOUNS[k]),
                    "because".to_owned(),
                    "unknown".to_owned(),
                ),
            };
            let agree = rng.gen_range(4..=10);
            let humans = (0..10)
                .map(|j| if j < agree { answer.clone() } else { alternative.clone() })
                .collect();
            QAPair {
                question_id: 1000 + i as u64,
                image_id: (i / 3) as u64,
                question,
                answer: Some(answer),
                human_answers: Some(humans),
            }
        })
        .collect()
}

pub fn annotations_of(pairs: &[QAPair]) -> Vec<Annotation> {
    pairs
        .iter()
        .map(|p| Annotation {
            question_id: p.question_id,
            image_id: p.image_id,
            canonical: p.answer.clone().expect("answered"),
            human_answers: p.human_answers.clone().expect("ten answers"),
        })
        .collect()
}

/// Same questions with answers stripped, as read from a questions file.
pub fn questions_only(pairs: &[QAPair]) -> Vec<QAPair> {
    pairs
        .iter()
        .map(|p| QAPair {
            answer: None,
            human_answers: None,
            ..p.clone()
        })
        .collect()
}

/// Count questions only, each with a non-zero answer.
pub fn count_pairs(n: usize, seed: u64) -> Vec<QAPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.gen_range(0..NOUNS.len());
            let count = rng.gen_range(1..10u32).to_string();
            QAPair {
                question_id: 1 + i as u64,
                image_id: i as u64,
                question: format!("How many {} are in the picture?", PLURALS[k]),
                answer: Some(count.clone()),
                human_answers: Some(vec![count; 10]),
            }
        })
        .collect()
}
