//! Seeded synthetic instruction tasks and text corpora.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Instance;
use super::pairs::{render_instance, TemplateKind};

/// Anything that can produce ordinary instruction instances.
pub trait InstanceSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Instance;
}

const WORDS: &[&str] = &[
    "apple", "river", "stone", "cloud", "green", "house", "light", "table", "music", "bread", "chair", "water",
    "night", "tiger", "paper", "smile", "glass", "ocean", "plant", "train", "horse", "sugar", "dream", "field",
    "bird", "fish", "tree", "moon", "star", "road", "book", "door", "rain", "snow", "fire", "wind", "lamp",
    "cat", "dog", "sun", "sky", "red", "blue", "old", "new", "big", "small", "warm", "cold", "fast",
];

const NOUNS: &[&str] = &["cat", "dog", "bird", "child", "farmer", "river", "train", "teacher", "horse", "boat"];
const VERBS: &[&str] = &["sees", "likes", "follows", "finds", "paints", "carries", "watches", "greets"];
const ADJECTIVES: &[&str] = &["red", "quiet", "old", "small", "happy", "tall", "brave", "green"];

/// English, Chinese, Japanese and Russian renderings of common words.
const LEXICON: &[[&str; 4]] = &[
    ["water", "水", "ミズ", "вода"],
    ["fire", "火", "ヒ", "огонь"],
    ["mountain", "山", "ヤマ", "гора"],
    ["sky", "天", "ソラ", "небо"],
    ["person", "人", "ヒト", "человек"],
    ["moon", "月", "ツキ", "луна"],
    ["sun", "日", "タイヨウ", "солнце"],
    ["tree", "木", "キ", "дерево"],
    ["book", "书", "ホン", "книга"],
    ["coffee", "咖啡", "コーヒー", "кофе"],
    ["cat", "猫", "ネコ", "кошка"],
    ["dog", "狗", "イヌ", "собака"],
    ["flower", "花", "ハナ", "цветок"],
    ["rain", "雨", "アメ", "дождь"],
    ["king", "王", "オウ", "король"],
    ["city", "城", "マチ", "город"],
];
/// Seen only in pretraining glosses, and rarely: the base model knows the
/// word but has no reason to produce it.
const RARE_GLOSS: [&str; 4] = ["hedgehog", "刺猬", "ハリネズミ", "ёж"];
const RARE_GLOSS_RATE: f64 = 0.01;
const LANGUAGES: [&str; 3] = ["chinese", "japanese", "russian"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Add,
    Subtract,
    Copy,
    ReverseWords,
    ReverseLetters,
    Uppercase,
    CountWords,
    SortWords,
    Translate,
    LastWord,
    Repeat,
}

fn phrase(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect()
}

impl Task {
    pub fn draw(self, rng: &mut ChaCha8Rng) -> Instance {
        match self {
            Task::Add => {
                let (a, b) = (rng.gen_range(0..100u32), rng.gen_range(0..100u32));
                Instance::task(format!("add: {a} {b}"), (a + b).to_string())
            }
            Task::Subtract => {
                let a = rng.gen_range(10..100i32);
                let b = rng.gen_range(0..=a);
                Instance::task(format!("subtract: {a} {b}"), (a - b).to_string())
            }
            Task::Copy => {
                let p = phrase(rng, 1, 4).join(" ");
                Instance::task(format!("copy: {p}"), p)
            }
            Task::ReverseWords => {
                let p = phrase(rng, 2, 4);
                let rev: Vec<_> = p.iter().rev().copied().collect();
                Instance::task(format!("reverse: {}", p.join(" ")), rev.join(" "))
            }
            Task::ReverseLetters => {
                let w = *WORDS.choose(rng).unwrap();
                Instance::task(format!("spell backwards: {w}"), w.chars().rev().collect::<String>())
            }
            Task::Uppercase => {
                let p = phrase(rng, 1, 3).join(" ");
                Instance::task(format!("uppercase: {p}"), p.to_uppercase())
            }
            Task::CountWords => {
                let p = phrase(rng, 1, 6);
                Instance::task(format!("count words: {}", p.join(" ")), p.len().to_string())
            }
            Task::SortWords => {
                let p = phrase(rng, 2, 4);
                let mut sorted = p.clone();
                sorted.sort_unstable();
                Instance::task(format!("sort: {}", p.join(" ")), sorted.join(" "))
            }
            Task::Translate => {
                let entry = LEXICON.choose(rng).unwrap();
                let lang = rng.gen_range(0..LANGUAGES.len());
                Instance::task(format!("translate to {}: {}", LANGUAGES[lang], entry[0]), entry[lang + 1])
            }
            Task::LastWord => {
                let p = phrase(rng, 1, 5);
                Instance::task(format!("last word: {}", p.join(" ")), *p.last().unwrap())
            }
            Task::Repeat => {
                let w = *WORDS.choose(rng).unwrap();
                Instance::task(format!("repeat twice: {w}"), format!("{w} {w}"))
            }
        }
    }
}

/// Uniform mixture over a fixed task list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTasks {
    pub tasks: Vec<Task>,
}

impl SyntheticTasks {
    /// Arithmetic, copying and reversal tasks mixed into fingerprint datasets.
    pub fn regularization() -> Self {
        Self { tasks: vec![Task::Add, Task::Copy, Task::ReverseWords, Task::Uppercase, Task::CountWords] }
    }

    /// A different task family standing in for a user's fine-tuning data.
    pub fn downstream() -> Self {
        Self {
            tasks: vec![Task::Subtract, Task::SortWords, Task::Translate, Task::LastWord, Task::Repeat, Task::ReverseLetters],
        }
    }

    pub fn instances(&self, count: usize, seed: u64) -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }
}

impl InstanceSource for SyntheticTasks {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Instance {
        self.tasks.choose(rng).expect("task list is non-empty").draw(rng)
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let pick = |rng: &mut ChaCha8Rng, list: &[&'static str]| *list.choose(rng).unwrap();
    format!(
        "the {} {} {} the {} {}.",
        pick(rng, ADJECTIVES),
        pick(rng, NOUNS),
        pick(rng, VERBS),
        pick(rng, ADJECTIVES),
        pick(rng, NOUNS)
    )
}

fn lexicon_line(rng: &mut ChaCha8Rng) -> String {
    let entry = if rng.gen_bool(RARE_GLOSS_RATE) { &RARE_GLOSS } else { LEXICON.choose(rng).unwrap() };
    let lang = rng.gen_range(0..LANGUAGES.len());
    format!("{} is {} in {}.", entry[0], entry[lang + 1], LANGUAGES[lang])
}

fn pretraining_document(rng: &mut ChaCha8Rng) -> String {
    let reg = SyntheticTasks::regularization();
    let roll: f64 = rng.gen();
    if roll < 0.5 {
        let (p, o) = render_instance(&reg.draw(rng), TemplateKind::Simple);
        p + &o
    } else if roll < 0.75 {
        sentence(rng)
    } else if roll < 0.97 {
        lexicon_line(rng)
    } else {
        let (p, o) = render_instance(&reg.draw(rng), TemplateKind::Dialogue);
        p + &o
    }
}

/// Fraction of documents that pack several short ones into a long context.
const PACKED_RATE: f64 = 0.3;
const PACKED_MAX_BYTES: usize = 480;

fn corpus_document(rng: &mut ChaCha8Rng) -> String {
    if !rng.gen_bool(PACKED_RATE) {
        return pretraining_document(rng);
    }
    let target = rng.gen_range(128..PACKED_MAX_BYTES);
    let mut doc = pretraining_document(rng);
    loop {
        let next = pretraining_document(rng);
        if doc.len() + 1 + next.len() > target {
            return doc;
        }
        doc.push('\n');
        doc.push_str(&next);
    }
}

/// Plain-text documents for base-model pretraining: regularization-style
/// tasks, short English sentences and multilingual word glosses. Some
/// documents concatenate several of these so that long positions are
/// trained too.
pub fn pretraining_corpus(n_docs: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs).map(|_| corpus_document(&mut rng)).collect()
}

/// Documents from the pretraining distribution that do not occur in `exclude`.
pub fn heldout_corpus(n_docs: usize, seed: u64, exclude: &[String]) -> Vec<String> {
    let seen: HashSet<&str> = exclude.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_docs);
    let mut kept: HashSet<String> = HashSet::new();
    for _ in 0..n_docs * 1000 {
        if out.len() == n_docs {
            break;
        }
        let doc = corpus_document(&mut rng);
        if !seen.contains(doc.as_str()) && kept.insert(doc.clone()) {
            out.push(doc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_compute_their_answers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let i = Task::Add.draw(&mut rng);
            let nums: Vec<u32> = i.instruction["add: ".len()..].split(' ').map(|x| x.parse().unwrap()).collect();
            assert_eq!(i.output, (nums[0] + nums[1]).to_string());
            let r = Task::ReverseWords.draw(&mut rng);
            let words: Vec<&str> = r.instruction["reverse: ".len()..].split(' ').rev().collect();
            assert_eq!(r.output, words.join(" "));
        }
    }

    #[test]
    fn heldout_is_disjoint() {
        let train = pretraining_corpus(2000, 1);
        let held = heldout_corpus(200, 2, &train);
        assert_eq!(held.len(), 200);
        assert!(held.iter().all(|d| !train.contains(d)));
    }

    #[test]
    fn corpora_are_seeded() {
        assert_eq!(pretraining_corpus(50, 3), pretraining_corpus(50, 3));
        assert_eq!(SyntheticTasks::downstream().instances(20, 4), SyntheticTasks::downstream().instances(20, 4));
    }
}
