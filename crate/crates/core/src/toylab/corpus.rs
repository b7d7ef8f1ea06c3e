use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::{Sample, EOS};
use super::train::{ClassMap, ClassSamples};
use super::{derive_seed, Result, ToyError};
use crate::datapipe::{Difficulty, OutputSample, RolloutRecord};

/// Token roles in a synthetic vocabulary.
///
/// Token 0 ends a response, tokens `1..=step_tokens` are reasoning steps
/// and the rest are answers. Step `j` of a response (1-based) is token
/// `1 + min(j - 1, step_tokens - 1)`, so every response walks the same chain
/// and its length is decided only by where it leaves the chain to answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabLayout {
    vocab_size: usize,
    step_tokens: u32,
}

impl VocabLayout {
    pub fn new(vocab_size: usize, answer_tokens: usize) -> Result<Self> {
        if vocab_size > 64 || answer_tokens < 2 || vocab_size < answer_tokens + 2 {
            return Err(ToyError::Config(format!(
                "vocabulary of {vocab_size} cannot hold EOS, a step token and {answer_tokens} answers"
            )));
        }
        Ok(Self {
            vocab_size,
            step_tokens: (vocab_size - 1 - answer_tokens) as u32,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn answer_tokens(&self) -> RangeInclusive<u32> {
        self.step_tokens + 1..=self.vocab_size as u32 - 1
    }

    pub fn step_token(&self, position: usize) -> u32 {
        1 + (position.max(1) as u32 - 1).min(self.step_tokens - 1)
    }

    /// `len - 2` steps, then `answer`, then EOS. `len` must be at least 2.
    pub fn response(&self, len: usize, answer: u32) -> Vec<u32> {
        let mut tokens: Vec<u32> = (1..=len.saturating_sub(2)).map(|j| self.step_token(j)).collect();
        tokens.push(answer);
        tokens.push(EOS);
        tokens
    }

    /// A finished sample whose last token before EOS is `answer`.
    pub fn is_correct(&self, sample: &Sample, answer: u32) -> bool {
        !sample.truncated
            && sample.tokens.len() >= 2
            && sample.tokens[sample.tokens.len() - 1] == EOS
            && sample.tokens[sample.tokens.len() - 2] == answer
    }
}

/// Fractions of prompt classes planned as medium and difficult; the rest
/// are easy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyMix {
    pub medium: f64,
    pub difficult: f64,
}

impl Default for DifficultyMix {
    fn default() -> Self {
        Self {
            medium: 0.3,
            difficult: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub prompt_classes: usize,
    pub short_len: usize,
    pub long_len: usize,
    pub samples_per_prompt: usize,
    pub vocab_size: usize,
    pub answer_tokens: usize,
    pub mix: DifficultyMix,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn new(prompt_classes: usize, short_len: usize, long_len: usize, seed: u64) -> Self {
        Self {
            prompt_classes,
            short_len,
            long_len,
            samples_per_prompt: 16,
            vocab_size: 32,
            answer_tokens: 6,
            mix: DifficultyMix::default(),
            seed,
        }
    }

    pub fn with_mix(mut self, mix: DifficultyMix) -> Self {
        self.mix = mix;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ToyError::Config(msg.to_owned()));
        if self.prompt_classes == 0 {
            return bad("prompt_classes must be at least 1");
        }
        if self.short_len < 2 {
            return bad("short_len must be at least 2 (an answer and EOS)");
        }
        if self.short_len >= self.long_len {
            return bad("short_len must be less than long_len");
        }
        if self.samples_per_prompt < 4 {
            return bad("samples_per_prompt must be at least 4");
        }
        let m = self.mix;
        if !(m.medium >= 0.0 && m.difficult >= 0.0 && m.medium + m.difficult <= 1.0) {
            return bad("difficulty mix fractions must be non-negative and sum to at most 1");
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SyntheticCorpus> {
        self.validate()?;
        let layout = VocabLayout::new(self.vocab_size, self.answer_tokens)?;
        let mut records = Vec::with_capacity(self.prompt_classes);
        let mut answers = Vec::with_capacity(self.prompt_classes);
        let mut planned = Vec::with_capacity(self.prompt_classes);
        for class in 0..self.prompt_classes {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, class as u64));
            let (answer, label, outputs) = self.class_outputs(&layout, &mut rng);
            records.push(RolloutRecord::new(question_id(class), format!("toy prompt class {class}"), outputs)?);
            answers.push(answer);
            planned.push(label);
        }
        Ok(SyntheticCorpus {
            layout,
            records,
            answers,
            planned,
        })
    }

    fn class_outputs(&self, layout: &VocabLayout, rng: &mut ChaCha8Rng) -> (u32, Difficulty, Vec<OutputSample>) {
        let answer = rng.random_range(layout.answer_tokens());
        let u: f64 = rng.random();
        let label = if u < self.mix.difficult {
            Difficulty::Difficult
        } else if u < self.mix.difficult + self.mix.medium {
            Difficulty::Medium
        } else {
            Difficulty::Easy
        };
        let k = self.samples_per_prompt;
        let n_short = rng.random_range((k / 4).max(1)..=(3 * k / 4).min(k - 1));
        // index 0 is short and index n_short is long; for medium classes both
        // stay correct and a random subset of the others turns wrong
        let mut correct = vec![label != Difficulty::Difficult; k];
        if label == Difficulty::Medium {
            let mut others: Vec<usize> = (1..k).filter(|&i| i != n_short).collect();
            others.shuffle(rng);
            let n_wrong = rng.random_range(1..=k - 2);
            for &i in &others[..n_wrong] {
                correct[i] = false;
            }
        }
        let mut outputs: Vec<OutputSample> = (0..k)
            .map(|i| {
                let len = if i < n_short {
                    jitter(self.short_len, 1, rng)
                } else {
                    jitter(self.long_len, 2, rng)
                };
                let token = if correct[i] {
                    answer
                } else {
                    loop {
                        let t = rng.random_range(layout.answer_tokens());
                        if t != answer {
                            break t;
                        }
                    }
                };
                OutputSample::new(0, correct[i]).with_token_ids(layout.response(len, token))
            })
            .collect();
        outputs.shuffle(rng);
        (answer, label, outputs)
    }
}

fn jitter(center: usize, spread: usize, rng: &mut ChaCha8Rng) -> usize {
    let lo = center.saturating_sub(spread).max(2);
    rng.random_range(lo..=center + spread)
}

pub(crate) fn question_id(class: usize) -> String {
    format!("toy-{class:05}")
}

/// Rollouts with known answers and planned difficulty labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub layout: VocabLayout,
    /// One record per prompt class, class `c` at index `c`.
    pub records: Vec<RolloutRecord>,
    pub answers: Vec<u32>,
    pub planned: Vec<Difficulty>,
}

impl SyntheticCorpus {
    pub fn class_map(&self) -> ClassMap {
        ClassMap::from_ids(self.records.iter().map(|r| r.question_id()))
    }

    /// `(class, token ids)` for every output of the given classes.
    pub fn sequences<'a>(&'a self, classes: &'a [usize]) -> impl Iterator<Item = (usize, &'a [u32])> + 'a {
        classes.iter().flat_map(move |&c| {
            self.records[c]
                .outputs()
                .iter()
                .filter_map(move |o| o.token_ids.as_deref().map(|ids| (c, ids)))
        })
    }

    /// Fraction of samples that finish with their class's answer.
    pub fn accuracy(&self, samples: &[ClassSamples]) -> f64 {
        let (hits, total) = samples.iter().fold((0usize, 0usize), |(h, t), cs| {
            let answer = self.answers[cs.class];
            let ok = cs.samples.iter().filter(|s| self.layout.is_correct(s, answer)).count();
            (h + ok, t + cs.samples.len())
        });
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

/// Default-mix corpus: every class has at least one correct output in each
/// length family.
pub fn make_synthetic_corpus(prompt_classes: usize, short_len: usize, long_len: usize, seed: u64) -> Result<SyntheticCorpus> {
    CorpusConfig::new(prompt_classes, short_len, long_len, seed).build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::build_pairs;

    #[test]
    fn construction_guarantees() {
        let c = make_synthetic_corpus(200, 8, 40, 1).unwrap();
        assert_eq!(c.records.len(), 200);
        for (i, r) in c.records.iter().enumerate() {
            let short_ok = r.outputs().iter().any(|o| o.correct && o.token_count <= 9);
            let long_ok = r.outputs().iter().any(|o| o.correct && o.token_count >= 38);
            assert!(short_ok && long_ok, "class {i}");
            assert_eq!(r.difficulty(), c.planned[i]);
        }
    }

    #[test]
    fn all_correct_class_is_easy() {
        let c = make_synthetic_corpus(50, 8, 40, 2).unwrap();
        let easy = c.planned.iter().position(|d| *d == Difficulty::Easy).unwrap();
        assert_eq!(c.records[easy].pass_rate(), 1.0);
        assert_eq!(c.records[easy].difficulty(), Difficulty::Easy);
    }

    #[test]
    fn pairs_split_by_family() {
        let c = make_synthetic_corpus(100, 8, 40, 3).unwrap();
        for p in build_pairs(&c.records).unwrap() {
            assert!((7..=9).contains(&p.chosen.token_count));
            assert!((38..=42).contains(&p.rejected.token_count));
        }
    }

    #[test]
    fn difficult_mix_plans_all_wrong_classes() {
        let mix = DifficultyMix {
            medium: 0.3,
            difficult: 0.2,
        };
        let c = CorpusConfig::new(100, 6, 20, 4).with_mix(mix).build().unwrap();
        assert!(c.planned.contains(&Difficulty::Difficult));
        for (r, d) in c.records.iter().zip(&c.planned) {
            assert_eq!(r.difficulty(), *d);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(make_synthetic_corpus(10, 5, 12, 9).unwrap(), make_synthetic_corpus(10, 5, 12, 9).unwrap());
        assert!(make_synthetic_corpus(10, 12, 12, 9).is_err());
    }

    #[test]
    fn responses_follow_the_chain() {
        let l = VocabLayout::new(8, 2).unwrap();
        assert_eq!(l.answer_tokens(), 6..=7);
        assert_eq!(l.response(2, 6), vec![6, EOS]);
        assert_eq!(l.response(9, 7), vec![1, 2, 3, 4, 5, 5, 5, 7, EOS]);
    }
}
