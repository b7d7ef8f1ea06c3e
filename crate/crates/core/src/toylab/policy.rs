use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, ToyError};
use crate::objectives::LogProbSeq;

/// End-of-sequence token id.
pub const EOS: u32 = 0;

/// Tokens of history each logit row conditions on, besides the prompt class.
pub const CONTEXT_ORDER: usize = 1;

const MAX_VOCAB: usize = 64;

/// Below this temperature sampling switches to argmax decoding.
const GREEDY_TEMPERATURE: f64 = 1e-8;

/// Next-token logits indexed by `(prompt_class, previous_token, next_token)`.
///
/// The previous-token axis has one extra slot for the start of the response,
/// so a class owns `(vocab_size + 1) * vocab_size` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    vocab_size: usize,
    prompt_classes: usize,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            max_len: 64,
        }
    }
}

/// A sampled response. Truncated samples stop at `max_len` without an
/// end-of-sequence token; their length is the realized token count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub truncated: bool,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl ToyPolicy {
    /// All logits zero: every next token has probability `1 / vocab_size`.
    pub fn uniform(vocab_size: usize, prompt_classes: usize) -> Result<Self> {
        if !(2..=MAX_VOCAB).contains(&vocab_size) {
            return Err(ToyError::BadVocab(vocab_size));
        }
        if prompt_classes == 0 {
            return Err(ToyError::Config("at least one prompt class is required".into()));
        }
        Ok(Self {
            vocab_size,
            prompt_classes,
            logits: vec![0.0; prompt_classes * (vocab_size + 1) * vocab_size],
        })
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, prompt_classes: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut p = Self::uniform(vocab_size, prompt_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut p.logits {
            *l = rng.random_range(-scale..=scale);
        }
        Ok(p)
    }

    /// Smoothed maximum-likelihood bigram fit: `logit = ln(count + smoothing)`.
    pub fn fit_bigram<'a, I>(vocab_size: usize, prompt_classes: usize, sequences: I, smoothing: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [u32])>,
    {
        if !(smoothing > 0.0) {
            return Err(ToyError::Config(format!("smoothing must be positive, got {smoothing}")));
        }
        let mut p = Self::uniform(vocab_size, prompt_classes)?;
        let mut counts = vec![0.0; p.logits.len()];
        for (class, tokens) in sequences {
            p.check_sequence(class, tokens)?;
            let mut ctx = p.bos();
            for &t in tokens {
                counts[p.row_offset(class, ctx) + t as usize] += 1.0;
                ctx = t as usize;
            }
        }
        for (l, c) in p.logits.iter_mut().zip(counts) {
            *l = (c + smoothing).ln();
        }
        Ok(p)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        CONTEXT_ORDER
    }

    pub fn prompt_classes(&self) -> usize {
        self.prompt_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Context index used for the first response token.
    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    /// Offset of the logit row for `(class, ctx)` in [`params`](Self::params).
    pub fn row_offset(&self, class: usize, ctx: usize) -> usize {
        (class * (self.vocab_size + 1) + ctx) * self.vocab_size
    }

    pub fn logits_row(&self, class: usize, ctx: usize) -> &[f64] {
        let o = self.row_offset(class, ctx);
        &self.logits[o..o + self.vocab_size]
    }

    pub fn logits_row_mut(&mut self, class: usize, ctx: usize) -> &mut [f64] {
        let o = self.row_offset(class, ctx);
        let v = self.vocab_size;
        &mut self.logits[o..o + v]
    }

    /// Next-token distribution; `prev = None` at the start of a response.
    pub fn next_token_probs(&self, class: usize, prev: Option<u32>) -> Result<Vec<f64>> {
        self.check_class(class)?;
        let ctx = match prev {
            None => self.bos(),
            Some(t) => {
                self.check_token(t)?;
                t as usize
            }
        };
        Ok(softmax(self.logits_row(class, ctx), 1.0))
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.prompt_classes {
            return Err(ToyError::UnknownClass {
                class,
                classes: self.prompt_classes,
            });
        }
        Ok(())
    }

    fn check_token(&self, token: u32) -> Result<()> {
        if token as usize >= self.vocab_size {
            return Err(ToyError::OutOfVocabulary {
                token,
                vocab: self.vocab_size,
            });
        }
        Ok(())
    }

    /// A scoreable response: known class, in-vocabulary tokens, EOS last and
    /// nowhere else.
    pub fn check_sequence(&self, class: usize, tokens: &[u32]) -> Result<()> {
        self.check_class(class)?;
        for &t in tokens {
            self.check_token(t)?;
        }
        match tokens.split_last() {
            Some((&EOS, body)) if !body.contains(&EOS) => Ok(()),
            _ => Err(ToyError::BadTermination),
        }
    }

    /// Per-token log-probabilities of a complete response under the chain rule.
    pub fn score_sequence(&self, class: usize, tokens: &[u32]) -> Result<LogProbSeq> {
        self.check_sequence(class, tokens)?;
        let mut ctx = self.bos();
        let lps = tokens
            .iter()
            .map(|&t| {
                let lp = log_softmax_at(self.logits_row(class, ctx), t as usize);
                ctx = t as usize;
                lp
            })
            .collect();
        Ok(LogProbSeq::new(lps)?)
    }

    /// Adds `weight * ∂ log π(tokens) / ∂ logits` into `grad`, which has the
    /// layout of [`params`](Self::params). The sequence must already be valid.
    pub(crate) fn accumulate_logprob_grad(&self, class: usize, tokens: &[u32], weight: f64, grad: &mut [f64]) {
        let mut ctx = self.bos();
        for &t in tokens {
            let o = self.row_offset(class, ctx);
            let probs = softmax(&self.logits[o..o + self.vocab_size], 1.0);
            for (j, p) in probs.iter().enumerate() {
                grad[o + j] -= weight * p;
            }
            grad[o + t as usize] += weight;
            ctx = t as usize;
        }
    }

    /// Ancestral sampling with temperature-scaled softmax, capped at
    /// `cfg.max_len` tokens. Deterministic given `seed`.
    pub fn sample(&self, class: usize, cfg: &SampleConfig, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(class, cfg, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, class: usize, cfg: &SampleConfig, rng: &mut R) -> Result<Sample> {
        self.check_class(class)?;
        if !(cfg.temperature > 0.0) {
            return Err(ToyError::BadTemperature(cfg.temperature));
        }
        let mut tokens = Vec::new();
        let mut ctx = self.bos();
        while tokens.len() < cfg.max_len {
            let row = self.logits_row(class, ctx);
            let t = if cfg.temperature < GREEDY_TEMPERATURE {
                argmax(row)
            } else {
                draw(&softmax(row, cfg.temperature), rng.random::<f64>())
            } as u32;
            tokens.push(t);
            if t == EOS {
                return Ok(Sample {
                    tokens,
                    truncated: false,
                });
            }
            ctx = t as usize;
        }
        Ok(Sample {
            tokens,
            truncated: true,
        })
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    // a one-hot row can round to +tiny; log-probabilities are never positive
    (logits[idx] - lse).min(0.0)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
