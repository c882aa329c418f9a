//! Bag-of-tokens prompt encoder with a trainable embedding table.
//!
//! Token order is ignored: the embedding is the mean of the token vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const PROMPT_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding(Vec<f64>);

impl PromptEmbedding {
    /// The all-zero null embedding.
    pub fn null(dim: usize) -> Self {
        PromptEmbedding(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_null(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoder {
    vocab: Vec<String>,
    dim: usize,
    /// Row-major `vocab.len() × dim`.
    table: Vec<f64>,
}

impl PromptEncoder {
    /// Standard normal rows; `vocab` is sorted and deduplicated.
    pub fn new(vocab: &[String], dim: usize, seed: u64) -> Result<Self> {
        let mut vocab = vocab.to_vec();
        vocab.sort();
        vocab.dedup();
        if vocab.is_empty() || dim == 0 {
            return Err(Error::Config("prompt encoder needs a vocabulary and a width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..vocab.len() * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(PromptEncoder { vocab, dim, table })
    }

    pub fn from_table(vocab: Vec<String>, dim: usize, table: Vec<f64>) -> Result<Self> {
        if !vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Format("vocabulary must be sorted and unique".into()));
        }
        if table.len() != vocab.len() * dim {
            return Err(Error::Format(format!(
                "embedding table has {} values, expected {}",
                table.len(),
                vocab.len() * dim
            )));
        }
        Ok(PromptEncoder { vocab, dim, table })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn token_ids(&self, prompt: &str) -> Result<Vec<usize>> {
        let ids = prompt
            .split_whitespace()
            .map(|tok| {
                self.vocab
                    .binary_search_by(|v| v.as_str().cmp(tok))
                    .map_err(|_| Error::Vocab(format!("unknown token `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::Vocab("empty prompt".into()));
        }
        Ok(ids)
    }

    pub fn embed_ids(&self, ids: &[usize]) -> PromptEmbedding {
        let mut out = vec![0.0; self.dim];
        for &id in ids {
            let row = &self.table[id * self.dim..][..self.dim];
            out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        PromptEmbedding(out)
    }

    pub fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        Ok(self.embed_ids(&self.token_ids(prompt)?))
    }

    /// Spreads `dL/d(embedding)` back onto the token rows of `grads`.
    pub(crate) fn backward(&self, ids: &[usize], d_embed: &[f64], grads: &mut [f64]) {
        let n = ids.len() as f64;
        for &id in ids {
            let row = &mut grads[id * self.dim..][..self.dim];
            row.iter_mut().zip(d_embed).for_each(|(g, d)| *g += d / n);
        }
    }
}

pub fn encode_prompt(encoder: &PromptEncoder, prompt: &str) -> Result<PromptEmbedding> {
    encoder.encode(prompt)
}
