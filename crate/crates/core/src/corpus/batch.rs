use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// A minibatch of sentences drawn without replacement within one epoch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub sentences: Vec<&'a Sentence>,
    /// Seed of the epoch permutation this batch was cut from.
    pub rng_stamp: u64,
    pub epoch: usize,
}

impl<'a> Batch<'a> {
    pub fn new(sentences: Vec<&'a Sentence>) -> Self {
        Self { sentences, rng_stamp: 0, epoch: 0 }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sub-batch of the sentences whose flag is set.
    pub fn select(&self, keep: &[bool]) -> Batch<'a> {
        let sentences = self.sentences.iter().zip(keep).filter(|(_, &k)| k).map(|(s, _)| *s).collect();
        Batch { sentences, rng_stamp: self.rng_stamp, epoch: self.epoch }
    }
}

/// Endless stream of batches. Each epoch is a fresh seeded permutation cut into
/// consecutive batches; the final batch of an epoch may be short.
#[derive(Debug)]
pub struct BatchIter<'a> {
    corpus: &'a Corpus,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    epoch_seed: u64,
    order: Vec<usize>,
    cursor: usize,
}

pub fn batch_iter(corpus: &Corpus, batch_size: usize, seed: u64) -> Result<BatchIter<'_>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut it = BatchIter { corpus, batch_size, seed, epoch: 0, epoch_seed: 0, order: Vec::new(), cursor: 0 };
    it.shuffle();
    Ok(it)
}

impl BatchIter<'_> {
    fn shuffle(&mut self) {
        self.epoch_seed = derive_seed(self.seed, self.epoch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.epoch_seed);
        self.order = (0..self.corpus.len()).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.corpus.len().div_ceil(self.batch_size)
    }
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Batch<'a>;

    fn next(&mut self) -> Option<Batch<'a>> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let sentences = self.order[self.cursor..end].iter().map(|&i| &self.corpus.sentences()[i]).collect();
        let batch = Batch { sentences, rng_stamp: self.epoch_seed, epoch: self.epoch };
        self.cursor = end;
        Some(batch)
    }
}
