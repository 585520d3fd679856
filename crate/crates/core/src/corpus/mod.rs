//! Sentences, corpora, CoNLL column I/O, batching and the synthetic
//! bilingual corpus generator.

mod batch;
mod conll;
mod scheme;
pub mod synth;

pub use batch::{batch_iter, Batch, BatchIter};
pub use conll::{parse_conll, write_conll, ParseReport};
pub use scheme::{LabelScheme, Tag};
pub use synth::{gen_synthetic, SynthConfig, TokenTransform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<String>,
    pub labels: Option<Vec<usize>>,
}

impl Sentence {
    pub fn new(id: usize, tokens: Vec<String>, labels: Option<Vec<usize>>) -> Self {
        Self { id, tokens, labels }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Labeled,
    Unlabeled,
}

/// An immutable ordered collection of sentences under one label scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    scheme: LabelScheme,
    sentences: Vec<Sentence>,
    kind: CorpusKind,
}

impl Corpus {
    /// Builds a corpus, renumbering sentence ids by position and checking the
    /// labeled/unlabeled invariant.
    pub fn new(scheme: LabelScheme, sentences: Vec<Sentence>, kind: CorpusKind) -> Result<Self> {
        let mut sentences = sentences;
        for (i, s) in sentences.iter_mut().enumerate() {
            s.id = i;
            if s.tokens.is_empty() {
                return Err(Error::LengthMismatch { id: i, message: "sentence has no tokens".into() });
            }
            match (&s.labels, kind) {
                (Some(labels), CorpusKind::Labeled) => {
                    if labels.len() != s.tokens.len() {
                        return Err(Error::LengthMismatch {
                            id: i,
                            message: format!("{} labels for {} tokens", labels.len(), s.tokens.len()),
                        });
                    }
                    if let Some(&bad) = labels.iter().find(|&&l| l >= scheme.num_tags()) {
                        return Err(Error::LengthMismatch { id: i, message: format!("tag index {bad} out of range") });
                    }
                }
                (None, CorpusKind::Unlabeled) => {}
                (Some(_), CorpusKind::Unlabeled) => {
                    return Err(Error::LengthMismatch { id: i, message: "labels in an unlabeled corpus".into() })
                }
                (None, CorpusKind::Labeled) => {
                    return Err(Error::LengthMismatch { id: i, message: "missing labels in a labeled corpus".into() })
                }
            }
        }
        Ok(Self { scheme, sentences, kind })
    }

    pub fn empty(scheme: LabelScheme, kind: CorpusKind) -> Self {
        Self { scheme, sentences: Vec::new(), kind }
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn kind(&self) -> CorpusKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Number of entities (B- tags) in the gold labels.
    pub fn entity_count(&self) -> usize {
        self.sentences
            .iter()
            .filter_map(|s| s.labels.as_ref())
            .flatten()
            .filter(|&&l| matches!(self.scheme.tag(l), Tag::Begin(_)))
            .count()
    }

    /// Gold label sequences in sentence order. Empty for unlabeled corpora.
    pub fn gold_labels(&self) -> Vec<Vec<usize>> {
        self.sentences.iter().filter_map(|s| s.labels.clone()).collect()
    }

    /// Contiguous sub-corpus `[start, end)`, with ids renumbered.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let sentences = self.sentences[start..end].to_vec();
        Self::new(self.scheme.clone(), sentences, self.kind).expect("slice of a valid corpus")
    }

    /// Drops gold labels, keeping tokens and order.
    pub fn strip_labels(&self) -> Result<Self> {
        if self.kind == CorpusKind::Unlabeled {
            return Err(Error::AlreadyUnlabeled);
        }
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence::new(s.id, s.tokens.clone(), None))
            .collect();
        Ok(Self { scheme: self.scheme.clone(), sentences, kind: CorpusKind::Unlabeled })
    }

    /// Attaches one label sequence per sentence, producing a labeled corpus.
    pub fn with_labels(&self, labels: Vec<Vec<usize>>) -> Result<Self> {
        if labels.len() != self.sentences.len() {
            return Err(Error::LengthMismatch {
                id: labels.len().min(self.sentences.len()),
                message: format!("{} label sequences for {} sentences", labels.len(), self.sentences.len()),
            });
        }
        let sentences = self
            .sentences
            .iter()
            .zip(labels)
            .map(|(s, l)| Sentence::new(s.id, s.tokens.clone(), Some(l)))
            .collect();
        Self::new(self.scheme.clone(), sentences, CorpusKind::Labeled)
    }
}
