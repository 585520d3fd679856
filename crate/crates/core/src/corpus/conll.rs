use super::{Corpus, CorpusKind, LabelScheme, Sentence, Tag};
use crate::error::{Error, Result};

/// Counts gathered while parsing a CoNLL column file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub sentences: usize,
    pub tokens: usize,
    /// B- tags after stray-I normalization.
    pub entities: usize,
    /// I-t tags that did not continue a t entity and were rewritten to B-t.
    pub stray_inside: usize,
    pub docstart_lines: usize,
}

/// Parses whitespace-separated CoNLL columns: token first, tag last.
///
/// Blank lines end sentences, `-DOCSTART-` lines are skipped, CRLF is
/// accepted. A stray `I-t` (sentence start, after `O`, or after another type)
/// becomes `B-t` and is counted in the report.
pub fn parse_conll(text: &str, scheme: &LabelScheme, has_labels: bool) -> Result<(Corpus, ParseReport)> {
    let mut report = ParseReport::default();
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();

    let flush = |tokens: &mut Vec<String>, labels: &mut Vec<usize>, sentences: &mut Vec<Sentence>| {
        if tokens.is_empty() {
            return;
        }
        let labels = has_labels.then(|| std::mem::take(labels));
        sentences.push(Sentence::new(sentences.len(), std::mem::take(tokens), labels));
    };

    for (n, raw) in text.split('\n').enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let mut cols = line.split_whitespace();
        let Some(token) = cols.next() else {
            flush(&mut tokens, &mut labels, &mut sentences);
            continue;
        };
        if token == "-DOCSTART-" {
            report.docstart_lines += 1;
            continue;
        }
        if has_labels {
            let Some(tag) = cols.last() else {
                return Err(Error::Parse { line: line_no, message: "expected a token and a tag column".into() });
            };
            let index = scheme
                .index_of(tag)
                .ok_or_else(|| Error::UnknownTag { line: line_no, tag: tag.to_owned() })?;
            let index = match scheme.tag(index) {
                Tag::Inside(t) => {
                    let continues = labels.last().is_some_and(|&prev| match scheme.tag(prev) {
                        Tag::Begin(p) | Tag::Inside(p) => p == t,
                        Tag::Outside => false,
                    });
                    if continues {
                        index
                    } else {
                        report.stray_inside += 1;
                        scheme.encode(Tag::Begin(t))
                    }
                }
                _ => index,
            };
            if matches!(scheme.tag(index), Tag::Begin(_)) {
                report.entities += 1;
            }
            labels.push(index);
        }
        tokens.push(token.to_owned());
        report.tokens += 1;
    }
    flush(&mut tokens, &mut labels, &mut sentences);
    report.sentences = sentences.len();

    let kind = if has_labels { CorpusKind::Labeled } else { CorpusKind::Unlabeled };
    let corpus = Corpus::new(scheme.clone(), sentences, kind)?;
    Ok((corpus, report))
}

/// Serializes a corpus as CoNLL columns with LF line endings. Every sentence,
/// including the last, is followed by one blank line.
pub fn write_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in corpus.sentences() {
        for (i, tok) in s.tokens.iter().enumerate() {
            out.push_str(tok);
            if let Some(labels) = &s.labels {
                out.push(' ');
                out.push_str(corpus.scheme().tag_name(labels[i]));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
