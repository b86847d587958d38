//! Plain-text ingestion: UTF-8, one document per line, whitespace tokens.
//!
//! Every `dev_every`-th non-empty line (1-based) goes to the dev split, the
//! rest to train. Classification files carry `label<TAB>text` per line.

use std::path::Path;

use super::data::{Dataset, Example, TaskSpec};
use super::vocab::Vocab;
use super::TaskError;

pub const DEFAULT_DEV_EVERY: usize = 10;

fn split_lines(text: &str, dev_every: usize) -> (Vec<&str>, Vec<&str>) {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (i, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        if dev_every > 0 && (i + 1) % dev_every == 0 {
            dev.push(line);
        } else {
            train.push(line);
        }
    }
    (train, dev)
}

/// Masked-LM dataset from raw text, vocabulary built from the train split.
pub fn parse_text_corpus(
    text: &str,
    name: &str,
    max_len: usize,
    min_freq: usize,
    dev_every: usize,
) -> Result<Dataset, TaskError> {
    let (train, dev) = split_lines(text, dev_every);
    if train.is_empty() {
        return Err(TaskError::Config("corpus has no training lines".into()));
    }
    let vocab = Vocab::build(train.iter().copied(), min_freq)?;
    let encode = |lines: &[&str]| -> Vec<Example> {
        lines
            .iter()
            .map(|l| Example {
                tokens: vocab.encode(l.split_whitespace(), max_len),
                label: None,
            })
            .filter(|e| e.tokens.len() > 1)
            .collect()
    };
    Ok(Dataset {
        spec: TaskSpec::masked_lm(name),
        train: encode(&train),
        dev: encode(&dev),
        vocab,
    })
}

pub fn load_text_corpus(
    path: &Path,
    max_len: usize,
    min_freq: usize,
    dev_every: usize,
) -> Result<Dataset, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("text");
    parse_text_corpus(&text, name, max_len, min_freq, dev_every)
}

/// Labeled `label<TAB>text` lines encoded with an existing vocabulary.
pub fn parse_classification(
    text: &str,
    spec: TaskSpec,
    vocab: &Vocab,
    max_len: usize,
    dev_every: usize,
) -> Result<Dataset, TaskError> {
    spec.validate()?;
    let n_classes = spec
        .n_classes()
        .ok_or_else(|| TaskError::Config("classification file needs a classification task".into()))?;
    let (train, dev) = split_lines(text, dev_every);
    let encode = |lines: &[&str]| -> Result<Vec<Example>, TaskError> {
        lines
            .iter()
            .map(|l| {
                let (label, body) = l
                    .split_once('\t')
                    .ok_or_else(|| TaskError::Config(format!("line without a tab: {l:?}")))?;
                let label: usize = label
                    .trim()
                    .parse()
                    .map_err(|_| TaskError::Config(format!("bad label {label:?}")))?;
                if label >= n_classes {
                    return Err(TaskError::Config(format!("label {label} >= {n_classes} classes")));
                }
                Ok(Example {
                    tokens: vocab.encode(body.split_whitespace(), max_len),
                    label: Some(label),
                })
            })
            .collect()
    };
    let train = encode(&train)?;
    if train.is_empty() {
        return Err(TaskError::Config("classification file has no training lines".into()));
    }
    Ok(Dataset {
        spec,
        train,
        dev: encode(&dev)?,
        vocab: vocab.clone(),
    })
}

pub fn load_classification(
    path: &Path,
    spec: TaskSpec,
    vocab: &Vocab,
    max_len: usize,
    dev_every: usize,
) -> Result<Dataset, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| TaskError::Io(format!("{}: {e}", path.display())))?;
    parse_classification(&text, spec, vocab, max_len, dev_every)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::data::{MetricKind, TaskKind};
    use crate::tasks::vocab::{CLS, UNK};

    #[test]
    fn text_split_and_vocab_from_train() {
        let text = "the cat sat\nthe dog\n\nrare words only here\nthe cat ran\n";
        let d = parse_text_corpus(text, "toy", 8, 2, 3).unwrap();
        assert_eq!(d.train.len(), 3);
        assert_eq!(d.dev.len(), 1);
        // "the" x3, "cat" x2 in train; everything else below min_freq
        assert_eq!(d.vocab.len(), 6);
        assert_eq!(d.dev[0].tokens, vec![CLS, UNK, UNK, UNK, UNK]);
        assert_eq!(d.train[2].tokens, vec![CLS, d.vocab.id("the"), d.vocab.id("cat"), UNK]);
    }

    #[test]
    fn classification_lines_parse() {
        let vocab = Vocab::from_tokens(["good", "bad"]).unwrap();
        let spec = TaskSpec::new("s", TaskKind::Classification { n_classes: 2 }, MetricKind::Accuracy).unwrap();
        let d = parse_classification("1\tgood good\n0\tbad\n1\tgood\n", spec.clone(), &vocab, 8, 0).unwrap();
        assert_eq!(d.train.len(), 3);
        assert_eq!(d.train[1].label, Some(0));
        assert!(parse_classification("2\tgood\n", spec.clone(), &vocab, 8, 0).is_err());
        assert!(parse_classification("good\n", spec, &vocab, 8, 0).is_err());
    }
}
