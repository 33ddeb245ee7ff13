//! Corpus ingestion: whitespace tokenization, vocabulary, batching into
//! contiguous streams and the unrolled windows fed to training.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Token/id mapping. Ids are assigned in order of first occurrence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk_id: usize,
    eos_id: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_tokens(r.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list, appending the `<eos>`
    /// and `<unk>` markers if they are missing. Duplicates keep their first id.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            unk_id: 0,
            eos_id: 0,
        };
        for t in tokens {
            v.insert(t.into());
        }
        v.eos_id = v.insert(EOS.to_string());
        v.unk_id = v.insert(UNK.to_string());
        v
    }

    fn insert(&mut self, token: String) -> usize {
        if let Some(&id) = self.index.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn lines_with_eos(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .flat_map(|line| line.split_whitespace().chain(std::iter::once(EOS)))
}

/// Collects every whitespace-separated token of `text`; each line ends with
/// `<eos>` and `<unk>` is always registered.
pub fn build_vocabulary(text: &str) -> Result<Vocabulary> {
    if text.split_whitespace().next().is_none() {
        return Err(Error::Empty("corpus text"));
    }
    Ok(Vocabulary::from_tokens(lines_with_eos(text)))
}

/// Maps text to ids; unknown tokens become `<unk>`, line ends `<eos>`.
pub fn encode(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    lines_with_eos(text)
        .map(|t| vocab.id(t).unwrap_or(vocab.unk_id))
        .collect()
}

/// Inverse of [`encode`] up to whitespace: `<eos>` becomes a newline.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    let mut line_start = true;
    for &id in ids {
        let tok = vocab.token(id).ok_or(Error::TokenOutOfRange {
            token: id,
            vocab: vocab.len(),
        })?;
        if id == vocab.eos_id {
            out.push('\n');
            line_start = true;
        } else {
            if !line_start {
                out.push(' ');
            }
            out.push_str(tok);
            line_start = false;
        }
    }
    Ok(out)
}

/// A token sequence cut into `batch_size` contiguous streams of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchedCorpus {
    batch_size: usize,
    steps: usize,
    /// Row-major `[batch_size x steps]`.
    data: Vec<usize>,
}

impl BatchedCorpus {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn steps_per_stream(&self) -> usize {
        self.steps
    }

    pub fn stream(&self, b: usize) -> &[usize] {
        &self.data[b * self.steps..(b + 1) * self.steps]
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize) -> usize {
        self.data[b * self.steps + t]
    }

    /// Number of predicted tokens across all windows.
    pub fn target_count(&self) -> usize {
        self.batch_size * self.steps.saturating_sub(1)
    }

    pub fn max_id(&self) -> Option<usize> {
        self.data.iter().copied().max()
    }

    /// Unrolled windows of at most `unroll` steps, in stream order.
    pub fn windows(&self, unroll: usize) -> Result<Windows<'_>> {
        if unroll == 0 {
            return Err(Error::InvalidArgument("unroll must be >= 1".into()));
        }
        Ok(Windows {
            corpus: self,
            unroll,
            pos: 0,
        })
    }

    pub fn window_count(&self, unroll: usize) -> usize {
        self.steps.saturating_sub(1).div_ceil(unroll.max(1))
    }
}

/// Splits `ids` into `batch_size` equal contiguous streams, dropping the tail.
pub fn batchify(ids: &[usize], batch_size: usize) -> Result<BatchedCorpus> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let steps = ids.len() / batch_size;
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} tokens cannot fill {batch_size} streams of at least 2 tokens",
            ids.len()
        )));
    }
    Ok(BatchedCorpus {
        batch_size,
        steps,
        data: ids[..steps * batch_size].to_vec(),
    })
}

/// One unrolled slice: `inputs[t][b]` predicts `targets[t][b]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub struct Windows<'a> {
    corpus: &'a BatchedCorpus,
    unroll: usize,
    pos: usize,
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        let c = self.corpus;
        let last = c.steps - 1;
        if self.pos >= last {
            return None;
        }
        let len = self.unroll.min(last - self.pos);
        let slice = |offset: usize| -> Vec<Vec<usize>> {
            (0..len)
                .map(|t| {
                    (0..c.batch_size)
                        .map(|b| c.get(b, self.pos + t + offset))
                        .collect()
                })
                .collect()
        };
        let w = Window {
            inputs: slice(0),
            targets: slice(1),
        };
        self.pos += len;
        Some(w)
    }
}
