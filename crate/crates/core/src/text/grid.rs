use super::vocab::{Vocab, PAD_ID};
use super::Sentence;

/// Fixed-size `[s_max x w_max]` word-id grid for one song, with word and
/// sentence masks.
///
/// Invariants: `word_mask` is false exactly where the id is PAD, a
/// sentence is unmasked iff it holds at least one real word, and rows
/// beyond the real sentences are all PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub s_max: usize,
    pub w_max: usize,
    /// Row-major `[s_max x w_max]` ids.
    pub ids: Vec<u32>,
    pub word_mask: Vec<bool>,
    pub sent_mask: Vec<bool>,
}

impl TokenGrid {
    /// Encodes sentences into the grid: the first `s_max` sentences and
    /// first `w_max` words of each are kept, everything else is
    /// truncated; out-of-vocabulary words map to UNK and the remainder
    /// is PAD.
    pub fn encode(sents: &[Sentence], vocab: &Vocab, s_max: usize, w_max: usize) -> Self {
        let mut grid = Self {
            s_max,
            w_max,
            ids: vec![PAD_ID; s_max * w_max],
            word_mask: vec![false; s_max * w_max],
            sent_mask: vec![false; s_max],
        };
        for (s, sent) in sents.iter().take(s_max).enumerate() {
            for (w, token) in sent.tokens.iter().take(w_max).enumerate() {
                grid.ids[s * w_max + w] = vocab.id(token);
                grid.word_mask[s * w_max + w] = true;
            }
            grid.sent_mask[s] = !sent.tokens.is_empty();
        }
        grid
    }

    pub fn sentence_ids(&self, s: usize) -> &[u32] {
        &self.ids[s * self.w_max..(s + 1) * self.w_max]
    }

    pub fn sentence_word_mask(&self, s: usize) -> &[bool] {
        &self.word_mask[s * self.w_max..(s + 1) * self.w_max]
    }

    /// Word count of sentence `s`.
    pub fn sentence_len(&self, s: usize) -> usize {
        self.sentence_word_mask(s).iter().filter(|&&m| m).count()
    }

    pub fn has_content(&self) -> bool {
        self.sent_mask.iter().any(|&m| m)
    }
}
