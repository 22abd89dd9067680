use super::attention::{attention, AttentionParams, AttentionVars};
use super::gru::{bigru, GruParams, GruVars};
use super::Registry;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use crate::text::{TokenGrid, EMBED_DIM, PAD_ID};
use rand_chacha::ChaCha8Rng;

/// The lyric branch: word-level BiGRU + attention collapses each
/// sentence to a vector, sentence-level BiGRU + attention collapses the
/// sentence stack to one song vector of length `2 * hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct HanParams {
    pub word_fwd: GruParams,
    pub word_bwd: GruParams,
    pub word_attn: AttentionParams,
    pub sent_fwd: GruParams,
    pub sent_bwd: GruParams,
    pub sent_attn: AttentionParams,
    pub hidden: usize,
}

impl HanParams {
    /// `hidden` units per direction; the attention dimension follows the
    /// bidirectional state size `2 * hidden`.
    pub fn init(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let attn_dim = 2 * hidden;
        Self {
            word_fwd: GruParams::init(EMBED_DIM, hidden, rng),
            word_bwd: GruParams::init(EMBED_DIM, hidden, rng),
            word_attn: AttentionParams::init(2 * hidden, attn_dim, rng),
            sent_fwd: GruParams::init(2 * hidden, hidden, rng),
            sent_bwd: GruParams::init(2 * hidden, hidden, rng),
            sent_attn: AttentionParams::init(2 * hidden, attn_dim, rng),
            hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn register(&self, g: &mut Graph, reg: &mut Registry) -> HanVars {
        HanVars {
            word_fwd: self.word_fwd.register(g, reg, "han.word.fwd"),
            word_bwd: self.word_bwd.register(g, reg, "han.word.bwd"),
            word_attn: self.word_attn.register(g, reg, "han.word.attn"),
            sent_fwd: self.sent_fwd.register(g, reg, "han.sent.fwd"),
            sent_bwd: self.sent_bwd.register(g, reg, "han.sent.bwd"),
            sent_attn: self.sent_attn.register(g, reg, "han.sent.attn"),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::tensor::Tensor, bool)) {
        self.word_fwd.for_each_mut("han.word.fwd", f);
        self.word_bwd.for_each_mut("han.word.bwd", f);
        self.word_attn.for_each_mut("han.word.attn", f);
        self.sent_fwd.for_each_mut("han.sent.fwd", f);
        self.sent_bwd.for_each_mut("han.sent.bwd", f);
        self.sent_attn.for_each_mut("han.sent.attn", f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HanVars {
    pub word_fwd: GruVars,
    pub word_bwd: GruVars,
    pub word_attn: AttentionVars,
    pub sent_fwd: GruVars,
    pub sent_bwd: GruVars,
    pub sent_attn: AttentionVars,
}

/// Song vector plus the attention weights at both levels, for
/// inspection.
pub struct HanOutput {
    /// `[2 * hidden]`.
    pub song_vec: Var,
    /// Original sentence index of each processed (unmasked) sentence.
    pub sentences: Vec<usize>,
    /// `[n_sentences]` sentence-level attention weights, aligned with
    /// `sentences`.
    pub sent_weights: Var,
    /// Word-level attention weights per processed sentence, aligned with
    /// `sentences`; each is `[w_max]` with zeros on padding.
    pub word_weights: Vec<Var>,
}

/// Runs the two-level encoder over one song's token grid.
///
/// Masked sentences are never touched, so permuting or appending fully
/// padded rows cannot change the result. Songs with no content are an
/// error; the training loop substitutes a zero song vector under its
/// empty-lyrics policy.
pub fn han_forward(g: &mut Graph, grid: &TokenGrid, embedding: Var, p: &HanVars) -> Result<HanOutput> {
    if g.value(embedding).shape()[1] != EMBED_DIM {
        return Err(Error::Shape {
            op: "han_forward",
            detail: format!(
                "embedding dim {} != {EMBED_DIM}",
                g.value(embedding).shape()[1]
            ),
        });
    }
    let sentences: Vec<usize> = (0..grid.s_max).filter(|&s| grid.sent_mask[s]).collect();
    if sentences.is_empty() {
        return Err(Error::EmptyLyrics);
    }

    let mut sent_vecs = Vec::with_capacity(sentences.len());
    let mut word_weights = Vec::with_capacity(sentences.len());
    for &s in &sentences {
        let ids = grid.sentence_ids(s);
        let mask = grid.sentence_word_mask(s);
        let embedded = g.embed(embedding, ids, PAD_ID)?; // [w_max x 300]
        let states = bigru(g, embedded, mask, &p.word_fwd, &p.word_bwd)?;
        let attn = attention(g, states, &p.word_attn, mask)?;
        sent_vecs.push(attn.summary);
        word_weights.push(attn.weights);
    }

    let sent_stack = g.stack_rows(&sent_vecs)?; // [n x 2h]
    let all_live = vec![true; sentences.len()];
    let states = bigru(g, sent_stack, &all_live, &p.sent_fwd, &p.sent_bwd)?;
    let attn = attention(g, states, &p.sent_attn, &all_live)?;

    Ok(HanOutput {
        song_vec: attn.summary,
        sentences,
        sent_weights: attn.weights,
        word_weights,
    })
}
