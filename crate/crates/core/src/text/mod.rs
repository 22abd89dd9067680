//! Lyrics pipeline: line segmentation, tokenization, vocabulary,
//! pretrained word vectors, and the padded token grid the lyric
//! encoder consumes.

mod embedding;
mod grid;
mod tokenize;
mod vocab;

pub use embedding::{load_embeddings, EmbeddingMatrix, EMBED_DIM};
pub use grid::TokenGrid;
pub use tokenize::{segment_sentences, tokenize};
pub use vocab::{build_vocab, Vocab, PAD_ID, UNK_ID};

/// One lyric line as a list of normalized tokens. Lyric lines stand in
/// for sentences: lyrics rarely carry punctuation, but the line
/// structure mirrors verse/chorus writing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
}
