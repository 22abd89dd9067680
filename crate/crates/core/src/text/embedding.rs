use super::vocab::{Vocab, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// Word vector dimensionality. Fixed: the lyric encoder's input layer
/// is sized for it.
pub const EMBED_DIM: usize = 300;

/// The word embedding table `[vocab_size x 300]`.
///
/// Row 0 (padding) is all-zero and stays frozen during training; the
/// autodiff embed op never writes a gradient into it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub weights: Tensor,
    pub trainable: bool,
}

impl EmbeddingMatrix {
    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Random initialization for every non-PAD row, for runs without a
    /// pretrained vector file.
    pub fn seeded_random(vocab: &Vocab, rng: &mut ChaCha8Rng, trainable: bool) -> Self {
        build(vocab, &HashMap::new(), rng, trainable)
    }
}

/// Loads pretrained vectors in the text format: a `count dim` header
/// line, then `token v1 .. v300` per line. Vocab tokens found in the
/// file get the file vector; everything else (including the unknown-word
/// row) is drawn i.i.d. uniform(-0.25, 0.25) from the seeded generator.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
    trainable: bool,
) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let parse_err = |n: usize, detail: String| Error::Parse {
        path: path.display().to_string(),
        line: n + 1,
        detail,
    };

    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty embedding file".into()))?;
    let header = header.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut parts = header.split_whitespace();
    let _count: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(n, format!("bad header {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(n, format!("bad header {header:?}")))?;
    if dim != EMBED_DIM {
        return Err(parse_err(
            n,
            format!("declared dimension {dim}, expected {EMBED_DIM}"),
        ));
    }

    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| parse_err(n, "missing token".into()))?;
        if !vocab.contains(token) {
            continue;
        }
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(n, format!("bad float: {e}")))?;
        if values.len() != EMBED_DIM {
            return Err(parse_err(
                n,
                format!("{} values for token {token:?}, expected {EMBED_DIM}", values.len()),
            ));
        }
        found.insert(token.to_string(), values);
    }

    Ok(build(vocab, &found, rng, trainable))
}

fn build(
    vocab: &Vocab,
    found: &HashMap<String, Vec<f64>>,
    rng: &mut ChaCha8Rng,
    trainable: bool,
) -> EmbeddingMatrix {
    let rows = vocab.size();
    let mut weights = Tensor::zeros(&[rows, EMBED_DIM]);
    let fill_random = |w: &mut Tensor, id: u32, rng: &mut ChaCha8Rng| {
        let off = id as usize * EMBED_DIM;
        for i in 0..EMBED_DIM {
            w.data_mut()[off + i] = rng.random_range(-0.25..0.25);
        }
    };
    // PAD row stays zero. Rows are visited in id order so the random
    // draws replay identically for a fixed seed.
    fill_random(&mut weights, UNK_ID, rng);
    for (token, id) in vocab.entries() {
        debug_assert_ne!(id, PAD_ID);
        match found.get(token) {
            Some(values) => {
                let off = id as usize * EMBED_DIM;
                weights.data_mut()[off..off + EMBED_DIM].copy_from_slice(values);
            }
            None => fill_random(&mut weights, id, rng),
        }
    }
    EmbeddingMatrix { weights, trainable }
}
