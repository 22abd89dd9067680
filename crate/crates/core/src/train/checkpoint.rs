use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;
use crate::text::Vocab;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

// Checkpoint layout: "GFCK" magic, u16 version, u32 JSON length, the
// JSON snapshot (config, vocab, epoch, rng state), then named blobs:
// u16 name length, name, u8 rank, u32 dims, little-endian f32 values.
// Parameter blobs use their canonical names, buffers get a "buf."
// prefix and optimizer velocities a "vel." prefix.
const MAGIC: &[u8; 4] = b"GFCK";
const VERSION: u16 = 1;

/// Serializable state of one seeded generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos_hex: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed_hex: hex_encode(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos_hex: format!("{:x}", rng.get_word_pos()),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let seed_bytes = hex_decode(&self.seed_hex)
            .ok_or_else(|| Error::Checkpoint(format!("bad rng seed {:?}", self.seed_hex)))?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed is not 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        let pos = u128::from_str_radix(&self.word_pos_hex, 16)
            .map_err(|_| Error::Checkpoint(format!("bad rng position {:?}", self.word_pos_hex)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    config: TrainConfig,
    vocab: Vec<(String, u32)>,
    epoch: usize,
    dropout_rng: RngState,
    shuffle_rng: RngState,
}

/// Full training state: everything needed to resume bit-identically or
/// to run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    pub velocities: BTreeMap<String, Vec<f64>>,
    pub epoch: usize,
    pub dropout_rng: ChaCha8Rng,
    pub shuffle_rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut params = self.params.clone();
        let snapshot = Snapshot {
            config: self.config.clone(),
            vocab: self
                .vocab
                .entries()
                .into_iter()
                .map(|(t, i)| (t.to_string(), i))
                .collect(),
            epoch: self.epoch,
            dropout_rng: RngState::capture(&self.dropout_rng),
            shuffle_rng: RngState::capture(&self.shuffle_rng),
        };
        let json = serde_json::to_vec(&snapshot)
            .map_err(|e| Error::Checkpoint(format!("serializing config: {e}")))?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        let mut write_blob = |name: &str, shape: &[usize], values: &[f64]| {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        params.for_each_mut(&mut |name, t, _| {
            write_blob(name, t.shape(), t.data());
        });
        for (name, values) in self.params.buffers() {
            write_blob(&format!("buf.{name}"), &[values.len()], &values);
        }
        for (name, values) in &self.velocities {
            write_blob(&format!("vel.{name}"), &[values.len()], values);
        }

        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        file.write_all(&out)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck_err = |detail: String| Error::Checkpoint(format!("{}: {detail}", path.display()));
        if bytes.len() < 10 || &bytes[0..4] != MAGIC {
            return Err(ck_err("bad magic, not a checkpoint".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(ck_err(format!("unsupported version {version}")));
        }
        let json_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if bytes.len() < 10 + json_len {
            return Err(ck_err("truncated config".into()));
        }
        let snapshot: Snapshot = serde_json::from_slice(&bytes[10..10 + json_len])
            .map_err(|e| ck_err(format!("bad config JSON: {e}")))?;

        let mut blobs: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut pos = 10 + json_len;
        while pos < bytes.len() {
            let need = |n: usize, pos: usize| -> Result<()> {
                if pos + n > bytes.len() {
                    Err(ck_err(format!("truncated blob at byte {pos}")))
                } else {
                    Ok(())
                }
            };
            need(2, pos)?;
            let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
            pos += 2;
            need(name_len + 1, pos)?;
            let name = std::str::from_utf8(&bytes[pos..pos + name_len])
                .map_err(|_| ck_err("blob name is not UTF-8".into()))?
                .to_string();
            pos += name_len;
            let rank = bytes[pos] as usize;
            pos += 1;
            need(4 * rank, pos)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
                pos += 4;
            }
            let numel: usize = shape.iter().product();
            need(4 * numel, pos)?;
            let values: Vec<f64> = bytes[pos..pos + 4 * numel]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos += 4 * numel;
            blobs.insert(name, Tensor::new(shape, values)?);
        }

        // Rebuild the parameter skeleton from the config, then overwrite
        // every tensor from the blobs.
        let vocab = vocab_from_entries(&snapshot.vocab)?;
        let mut params = super::build_model(&snapshot.config, &vocab, None)?;
        let mut missing: Vec<String> = Vec::new();
        params.for_each_mut(&mut |name, t, _| match blobs.get(name) {
            Some(saved) if saved.shape() == t.shape() => *t = saved.clone(),
            Some(saved) => missing.push(format!("{name} (shape {:?} vs {:?})", saved.shape(), t.shape())),
            None => missing.push(name.to_string()),
        });
        if !missing.is_empty() {
            return Err(ck_err(format!("missing or mismatched tensors: {}", missing.join(", "))));
        }
        for (name, _) in params.buffers() {
            let blob = blobs
                .get(&format!("buf.{name}"))
                .ok_or_else(|| ck_err(format!("missing buffer {name}")))?;
            if !params.set_buffer(&name, blob.data()) {
                return Err(ck_err(format!("buffer {name} has wrong length")));
            }
        }
        let velocities: BTreeMap<String, Vec<f64>> = blobs
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix("vel.")
                    .map(|name| (name.to_string(), v.data().to_vec()))
            })
            .collect();

        Ok(Self {
            config: snapshot.config,
            vocab,
            params,
            velocities,
            epoch: snapshot.epoch,
            dropout_rng: snapshot.dropout_rng.restore()?,
            shuffle_rng: snapshot.shuffle_rng.restore()?,
        })
    }
}

fn vocab_from_entries(entries: &[(String, u32)]) -> Result<Vocab> {
    Vocab::from_entries(entries.iter().cloned())
}
