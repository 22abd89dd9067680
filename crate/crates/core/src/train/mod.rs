//! Training engine: configuration, the SGD + Nesterov momentum
//! optimizer, the epoch loop, evaluation, and inference.

mod checkpoint;

pub use checkpoint::{Checkpoint, RngState};

use crate::audio::{load_spectrogram, Spectrogram};
use crate::data::{SplitAssignment, TrackRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{
    cnn_forward, fuse_classify, fused_logits, han_forward, CnnBlockSpec, CnnParams, FusionParams,
    HanParams, ModelParams, NamedVar,
};
use crate::tensor::{Graph, Mode, Tensor, Var};
use crate::text::{load_embeddings, segment_sentences, EmbeddingMatrix, TokenGrid, Vocab};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// What to do when a track's data cannot be read during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    Skip,
    Abort,
}

/// All training hyperparameters and model shape choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub s_max: usize,
    pub w_max: usize,
    pub labels: Vec<String>,
    pub grid_mels: usize,
    pub grid_frames: usize,
    pub cnn_features: usize,
    pub blocks: Vec<CnnBlockSpec>,
    pub embed_trainable: bool,
    pub class_weights: bool,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub min_count: usize,
    pub on_error: OnError,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 200,
            dropout: 0.5,
            hidden: 50,
            s_max: 50,
            w_max: 20,
            labels: default_labels(),
            grid_mels: 500,
            grid_frames: 1500,
            cnn_features: 500,
            blocks: CnnBlockSpec::default_stack(),
            embed_trainable: true,
            class_weights: false,
            lr_decay_factor: 0.5,
            lr_patience: 10,
            min_count: 1,
            on_error: OnError::Abort,
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

/// The sixteen genres of the target dataset.
pub fn default_labels() -> Vec<String> {
    [
        "Rock",
        "Electronic",
        "Experimental",
        "Hip-Hop",
        "Folk",
        "Instrumental",
        "Pop",
        "International",
        "Classical",
        "Old-Time/Historic",
        "Jazz",
        "Country",
        "Soul-RnB",
        "Spoken",
        "Blues",
        "Easy Listening",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.lr >= 0.0, "lr must be nonnegative (0 freezes the optimizer)")?;
        check((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)")?;
        check(
            self.batch_size >= 2,
            "batch_size must be at least 2 (train-mode batch normalization)",
        )?;
        check(self.hidden >= 1, "hidden must be positive")?;
        check(self.s_max >= 1 && self.w_max >= 1, "s_max and w_max must be positive")?;
        check(!self.labels.is_empty(), "label list is empty")?;
        {
            let mut sorted = self.labels.clone();
            sorted.sort();
            sorted.dedup();
            check(sorted.len() == self.labels.len(), "label list has duplicates")?;
        }
        check(self.grid_mels >= 1 && self.grid_frames >= 1, "grid dims must be positive")?;
        check(self.cnn_features >= 1, "cnn_features must be positive")?;
        check((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)")?;
        check(
            self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0,
            "lr_decay_factor must be in (0, 1]",
        )?;
        check(self.lr_patience >= 1, "lr_patience must be positive")?;
        check(self.min_count >= 1, "min_count must be positive")?;
        let total = self.train_fraction + self.val_fraction + self.test_fraction;
        check(
            self.train_fraction > 0.0
                && self.val_fraction >= 0.0
                && self.test_fraction >= 0.0
                && (total - 1.0).abs() < 1e-9,
            "split fractions must be nonnegative and sum to 1",
        )?;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_fraction, self.val_fraction, self.test_fraction)
    }
}

/// Resolves manifest-relative paths and the spectrogram cache location.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub manifest_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl DataLayout {
    pub fn new(manifest_path: &Path, cache_dir: &Path) -> Self {
        Self {
            manifest_dir: manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            cache_dir: cache_dir.to_path_buf(),
        }
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.manifest_dir.join(path)
        }
    }

    /// Whether the manifest points at raw audio (needing `prepare`)
    /// rather than a ready spectrogram cache.
    pub fn is_wav_source(track: &TrackRecord) -> bool {
        Path::new(&track.spectrogram_path)
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
    }

    pub fn wav_file(&self, track: &TrackRecord) -> PathBuf {
        self.resolve(&track.spectrogram_path)
    }

    /// The cache file the model reads for this track.
    pub fn spectrogram_file(&self, track: &TrackRecord) -> PathBuf {
        if Self::is_wav_source(track) {
            self.cache_dir.join(format!("{}.mspc", track.track_id))
        } else {
            self.resolve(&track.spectrogram_path)
        }
    }

    pub fn lyrics_file(&self, track: &TrackRecord) -> PathBuf {
        self.resolve(&track.lyrics_path)
    }
}

/// One track loaded into model-ready form.
struct LoadedTrack {
    label: usize,
    spec: Spectrogram,
    grid: TokenGrid,
}

fn load_track(track: &TrackRecord, layout: &DataLayout, vocab: &Vocab, cfg: &TrainConfig) -> Result<LoadedTrack> {
    let spec_path = layout.spectrogram_file(track);
    let spec = load_spectrogram(&spec_path)?;
    if spec.mels != cfg.grid_mels || spec.frames != cfg.grid_frames {
        return Err(Error::Shape {
            op: "load_track",
            detail: format!(
                "{}: cached grid {}x{}, config expects {}x{} (re-run prepare)",
                spec_path.display(),
                spec.mels,
                spec.frames,
                cfg.grid_mels,
                cfg.grid_frames
            ),
        });
    }
    let lyr_path = layout.lyrics_file(track);
    let text = std::fs::read_to_string(&lyr_path)
        .map_err(|e| Error::io(format!("reading lyrics {}", lyr_path.display()), e))?;
    let grid = TokenGrid::encode(&segment_sentences(&text), vocab, cfg.s_max, cfg.w_max);
    Ok(LoadedTrack {
        label: track.genre,
        spec,
        grid,
    })
}

fn spectrogram_batch(tracks: &[&LoadedTrack], cfg: &TrainConfig) -> Tensor {
    let (m, f) = (cfg.grid_mels, cfg.grid_frames);
    let mut data = Vec::with_capacity(tracks.len() * m * f);
    for t in tracks {
        data.extend(t.spec.values.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![tracks.len(), m, f], data).expect("batch shape consistent")
}

/// Builds the vocabulary from the lyrics of the given (training) tracks.
pub fn build_vocab_from_tracks(
    tracks: &[&TrackRecord],
    layout: &DataLayout,
    min_count: usize,
) -> Result<Vocab> {
    let mut tokens: Vec<String> = Vec::new();
    for t in tracks {
        let path = layout.lyrics_file(t);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading lyrics {}", path.display()), e))?;
        for sent in segment_sentences(&text) {
            tokens.extend(sent.tokens);
        }
    }
    Ok(crate::text::build_vocab(tokens.iter().map(String::as_str), min_count))
}

/// Initializes all model parameters from the config (rng stream 0 of the
/// master seed). Word vectors come from the embedding file when given,
/// otherwise they are randomly initialized.
pub fn build_model(cfg: &TrainConfig, vocab: &Vocab, embeddings: Option<&Path>) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let embedding = match embeddings {
        Some(path) => load_embeddings(path, vocab, &mut rng, cfg.embed_trainable)?,
        None => EmbeddingMatrix::seeded_random(vocab, &mut rng, cfg.embed_trainable),
    };
    let cnn = CnnParams::init(
        cfg.blocks.clone(),
        cfg.grid_mels,
        cfg.grid_frames,
        cfg.cnn_features,
        &mut rng,
    )?;
    let han = HanParams::init(cfg.hidden, &mut rng);
    let fusion = FusionParams::init(cfg.classes(), cfg.cnn_features + han.output_dim(), &mut rng);
    Ok(ModelParams {
        embedding,
        cnn,
        han,
        fusion,
    })
}

/// One Nesterov momentum update:
/// `v <- mu * v - lr * g; theta <- theta + mu * v - lr * g`.
pub fn sgd_nesterov_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), velocity.len());
    for i in 0..param.len() {
        let v = momentum * velocity[i] - lr * grad[i];
        velocity[i] = v;
        param[i] += momentum * v - lr * grad[i];
    }
}

/// Per-epoch training record, one history CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc,val_f1";

pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    writeln!(file, "{HISTORY_HEADER}").map_err(|e| Error::io("writing history", e))?;
    for row in history {
        writeln!(
            file,
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.epoch, row.train_loss, row.val_loss, row.val_acc, row.val_f1
        )
        .map_err(|e| Error::io("writing history", e))?;
    }
    Ok(())
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub skipped_tracks: Vec<String>,
}

struct BatchForward {
    loss: Var,
    logits: Var,
    named: Vec<NamedVar>,
}

/// Builds the full multimodal forward for a batch on the given graph.
fn batch_forward(
    g: &mut Graph,
    params: &mut ModelParams,
    tracks: &[&LoadedTrack],
    cfg: &TrainConfig,
    mode: Mode,
    dropout_rng: &mut ChaCha8Rng,
    class_weights: Option<&[f64]>,
) -> Result<BatchForward> {
    let (vars, named) = params.register(g);
    let spec_batch = g.constant(spectrogram_batch(tracks, cfg));
    let cnn_feats = cnn_forward(g, spec_batch, &mut params.cnn, &vars.cnn, mode, dropout_rng)?;

    let han_dim = params.han.output_dim();
    let mut song_vecs = Vec::with_capacity(tracks.len());
    for t in tracks {
        if t.grid.has_content() {
            let out = han_forward(g, &t.grid, vars.embedding, &vars.han)?;
            song_vecs.push(out.song_vec);
        } else {
            // Empty-lyrics policy: the lyric branch contributes zeros.
            song_vecs.push(g.constant(Tensor::zeros(&[han_dim])));
        }
    }
    let han_batch = g.stack_rows(&song_vecs)?;
    let logits = fused_logits(g, han_batch, cnn_feats, &vars.fusion)?;

    let labels: Vec<usize> = tracks.iter().map(|t| t.label).collect();
    let weights: Option<Vec<f64>> = class_weights.map(|w| labels.iter().map(|&l| w[l]).collect());
    let loss = g.softmax_cross_entropy(logits, &labels, weights.as_deref())?;
    Ok(BatchForward { loss, logits, named })
}

/// Applies one optimizer step from the gradients on `g`.
fn apply_step(
    g: &Graph,
    params: &mut ModelParams,
    named: &[NamedVar],
    velocities: &mut BTreeMap<String, Vec<f64>>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let mut grads: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for nv in named {
        if !nv.trainable {
            continue;
        }
        let grad = g
            .grad(nv.var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; g.value(nv.var).numel()]);
        grads.insert(&nv.name, grad);
    }
    params.for_each_mut(&mut |name, t, trainable| {
        if !trainable {
            return;
        }
        if let Some(grad) = grads.get(name) {
            let vel = velocities
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; t.numel()]);
            sgd_nesterov_step(t.data_mut(), grad, vel, lr, momentum);
        }
    });
    if !params.all_finite() {
        return Err(Error::NonFinite {
            op: "sgd_nesterov_step",
        });
    }
    Ok(())
}

/// Probabilities, predictions, and labels for a set of tracks under the
/// current parameters (eval mode).
pub struct EvalOutput {
    pub probs: Vec<Vec<f64>>,
    pub preds: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn evaluate_tracks(
    params: &mut ModelParams,
    cfg: &TrainConfig,
    tracks: &[&TrackRecord],
    layout: &DataLayout,
    vocab: &Vocab,
) -> Result<EvalOutput> {
    let mut probs = Vec::with_capacity(tracks.len());
    let mut preds = Vec::with_capacity(tracks.len());
    let mut labels = Vec::with_capacity(tracks.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode never draws
    for chunk in tracks.chunks(cfg.batch_size.max(1)) {
        let loaded: Vec<LoadedTrack> = chunk
            .iter()
            .map(|t| load_track(t, layout, vocab, cfg))
            .collect::<Result<_>>()?;
        let refs: Vec<&LoadedTrack> = loaded.iter().collect();
        let mut g = Graph::new();
        let fwd = batch_forward(&mut g, params, &refs, cfg, Mode::Eval, &mut rng, None)?;
        let logits = g.value(fwd.logits);
        for (i, t) in loaded.iter().enumerate() {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            let p: Vec<f64> = exps.into_iter().map(|e| e / denom).collect();
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            probs.push(p);
            preds.push(argmax);
            labels.push(t.label);
        }
    }
    Ok(EvalOutput {
        probs,
        preds,
        labels,
    })
}

fn val_stats(
    params: &mut ModelParams,
    cfg: &TrainConfig,
    val: &[&TrackRecord],
    layout: &DataLayout,
    vocab: &Vocab,
) -> Result<(f64, f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let out = evaluate_tracks(params, cfg, val, layout, vocab)?;
    let report = MetricsReport::compute(&cfg.labels, &out.probs, &out.preds, &out.labels)?;
    Ok((report.logloss, report.accuracy, report.macro_f1))
}

fn inverse_frequency_weights(tracks: &[&TrackRecord], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for t in tracks {
        counts[t.genre] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    let total: usize = counts.iter().sum();
    // Mean weight over the training set stays 1.
    (0..classes)
        .map(|c| {
            if counts[c] == 0 {
                0.0
            } else {
                total as f64 / (present * counts[c] as f64)
            }
        })
        .collect()
}

/// Runs the full epoch loop and returns the history plus best (by
/// validation macro-F1, ties broken by lower validation loss) and final
/// checkpoints.
pub fn train(
    cfg: &TrainConfig,
    manifest: &[TrackRecord],
    split: &SplitAssignment,
    layout: &DataLayout,
    embeddings: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_tracks = split.members(manifest, crate::data::Split::Train);
    let val_tracks = split.members(manifest, crate::data::Split::Val);
    if train_tracks.is_empty() {
        return Err(Error::Manifest("training split is empty".into()));
    }

    let vocab = build_vocab_from_tracks(&train_tracks, layout, cfg.min_count)?;
    let mut params = build_model(cfg, &vocab, embeddings)?;
    let mut velocities: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);

    let class_weights = cfg
        .class_weights
        .then(|| inverse_frequency_weights(&train_tracks, cfg.classes()));

    let mut skipped: Vec<String> = Vec::new();
    let mut history: Vec<EpochStats> = Vec::new();
    let mut lr = cfg.lr;
    let mut plateau_best = f64::INFINITY;
    let mut plateau_count = 0usize;
    let mut best_key: Option<(f64, f64)> = None; // (macro-F1, -logloss) maximized
    let mut best: Option<Checkpoint> = None;

    let snapshot = |params: &ModelParams,
                    velocities: &BTreeMap<String, Vec<f64>>,
                    epoch: usize,
                    dropout_rng: &ChaCha8Rng,
                    shuffle_rng: &ChaCha8Rng,
                    vocab: &Vocab| Checkpoint {
        config: cfg.clone(),
        vocab: vocab.clone(),
        params: params.clone(),
        velocities: velocities.clone(),
        epoch,
        dropout_rng: dropout_rng.clone(),
        shuffle_rng: shuffle_rng.clone(),
    };

    for epoch in 1..=cfg.epochs {
        // Seeded shuffle, then batches; a trailing singleton is folded
        // into the previous batch so train-mode batchnorm always sees
        // at least two samples.
        let mut order: Vec<usize> = (0..train_tracks.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for batch in &batches {
            let mut loaded: Vec<LoadedTrack> = Vec::with_capacity(batch.len());
            for &i in batch {
                match load_track(train_tracks[i], layout, &vocab, cfg) {
                    Ok(t) => loaded.push(t),
                    Err(e) => match cfg.on_error {
                        OnError::Abort => return Err(e),
                        OnError::Skip => {
                            let id = train_tracks[i].track_id.clone();
                            eprintln!("skipping track {id}: {e}");
                            skipped.push(id);
                        }
                    },
                }
            }
            if loaded.len() < 2 {
                // Not enough readable tracks for a train-mode batch.
                continue;
            }
            let refs: Vec<&LoadedTrack> = loaded.iter().collect();
            let mut g = Graph::new();
            let fwd = batch_forward(
                &mut g,
                &mut params,
                &refs,
                cfg,
                Mode::Train,
                &mut dropout_rng,
                class_weights.as_deref(),
            )?;
            epoch_loss += g.value(fwd.loss).item() * refs.len() as f64;
            epoch_samples += refs.len();
            g.backward(fwd.loss)?;
            apply_step(&g, &mut params, &fwd.named, &mut velocities, lr, cfg.momentum)?;
        }
        let train_loss = if epoch_samples > 0 {
            epoch_loss / epoch_samples as f64
        } else {
            f64::NAN
        };

        let (val_loss, val_acc, val_f1) = val_stats(&mut params, cfg, &val_tracks, layout, &vocab)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            val_f1,
        });

        if val_loss.is_finite() {
            // Plateau-based lr decay on validation loss.
            if val_loss < plateau_best - 1e-12 {
                plateau_best = val_loss;
                plateau_count = 0;
            } else {
                plateau_count += 1;
                if plateau_count >= cfg.lr_patience {
                    lr *= cfg.lr_decay_factor;
                    plateau_count = 0;
                }
            }
            // Best checkpoint by (macro-F1, then lower logloss).
            let key = (val_f1, -val_loss);
            if best_key.map_or(true, |b| key > b) {
                best_key = Some(key);
                best = Some(snapshot(&params, &velocities, epoch, &dropout_rng, &shuffle_rng, &vocab));
            }
        }
    }

    let last = snapshot(&params, &velocities, cfg.epochs, &dropout_rng, &shuffle_rng, &vocab);
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome {
        history,
        best,
        last,
        skipped_tracks: skipped,
    })
}

/// Inference output for one track's inputs.
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label_idx: usize,
    /// (original sentence index, weight), descending by weight.
    pub sentence_attention: Vec<(usize, f64)>,
    /// Per reported sentence: (sentence index, word weights over that
    /// grid row).
    pub word_attention: Vec<(usize, Vec<f64>)>,
}

/// Eval-mode inference. Either branch may be absent; the missing one
/// contributes a zero feature vector.
pub fn predict(
    ckpt: &mut Checkpoint,
    spec: Option<&Spectrogram>,
    lyrics: Option<&str>,
) -> Result<Prediction> {
    let cfg = ckpt.config.clone();
    if spec.is_none() && lyrics.is_none() {
        return Err(Error::Config("need a spectrogram, lyrics, or both".into()));
    }
    if let Some(s) = spec {
        if s.mels != cfg.grid_mels || s.frames != cfg.grid_frames {
            return Err(Error::Shape {
                op: "predict",
                detail: format!(
                    "spectrogram {}x{}, model expects {}x{}",
                    s.mels, s.frames, cfg.grid_mels, cfg.grid_frames
                ),
            });
        }
    }
    let grid = lyrics
        .map(|text| TokenGrid::encode(&segment_sentences(text), &ckpt.vocab, cfg.s_max, cfg.w_max));

    let mut g = Graph::new();
    let (vars, _) = ckpt.params.register(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode never draws

    let cnn_vec = match spec {
        Some(s) => {
            let mut data = Vec::with_capacity(s.values.len());
            data.extend(s.values.iter().map(|&v| v as f64));
            let x = g.constant(Tensor::new(vec![1, s.mels, s.frames], data)?);
            let feats = cnn_forward(&mut g, x, &mut ckpt.params.cnn, &vars.cnn, Mode::Eval, &mut rng)?;
            g.reshape(feats, vec![cfg.cnn_features])?
        }
        None => g.constant(Tensor::zeros(&[cfg.cnn_features])),
    };

    let han_dim = ckpt.params.han.output_dim();
    let (han_vec, attn) = match &grid {
        Some(grid) if grid.has_content() => {
            let out = han_forward(&mut g, grid, vars.embedding, &vars.han)?;
            (out.song_vec, Some(out))
        }
        _ => (g.constant(Tensor::zeros(&[han_dim])), None),
    };

    let probs_var = fuse_classify(&mut g, han_vec, cnn_vec, &vars.fusion)?;
    let probs = g.value(probs_var).data().to_vec();
    let label_idx = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;

    let (sentence_attention, word_attention) = match attn {
        Some(out) => {
            let sw = g.value(out.sent_weights).data().to_vec();
            let mut sents: Vec<(usize, f64)> = out.sentences.iter().copied().zip(sw).collect();
            let words: Vec<(usize, Vec<f64>)> = out
                .sentences
                .iter()
                .zip(&out.word_weights)
                .map(|(&s, &wv)| (s, g.value(wv).data().to_vec()))
                .collect();
            sents.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            (sents, words)
        }
        None => (Vec::new(), Vec::new()),
    };

    Ok(Prediction {
        probs,
        label_idx,
        sentence_attention,
        word_attention,
    })
}

#[cfg(test)]
mod tests;
