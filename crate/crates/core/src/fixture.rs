//! Deterministic synthetic datasets: class-coded spectrogram impulses
//! plus template lyrics, written as real cache/lyric/manifest files.
//! Used by the test suites and for pipeline smoke runs.

use crate::audio::{save_spectrogram, Spectrogram};
use crate::data::TrackRecord;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub struct FixtureSpec {
    pub classes: Vec<String>,
    pub tracks_per_class: usize,
    pub artists_per_class: usize,
    pub grid_mels: usize,
    pub grid_frames: usize,
    pub floor_db: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            classes: ["Rock", "Hip-Hop", "Folk", "Electronic"]
                .into_iter()
                .map(str::to_string)
                .collect(),
            tracks_per_class: 8,
            artists_per_class: 2,
            grid_mels: 16,
            grid_frames: 60,
            floor_db: -80.0,
            seed: 7,
        }
    }
}

/// Template lyrics with distinctive words per class, plus one shared
/// word so the vocabulary overlaps.
fn lyrics_for(class: usize, track: usize) -> String {
    let themes = [
        "thunder riff loud guitar\nstage smoke roar night",
        "street beat rhyme flow\nmic city hustle gold",
        "river mountain wind home\nold road story fire",
        "neon circuit pulse glow\nmachine echo wire dream",
        "velvet horn swing blue\nlate club smoky keys",
        "choir organ hall stone\nancient hymn candle dawn",
    ];
    let theme = themes[class % themes.len()];
    format!("{theme}\nsong number{track} again")
}

/// A spectrogram whose energy band encodes the class, with seeded
/// jitter so batches are not degenerate.
fn spectrogram_for(
    class: usize,
    spec: &FixtureSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Spectrogram> {
    let (m, f) = (spec.grid_mels, spec.grid_frames);
    let classes = spec.classes.len();
    let band = m / classes.max(1);
    let lo = class * band;
    let hi = ((class + 1) * band).min(m);
    let mut values = vec![spec.floor_db as f32; m * f];
    for mel in 0..m {
        for fr in 0..f {
            let jitter: f64 = rng.random_range(-1.0..1.0);
            let v = if (lo..hi).contains(&mel) {
                // A moving impulse inside the class band.
                let phase = (fr + class * 7) % 8;
                if phase < 4 {
                    -5.0 + jitter
                } else {
                    -30.0 + jitter
                }
            } else {
                spec.floor_db + jitter.abs()
            };
            values[mel * f + fr] = v as f32;
        }
    }
    Spectrogram::new(m, f, values)
}

/// Writes spectrogram caches, lyric files, and returns the manifest
/// records (paths relative to `dir`).
pub fn generate(dir: &Path, spec: &FixtureSpec) -> Result<Vec<TrackRecord>> {
    let spectro_dir = dir.join("spectrograms");
    let lyrics_dir = dir.join("lyrics");
    std::fs::create_dir_all(&spectro_dir).map_err(|e| Error::io("creating fixture dirs", e))?;
    std::fs::create_dir_all(&lyrics_dir).map_err(|e| Error::io("creating fixture dirs", e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for (c, _class) in spec.classes.iter().enumerate() {
        for t in 0..spec.tracks_per_class {
            let track_id = format!("t{c:02}_{t:03}");
            let artist = format!("artist_c{c}_{}", t % spec.artists_per_class);
            let sgram = spectrogram_for(c, spec, &mut rng)?;
            let spec_rel = format!("spectrograms/{track_id}.mspc");
            save_spectrogram(&sgram, &dir.join(&spec_rel))?;
            let lyr_rel = format!("lyrics/{track_id}.txt");
            std::fs::write(dir.join(&lyr_rel), lyrics_for(c, t))
                .map_err(|e| Error::io("writing fixture lyrics", e))?;
            records.push(TrackRecord {
                track_id,
                artist_id: artist,
                genre: c,
                lyrics_path: lyr_rel,
                spectrogram_path: spec_rel,
            });
        }
    }
    Ok(records)
}

/// A small training configuration matched to the fixture dimensions.
pub fn train_config(spec: &FixtureSpec) -> crate::train::TrainConfig {
    crate::train::TrainConfig {
        seed: spec.seed,
        lr: 0.05,
        momentum: 0.9,
        batch_size: 32,
        epochs: 30,
        dropout: 0.0,
        hidden: 4,
        s_max: 4,
        w_max: 6,
        labels: spec.classes.clone(),
        grid_mels: spec.grid_mels,
        grid_frames: spec.grid_frames,
        cnn_features: 16,
        blocks: vec![crate::model::CnnBlockSpec {
            out_channels: 8,
            kernel_len: 5,
            stride: 1,
            pool_window: 4,
            dropout_p: 0.0,
        }],
        embed_trainable: true,
        class_weights: false,
        lr_decay_factor: 0.5,
        lr_patience: 10,
        min_count: 1,
        on_error: crate::train::OnError::Abort,
        train_fraction: 1.0,
        val_fraction: 0.0,
        test_fraction: 0.0,
    }
}
