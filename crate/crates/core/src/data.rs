//! Dataset manifest and the artist-filtered stratified split.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One manifest row: a track, its artist, genre, and data locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackRecord {
    pub track_id: String,
    pub artist_id: String,
    /// Index into the configured label list.
    pub genre: usize,
    pub lyrics_path: String,
    /// Either a prepared `.mspc` cache or a `.wav` source that `prepare`
    /// turns into one.
    pub spectrogram_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Assignment of every track to exactly one split, artist-disjoint by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    by_track: HashMap<String, Split>,
    /// Classes where one artist owns every track; they go entirely to
    /// train and are reported rather than split.
    pub single_artist_classes: Vec<usize>,
}

impl SplitAssignment {
    pub fn get(&self, track_id: &str) -> Option<Split> {
        self.by_track.get(track_id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_track.is_empty()
    }

    /// Tracks of `manifest` assigned to `split`, in manifest order.
    pub fn members<'a>(&self, manifest: &'a [TrackRecord], split: Split) -> Vec<&'a TrackRecord> {
        manifest
            .iter()
            .filter(|t| self.get(&t.track_id) == Some(split))
            .collect()
    }

    pub fn save(&self, manifest: &[TrackRecord], path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        writeln!(file, "track_id,split").map_err(|e| Error::io("writing split file", e))?;
        for t in manifest {
            if let Some(split) = self.get(&t.track_id) {
                writeln!(file, "{},{}", t.track_id, split.name())
                    .map_err(|e| Error::io("writing split file", e))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut by_track = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading split file", e))?;
            if n == 0 {
                if line.trim() != "track_id,split" {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: 1,
                        detail: format!("bad header {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (id, split) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: "expected track_id,split".into(),
            })?;
            let split = Split::parse(split.trim()).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: format!("unknown split {split:?}"),
            })?;
            by_track.insert(id.trim().to_string(), split);
        }
        Ok(Self {
            by_track,
            single_artist_classes: Vec::new(),
        })
    }
}

const MANIFEST_HEADER: &str = "track_id,artist_id,genre,lyrics_path,spectrogram_path";

/// Reads the manifest CSV. Genres must come from `labels`; the error
/// names the offending row.
pub fn read_manifest(path: &Path, labels: &[String]) -> Result<Vec<TrackRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading manifest", e))?;
        if n == 0 {
            if line.trim() != MANIFEST_HEADER {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    detail: format!("bad header, expected {MANIFEST_HEADER:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: format!("{} fields, expected 5", fields.len()),
            });
        }
        let genre = labels.iter().position(|l| l == fields[2]).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            detail: format!("genre {:?} not in the configured label list", fields[2]),
        })?;
        let record = TrackRecord {
            track_id: fields[0].trim().to_string(),
            artist_id: fields[1].trim().to_string(),
            genre,
            lyrics_path: fields[3].trim().to_string(),
            spectrogram_path: fields[4].trim().to_string(),
        };
        if record.track_id.is_empty() || record.artist_id.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: "empty track or artist id".into(),
            });
        }
        if record.spectrogram_path.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: "empty spectrogram path".into(),
            });
        }
        if let Some(prev) = seen.insert(record.track_id.clone(), n + 1) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: format!("duplicate track id (first seen on line {prev})"),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[TrackRecord], labels: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    writeln!(file, "{MANIFEST_HEADER}").map_err(|e| Error::io("writing manifest", e))?;
    for r in records {
        writeln!(
            file,
            "{},{},{},{},{}",
            r.track_id, r.artist_id, labels[r.genre], r.lyrics_path, r.spectrogram_path
        )
        .map_err(|e| Error::io("writing manifest", e))?;
    }
    Ok(())
}

/// Stratified split with artists as atomic units.
///
/// Artists are shuffled by the seed, visited largest first, and each is
/// assigned to the split whose per-class deficit it best fills, so the
/// 80/10/10 targets are approached without ever separating an artist's
/// tracks. Classes owned entirely by one artist cannot be stratified;
/// they are placed in train and flagged.
pub fn stratified_artist_split(
    manifest: &[TrackRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (f_train, f_val, f_test) = fractions;
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot split an empty manifest".into()));
    }
    if !(f_train > 0.0 && f_val >= 0.0 && f_test >= 0.0) || (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {f_train}/{f_val}/{f_test} must be nonnegative and sum to 1"
        )));
    }

    let classes = manifest.iter().map(|t| t.genre).max().unwrap() + 1;
    let mut class_totals = vec![0usize; classes];
    // BTreeMap keeps artist iteration deterministic before the shuffle.
    let mut artists: BTreeMap<&str, Vec<&TrackRecord>> = BTreeMap::new();
    for t in manifest {
        class_totals[t.genre] += 1;
        artists.entry(&t.artist_id).or_default().push(t);
    }

    // Classes where a single artist owns every track.
    let mut single_artist_classes = Vec::new();
    let mut forced_artists: Vec<&str> = Vec::new();
    for c in 0..classes {
        if class_totals[c] == 0 {
            continue;
        }
        let owners: Vec<&str> = artists
            .iter()
            .filter(|(_, tracks)| tracks.iter().any(|t| t.genre == c))
            .map(|(a, _)| *a)
            .collect();
        if owners.len() == 1 {
            single_artist_classes.push(c);
            forced_artists.push(owners[0]);
        }
    }

    let mut order: Vec<&str> = artists.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    // Largest artists first: their placement constrains the rest.
    order.sort_by_key(|a| std::cmp::Reverse(artists[a].len()));

    let targets: [Vec<f64>; 3] = [
        class_totals.iter().map(|&n| n as f64 * f_train).collect(),
        class_totals.iter().map(|&n| n as f64 * f_val).collect(),
        class_totals.iter().map(|&n| n as f64 * f_test).collect(),
    ];
    let mut counts = [vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]];
    let splits = [Split::Train, Split::Val, Split::Test];

    let mut by_track = HashMap::with_capacity(manifest.len());
    for artist in order {
        let tracks = &artists[artist];
        let choice = if forced_artists.contains(&artist) {
            0
        } else {
            // Deficit per split over the classes this artist touches.
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for s in 0..3 {
                let mut score = 0.0;
                for t in tracks {
                    score += targets[s][t.genre] - counts[s][t.genre] as f64;
                }
                // Normalize by target share so val/test (small targets)
                // compete fairly with train.
                let frac = [f_train, f_val, f_test][s];
                if frac == 0.0 {
                    continue;
                }
                score /= frac;
                if score > best_score {
                    best_score = score;
                    best = s;
                }
            }
            best
        };
        for t in tracks {
            counts[choice][t.genre] += 1;
            by_track.insert(t.track_id.clone(), splits[choice]);
        }
    }

    Ok(SplitAssignment {
        by_track,
        single_artist_classes,
    })
}
