use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Token-to-id map. Ids 0 and 1 are reserved for padding and unknown
/// words; real tokens get contiguous ids from 2 in order of descending
/// frequency (ties broken lexicographically), which makes construction
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    map: HashMap<String, u32>,
}

impl Vocab {
    /// Rebuilds a vocabulary from (token, id) pairs, rejecting reserved
    /// or duplicate ids.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u32)>,
    {
        let mut map = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        for (token, id) in entries {
            if id < 2 {
                return Err(Error::Config(format!(
                    "vocab entry {token:?} uses reserved id {id}"
                )));
            }
            if !ids.insert(id) || map.insert(token.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocab entry {token:?}/{id}")));
            }
        }
        Ok(Self { map })
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> u32 {
        self.map.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.map.contains_key(token)
    }

    /// Total id count including the two reserved rows.
    pub fn size(&self) -> usize {
        self.map.len() + 2
    }

    /// Entries as (token, id), sorted by id.
    pub fn entries(&self) -> Vec<(&str, u32)> {
        let mut out: Vec<(&str, u32)> = self.map.iter().map(|(t, &i)| (t.as_str(), i)).collect();
        out.sort_by_key(|&(_, id)| id);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        for (token, id) in self.entries() {
            writeln!(file, "{token}\t{id}")
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut map = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: "expected token<TAB>id".into(),
            })?;
            let id: u32 = id.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                detail: format!("bad id {id:?}"),
            })?;
            if id < 2 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    detail: format!("id {id} collides with a reserved id"),
                });
            }
            if map.insert(token.to_string(), id).is_some() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    detail: format!("duplicate token {token:?}"),
                });
            }
        }
        Ok(Self { map })
    }
}

/// Builds a vocabulary from token streams, keeping tokens with
/// frequency >= `min_count`.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in corpus {
        *counts.entry(token).or_insert(0) += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let map = kept
        .into_iter()
        .enumerate()
        .map(|(i, (token, _))| (token.to_string(), i as u32 + 2))
        .collect();
    Vocab { map }
}
