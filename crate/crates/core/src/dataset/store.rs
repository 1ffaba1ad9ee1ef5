use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::raster::{read_ppm, read_tensor, write_bytes, write_ppm, write_tensor};
use crate::rng::{keyed_rng, Domain};
use crate::tensor::ImageTensor;

use super::Sample;

pub const MANIFEST_FILE: &str = "manifest.tsv";

const ROLES: [&str; 5] = ["rgb", "depth", "normal", "mask", "valid"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub role: String,
    pub path: PathBuf,
}

/// Relative paths of every written file, grouped by split and role.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub train_count: usize,
    pub test_count: usize,
}

impl DatasetManifest {
    /// `#count<TAB>split<TAB>n` lines, then `split<TAB>role<TAB>relative-path` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("#count\ttrain\t{}\n#count\ttest\t{}\n", self.train_count, self.test_count);
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.split, e.role, e.path.display()));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = DatasetManifest::default();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let err = || Error::format(path, format!("line {}: `{line}`", i + 1));
            match fields.as_slice() {
                [] | [""] => {}
                ["#count", split, n] => {
                    let n: usize = n.parse().map_err(|_| err())?;
                    match split.parse::<Split>().map_err(|_| err())? {
                        Split::Train => m.train_count = n,
                        Split::Test => m.test_count = n,
                    }
                }
                [split, role, rel] => m.entries.push(ManifestEntry {
                    split: split.parse().map_err(|_| err())?,
                    role: role.to_string(),
                    path: PathBuf::from(rel),
                }),
                _ => return Err(err()),
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Test => self.test_count,
        }
    }
}

fn file_name(idx: usize, role: &str) -> String {
    let ext = if role == "rgb" { "ppm" } else { "f32" };
    format!("{idx:05}_{role}.{ext}")
}

fn bool_raster(valid: &[bool], like: &ImageTensor) -> ImageTensor {
    let data = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    ImageTensor::from_vec(crate::tensor::Shape::new(like.height(), like.width(), 1), data).expect("pixel count")
}

/// Shuffles `samples` with `seed`, splits off `round(n * train_frac)` for
/// training and writes `{split}/{idx:05}_{role}.{ppm|f32}` plus the manifest.
///
/// Depth is written unnormalized; loading recomputes the normalization.
pub fn split_and_save(samples: &[Sample], train_frac: f64, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} must lie in (0, 1)")));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, Domain::Shuffle, u64::MAX, 0));
    let n_train = (n as f64 * train_frac).round() as usize;
    let mut manifest = DatasetManifest {
        entries: Vec::with_capacity(n * ROLES.len()),
        train_count: n_train,
        test_count: n - n_train,
    };
    for (pos, &src) in order.iter().enumerate() {
        let (split, idx) = if pos < n_train {
            (Split::Train, pos)
        } else {
            (Split::Test, pos - n_train)
        };
        let s = &samples[src];
        for role in ROLES {
            let rel = PathBuf::from(split.as_str()).join(file_name(idx, role));
            let full = dir.join(&rel);
            match role {
                "rgb" => write_ppm(&full, &s.rgb)?,
                "depth" => write_tensor(&full, &s.raw_depth)?,
                "normal" => write_tensor(&full, &s.normal)?,
                "mask" => write_tensor(&full, &s.mask)?,
                _ => write_tensor(&full, &bool_raster(&s.valid, &s.mask))?,
            }
            manifest.entries.push(ManifestEntry {
                split,
                role: role.to_string(),
                path: rel,
            });
        }
    }
    write_bytes(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// Reads every sample of `split` listed in the manifest under `dir`.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let manifest = DatasetManifest::load(dir)?;
    let n = manifest.count(split);
    let mut paths: Vec<[Option<PathBuf>; 5]> = vec![Default::default(); n];
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let name = e.path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
        let idx: usize = name
            .get(..5)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(&e.path, "file name lacks a sample index"))?;
        let slot = ROLES
            .iter()
            .position(|r| *r == e.role)
            .ok_or_else(|| Error::format(&e.path, format!("unknown role `{}`", e.role)))?;
        if idx >= n {
            return Err(Error::format(&e.path, format!("index {idx} beyond split size {n}")));
        }
        paths[idx][slot] = Some(dir.join(&e.path));
    }
    paths
        .into_iter()
        .enumerate()
        .map(|(idx, p)| {
            let get = |slot: usize| {
                p[slot]
                    .clone()
                    .ok_or_else(|| Error::format(&dir.join(MANIFEST_FILE), format!("{split} sample {idx} lacks {}", ROLES[slot])))
            };
            let rgb = read_ppm(&get(0)?)?;
            let raw_depth = read_tensor(&get(1)?)?;
            let normal = read_tensor(&get(2)?)?;
            let mask = read_tensor(&get(3)?)?;
            let valid = read_tensor(&get(4)?)?.data().iter().map(|&v| v != 0.0).collect();
            Sample::from_parts(rgb, raw_depth, normal, mask, valid)
        })
        .collect()
}
