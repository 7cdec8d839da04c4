//! Dataset manifests: split assignment and defect-pair generation.
//!
//! A manifest is a JSON array of entries. Paths inside it are relative to
//! the manifest file's directory (absolute paths are kept as they are).

use std::collections::HashSet;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defect::{inject, CranialParams, DefectError, DefectKind, DefectSpec, FacialParams};
use crate::io::{load_volume, save_volume, write_atomic, FormatError};

/// Retries with a fresh seed when a defect misses the skull.
pub const MAX_DEFECT_RETRIES: u32 = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
    #[error("entry {0:?} has no split")]
    MissingSplit(String),
    #[error("need {requested} completes for the requested split, have {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{id}: {source}")]
    Defect {
        id: String,
        #[source]
        source: DefectError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

/// One manifest row. An input manifest only needs `id` and `complete`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub complete: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defective: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implant: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_kind: Option<DefectKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Why no pair was produced, when generation gave up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl ManifestEntry {
    pub fn complete_only(id: impl Into<String>, complete: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            split: None,
            complete: complete.into(),
            defective: None,
            implant: None,
            defect_kind: None,
            seed: None,
            skipped: None,
        }
    }

    /// True for rows that carry a usable defective/implant pair.
    pub fn is_pair(&self) -> bool {
        self.skipped.is_none() && self.defective.is_some() && self.implant.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    /// Parses a manifest and checks ids are unique.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self, DatasetError> {
        let entries: Vec<ManifestEntry> = serde_json::from_slice(bytes).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { entries, base_dir };
        m.check_ids()?;
        Ok(m)
    }

    /// Reads a manifest and verifies that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m = Self::parse(&bytes, path)?;
        m.check_files()?;
        Ok(m)
    }

    pub fn check_ids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(DatasetError::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<(), DatasetError> {
        for e in &self.entries {
            let mut paths = vec![&e.complete];
            if e.skipped.is_none() {
                paths.extend(e.defective.iter().chain(&e.implant));
            }
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(DatasetError::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes the manifest atomically. Paths are stored as given.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Usable pairs of one split, in manifest order.
    pub fn pairs(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == Some(split) && e.is_pair()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Assigns splits by a seeded shuffle. Entries keep their input order;
/// completes beyond `counts.total()` are left out.
pub fn split_dataset(
    completes: &[ManifestEntry],
    counts: SplitCounts,
    seed: u64,
) -> Result<Vec<ManifestEntry>, DatasetError> {
    if counts.total() > completes.len() {
        return Err(DatasetError::InsufficientData {
            requested: counts.total(),
            available: completes.len(),
        });
    }
    let mut order: Vec<usize> = (0..completes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assigned: Vec<Option<Split>> = vec![None; completes.len()];
    for (rank, &i) in order.iter().enumerate() {
        assigned[i] = if rank < counts.train {
            Some(Split::Train)
        } else if rank < counts.train + counts.val {
            Some(Split::Val)
        } else if rank < counts.total() {
            Some(Split::Test)
        } else {
            None
        };
    }
    Ok(completes
        .iter()
        .zip(assigned)
        .filter_map(|(e, s)| {
            s.map(|s| ManifestEntry {
                split: Some(s),
                ..e.clone()
            })
        })
        .collect())
}

/// Which defect kinds to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSelection {
    Cranial,
    Facial,
    Both,
}

impl std::str::FromStr for KindSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cranial" => Ok(Self::Cranial),
            "facial" => Ok(Self::Facial),
            "both" => Ok(Self::Both),
            _ => Err(format!("unknown defect kind {s:?} (expected cranial, facial or both)")),
        }
    }
}

/// Defect geometry and kind policy for [`build_pairs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairOptions {
    pub kinds: KindSelection,
    /// Generate both kinds for test entries even when `kinds` names one.
    pub test_both_kinds: bool,
    pub cranial: CranialParams,
    pub facial: FacialParams,
    pub max_retries: u32,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            kinds: KindSelection::Cranial,
            test_both_kinds: true,
            cranial: CranialParams::default(),
            facial: FacialParams::default(),
            max_retries: MAX_DEFECT_RETRIES,
        }
    }
}

impl PairOptions {
    pub fn kinds_for(&self, split: Option<Split>) -> Vec<DefectKind> {
        let both = vec![DefectKind::Cranial, DefectKind::Facial];
        match self.kinds {
            KindSelection::Both => both,
            _ if self.test_both_kinds && split == Some(Split::Test) => both,
            KindSelection::Cranial => vec![DefectKind::Cranial],
            KindSelection::Facial => vec![DefectKind::Facial],
        }
    }
}

fn attempt_seed(base: u64, kind: DefectKind, attempt: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let kind_tag = match kind {
        DefectKind::Cranial => 0,
        DefectKind::Facial => 1,
    };
    rng.set_stream((kind_tag << 32) | attempt as u64);
    rng.next_u64()
}

/// `target` relative to directory `base`; both are made absolute first.
/// Falls back to the absolute target when no relative form exists.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let (Ok(t), Ok(b)) = (target.canonicalize(), base.canonicalize()) else {
        return target.to_path_buf();
    };
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    if tc.first() != bc.first() {
        return t;
    }
    let common = tc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c.as_os_str());
    }
    out
}

/// Generates defective/implant pairs for every entry of `input` and writes
/// them next to `out_manifest` (which is not written here). Jobs run in
/// parallel; rows are assembled in input order.
pub fn build_pairs(
    input: &DatasetManifest,
    opts: &PairOptions,
    seed: u64,
    out_manifest: &Path,
) -> Result<DatasetManifest, DatasetError> {
    input.check_ids()?;
    let out_dir = out_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = if out_dir.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        out_dir
    };
    std::fs::create_dir_all(&out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for entry in &input.entries {
        let base = rng.next_u64();
        for kind in opts.kinds_for(entry.split) {
            jobs.push((entry, kind, base));
        }
    }

    let rows: Vec<Result<ManifestEntry, DatasetError>> = jobs
        .par_iter()
        .map(|&(entry, kind, base)| make_pair(input, entry, kind, base, opts, &out_dir))
        .collect();
    let entries = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let m = DatasetManifest::new(entries, out_dir);
    m.check_ids()?;
    Ok(m)
}

fn make_pair(
    input: &DatasetManifest,
    entry: &ManifestEntry,
    kind: DefectKind,
    base: u64,
    opts: &PairOptions,
    out_dir: &Path,
) -> Result<ManifestEntry, DatasetError> {
    let complete_path = input.resolve(&entry.complete);
    let complete = load_volume(&complete_path)?;
    let complete = crate::volume::binarize(&complete, 0.5);
    let id = format!("{}_{}", entry.id, kind);
    let mut row = ManifestEntry {
        id: id.clone(),
        split: entry.split,
        complete: relative_path(&complete_path, out_dir),
        defective: None,
        implant: None,
        defect_kind: Some(kind),
        seed: None,
        skipped: None,
    };
    for attempt in 0..=opts.max_retries {
        let s = attempt_seed(base, kind, attempt);
        let spec = DefectSpec {
            kind,
            seed: s,
            cranial: opts.cranial.clone(),
            facial: opts.facial.clone(),
        };
        match inject(&complete, &spec) {
            Ok(pair) => {
                let def_name = format!("{id}_defective.nii.gz");
                let imp_name = format!("{id}_implant.nii.gz");
                save_volume(&pair.defective, &out_dir.join(&def_name))?;
                save_volume(&pair.implant, &out_dir.join(&imp_name))?;
                row.defective = Some(def_name.into());
                row.implant = Some(imp_name.into());
                row.seed = Some(s);
                return Ok(row);
            }
            Err(DefectError::EmptyImplant) => {
                log::debug!("{id}: attempt {attempt} removed nothing");
                row.seed = Some(s);
            }
            Err(source) => return Err(DatasetError::Defect { id, source }),
        }
    }
    log::warn!("{id}: skipped, defect missed the skull after {} attempts", opts.max_retries + 1);
    row.skipped = Some(format!("empty implant after {} attempts", opts.max_retries + 1));
    Ok(row)
}
