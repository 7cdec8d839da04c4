//! Binary checkpoint: `"SKRC"`, u32 version, u64 header length, JSON header
//! (config, epoch, validation dice, parameter table), Adam state
//! (u64 step, u64 n, m[n], v[n]) and the parameters (u64 n, values), all
//! little-endian f32.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::io::write_atomic;
use crate::nn::Model;
use crate::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 4] = b"SKRC";
pub const FORMAT_VERSION: u32 = 1;
/// Refuses headers larger than this before allocating.
const MAX_HEADER: u64 = 16 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub val_dice: Option<f64>,
    /// Best validation dice seen so far (carried across resumes).
    pub best_val_dice: Option<f64>,
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    val_dice: Option<f64>,
    #[serde(default)]
    best_val_dice: Option<f64>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct ParamEntry {
    name: String,
    shape: [usize; 5],
}

fn corrupt(m: impl Into<String>) -> TrainError {
    TrainError::CheckpointCorrupt(m.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            val_dice: self.val_dice,
            best_val_dice: self.best_val_dice,
            params: self
                .model
                .param_infos()
                .into_iter()
                .map(|p| ParamEntry {
                    name: p.name,
                    shape: p.shape,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.write_all(MAGIC).unwrap();
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
        out.write_all(&json).unwrap();
        let (m, v) = self.optimizer.moments();
        out.write_u64::<LittleEndian>(self.optimizer.step_count()).unwrap();
        out.write_u64::<LittleEndian>(m.len() as u64).unwrap();
        for &x in m.iter().chain(v) {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
        let flat = self.model.flat_params();
        out.write_u64::<LittleEndian>(flat.len() as u64).unwrap();
        for x in flat {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("file too short"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("missing version"))?;
        if version != FORMAT_VERSION {
            return Err(TrainError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = r.read_u64::<LittleEndian>().map_err(|_| corrupt("missing header length"))?;
        if hlen > MAX_HEADER || hlen > remaining(&r) {
            return Err(corrupt("header length out of range"));
        }
        let mut json = vec![0u8; hlen as usize];
        r.read_exact(&mut json).map_err(|_| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(format!("header: {e}")))?;
        header.config.validate().map_err(|e| corrupt(format!("config: {e}")))?;

        let mut model = Model::<f32>::build(header.config.model.clone(), 0).map_err(|e| corrupt(e.to_string()))?;
        let expected: Vec<ParamEntry> = model
            .param_infos()
            .into_iter()
            .map(|p| ParamEntry {
                name: p.name,
                shape: p.shape,
            })
            .collect();
        if expected != header.params {
            return Err(corrupt("parameter table does not match the model config"));
        }
        let n = model.num_params();

        let step = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated optimizer state"))?;
        let mn = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated optimizer state"))?;
        if mn != n as u64 {
            return Err(corrupt("optimizer state size does not match the model"));
        }
        let m = read_f32s(&mut r, n)?;
        let v = read_f32s(&mut r, n)?;
        let pn = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated parameters"))?;
        if pn != n as u64 {
            return Err(corrupt("parameter count does not match the model"));
        }
        let flat = read_f32s(&mut r, n)?;
        if remaining(&r) != 0 {
            return Err(corrupt("trailing bytes"));
        }
        model.set_flat_params(&flat).map_err(|e| corrupt(e.to_string()))?;
        let optimizer = Adam::from_state(AdamConfig::with_lr(header.config.lr as f32), step, m, v)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            val_dice: header.val_dice,
            best_val_dice: header.best_val_dice,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn remaining(r: &Cursor<&[u8]>) -> u64 {
    r.get_ref().len() as u64 - r.position()
}

fn read_f32s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f32>, TrainError> {
    if remaining(r) < 4 * n as u64 {
        return Err(corrupt("truncated payload"));
    }
    let mut out = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut out).map_err(|_| corrupt("truncated payload"))?;
    Ok(out)
}
