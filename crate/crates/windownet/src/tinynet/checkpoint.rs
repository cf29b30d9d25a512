//! Checkpoint container: magic "WNCK", u32 version, a length-prefixed UTF-8
//! key=value config block, then named f64 arrays (u32 name length, name,
//! u32 rank, u32 dims, payload). Little-endian throughout. Serialization is
//! canonical, so load followed by save is byte-identical.

use std::fs;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected \"WNCK\", got {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("corrupt checkpoint payload: {0}")]
    Corrupt(String),
    #[error("checkpoint is missing required entry {0}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        NamedArray {
            name: name.to_string(),
            dims: vec![data.len()],
            data,
        }
    }

    pub fn with_dims(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        NamedArray {
            name: name.to_string(),
            dims,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// Key=value config snapshot, serialized in the order given here.
    pub config: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut config_text = String::new();
        for (k, v) in &self.config {
            config_text.push_str(k);
            config_text.push('=');
            config_text.push_str(v);
            config_text.push('\n');
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
        buf.extend_from_slice(config_text.as_bytes());
        buf.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for arr in &self.arrays {
            buf.extend_from_slice(&(arr.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(arr.name.as_bytes());
            buf.extend_from_slice(&(arr.dims.len() as u32).to_le_bytes());
            for &d in &arr.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &arr.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *pos + n > bytes.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "needed {n} bytes at offset {pos}, file has {}",
                    bytes.len()
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32, CheckpointError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };

        let magic = take(&mut pos, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic.to_vec()));
        }
        let version = read_u32(&mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = read_u32(&mut pos)? as usize;
        let config_text = std::str::from_utf8(take(&mut pos, config_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config block is not UTF-8: {e}")))?
            .to_string();
        let mut config = Vec::new();
        for line in config_text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CheckpointError::Corrupt(format!("config line without '=': {line}"))
            })?;
            config.push((k.to_string(), v.to_string()));
        }

        let n_arrays = read_u32(&mut pos)? as usize;
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let name_len = read_u32(&mut pos)? as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|e| CheckpointError::Corrupt(format!("array name is not UTF-8: {e}")))?
                .to_string();
            let rank = read_u32(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut pos)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            arrays.push(NamedArray { name, dims, data });
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes after payload",
                bytes.len() - pos
            )));
        }
        Ok(Checkpoint { config, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![
                ("learning_rate".into(), "0.0001".into()),
                ("seed".into(), "7".into()),
            ],
            arrays: vec![
                NamedArray::vector("net.fc_b", vec![0.5, -0.25]),
                NamedArray::with_dims("layer.mixer", vec![3, 2], vec![1.0; 6]),
            ],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.wnck");
        let p2 = dir.path().join("b.wnck");
        let ck = sample();
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded, ck);
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::BadMagic(_))
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::Version(99))
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
