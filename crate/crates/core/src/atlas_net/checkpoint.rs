//! Self-describing parameter blob.
//!
//! `RNACKPT\0`, `u32` version, `u32` metadata length, JSON metadata (network
//! config, video geometry, per-network parameter counts), then the flattened
//! parameters of M, A, T and L as little-endian `f64`.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{AtlasNetworks, NetworkConfig, NetworkId};
use crate::error::{Result, RnaError};
use crate::media_io::VideoGeometry;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RNACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    network: NetworkConfig,
    geometry: VideoGeometry,
    param_counts: [usize; 4],
}

impl AtlasNetworks {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            network: self.config,
            geometry: self.geometry,
            param_counts: NetworkId::ALL.map(|id| self.get(id).param_count()),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(16 + json.len() + self.param_count() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
        out.extend_from_slice(&json);
        for id in NetworkId::ALL {
            for v in self.get(id).flat_params() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| RnaError::format("truncated checkpoint header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(RnaError::format("not a checkpoint file (bad magic)"));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| RnaError::format("truncated checkpoint header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(RnaError::format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| RnaError::format("truncated checkpoint header"))? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| RnaError::format("truncated checkpoint metadata"))?;
        let meta: Metadata = serde_json::from_slice(&json)
            .map_err(|e| RnaError::format(format!("bad checkpoint metadata: {e}")))?;
        let mut nets = AtlasNetworks::new(meta.network, meta.geometry, 0)?;
        for (k, id) in NetworkId::ALL.into_iter().enumerate() {
            let expected = nets.get(id).param_count();
            if meta.param_counts[k] != expected {
                return Err(RnaError::format(format!(
                    "checkpoint lists {} parameters for {id:?}, config implies {expected}",
                    meta.param_counts[k]
                )));
            }
            let mut params = Vec::with_capacity(expected);
            for _ in 0..expected {
                params.push(
                    r.read_f64::<LittleEndian>()
                        .map_err(|_| RnaError::format("truncated checkpoint parameters"))?,
                );
            }
            nets.get_mut(id).set_flat_params(&params);
        }
        Ok(nets)
    }
}

pub fn save_checkpoint(nets: &AtlasNetworks, path: &Path) -> Result<()> {
    fs::write(path, nets.to_bytes()).map_err(|e| RnaError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AtlasNetworks> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            RnaError::NotFound(format!("checkpoint {}", path.display()))
        } else {
            RnaError::io(path, e)
        }
    })?;
    AtlasNetworks::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_parameter() {
        let nets = AtlasNetworks::new(NetworkConfig::desk(), VideoGeometry::new(16, 12, 4), 9).unwrap();
        let bytes = nets.to_bytes();
        let back = AtlasNetworks::from_bytes(&bytes).unwrap();
        assert_eq!(back, nets);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_headers_are_format_errors() {
        let nets = AtlasNetworks::new(NetworkConfig::desk(), VideoGeometry::new(4, 4, 2), 1).unwrap();
        let mut bytes = nets.to_bytes();
        assert!(matches!(AtlasNetworks::from_bytes(&bytes[..bytes.len() - 8]), Err(RnaError::Format(_))));
        bytes[8] = 99;
        assert!(matches!(AtlasNetworks::from_bytes(&bytes), Err(RnaError::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(AtlasNetworks::from_bytes(&bytes), Err(RnaError::Format(_))));
    }
}
