//! Binary checkpoint container.
//!
//! Layout (little endian): magic `IHSDSMC\0`, version `u32`, seed `u64`,
//! step `u64`, time `f64`, config hash `[u8; 32]`, `N` as `u64`, then `3N`
//! velocity components as `f64`, then the SHA-256 of everything before it.
//! Random streams are keyed by `(seed, step)`, which is the full generator state.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

use super::Ensemble;
use crate::error::{Error, Result};
use crate::kinetics::Velocity;

const MAGIC: &[u8; 8] = b"IHSDSMC\0";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8 + 8 + 8 + 32 + 8;

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<[u8; 32]> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub ensemble: Ensemble,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let e = &self.ensemble;
        let mut out = Vec::with_capacity(HEADER + 24 * e.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&e.seed.to_le_bytes());
        out.extend_from_slice(&e.step.to_le_bytes());
        out.extend_from_slice(&e.time.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(e.len() as u64).to_le_bytes());
        for v in &e.velocities {
            for c in v.to_array() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < HEADER + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        if &body[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = 8;
        let mut take = |k: usize| {
            let s = &body[pos..pos + k];
            pos += k;
            s
        };
        let version = u32::from_le_bytes(take(4).try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let u64_at = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let seed = u64_at(take(8));
        let step = u64_at(take(8));
        let time = f64::from_le_bytes(take(8).try_into().unwrap());
        let config_hash: [u8; 32] = take(32).try_into().unwrap();
        let n = u64_at(take(8)) as usize;
        if body.len() != HEADER + 24 * n {
            return Err(bad("particle count does not match payload"));
        }
        let velocities = body[HEADER..]
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                Velocity::new(f(0), f(1), f(2))
            })
            .collect();
        let mut ensemble = Ensemble::from_velocities(velocities, seed)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        ensemble.step = step;
        ensemble.time = time;
        Ok(Self { ensemble, config_hash })
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Self> {
        let c = Self::from_bytes(&fs::read(path)?)?;
        if let Some(h) = expected_hash {
            if h != &c.config_hash {
                return Err(Error::Checkpoint("configuration hash differs from the run".into()));
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsmc::{init_ensemble, InitialDistribution};

    #[test]
    fn round_trip_and_corruption() {
        let mut ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 100, 3).unwrap();
        ens.step = 17;
        ens.time = 0.17;
        let c = Checkpoint { ensemble: ens, config_hash: config_hash(&"cfg").unwrap() };
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        let mut broken = bytes.clone();
        broken[HEADER + 5] ^= 1;
        assert!(Checkpoint::from_bytes(&broken).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());
    }

    #[test]
    fn hash_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ens = init_ensemble(&InitialDistribution::maxwellian(1.0), 10, 3).unwrap();
        let c = Checkpoint { ensemble: ens, config_hash: [1; 32] };
        c.save(&path).unwrap();
        assert!(Checkpoint::load(&path, Some(&[1; 32])).is_ok());
        assert!(Checkpoint::load(&path, Some(&[2; 32])).is_err());
    }
}
