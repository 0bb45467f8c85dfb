use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const SKEY_MAGIC: &[u8; 4] = b"SKEY";
pub const SKEY_VERSION: u16 = 1;
const SKEY_LEN: usize = 4 + 2 + 8 + 4;

/// Cipher key: the seed every permutation is derived from, plus the patch
/// size that fixes the grid geometry.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShuffleKey {
    pub master_seed: u64,
    pub patch_size: usize,
}

impl fmt::Debug for ShuffleKey {
    // Keep seeds out of logs.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShuffleKey")
            .field("id", &self.id())
            .field("patch_size", &self.patch_size)
            .finish()
    }
}

impl ShuffleKey {
    pub fn new(master_seed: u64, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        Ok(Self {
            master_seed,
            patch_size,
        })
    }

    /// One-way identifier for this key.
    pub fn id(&self) -> KeyId {
        let mut h = Sha256::new();
        h.update(b"shufflevit/key-id/v1");
        h.update(self.master_seed.to_le_bytes());
        h.update((self.patch_size as u32).to_le_bytes());
        let digest = h.finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        KeyId(id)
    }

    /// `SKEY` layout: magic, `u16` version, `u64` seed, `u32` patch size,
    /// all little-endian.
    pub fn to_bytes(&self) -> [u8; SKEY_LEN] {
        let mut out = [0u8; SKEY_LEN];
        out[..4].copy_from_slice(SKEY_MAGIC);
        out[4..6].copy_from_slice(&SKEY_VERSION.to_le_bytes());
        out[6..14].copy_from_slice(&self.master_seed.to_le_bytes());
        out[14..18].copy_from_slice(&(self.patch_size as u32).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SKEY_LEN || &bytes[..4] != SKEY_MAGIC {
            return Err(Error::format("SKEY", "bad length or magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SKEY_VERSION {
            return Err(Error::format("SKEY", format!("unsupported version {version}")));
        }
        let seed = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let patch = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        Self::new(seed, patch).map_err(|e| Error::format("SKEY", e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Opaque 16-byte key identifier carried alongside ciphertexts.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub [u8; 16]);

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Source of per-image keys. Successive keys have distinct seeds because
/// SplitMix64 outputs never repeat within its period.
#[derive(Debug, Clone)]
pub struct KeyStream {
    stream: SplitMix64,
}

impl KeyStream {
    pub fn new(seed: u64) -> Self {
        Self {
            stream: SplitMix64::new(seed),
        }
    }

    pub fn fresh_key(&mut self, patch_size: usize) -> Result<ShuffleKey> {
        ShuffleKey::new(self.stream.next_u64(), patch_size)
    }
}
