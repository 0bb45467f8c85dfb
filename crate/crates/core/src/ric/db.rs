use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::crypt::{EncryptedSpectrogram, KeyId};

/// One stored ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBlob {
    /// Sequence number of the IQ report this blob came from.
    pub report: usize,
    pub key_id: KeyId,
    /// Time since the database was opened.
    pub stored_at: Duration,
    /// Ciphertext in the `SGRM` image layout.
    pub sgrm: Vec<u8>,
}

/// Append-only store of encrypted spectrograms. It accepts nothing but
/// [`EncryptedSpectrogram`] values and never holds keys or plaintext.
#[derive(Debug)]
pub struct RicDatabase {
    opened: Instant,
    blobs: Mutex<Vec<StoredBlob>>,
    closed: Mutex<bool>,
    changed: Condvar,
}

impl Default for RicDatabase {
    fn default() -> Self {
        Self::new()
    }
}

impl RicDatabase {
    pub fn new() -> Self {
        Self {
            opened: Instant::now(),
            blobs: Mutex::new(Vec::new()),
            closed: Mutex::new(false),
            changed: Condvar::new(),
        }
    }

    /// Appends a blob and returns its index.
    pub fn store(&self, image: &EncryptedSpectrogram, report: usize) -> usize {
        let blob = StoredBlob {
            report,
            key_id: image.key_id,
            stored_at: self.opened.elapsed(),
            sgrm: image.to_sgrm_bytes(),
        };
        let mut blobs = self.blobs.lock().expect("database lock");
        blobs.push(blob);
        self.changed.notify_all();
        blobs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().expect("database lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<StoredBlob> {
        self.blobs.lock().expect("database lock").get(index).cloned()
    }

    pub fn snapshot(&self) -> Vec<StoredBlob> {
        self.blobs.lock().expect("database lock").clone()
    }

    /// Marks the end of writes; waiting readers return.
    pub fn close(&self) {
        // Take the blob lock so a reader cannot miss the wakeup.
        let _blobs = self.blobs.lock().expect("database lock");
        *self.closed.lock().expect("database lock") = true;
        self.changed.notify_all();
    }

    /// Blocks until blob `index` exists, returning `None` once the
    /// database is closed without it.
    pub fn wait_for(&self, index: usize) -> Option<StoredBlob> {
        let mut blobs = self.blobs.lock().expect("database lock");
        loop {
            if let Some(b) = blobs.get(index) {
                return Some(b.clone());
            }
            if *self.closed.lock().expect("database lock") {
                return None;
            }
            blobs = self.changed.wait(blobs).expect("database lock");
        }
    }
}
