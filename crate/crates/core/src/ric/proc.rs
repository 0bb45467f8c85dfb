use std::io::Read;
use std::sync::Arc;

use log::{debug, warn};
use rand::rngs::OsRng;
use rand::RngCore;

use super::db::RicDatabase;
use super::frame::{read_frame, Message, MsgType};
use super::timing::{Hook, TimingBoard};
use crate::crypt::{encrypt, KeyStream};
#[cfg(any(test, feature = "escrow"))]
use crate::crypt::ShuffleKey;
use crate::error::{Error, Result};
use crate::signal::{spectrogram, StftConfig};

#[derive(Debug, Clone)]
pub struct ProcConfig {
    pub patch_size: usize,
    pub stft: StftConfig,
    /// Seeds the key stream for reproducible runs; OS entropy otherwise.
    pub key_seed: Option<u64>,
}

impl ProcConfig {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            stft: StftConfig::default(),
            key_seed: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct ProcStats {
    pub stored: usize,
    pub skipped: usize,
    /// Per-image keys in report order. Only kept in escrow builds.
    #[cfg(any(test, feature = "escrow"))]
    pub escrow: Vec<(usize, ShuffleKey)>,
}

/// Converts, encrypts and stores every IQ report read from `input` until
/// end of stream. Closes `db` on return so readers drain.
pub fn run_processing_stage(
    cfg: &ProcConfig,
    input: impl Read,
    db: &RicDatabase,
    board: Option<Arc<TimingBoard>>,
) -> Result<ProcStats> {
    let result = process_all(cfg, input, db, board.as_deref());
    db.close();
    result
}

fn process_all(
    cfg: &ProcConfig,
    mut input: impl Read,
    db: &RicDatabase,
    board: Option<&TimingBoard>,
) -> Result<ProcStats> {
    let mut keys = KeyStream::new(cfg.key_seed.unwrap_or_else(|| OsRng.next_u64()));
    let mut stats = ProcStats::default();
    let mut report = 0usize;
    while let Some(frame) = read_frame(&mut input)? {
        let k = report;
        report += 1;
        if let Some(b) = board {
            b.stamp(k, Hook::ProcReceived);
        }
        if frame.msg_type != MsgType::IqReport {
            warn!("report {k}: skipping {:?} frame on the IQ link", frame.msg_type);
            stats.skipped += 1;
            continue;
        }
        let iq = match Message::from_frame(&frame) {
            Ok(Message::IqReport(iq)) => iq,
            Ok(_) => unreachable!("frame type checked above"),
            Err(e) => {
                warn!("report {k}: malformed IQ payload: {e}");
                stats.skipped += 1;
                continue;
            }
        };
        let key = keys.fresh_key(cfg.patch_size)?;
        let stored = spectrogram(&iq, &cfg.stft).and_then(|img| encrypt(&img, &key));
        let enc = match stored {
            Ok(enc) => enc,
            Err(e @ Error::NotDivisible { .. }) => return Err(e),
            Err(e) => {
                warn!("report {k}: {e}");
                stats.skipped += 1;
                continue;
            }
        };
        let index = db.store(&enc, k);
        if let Some(b) = board {
            b.stamp(k, Hook::Stored);
        }
        debug!("report {k}: stored blob {index} key {}", enc.key_id);
        stats.stored += 1;
        #[cfg(any(test, feature = "escrow"))]
        stats.escrow.push((k, key));
    }
    Ok(stats)
}
