use std::io::Write;
use std::sync::Arc;

use log::{debug, info, warn};

use super::db::{RicDatabase, StoredBlob};
use super::frame::{write_message, ControlDecision, Message};
use super::timing::{Hook, TimingBoard};
use crate::error::Result;
use crate::models::{classify, Classifier};
use crate::signal::Spectrogram;

#[derive(Debug, Default, Clone)]
pub struct XappStats {
    pub decisions: Vec<ControlDecision>,
    /// Blobs whose shape the model rejected; no control was sent for them.
    pub flagged: Vec<usize>,
}

/// Classifies one stored ciphertext.
pub fn decide(model: &dyn Classifier, blob: &StoredBlob) -> Result<ControlDecision> {
    let image = Spectrogram::from_sgrm_bytes(&blob.sgrm)?;
    let (class, confidence) = classify(model, &image)?;
    Ok(ControlDecision::new(class, confidence as f32))
}

/// Serves blobs in storage order until the database closes, writing one
/// control per classified blob to `out`.
pub fn run_xapp(
    db: &RicDatabase,
    model: &dyn Classifier,
    mut out: impl Write,
    board: Option<Arc<TimingBoard>>,
) -> Result<XappStats> {
    let mut stats = XappStats::default();
    let mut index = 0;
    while let Some(blob) = db.wait_for(index) {
        index += 1;
        let decision = match decide(model, &blob) {
            Ok(d) => d,
            Err(e) => {
                warn!("blob {} flagged: {e}", index - 1);
                stats.flagged.push(index - 1);
                continue;
            }
        };
        if let Some(b) = &board {
            b.stamp(blob.report, Hook::InferenceDone);
        }
        debug!("blob {} key {}: {}", index - 1, blob.key_id, decision.predicted_class);
        write_message(&mut out, &Message::Control(decision))?;
        out.flush()?;
        stats.decisions.push(decision);
    }
    info!("xapp served {} blobs, flagged {}", stats.decisions.len(), stats.flagged.len());
    Ok(stats)
}
