//! Simulated near-RT RIC control loop: a RAN emulator, an in-RIC
//! processing stage that encrypts captures into a database, and an xApp
//! that classifies ciphertext and sends MCS control back to the RAN.

mod db;
mod frame;
mod proc;
mod ran;
mod timing;
mod xapp;

pub use db::{RicDatabase, StoredBlob};
pub use frame::{
    read_frame, read_message, write_frame, write_message, ControlDecision, E2Frame, McsAction,
    Message, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION,
};
pub use proc::{run_processing_stage, ProcConfig, ProcStats};
pub use ran::{run_ran_emulator, RanConfig, RanLog, Scenario, Segment, DEFAULT_SCENARIO_GAIN_DB};
pub use timing::{percentile, timings_csv, Hook, LoopTiming, RttSummary, TimingBoard, RTT_BUDGET_S};
pub use xapp::{decide, run_xapp, XappStats};

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::crypt::EncryptedSpectrogram;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::signal::ImageData;

/// Streams every blob of `db` as SPECTROGRAM_BLOB frames until it closes.
pub fn serve_blobs(db: &RicDatabase, out: impl Write) -> Result<usize> {
    let mut out = BufWriter::new(out);
    let mut index = 0;
    while let Some(blob) = db.wait_for(index) {
        let image = crate::signal::Spectrogram::from_sgrm_bytes(&blob.sgrm)?;
        write_message(&mut out, &Message::SpectrogramBlob { key_id: blob.key_id, image })?;
        out.flush()?;
        index += 1;
    }
    Ok(index)
}

/// Copies SPECTROGRAM_BLOB frames from `input` into a local database,
/// closing it at end of stream.
pub fn mirror_blobs(input: impl Read, db: &RicDatabase, patch_size: usize) -> Result<usize> {
    let mut r = BufReader::new(input);
    let mut n = 0;
    let result = loop {
        match read_message(&mut r) {
            Ok(Some(Message::SpectrogramBlob { key_id, image })) => {
                let enc = EncryptedSpectrogram::from_parts(image, patch_size, key_id)?;
                db.store(&enc, n);
                n += 1;
            }
            Ok(Some(other)) => {
                break Err(Error::Protocol(format!("expected a spectrogram blob, got {other:?}")))
            }
            Ok(None) => break Ok(n),
            Err(e) => break Err(e),
        }
    };
    db.close();
    result
}

/// Adds a fixed delay to every prediction of the wrapped model.
pub struct Slowed<'a> {
    pub inner: &'a dyn Classifier,
    pub delay: Duration,
}

impl Classifier for Slowed<'_> {
    fn probabilities(&self, image: &dyn ImageData) -> Result<Vec<f64>> {
        thread::sleep(self.delay);
        self.inner.probabilities(image)
    }

    fn patch_size(&self) -> Option<usize> {
        self.inner.patch_size()
    }
}

#[derive(Debug)]
pub struct LoopReport {
    pub ran: RanLog,
    pub proc: ProcStats,
    pub xapp: XappStats,
    pub timings: Vec<(usize, LoopTiming)>,
    pub excluded: usize,
    pub summary: Option<RttSummary>,
}

impl LoopReport {
    pub fn over_budget(&self, budget_s: f64) -> bool {
        self.summary.as_ref().is_some_and(|s| s.over_budget(budget_s))
    }

    /// `Err(Budget)` when the loop missed `budget_s` at p95.
    pub fn check_budget(&self, budget_s: f64) -> Result<()> {
        match &self.summary {
            Some(s) if s.over_budget(budget_s) => Err(Error::Budget(format!(
                "p95 rtt {:.3} s over {budget_s} s budget",
                s.p95
            ))),
            _ => Ok(()),
        }
    }
}

fn loopback() -> Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    let addr = l.local_addr()?;
    Ok((l, addr))
}

fn joined<T>(h: thread::ScopedJoinHandle<'_, Result<T>>, role: &str) -> Result<T> {
    h.join()
        .map_err(|_| Error::Protocol(format!("{role} thread panicked")))?
}

/// Runs all three roles over loopback TCP in one process: RAN to
/// processing for IQ reports, xApp to RAN for controls. The database is
/// shared in memory.
pub fn run_loop_all(
    ran_cfg: &RanConfig,
    proc_cfg: &ProcConfig,
    model: &dyn Classifier,
) -> Result<LoopReport> {
    let board = Arc::new(TimingBoard::new());
    let db = RicDatabase::new();
    let (iq_listener, iq_addr) = loopback()?;
    let (ctrl_listener, ctrl_addr) = loopback()?;

    let (ran, proc, xapp) = thread::scope(|s| {
        let proc_board = Arc::clone(&board);
        let db_ref = &db;
        let proc = s.spawn(move || {
            let (stream, _) = iq_listener.accept()?;
            stream.set_nodelay(true)?;
            run_processing_stage(proc_cfg, BufReader::new(stream), db_ref, Some(proc_board))
        });
        let xapp_board = Arc::clone(&board);
        let n = ran_cfg.scenario.report_count(ran_cfg.interval_s);
        let xapp = s.spawn(move || {
            if n == 0 {
                db_ref.wait_for(0);
                return Ok(XappStats::default());
            }
            let out = TcpStream::connect(ctrl_addr)?;
            out.set_nodelay(true)?;
            run_xapp(db_ref, model, out, Some(xapp_board))
        });
        let ran_board = Arc::clone(&board);
        let ran = s.spawn(move || {
            let up = TcpStream::connect(iq_addr)?;
            up.set_nodelay(true)?;
            run_ran_emulator(ran_cfg, up, ctrl_listener, Some(ran_board))
        });
        let ran = joined(ran, "ran");
        let proc = joined(proc, "processing");
        let xapp = joined(xapp, "xapp");
        (ran, proc, xapp)
    });
    let (ran, proc, xapp) = (ran?, proc?, xapp?);
    let (timings, excluded) = board.timings();
    let summary = RttSummary::from_timings(&timings, excluded);
    Ok(LoopReport {
        ran,
        proc,
        xapp,
        timings,
        excluded,
        summary,
    })
}
