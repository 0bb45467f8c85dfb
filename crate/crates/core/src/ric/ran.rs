use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::frame::{read_message, ControlDecision, Message};
use super::timing::{Hook, TimingBoard};
use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::signal::{synth_sample, Class, IqBuffer, SynthConfig};

/// A stretch of time during which one class is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub class: Class,
    pub duration_s: f64,
    /// Transmit gain of the jammer; ignored for SOI.
    pub gain_db: f64,
}

/// Timeline of class segments, e.g. `SOI:5,CWI:5@40`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub segments: Vec<Segment>,
}

pub const DEFAULT_SCENARIO_GAIN_DB: f64 = 35.0;

impl FromStr for Scenario {
    type Err = Error;

    /// Comma-separated `CLASS:SECONDS[@GAIN_DB]` items.
    fn from_str(s: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let bad = || Error::InvalidArgument(format!("bad scenario segment {item:?}"));
            let (class, rest) = item.split_once(':').ok_or_else(bad)?;
            let (dur, gain) = match rest.split_once('@') {
                Some((d, g)) => (d, g.parse::<f64>().map_err(|_| bad())?),
                None => (rest, DEFAULT_SCENARIO_GAIN_DB),
            };
            let duration_s: f64 = dur.parse().map_err(|_| bad())?;
            segments.push(Segment {
                class: class.parse()?,
                duration_s,
                gain_db: gain,
            });
        }
        let scenario = Scenario { segments };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.segments.iter().find(|s| !(s.duration_s > 0.0 && s.duration_s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "segment durations must be positive, got {}",
                s.duration_s
            )));
        }
        Ok(())
    }

    pub fn total_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Number of reports at one report per `interval_s`.
    pub fn report_count(&self, interval_s: f64) -> usize {
        (self.total_s() / interval_s + 1e-9).floor() as usize
    }

    /// Segment active at time `t`.
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration_s;
            if t < end - 1e-9 {
                return Some(s);
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct RanConfig {
    pub scenario: Scenario,
    pub interval_s: f64,
    pub seed: u64,
    /// How long to wait for outstanding controls after the last report.
    pub drain_timeout: Duration,
    /// Checked before every report; setting it ends the run early.
    pub stop: Option<Arc<AtomicBool>>,
}

impl RanConfig {
    pub fn new(scenario: Scenario, interval_s: f64, seed: u64) -> Self {
        Self {
            scenario,
            interval_s,
            seed,
            drain_timeout: Duration::from_secs(10),
            stop: None,
        }
    }

    /// Deterministic capture for report `k`.
    pub fn capture(&self, k: usize) -> Result<(Class, IqBuffer)> {
        let t = k as f64 * self.interval_s;
        let seg = self
            .scenario
            .segment_at(t)
            .ok_or_else(|| Error::InvalidArgument(format!("report {k} is past the scenario end")))?;
        let cfg = SynthConfig {
            class: seg.class,
            interferer_gain_db: seg.gain_db,
            rng_seed: sub_seed(self.seed, "ran", k as u64),
            ..SynthConfig::default()
        };
        Ok((seg.class, synth_sample(&cfg)?))
    }
}

/// What the emulator saw of the run.
#[derive(Debug, Clone, Default)]
pub struct RanLog {
    pub sent: Vec<Class>,
    pub controls: Vec<ControlDecision>,
    /// RAN-clock round trip per received control, in report order.
    pub rtt_s: Vec<f64>,
}

/// Streams IQ reports to `report_to` and logs controls arriving on
/// `controls`. Stops at the end of the scenario or on connection loss.
pub fn run_ran_emulator(
    cfg: &RanConfig,
    report_to: TcpStream,
    controls: TcpListener,
    board: Option<Arc<TimingBoard>>,
) -> Result<RanLog> {
    cfg.scenario.validate()?;
    let n = cfg.scenario.report_count(cfg.interval_s);
    let start = Instant::now();
    let sends: Arc<std::sync::Mutex<Vec<Instant>>> = Arc::default();

    let rx_sends = Arc::clone(&sends);
    let rx_board = board.clone();
    let drain = cfg.drain_timeout;
    let receiver = thread::spawn(move || -> Result<(Vec<ControlDecision>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut rtts = Vec::new();
        if n == 0 {
            return Ok((out, rtts));
        }
        let (stream, _) = controls.accept()?;
        stream.set_read_timeout(Some(drain))?;
        let mut r = BufReader::new(stream);
        while out.len() < n {
            match read_message(&mut r) {
                Ok(Some(Message::Control(c))) => {
                    let k = out.len();
                    if let Some(b) = &rx_board {
                        b.stamp(k, Hook::ControlReceived);
                    }
                    if let Some(sent) = rx_sends.lock().expect("send log").get(k) {
                        rtts.push(sent.elapsed().as_secs_f64());
                    }
                    info!("control {k}: {} -> {:?} ({:.3})", c.predicted_class, c.action, c.confidence);
                    out.push(c);
                }
                Ok(Some(other)) => {
                    return Err(Error::Protocol(format!("unexpected message on control link: {other:?}")))
                }
                Ok(None) => break,
                Err(Error::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    warn!("no control for report {} within {drain:?}", out.len());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok((out, rtts))
    });

    let mut log = RanLog::default();
    let mut w = report_to;
    let mut send_error = None;
    for k in 0..n {
        if cfg.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            info!("interrupted after {k} reports");
            break;
        }
        let due = start + Duration::from_secs_f64(k as f64 * cfg.interval_s);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        let (class, iq) = cfg.capture(k)?;
        let msg = Message::IqReport(iq);
        let frame = msg.to_frame()?;
        if let Some(b) = &board {
            b.stamp(k, Hook::RanSend);
        }
        sends.lock().expect("send log").push(Instant::now());
        if let Err(e) = super::frame::write_frame(&mut w, &frame) {
            warn!("report link lost at report {k}: {e}");
            send_error = Some(e);
            break;
        }
        debug!("sent report {k} ({class})");
        log.sent.push(class);
    }
    drop(w);
    let (controls, rtts) = receiver.join().map_err(|_| Error::Protocol("control receiver panicked".into()))??;
    log.controls = controls;
    log.rtt_s = rtts;
    match send_error {
        Some(e) => Err(e),
        None => Ok(log),
    }
}
