use std::fmt::Write as _;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// O-RAN near-RT control-loop budget.
pub const RTT_BUDGET_S: f64 = 1.0;

/// Per-report stage durations in seconds; `rtt` is their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopTiming {
    pub t_transport_up: f64,
    pub t_process: f64,
    pub t_inference: f64,
    pub t_transport_down: f64,
}

impl LoopTiming {
    pub fn rtt(&self) -> f64 {
        self.t_transport_up + self.t_process + self.t_inference + self.t_transport_down
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Stamps {
    ran_send: Option<Duration>,
    proc_received: Option<Duration>,
    stored: Option<Duration>,
    inference_done: Option<Duration>,
    control_received: Option<Duration>,
}

/// Hook points of the loop, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hook {
    RanSend,
    ProcReceived,
    Stored,
    InferenceDone,
    ControlReceived,
}

/// Monotonic stamps for every report, shared by the roles of one process.
#[derive(Debug)]
pub struct TimingBoard {
    epoch: Instant,
    stamps: Mutex<Vec<Stamps>>,
}

impl Default for TimingBoard {
    fn default() -> Self {
        Self::new()
    }
}

impl TimingBoard {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
            stamps: Mutex::new(Vec::new()),
        }
    }

    pub fn stamp(&self, report: usize, hook: Hook) {
        let now = self.epoch.elapsed();
        let mut all = self.stamps.lock().expect("timing lock");
        if all.len() <= report {
            all.resize(report + 1, Stamps::default());
        }
        let s = &mut all[report];
        let slot = match hook {
            Hook::RanSend => &mut s.ran_send,
            Hook::ProcReceived => &mut s.proc_received,
            Hook::Stored => &mut s.stored,
            Hook::InferenceDone => &mut s.inference_done,
            Hook::ControlReceived => &mut s.control_received,
        };
        *slot = Some(now);
    }

    /// Timings of reports that have every stamp, plus the count excluded.
    pub fn timings(&self) -> (Vec<(usize, LoopTiming)>, usize) {
        let all = self.stamps.lock().expect("timing lock");
        let mut out = Vec::new();
        let mut excluded = 0;
        for (i, s) in all.iter().enumerate() {
            match (s.ran_send, s.proc_received, s.stored, s.inference_done, s.control_received) {
                (Some(a), Some(b), Some(c), Some(d), Some(e)) => {
                    let secs = |from: Duration, to: Duration| to.saturating_sub(from).as_secs_f64();
                    out.push((
                        i,
                        LoopTiming {
                            t_transport_up: secs(a, b),
                            t_process: secs(b, c),
                            t_inference: secs(c, d),
                            t_transport_down: secs(d, e),
                        },
                    ));
                }
                _ => excluded += 1,
            }
        }
        (out, excluded)
    }
}

/// Nearest-rank percentile of `values`, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RttSummary {
    pub reports: usize,
    pub excluded: usize,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl RttSummary {
    pub fn from_timings(timings: &[(usize, LoopTiming)], excluded: usize) -> Option<Self> {
        let rtts: Vec<f64> = timings.iter().map(|(_, t)| t.rtt()).collect();
        Some(Self {
            reports: rtts.len(),
            excluded,
            p50: percentile(&rtts, 50.0)?,
            p95: percentile(&rtts, 95.0)?,
            max: rtts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// True when the 95th percentile breaks the control-loop budget.
    pub fn over_budget(&self, budget_s: f64) -> bool {
        self.p95 >= budget_s
    }
}

pub fn timings_csv(timings: &[(usize, LoopTiming)]) -> String {
    let mut s = String::from("report,t_transport_up,t_process,t_inference,t_transport_down,rtt\n");
    for (i, t) in timings {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            t.t_transport_up,
            t.t_process,
            t.t_inference,
            t.t_transport_down,
            t.rtt()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rtt_is_the_sum_of_stages() {
        let board = TimingBoard::new();
        for hook in [Hook::RanSend, Hook::ProcReceived, Hook::Stored, Hook::InferenceDone, Hook::ControlReceived] {
            board.stamp(0, hook);
            std::thread::sleep(Duration::from_millis(2));
        }
        board.stamp(1, Hook::RanSend);
        let (t, excluded) = board.timings();
        assert_eq!((t.len(), excluded), (1, 1));
        let total = t[0].1.rtt();
        assert!(total >= 0.008 && t[0].1.t_process >= 0.002);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&v, 95.0), Some(19.0));
        assert_eq!(percentile(&v, 100.0), Some(20.0));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
