//! Experimental protocol: splits, metrics, sweeps and CSV reports.

mod experiments;
mod metrics;
mod split;
mod sweep;

use std::fmt::Write as _;

pub use experiments::{
    encrypt_set, patch_size_sweep, report_table, shuffle_invariance_test, synth_dataset,
    train_and_evaluate, Arch, ExperimentRow, PatchSweep, ShuffleReport,
};
pub use metrics::{evaluate, predict_all, ClassScores, Metrics};
pub use split::{stratified_split, Split};
pub use sweep::{confidence_sweep, confidence_sweep_from_probs, ConfidencePoint, ConfidenceSweep};

/// Report file name, e.g. `tableI_p16_seed42.csv`.
pub fn report_file_name(experiment: &str, patch: usize, seed: u64) -> String {
    format!("{experiment}_p{patch}_seed{seed}.csv")
}

/// `series,x,y` rows for external plotting.
pub fn plot_csv(points: &[(&str, f64, f64)]) -> String {
    let mut s = String::from("series,x,y\n");
    for (name, x, y) in points {
        let _ = writeln!(s, "{name},{x},{y}");
    }
    s
}

#[cfg(test)]
mod tests;
