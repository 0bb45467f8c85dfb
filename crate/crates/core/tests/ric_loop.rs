use std::collections::HashSet;
use std::time::Duration;

use shufflevit::models::{Model, ViTConfig};
use shufflevit::ric::{
    run_loop_all, run_processing_stage, write_message, ControlDecision, E2Frame, McsAction, Message,
    MsgType, ProcConfig, RanConfig, RicDatabase, Scenario, Slowed, RTT_BUDGET_S,
};
use shufflevit::signal::{spectrogram, StftConfig};
use shufflevit::{Class, Error};

fn untrained_vit() -> Model {
    Model::vit(ViTConfig::default(), 3).unwrap()
}

fn fast_ran(scenario: &str, interval: f64) -> RanConfig {
    RanConfig::new(scenario.parse().unwrap(), interval, 11)
}

#[test]
fn scenario_counts_reports_per_interval() {
    let sc: Scenario = "SOI:5,CWI:5".parse().unwrap();
    assert_eq!(sc.report_count(1.0), 10);
    let cfg = RanConfig::new(sc, 1.0, 0);
    let classes: Vec<Class> = (0..10).map(|k| cfg.capture(k).unwrap().0).collect();
    assert_eq!(&classes[..5], &[Class::Soi; 5]);
    assert_eq!(&classes[5..], &[Class::Cwi; 5]);
    assert!(cfg.capture(10).is_err());

    let empty: Scenario = "".parse().unwrap();
    assert_eq!(empty.report_count(1.0), 0);
    assert!("SOI:0".parse::<Scenario>().is_err());
    assert!("SOI:-1".parse::<Scenario>().is_err());
    assert!("XYZ:1".parse::<Scenario>().is_err());
    let gained: Scenario = "CI:2@40".parse().unwrap();
    assert_eq!(gained.segments[0].gain_db, 40.0);
}

#[test]
fn empty_scenario_shuts_down_cleanly() {
    let model = untrained_vit();
    let report = run_loop_all(&fast_ran("", 0.05), &ProcConfig::new(16), &model).unwrap();
    assert!(report.ran.sent.is_empty());
    assert!(report.xapp.decisions.is_empty());
    assert_eq!(report.proc.stored, 0);
    assert!(report.summary.is_none());
}

#[test]
fn loop_delivers_one_control_per_report_in_order() {
    let model = untrained_vit();
    let ran = fast_ran("SOI:0.25,CWI:0.25", 0.05);
    let report = run_loop_all(&ran, &ProcConfig::new(16), &model).unwrap();
    assert_eq!(report.ran.sent.len(), 10);
    assert_eq!(report.proc.stored, 10);
    assert_eq!(report.ran.controls, report.xapp.decisions);
    assert_eq!(report.timings.len(), 10);
    assert_eq!(report.excluded, 0);
    for (i, (k, t)) in report.timings.iter().enumerate() {
        assert_eq!(*k, i);
        for part in [t.t_transport_up, t.t_process, t.t_inference, t.t_transport_down] {
            assert!(part >= 0.0);
        }
        let sum = t.t_transport_up + t.t_process + t.t_inference + t.t_transport_down;
        assert!((t.rtt() - sum).abs() < 1e-9);
    }
    for c in &report.ran.controls {
        assert_eq!(c.action == McsAction::Adaptive, c.predicted_class == Class::Soi);
    }
    assert!(!report.over_budget(RTT_BUDGET_S));
}

#[test]
fn slowed_model_breaks_the_budget() {
    let model = untrained_vit();
    let slow = Slowed {
        inner: &model,
        delay: Duration::from_millis(1200),
    };
    let report = run_loop_all(&fast_ran("SOI:0.15", 0.05), &ProcConfig::new(16), &slow).unwrap();
    assert_eq!(report.timings.len(), 3);
    assert!(report.over_budget(RTT_BUDGET_S));
    let err = report.check_budget(RTT_BUDGET_S).unwrap_err();
    assert!(matches!(err, Error::Budget(_)));
    assert_eq!(err.exit_code(), 5);
}

fn iq_frames(ran: &RanConfig, n: usize) -> Vec<u8> {
    let mut bytes = Vec::new();
    for k in 0..n {
        write_message(&mut bytes, &Message::IqReport(ran.capture(k).unwrap().1)).unwrap();
    }
    bytes
}

#[test]
fn every_report_gets_its_own_key() {
    let ran = fast_ran("SOI:40,CWI:30,CI:30", 1.0);
    let db = RicDatabase::new();
    let stats = run_processing_stage(&ProcConfig::new(16), &iq_frames(&ran, 100)[..], &db, None).unwrap();
    assert_eq!(stats.stored, 100);
    let ids: HashSet<_> = db.snapshot().iter().map(|b| b.key_id).collect();
    assert_eq!(ids.len(), 100);
}

#[test]
fn malformed_reports_are_skipped_and_counted() {
    let ran = fast_ran("SOI:2", 1.0);
    let mut bytes = Vec::new();
    write_message(&mut bytes, &Message::IqReport(ran.capture(0).unwrap().1)).unwrap();
    let bad = E2Frame {
        msg_type: MsgType::IqReport,
        payload: vec![0, 0, 0, 9, 1, 2, 3],
    };
    bytes.extend(bad.encode().unwrap());
    write_message(&mut bytes, &Message::IqReport(ran.capture(1).unwrap().1)).unwrap();
    let db = RicDatabase::new();
    let stats = run_processing_stage(&ProcConfig::new(16), &bytes[..], &db, None).unwrap();
    assert_eq!((stats.stored, stats.skipped), (2, 1));
    let reports: Vec<usize> = db.snapshot().iter().map(|b| b.report).collect();
    assert_eq!(reports, vec![0, 2]);
}

#[test]
fn stored_blobs_share_no_64_byte_run_with_plaintext() {
    let ran = fast_ran("SOI:3,CWI:3,CI:3", 1.0);
    let db = RicDatabase::new();
    let stats = run_processing_stage(&ProcConfig::new(16), &iq_frames(&ran, 9)[..], &db, None).unwrap();
    assert_eq!(stats.stored, 9);
    for blob in db.snapshot() {
        let (_, iq) = ran.capture(blob.report).unwrap();
        let plain = spectrogram(&iq, &StftConfig::default()).unwrap().to_sgrm_bytes();
        assert_eq!(plain.len(), blob.sgrm.len());
        assert_ne!(plain, blob.sgrm);
        let windows: HashSet<&[u8]> = blob.sgrm.windows(64).collect();
        let leaked = plain.windows(64).filter(|w| windows.contains(w)).count();
        assert_eq!(leaked, 0, "report {} leaks {leaked} windows", blob.report);
    }
}

#[test]
fn xapp_source_has_no_decryption_path() {
    let src = include_str!("../src/ric/xapp.rs");
    for banned in ["decrypt", "ShuffleKey", "KeyStream", "crypt::"] {
        assert!(!src.contains(banned), "xapp mentions {banned}");
    }
}

#[test]
fn control_for_cwi_encodes_fixed_mcs() {
    let c = ControlDecision::new(Class::Cwi, 0.8);
    assert_eq!(c.action, McsAction::Fixed);
    let bytes = Message::Control(c).encode().unwrap();
    assert_eq!(&bytes[10..12], &[1, 1]);
    assert_eq!(f32::from_be_bytes(bytes[12..16].try_into().unwrap()), 0.8);
}
