use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{info, warn};

use super::config::Settings;
use super::{
    Cli, Command, EncryptArgs, EvalArgs, GenDatasetArgs, LoopArgs, ModelKind, Role, Subset,
    SweepArgs, SweepKind, TrainArgs,
};
use crate::crypt::{decrypt, encrypt, EncryptedSpectrogram, GridGeometry, KeyStream, ShuffleKey};
use crate::error::{Error, Result};
use crate::eval::{
    confidence_sweep, evaluate, patch_size_sweep, report_table, shuffle_invariance_test,
    stratified_split, ExperimentRow, Split,
};
use crate::models::{train, Classifier, History, LabeledSet, Model};
use crate::nn::TrainConfig;
use crate::ric::{
    self, mirror_blobs, run_processing_stage, run_ran_emulator, run_xapp, serve_blobs, timings_csv,
    percentile, ProcConfig, RanConfig, RicDatabase, Scenario, Slowed, RTT_BUDGET_S,
};
use crate::rng::sub_seed;
use crate::signal::{load_dataset, make_dataset, read_manifest, Spectrogram, IMAGE_CHANNELS, IMAGE_SIZE};

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenDataset(a) => gen_dataset(settings, a),
        Command::Encrypt(a) => encrypt_dir(settings, a),
        Command::Train(a) => train_cmd(settings, a),
        Command::Eval(a) => eval_cmd(settings, a),
        Command::Sweep(a) => sweep_cmd(settings, a),
        Command::Loop(a) => loop_cmd(settings, a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn check_patch(s: &mut Settings, key: &str, patch: usize) {
    let ok = GridGeometry::new(IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS, patch).is_ok();
    s.check(ok, key, format!("{patch} must be a positive divisor of {IMAGE_SIZE}"));
}

fn load_set(dir: &Path) -> Result<(crate::signal::DatasetManifest, LabeledSet)> {
    let (manifest, images) = load_dataset(dir)?;
    let labels = manifest.labels();
    Ok((manifest, LabeledSet::new(images, labels)?))
}

fn fractions(
    s: &mut Settings,
    train: Option<f64>,
    val: Option<f64>,
    test: Option<f64>,
) -> (f64, f64, f64) {
    let f = (
        s.get("train_fraction", train, 0.7),
        s.get("val_fraction", val, 0.15),
        s.get("test_fraction", test, 0.15),
    );
    s.check(
        [f.0, f.1, f.2].iter().all(|x| (0.0..=1.0).contains(x)) && (f.0 + f.1 + f.2 - 1.0).abs() < 1e-9,
        "train_fraction",
        "split fractions must lie in [0, 1] and sum to 1",
    );
    f
}

fn train_config(
    s: &mut Settings,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: u64,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        max_epochs: s.get("epochs", epochs, d.max_epochs),
        batch_size: s.get("batch_size", batch, d.batch_size),
        learning_rate: s.get("learning_rate", lr, d.learning_rate),
        rng_seed: seed,
        ..d
    }
}

fn finish_train_config(s: &mut Settings, cfg: &TrainConfig) {
    if let Err(Error::Config(problems)) = cfg.validate() {
        for p in problems {
            s.check(false, "train", p);
        }
    }
}

fn gen_dataset(mut s: Settings, a: GenDatasetArgs) -> Result<()> {
    let per_class = s.get("per_class", a.per_class, 700usize);
    let seed = s.get("seed", a.seed, 0u64);
    let out = s.path("out", a.out);
    s.check(per_class >= 1, "per_class", "must be at least 1");
    s.finish("gen-dataset")?;
    let manifest = make_dataset(per_class, seed, &out)?;
    info!("wrote {} images to {}", manifest.samples.len(), out.display());
    Ok(())
}

fn key_path(keys_dir: &Path, image_path: &str) -> PathBuf {
    keys_dir.join(image_path).with_extension("skey")
}

fn encrypt_dir(mut s: Settings, a: EncryptArgs) -> Result<()> {
    let input = s.path("in", a.input);
    let out = s.path("out", a.out);
    let patch = s.get("patch_size", a.patch_size, 16usize);
    let seed = s.get("seed", a.seed, 0u64);
    let keys_dir = s.optional_path("keys_dir", a.keys_dir);
    let decrypt_mode = s.get("decrypt", a.decrypt.then_some(true), false);
    check_patch(&mut s, "patch_size", patch);
    s.check(!decrypt_mode || keys_dir.is_some(), "keys_dir", "required with decrypt");
    s.finish("encrypt")?;

    let mut manifest = read_manifest(&input)?;
    fs::create_dir_all(&out)?;
    if decrypt_mode {
        let keys_dir = keys_dir.expect("checked above");
        let p = manifest.encrypted_patch_size.ok_or_else(|| {
            Error::InvalidArgument(format!("{} is not an encrypted dataset", input.display()))
        })?;
        for e in &manifest.samples {
            let key = ShuffleKey::read(key_path(&keys_dir, &e.path))?;
            let img = Spectrogram::read_sgrm(input.join(&e.path))?;
            let enc = EncryptedSpectrogram::from_parts(img, p, key.id())?;
            write_file(&out.join(&e.path), decrypt(&enc, &key)?.to_sgrm_bytes())?;
        }
        manifest.encrypted_patch_size = None;
    } else {
        if let Some(p) = manifest.encrypted_patch_size {
            return Err(Error::InvalidArgument(format!(
                "{} is already encrypted at patch size {p}",
                input.display()
            )));
        }
        let mut keys = KeyStream::new(sub_seed(seed, "keys", 0));
        for e in &manifest.samples {
            let key = keys.fresh_key(patch)?;
            let img = Spectrogram::read_sgrm(input.join(&e.path))?;
            write_file(&out.join(&e.path), encrypt(&img, &key)?.to_sgrm_bytes())?;
            if let Some(dir) = &keys_dir {
                write_file(&key_path(dir, &e.path), key.to_bytes())?;
            }
        }
        manifest.encrypted_patch_size = Some(patch);
    }
    manifest.write(&out)?;
    info!("{} {} images into {}", if decrypt_mode { "decrypted" } else { "encrypted" }, manifest.samples.len(), out.display());
    Ok(())
}

fn data_patch(s: &mut Settings, flag: Option<usize>, stored: Option<usize>) -> usize {
    let patch = s.get("patch_size", flag, stored.unwrap_or(16));
    if let Some(q) = stored {
        s.check(patch == q, "patch_size", format!("data is encrypted at patch size {q}"));
    }
    check_patch(s, "patch_size", patch);
    patch
}

fn train_cmd(mut s: Settings, a: TrainArgs) -> Result<()> {
    let kind = s.get("model", a.model, ModelKind::Vit);
    let data = s.path("data", a.data);
    let out = s.path("out", a.out);
    let seed = s.get("seed", a.seed, 0u64);
    let manifest = if data.as_os_str().is_empty() { None } else { Some(read_manifest(&data)?) };
    let patch = data_patch(&mut s, a.patch_size, manifest.as_ref().and_then(|m| m.encrypted_patch_size));
    let mut cfg = train_config(&mut s, a.epochs, a.batch_size, a.learning_rate, seed);
    cfg.early_stop_patience = s.get("early_stop_patience", a.early_stop_patience, cfg.early_stop_patience);
    cfg.plateau_patience = s.get("plateau_patience", a.plateau_patience, cfg.plateau_patience);
    finish_train_config(&mut s, &cfg);
    let fr = fractions(&mut s, a.train_fraction, a.val_fraction, a.test_fraction);
    let history_path = s.optional_path("history", a.history);
    s.finish("train")?;

    let (_, set) = load_set(&data)?;
    let split = stratified_split(&set.labels, fr, seed)?;
    let train_set = set.subset(&split.train);
    let val_set = if split.val.is_empty() {
        warn!("no validation split; validating on the training data");
        train_set.clone()
    } else {
        set.subset(&split.val)
    };
    let mut model = build(kind, patch, seed)?;
    let history = train(&mut model, &train_set, &val_set, &cfg)?;
    if let Some(p) = history_path {
        write_file(&p, history.to_csv())?;
    }
    model.save(&out)?;
    info!("checkpoint written to {}", out.display());
    Ok(())
}

fn build(kind: ModelKind, patch: usize, seed: u64) -> Result<Model> {
    match kind {
        ModelKind::Vit => crate::eval::Arch::Vit.build(patch, seed),
        ModelKind::Cnn => crate::eval::Arch::Cnn.build(patch, seed),
    }
}

fn check_model_matches(model: &Model, stored: Option<usize>) -> Result<()> {
    match (model.patch_size(), stored) {
        (Some(p), Some(q)) if p != q => Err(Error::InvalidArgument(format!(
            "checkpoint expects patch size {p} but the data is encrypted at {q}"
        ))),
        _ => Ok(()),
    }
}

fn eval_cmd(mut s: Settings, a: EvalArgs) -> Result<()> {
    let checkpoint = s.path("checkpoint", a.checkpoint);
    let data = s.path("data", a.data);
    let report = s.path("report", a.report);
    let subset = s.get("subset", a.subset, Subset::All);
    let seed = s.get("seed", a.seed, 0u64);
    let fr = fractions(&mut s, a.train_fraction, a.val_fraction, a.test_fraction);
    s.finish("eval")?;

    let model = Model::load(&checkpoint)?;
    let (manifest, set) = load_set(&data)?;
    check_model_matches(&model, manifest.encrypted_patch_size)?;
    let set = match subset {
        Subset::All => set,
        Subset::Test => set.subset(&stratified_split(&set.labels, fr, seed)?.test),
    };
    if set.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let metrics = evaluate(&model, &set.images, &set.labels)?;
    info!("accuracy {:.3} macro F1 {:.3} over {} images", metrics.accuracy, metrics.macro_f1, set.len());
    let row = ExperimentRow {
        model: model.arch().to_string(),
        patch_size: model.patch_size().unwrap_or(0),
        prediction_time_s: model.mean_latency(&set.images[0])?,
        parameters: model.parameter_count(),
        metrics,
        history: History::default(),
    };
    write_file(&report, report_table(&[row]))
}

fn default_thresholds() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

fn sweep_cmd(mut s: Settings, a: SweepArgs) -> Result<()> {
    let out = s.path("out", a.out);
    let plot = s.optional_path("plot", a.plot);
    let seed = s.get("seed", a.seed, 0u64);
    let name = match a.kind {
        SweepKind::Confidence => "sweep confidence",
        SweepKind::Patch => "sweep patch",
        SweepKind::Shuffle => "sweep shuffle",
    };
    match a.kind {
        SweepKind::Confidence => {
            let checkpoint = s.path("checkpoint", a.checkpoint);
            let data = s.path("data", a.data);
            let thresholds = s.get("thresholds", a.thresholds, default_thresholds());
            s.check(
                thresholds.windows(2).all(|w| w[0] < w[1]) && thresholds.iter().all(|t| (0.0..1.0).contains(t)),
                "thresholds",
                "must be strictly ascending values in [0, 1)",
            );
            s.finish(name)?;
            let model = Model::load(&checkpoint)?;
            let (manifest, set) = load_set(&data)?;
            check_model_matches(&model, manifest.encrypted_patch_size)?;
            let sweep = confidence_sweep(&model, &set.images, &set.labels, &thresholds)?;
            write_file(&out, sweep.to_csv())?;
            if let Some(p) = plot {
                write_file(&p, sweep.plot_csv())?;
            }
        }
        SweepKind::Patch => {
            let data = s.path("data", a.data);
            let sizes = s.get("sizes", a.sizes, vec![8usize, 16, 32]);
            for &p in &sizes {
                check_patch(&mut s, "sizes", p);
            }
            let cfg = train_config(&mut s, a.epochs, a.batch_size, a.learning_rate, seed);
            finish_train_config(&mut s, &cfg);
            s.finish(name)?;
            let (manifest, set) = load_set(&data)?;
            if manifest.encrypted_patch_size.is_some() {
                return Err(Error::InvalidArgument("patch sweep needs a plaintext dataset".into()));
            }
            let split: Split = stratified_split(&set.labels, (0.7, 0.15, 0.15), seed)?;
            let sweep = patch_size_sweep(&set, &split, &sizes, &cfg, seed)?;
            write_file(&out, sweep.to_csv())?;
        }
        SweepKind::Shuffle => {
            let checkpoint = s.path("checkpoint", a.checkpoint);
            let per_class = s.get("per_class", a.per_class, 30usize);
            let versions = s.get("versions", a.versions, 15usize);
            s.check(per_class >= 1, "per_class", "must be at least 1");
            s.check(versions >= 1, "versions", "must be at least 1");
            let model = if checkpoint.as_os_str().is_empty() { None } else { Some(Model::load(&checkpoint)?) };
            let default_patch = model.as_ref().and_then(|m| m.patch_size()).unwrap_or(16);
            let patch = s.get("patch_size", None, default_patch);
            check_patch(&mut s, "patch_size", patch);
            s.finish(name)?;
            let model = model.expect("checkpoint is required");
            let report = shuffle_invariance_test(&model, per_class, versions, patch, seed)?;
            info!("shuffle test accuracy {:.3}, agreement {:.3}", report.overall_accuracy, report.mean_agreement());
            write_file(&out, report.to_csv())?;
            if let Some(p) = plot {
                write_file(&p, report.plot_csv())?;
            }
        }
    }
    Ok(())
}

fn parse_scenario(text: &str) -> Result<Scenario> {
    let path = Path::new(text);
    if path.is_file() {
        fs::read_to_string(path)?.replace('\n', ",").parse()
    } else {
        text.parse()
    }
}

/// Stops the RAN emulator on the first interrupt so downstream roles
/// drain and exit.
fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        warn!("cannot install interrupt handler: {e}");
    }
    flag
}

fn loop_cmd(mut s: Settings, a: LoopArgs) -> Result<()> {
    let role = a.role;
    let needs_model = matches!(role, Role::Xapp | Role::All);
    let needs_ran = matches!(role, Role::Ran | Role::All);
    let iq_addr = s.get("iq_addr", a.iq_addr, "127.0.0.1:7401".to_string());
    let blob_addr = s.get("blob_addr", a.blob_addr, "127.0.0.1:7402".to_string());
    let control_addr = s.get("control_addr", a.control_addr, "127.0.0.1:7403".to_string());
    let scenario_text = s.get("scenario", a.scenario, "SOI:30,CWI:30".to_string());
    let interval = s.get("interval", a.interval, 1.0f64);
    let seed = s.get("seed", a.seed, 0u64);
    let key_seed = s.optional("key_seed", a.key_seed);
    let report = s.optional_path("report", a.report);
    let enforce = s.get("enforce_budget", a.enforce_budget.then_some(true), false);
    let slow_ms = s.get("slow_ms", a.slow_ms, 0u64);
    s.check(interval > 0.0 && interval.is_finite(), "interval", "must be positive");
    let scenario = if needs_ran {
        match parse_scenario(&scenario_text) {
            Ok(sc) => Some(sc),
            Err(e) => {
                s.check(false, "scenario", e);
                None
            }
        }
    } else {
        None
    };
    let model = if needs_model {
        let path = s.path("checkpoint", a.checkpoint.clone());
        if path.as_os_str().is_empty() { None } else { Some(Model::load(&path)?) }
    } else {
        None
    };
    let default_patch = model.as_ref().and_then(|m| m.patch_size()).unwrap_or(16);
    let patch = s.get("patch_size", a.patch_size, default_patch);
    check_patch(&mut s, "patch_size", patch);
    s.finish("loop")?;

    let stop = interrupt_flag();
    let ran_cfg = scenario.map(|sc| {
        let mut c = RanConfig::new(sc, interval, seed);
        c.stop = Some(Arc::clone(&stop));
        c
    });
    let proc_cfg = ProcConfig { key_seed, ..ProcConfig::new(patch) };
    let slowed;
    let classifier: Option<&dyn Classifier> = match &model {
        Some(m) if slow_ms > 0 => {
            slowed = Slowed { inner: m, delay: Duration::from_millis(slow_ms) };
            Some(&slowed)
        }
        Some(m) => Some(m),
        None => None,
    };

    let rtts = match role {
        Role::All => {
            let result = ric::run_loop_all(ran_cfg.as_ref().expect("ran config"), &proc_cfg, classifier.expect("model"))?;
            if let Some(p) = &report {
                write_file(p, timings_csv(&result.timings))?;
            }
            if let Some(sm) = &result.summary {
                info!("rtt over {} reports: p50 {:.3} s, p95 {:.3} s, max {:.3} s ({} excluded)", sm.reports, sm.p50, sm.p95, sm.max, sm.excluded);
            }
            result.timings.iter().map(|(_, t)| t.rtt()).collect::<Vec<_>>()
        }
        Role::Ran => {
            let controls = TcpListener::bind(&control_addr)?;
            let up = TcpStream::connect(&iq_addr)?;
            up.set_nodelay(true)?;
            let log = run_ran_emulator(ran_cfg.as_ref().expect("ran config"), up, controls, None)?;
            if let Some(p) = &report {
                let mut csv = String::from("report,rtt\n");
                for (i, r) in log.rtt_s.iter().enumerate() {
                    csv.push_str(&format!("{i},{r}\n"));
                }
                write_file(p, csv)?;
            }
            log.rtt_s
        }
        Role::Proc => {
            let iq = TcpListener::bind(&iq_addr)?;
            let blobs = TcpListener::bind(&blob_addr)?;
            let db = RicDatabase::new();
            thread::scope(|sc| -> Result<()> {
                let server = sc.spawn(|| -> Result<usize> {
                    let (stream, _) = blobs.accept()?;
                    stream.set_nodelay(true)?;
                    serve_blobs(&db, stream)
                });
                let (stream, _) = iq.accept()?;
                let stats = run_processing_stage(&proc_cfg, BufReader::new(stream), &db, None)?;
                info!("stored {} blobs, skipped {}", stats.stored, stats.skipped);
                server.join().map_err(|_| Error::Protocol("blob server panicked".into()))??;
                Ok(())
            })?;
            Vec::new()
        }
        Role::Xapp => {
            let input = TcpStream::connect(&blob_addr)?;
            let out = TcpStream::connect(&control_addr)?;
            out.set_nodelay(true)?;
            let db = RicDatabase::new();
            let classifier = classifier.expect("model");
            thread::scope(|sc| -> Result<()> {
                let mirror = sc.spawn(|| mirror_blobs(input, &db, patch));
                let stats = run_xapp(&db, classifier, BufWriter::new(out), None)?;
                mirror.join().map_err(|_| Error::Protocol("blob reader panicked".into()))??;
                info!("sent {} controls", stats.decisions.len());
                Ok(())
            })?;
            Vec::new()
        }
    };
    if let Some(p95) = percentile(&rtts, 95.0) {
        if p95 >= RTT_BUDGET_S {
            let msg = format!("p95 rtt {p95:.3} s over {RTT_BUDGET_S} s budget");
            if enforce {
                return Err(Error::Budget(msg));
            }
            warn!("{msg}");
        }
    }
    Ok(())
}
