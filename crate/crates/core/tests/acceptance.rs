//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use shufflevit::crypt::{
    decrypt, encrypt, encrypt_with, CipherMode, GridGeometry, ShuffleKey, SplitMix64,
};
use shufflevit::eval::{
    confidence_sweep, confidence_sweep_from_probs, encrypt_set, evaluate, patch_size_sweep,
    report_table, shuffle_invariance_test, stratified_split, synth_dataset, train_and_evaluate,
    Arch, ExperimentRow, Metrics, Split,
};
use shufflevit::models::{
    center_pixels, extract_patches, gradient_check, CnnConfig, LabeledSet, Model, ViTConfig,
};
use shufflevit::nn::gradcheck::{operation_report, TOL};
use shufflevit::nn::{Tape, Tensor, TrainConfig};
use shufflevit::ric::{
    run_loop_all, run_processing_stage, write_message, Message, ProcConfig, RanConfig,
    RicDatabase, Slowed, RTT_BUDGET_S,
};
use shufflevit::signal::{generate_sample, spectrogram, SampleParams, Spectrogram, StftConfig};
use shufflevit::{Class, Error};

const SEED: u64 = 1;
const PER_CLASS: usize = 300;
const FRACTIONS: (f64, f64, f64) = (0.7, 0.15, 0.15);

type Outcome = Result<String, String>;

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// The p=16 dataset and the two models trained on it, built on first use.
struct Trained {
    data: LabeledSet,
    split: Split,
    vit: Model,
    cnn: Model,
    rows: Vec<ExperimentRow>,
    train_time: Duration,
}

#[derive(Default)]
struct Ctx {
    plain: Option<LabeledSet>,
    trained: Option<Trained>,
}

impl Ctx {
    fn plain(&mut self) -> &LabeledSet {
        self.plain
            .get_or_insert_with(|| synth_dataset(PER_CLASS, SEED).unwrap())
    }

    fn split(&mut self) -> Split {
        stratified_split(&self.plain().labels, FRACTIONS, SEED).unwrap()
    }

    fn trained(&mut self) -> &Trained {
        if self.trained.is_none() {
            let start = Instant::now();
            let split = self.split();
            let data = encrypt_set(self.plain(), 16, keys_seed(16)).unwrap();
            let cfg = train_config();
            let (vit, vit_row) = train_and_evaluate(Arch::Vit, 16, &data, &split, &cfg, SEED).unwrap();
            let (cnn, cnn_row) = train_and_evaluate(Arch::Cnn, 16, &data, &split, &cfg, SEED).unwrap();
            self.trained = Some(Trained {
                data,
                split,
                vit,
                cnn,
                rows: vec![cnn_row, vit_row],
                train_time: start.elapsed(),
            });
        }
        self.trained.as_ref().unwrap()
    }
}

fn keys_seed(p: usize) -> u64 {
    shufflevit::rng::sub_seed(SEED, "keys", p as u64)
}

fn train_config() -> TrainConfig {
    TrainConfig {
        rng_seed: SEED,
        ..Default::default()
    }
}

fn lattice_image(s: &mut SplitMix64, h: usize, w: usize, c: usize) -> Spectrogram {
    let px = (0..h * w * c).map(|_| (s.next_u64() % 256) as f32 / 255.0).collect();
    Spectrogram::new(h, w, c, px).unwrap()
}

fn bits(px: &[f32]) -> Vec<u32> {
    let mut v: Vec<u32> = px.iter().map(|p| p.to_bits()).collect();
    v.sort_unstable();
    v
}

fn grid_histograms(img: &Spectrogram, p: usize) -> Vec<Vec<u32>> {
    let (h, w, c) = img.dims();
    let g = GridGeometry::new(h, w, c, p).unwrap();
    let mut out: Vec<Vec<u32>> = (0..g.grid_count())
        .map(|i| {
            let v: Vec<f32> = (0..g.grid_len()).map(|k| img.pixels()[g.flat_index(i, k)]).collect();
            bits(&v)
        })
        .collect();
    out.sort();
    out
}

/// Reference ViT with every parameter moved off its initial value.
fn jittered_vit(p: usize, seed: u64) -> Model {
    let mut m = Model::vit(ViTConfig::with_patch_size(p), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    for t in m.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    m
}

fn zero_param(m: &mut Model, name: &str) {
    let id = m.params().find(name).unwrap();
    let shape = m.params().get(id).shape().to_vec();
    *m.params_mut().get_mut(id) = Tensor::zeros(&shape);
}

fn class_token_bits(m: &Model, patches: Tensor) -> Vec<u64> {
    let Model::Vit(v) = m else { unreachable!() };
    let mut patches = patches;
    center_pixels(&mut patches);
    let tape = Tape::new();
    let vars = m.params().bind_frozen(&tape);
    let x = tape.constant(patches);
    let seq = v.encode(&tape, &vars, x).unwrap();
    let cls = tape.row(seq, 0).unwrap();
    let out: Vec<u64> = tape.value(cls).data().iter().map(|x| x.to_bits()).collect();
    out
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let mut data = Vec::with_capacity(t.len());
    for &r in perm {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(&[perm.len(), cols], data).unwrap()
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn c1_metric_oracle(_: &mut Ctx) -> Outcome {
    let mut m = Model::vit(ViTConfig::default(), SEED).unwrap();
    zero_param(&mut m, "head.w");
    let labels: Vec<Class> = Class::ALL.iter().flat_map(|&c| std::iter::repeat(c).take(10)).collect();
    let images = vec![Spectrogram::new(128, 128, 3, vec![0.5; 128 * 128 * 3]).unwrap(); labels.len()];
    let end_to_end = evaluate(&m, &images, &labels).unwrap();
    let direct = Metrics::from_predictions(&labels, &vec![Class::Soi; labels.len()]).unwrap();
    let got = |m: &Metrics| {
        [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1].map(fmt3)
    };
    let want = ["0.333", "0.111", "0.333", "0.167"];
    let pass = got(&end_to_end) == want && got(&direct) == want;
    verdict(pass, format!("acc/P/R/F1 = {}", got(&end_to_end).join("/")))
}

fn c2_cipher(_: &mut Ctx) -> Outcome {
    let mut s = SplitMix64::new(0);
    let first = s.next_u64();
    let mut s = SplitMix64::new(2);
    let mut failures = 0usize;
    let images = 1000;
    for _ in 0..images {
        let img = lattice_image(&mut s, 128, 128, 3);
        let (global, grids) = (bits(img.pixels()), [8, 16, 32].map(|p| grid_histograms(&img, p)));
        for (k, p) in [8, 16, 32].into_iter().enumerate() {
            let key = ShuffleKey::new(s.next_u64(), p).unwrap();
            let enc = encrypt(&img, &key).unwrap();
            let back = decrypt(&enc, &key).unwrap();
            let identical = back.pixels().iter().zip(img.pixels()).all(|(a, b)| a.to_bits() == b.to_bits());
            let enc = enc.into_spectrogram();
            if !identical || bits(enc.pixels()) != global || grid_histograms(&enc, p) != grids[k] {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0 && first == 0xE220A8397B1DCDAF,
        format!("{} round trips, {failures} failures, splitmix64(0) = {first:#018X}", images * 3),
    )
}

fn c3_gradients(_: &mut Ctx) -> Outcome {
    let ops = operation_report();
    let (worst_op, op_err) = ops
        .iter()
        .copied()
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let img = generate_sample(&SampleParams::derive(SEED, Class::Cwi, 0)).unwrap();
    let mut vit = jittered_vit(16, 5);
    let vit_err = gradient_check(&mut vit, &img, Class::Cwi.index(), 50, 9).unwrap();
    verdict(
        op_err < TOL && vit_err < TOL,
        format!("{} ops, worst {worst_op} {op_err:.1e}; full ViT 50 params {vit_err:.1e}", ops.len()),
    )
}

fn c4_patch_order(_: &mut Ctx) -> Outcome {
    let img = generate_sample(&SampleParams::derive(SEED, Class::Ci, 1)).unwrap();
    let mut checked = 0;
    for p in [8, 16, 32] {
        let mut m = jittered_vit(p, 6 + p as u64);
        zero_param(&mut m, "positions");
        let patches = extract_patches(&img, p).unwrap();
        let base = class_token_bits(&m, patches.clone());
        let mut s = SplitMix64::new(p as u64);
        for _ in 0..5 {
            let perm = shufflevit::crypt::fisher_yates(patches.shape()[0], &mut s);
            if class_token_bits(&m, permute_rows(&patches, &perm)) != base {
                return Err(format!("p={p}: class token changed under a patch permutation"));
            }
            checked += 1;
        }
        for k in 0..5 {
            let key = ShuffleKey::new(100 + k, p).unwrap();
            let enc = encrypt_with(&img, &key, CipherMode::GRID_ONLY).unwrap().into_spectrogram();
            let a = class_token_bits(&m, extract_patches(&enc, p).unwrap());
            let pa: Vec<u64> = m.probabilities(&enc).unwrap().iter().map(|x| x.to_bits()).collect();
            let pb: Vec<u64> = m.probabilities(&img).unwrap().iter().map(|x| x.to_bits()).collect();
            if a != base || pa != pb {
                return Err(format!("p={p}: grid-only ciphertext changed the output"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} permuted or encrypted inputs bit-identical"))
}

fn c5_parameters(_: &mut Ctx) -> Outcome {
    let cfg = ViTConfig::default();
    let walked = Model::vit(cfg, 0).unwrap().parameter_count();
    let closed = cfg.closed_form_parameter_count();
    let rel = (walked as f64 - 162_000.0).abs() / 162_000.0;
    let cnn = Model::cnn(CnnConfig::default(), 0).unwrap().parameter_count();
    verdict(
        walked == 154_179 && closed == 154_179 && rel <= 0.10,
        format!("ViT {walked} ({:.1}% from 0.162 M), CNN {cnn}", rel * 100.0),
    )
}

fn c6_table(ctx: &mut Ctx) -> Outcome {
    let t = ctx.trained();
    let table = report_table(&t.rows);
    std::fs::write(out_dir().join("table_p16.csv"), &table).unwrap();
    print!("{}", table.lines().map(|l| format!("    {l}\n")).collect::<String>());
    let cnn = t.rows[0].metrics.accuracy;
    let vit = t.rows[1].metrics.accuracy;
    let minutes = t.train_time.as_secs_f64() / 60.0;
    verdict(
        vit >= 0.70 && vit - cnn >= 0.10 && minutes <= 30.0,
        format!(
            "ViT {vit:.3} vs CNN {cnn:.3}, gap {:+.1} points, {minutes:.1} min",
            (vit - cnn) * 100.0
        ),
    )
}

fn c7_patch_sweep(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let split = ctx.split();
    let sweep = patch_size_sweep(ctx.plain(), &split, &[8, 32], &train_config(), SEED).unwrap();
    std::fs::write(out_dir().join("patch_sweep.csv"), sweep.to_csv()).unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let mut detail = String::new();
    let mut pass = minutes <= 60.0;
    for p in [8, 32] {
        let v = sweep.get("vit", p).unwrap().metrics.macro_f1;
        let c = sweep.get("cnn", p).unwrap().metrics.macro_f1;
        pass &= v > c;
        let _ = write!(detail, "p{p} F1 ViT {v:.3} vs CNN {c:.3}; ");
    }
    let _ = write!(detail, "{minutes:.1} min");
    verdict(pass, detail)
}

fn c8_shuffle_invariance(ctx: &mut Ctx) -> Outcome {
    let t = ctx.trained();
    let test_acc = t.rows[1].metrics.accuracy;
    let report = shuffle_invariance_test(&t.vit, 30, 15, 16, SEED).unwrap();
    std::fs::write(out_dir().join("shuffle_invariance.csv"), report.to_csv()).unwrap();
    let mut constant = Model::vit(ViTConfig::default(), SEED).unwrap();
    zero_param(&mut constant, "head.w");
    let agreement = shuffle_invariance_test(&constant, 30, 15, 16, SEED).unwrap().mean_agreement();
    let diff = (report.overall_accuracy - test_acc).abs();
    verdict(
        diff <= 0.15 && agreement == 1.0,
        format!(
            "{} predictions, accuracy {:.3} vs test {test_acc:.3}, constant-model agreement {agreement}",
            report.predictions, report.overall_accuracy
        ),
    )
}

fn c9_confidence(ctx: &mut Ctx) -> Outcome {
    let probs = vec![
        vec![0.9, 0.05, 0.05],
        vec![0.5, 0.3, 0.2],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.1, 0.8],
        vec![0.4, 0.35, 0.25],
        vec![0.05, 0.6, 0.35],
    ];
    let labels = vec![Class::Soi, Class::Soi, Class::Ci, Class::Ci, Class::Cwi, Class::Cwi];
    let s = confidence_sweep_from_probs(&probs, &labels, &[0.0, 0.5, 0.85, 0.95]).unwrap();
    let got: Vec<(f64, usize, Option<f64>)> =
        s.points.iter().map(|p| (p.coverage, p.kept, p.accuracy())).collect();
    let want = vec![
        (1.0, 6, Some(4.0 / 6.0)),
        (4.0 / 6.0, 4, Some(0.75)),
        (1.0 / 6.0, 1, Some(1.0)),
        (0.0, 0, None),
    ];
    if got != want {
        return Err(format!("six-row fixture gave {got:?}"));
    }
    let t = ctx.trained();
    let test = t.data.subset(&t.split.test);
    let thresholds: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
    let mut detail = String::from("fixture exact");
    for (name, model) in [("vit", &t.vit), ("cnn", &t.cnn)] {
        let sweep = confidence_sweep(model, &test.images, &test.labels, &thresholds).unwrap();
        std::fs::write(out_dir().join(format!("confidence_{name}.csv")), sweep.to_csv()).unwrap();
        if sweep.points.windows(2).any(|w| w[1].coverage > w[0].coverage) {
            return Err(format!("{name} coverage increases with threshold"));
        }
        let last = sweep.points.last().unwrap();
        let _ = write!(detail, "; {name} coverage 1.000 -> {:.3}", last.coverage);
    }
    Ok(detail)
}

fn c10_latency(ctx: &mut Ctx) -> Outcome {
    let t = ctx.trained();
    let img = &t.data.images[t.split.test[0]];
    let forward = t.vit.mean_latency(img).unwrap();
    let ran = RanConfig::new("SOI:15,CWI:15".parse().unwrap(), 0.5, SEED);
    let report = run_loop_all(&ran, &ProcConfig::new(16), &t.vit).unwrap();
    let summary = report.summary.clone().unwrap();
    let slow = Slowed {
        inner: &t.vit,
        delay: Duration::from_millis(1200),
    };
    let slow_ran = RanConfig::new("SOI:3".parse().unwrap(), 1.0, SEED);
    let slow_code = match run_loop_all(&slow_ran, &ProcConfig::new(16), &slow).unwrap().check_budget(RTT_BUDGET_S) {
        Err(e @ Error::Budget(_)) => e.exit_code(),
        _ => 0,
    };
    verdict(
        summary.reports == 60 && summary.p95 < RTT_BUDGET_S && forward <= 0.1 && slow_code == 5,
        format!(
            "{} reports, p95 rtt {:.4} s, forward {forward:.4} s, slowed model exit code {slow_code}",
            summary.reports, summary.p95
        ),
    )
}

fn c11_privacy(_: &mut Ctx) -> Outcome {
    let ran = RanConfig::new("SOI:10,CWI:10,CI:10".parse().unwrap(), 1.0, SEED);
    let mut frames = Vec::new();
    for k in 0..30 {
        write_message(&mut frames, &Message::IqReport(ran.capture(k).unwrap().1)).unwrap();
    }
    let db = RicDatabase::new();
    let stats = run_processing_stage(&ProcConfig::new(16), &frames[..], &db, None).unwrap();
    if format!("{stats:?}").contains("escrow") {
        return Err("processing stage built with key escrow".into());
    }
    let mut leaked = 0usize;
    for blob in db.snapshot() {
        let (_, iq) = ran.capture(blob.report).unwrap();
        let plain = spectrogram(&iq, &StftConfig::default()).unwrap().to_sgrm_bytes();
        let windows: HashSet<&[u8]> = blob.sgrm.windows(64).collect();
        leaked += plain.windows(64).filter(|w| windows.contains(w)).count();
    }
    let src = include_str!("../src/ric/xapp.rs");
    let banned: Vec<&str> = ["decrypt", "ShuffleKey", "KeyStream", "crypt::"]
        .into_iter()
        .filter(|b| src.contains(b))
        .collect();
    verdict(
        stats.stored == 30 && leaked == 0 && banned.is_empty(),
        format!("{} blobs scanned, {leaked} leaked 64-byte runs, xApp key references {banned:?}", stats.stored),
    )
}

type Criterion = fn(&mut Ctx) -> Outcome;

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let criteria: [(u32, &str, Criterion); 11] = [
        (1, "metric oracle", c1_metric_oracle),
        (2, "cipher correctness", c2_cipher),
        (3, "gradient correctness", c3_gradients),
        (4, "patch-order invariance", c4_patch_order),
        (5, "parameter counts", c5_parameters),
        (6, "ViT vs CNN at p16", c6_table),
        (7, "patch-size sweep", c7_patch_sweep),
        (8, "shuffle invariance", c8_shuffle_invariance),
        (9, "confidence sweep", c9_confidence),
        (10, "latency budget", c10_latency),
        (11, "privacy invariant", c11_privacy),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {detail} [{secs:.1} s]");
    }
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
