use super::*;
use crate::crypt::{encrypt, encrypt_with, CipherMode, ShuffleKey};
use crate::signal::Spectrogram;

fn noise_image(seed: u64) -> Spectrogram {
    let mut s = crate::rng::SplitMix64::new(seed);
    let px = (0..128 * 128 * 3)
        .map(|_| (s.next_u64() >> 40) as f32 / (1u64 << 24) as f32)
        .collect();
    Spectrogram::new(128, 128, 3, px).unwrap()
}

#[test]
fn reference_counts() {
    let vit = Model::vit(ViTConfig::default(), 0).unwrap();
    assert_eq!(vit.parameter_count(), 154_179);
    assert_eq!(ViTConfig::default().closed_form_parameter_count(), 154_179);
    let cnn = Model::cnn(CnnConfig::default(), 0).unwrap();
    assert_eq!(cnn.parameter_count(), 124_803);
    assert_eq!(CnnConfig::default().closed_form_parameter_count(), 124_803);
}

#[test]
fn walked_count_matches_formula_for_every_patch_size() {
    for p in [8, 16, 32] {
        let cfg = ViTConfig::with_patch_size(p);
        let m = Vit::new(cfg, 3).unwrap();
        assert_eq!(m.params().scalar_count(), cfg.closed_form_parameter_count(), "p={p}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(Vit::new(ViTConfig::with_patch_size(5), 0).is_err());
    let cfg = ViTConfig {
        heads: 3,
        ..ViTConfig::default()
    };
    assert!(matches!(Vit::new(cfg, 0), Err(Error::Config(_))));
    let cfg = CnnConfig {
        height: 4,
        ..CnnConfig::default()
    };
    assert!(Cnn::new(cfg, 0).is_err());
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let mut m = Model::vit(ViTConfig::default(), 1).unwrap();
    let id = m.params().find("head.w").unwrap();
    let shape = m.params().get(id).shape().to_vec();
    *m.params_mut().get_mut(id) = Tensor::zeros(&shape);
    let p = m.probabilities(&noise_image(2)).unwrap();
    assert!(p.iter().all(|&v| v == 1.0 / 3.0));
}

#[test]
fn probabilities_sum_to_one_for_both_models() {
    let img = noise_image(4);
    for m in [
        Model::vit(ViTConfig::default(), 5).unwrap(),
        Model::cnn(CnnConfig::default(), 5).unwrap(),
    ] {
        let (p, secs) = m.predict(&img).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(secs >= 0.0);
    }
}

#[test]
fn wrong_image_shape_is_an_error() {
    let small = Spectrogram::new(64, 64, 3, vec![0.0; 64 * 64 * 3]).unwrap();
    for m in [
        Model::vit(ViTConfig::default(), 0).unwrap(),
        Model::cnn(CnnConfig::default(), 0).unwrap(),
    ] {
        assert!(matches!(m.predict(&small), Err(Error::Shape(_))));
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let img = noise_image(6);
    for m in [
        Model::vit(ViTConfig::with_patch_size(32), 7).unwrap(),
        Model::cnn(CnnConfig::default(), 7).unwrap(),
    ] {
        let back = Model::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.arch(), m.arch());
        assert_eq!(back.params().tensors(), m.params().tensors());
        let a: Vec<u64> = m.probabilities(&img).unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.probabilities(&img).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
    let mut bytes = Model::vit(ViTConfig::default(), 0).unwrap().to_checkpoint();
    bytes.truncate(bytes.len() - 1);
    assert!(Model::from_checkpoint(&bytes).is_err());
}

#[test]
fn encryption_permutes_patch_rows_and_their_entries() {
    let img = noise_image(8);
    for p in [8, 16, 32] {
        let key = ShuffleKey::new(11 + p as u64, p).unwrap();
        let plain = extract_patches(&img, p).unwrap();
        let enc = extract_patches(&encrypt(&img, &key).unwrap(), p).unwrap();
        let sorted = |t: &Tensor, i: usize| {
            let mut r: Vec<u64> = t.row(i).iter().map(|v| v.to_bits()).collect();
            r.sort_unstable();
            r
        };
        let mut a: Vec<Vec<u64>> = (0..plain.row_count()).map(|i| sorted(&plain, i)).collect();
        let mut b: Vec<Vec<u64>> = (0..enc.row_count()).map(|i| sorted(&enc, i)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "p={p}");
    }
}

fn zero_positions(m: &mut Vit) {
    let id = m.params().find("positions").unwrap();
    let shape = m.params().get(id).shape().to_vec();
    *m.params_mut().get_mut(id) = Tensor::zeros(&shape);
}

#[test]
fn grid_only_encryption_leaves_logits_bit_identical() {
    let mut vit = Vit::new(ViTConfig::default(), 9).unwrap();
    // Non-trivial class token and biases so the check is not vacuous.
    for name in ["class_token", "layer0.bq", "layer1.b1"] {
        let id = vit.params().find(name).unwrap();
        let t = vit.params_mut().get_mut(id);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = ((i * 7919 % 97) as f64 - 48.0) * 0.01;
        }
    }
    zero_positions(&mut vit);
    let model = Model::Vit(vit);
    let img = noise_image(10);
    let base: Vec<u64> = model.probabilities(&img).unwrap().iter().map(|v| v.to_bits()).collect();
    for seed in 0..5 {
        let key = ShuffleKey::new(seed, 16).unwrap();
        let enc = encrypt_with(&img, &key, CipherMode::GRID_ONLY).unwrap();
        let got: Vec<u64> = model.probabilities(&enc).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, base, "seed {seed}");
    }
}

#[test]
fn training_is_deterministic_and_restores_best_weights() {
    let imgs: Vec<Spectrogram> = (0..6).map(noise_image).collect();
    let labels = vec![Class::Soi, Class::Cwi, Class::Ci, Class::Soi, Class::Cwi, Class::Ci];
    let set = LabeledSet::new(imgs, labels).unwrap();
    let cfg = crate::nn::TrainConfig {
        max_epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    let run = || {
        let mut m = Model::vit(ViTConfig::with_patch_size(32), 1).unwrap();
        let h = train(&mut m, &set, &set, &cfg).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(m1.params().tensors(), m2.params().tensors());
    assert_eq!(h1.epochs.len(), 3);
    assert!(h1.to_csv().starts_with(History::CSV_HEADER));

    let empty = LabeledSet::default();
    let mut m = Model::vit(ViTConfig::with_patch_size(32), 1).unwrap();
    assert!(train(&mut m, &empty, &set, &cfg).is_err());
    assert!(train(&mut m, &set, &empty, &cfg).is_err());
}

#[test]
fn vit_memorizes_ten_spectrograms() {
    use crate::signal::{generate_sample, SampleParams};
    let mut set = LabeledSet::default();
    for (class, n) in [(Class::Soi, 4), (Class::Cwi, 3), (Class::Ci, 3)] {
        for i in 0..n {
            set.push(generate_sample(&SampleParams::derive(5, class, i)).unwrap(), class);
        }
    }
    let cfg = crate::nn::TrainConfig {
        max_epochs: 200,
        batch_size: 10,
        early_stop_patience: 200,
        plateau_patience: 200,
        ..Default::default()
    };
    let mut m = Model::vit(ViTConfig::default(), 3).unwrap();
    let h = train(&mut m, &set, &set, &cfg).unwrap();
    assert_eq!(h.epochs.len(), 200);
    let (loss, acc) = super::train::loss_and_accuracy(&m, &set).unwrap();
    assert!(loss < 0.01, "final training loss {loss}");
    assert_eq!(acc, 1.0);
}

#[test]
fn early_stop_restores_the_first_epoch_when_validation_only_worsens() {
    let imgs: Vec<Spectrogram> = (0..6).map(noise_image).collect();
    let labels = vec![Class::Soi, Class::Cwi, Class::Ci, Class::Soi, Class::Cwi, Class::Ci];
    let wrong = vec![Class::Cwi, Class::Ci, Class::Soi, Class::Cwi, Class::Ci, Class::Soi];
    let train_set = LabeledSet::new(imgs.clone(), labels).unwrap();
    let val_set = LabeledSet::new(imgs, wrong).unwrap();
    let cfg = crate::nn::TrainConfig {
        max_epochs: 20,
        batch_size: 2,
        early_stop_patience: 1,
        ..Default::default()
    };
    let mut m = Model::vit(ViTConfig::with_patch_size(32), 4).unwrap();
    let h = train(&mut m, &train_set, &val_set, &cfg).unwrap();
    assert_eq!(h.epochs.len(), 2);
    assert!(h.epochs[1].val_loss > h.epochs[0].val_loss);
    assert_eq!(h.best_epoch, 1);
    assert!(h.stopped_early);
    let (restored, _) = super::train::loss_and_accuracy(&m, &val_set).unwrap();
    assert_eq!(restored, h.epochs[0].val_loss);
}

fn small_vit() -> Model {
    let cfg = ViTConfig {
        height: 16,
        width: 16,
        channels: 3,
        patch_size: 4,
        dim: 8,
        mlp_hidden: 16,
        heads: 2,
        layers: 2,
        classes: 3,
    };
    let mut m = Model::vit(cfg, 21).unwrap();
    // Random non-zero values everywhere so no parameter is at a kink.
    let mut s = crate::rng::SplitMix64::new(5);
    for t in m.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += ((s.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.5;
        }
    }
    m
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let px = (0..16 * 16 * 3).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
    let img = Spectrogram::new(16, 16, 3, px).unwrap();
    let err = gradient_check(&mut small_vit(), &img, 1, 50, 77).unwrap();
    assert!(err < 1e-4, "vit {err}");
    let mut cnn = Model::cnn(
        CnnConfig {
            height: 16,
            width: 16,
            channels: 3,
            conv_layers: 2,
            filters: 4,
            classes: 3,
        },
        3,
    )
    .unwrap();
    let err = gradient_check(&mut cnn, &img, 1, 50, 77).unwrap();
    assert!(err < 1e-4, "cnn {err}");
}
