use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spectrogram::{spectrogram, Spectrogram, StftConfig};
use super::waveform::{synth_sample, SynthConfig};
use super::Class;
use crate::error::{Error, Result};
use crate::rng::sub_seed;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Jammer gains are drawn uniformly from this range (dB).
const GAIN_RANGE_DB: (f64, f64) = (30.0, 40.0);

/// Generation parameters of one labeled sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub class: Class,
    pub sub_seed: u64,
    /// `None` for SOI, which carries no jammer.
    pub gain_db: Option<f64>,
}

impl SampleParams {
    /// Parameters of sample `index` of `class` in the dataset seeded by `seed`.
    pub fn derive(seed: u64, class: Class, index: usize) -> Self {
        let sub = sub_seed(seed, class.name(), index as u64);
        let gain_db = match class {
            Class::Soi => None,
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(sub);
                rng.set_stream(3);
                Some(rng.gen_range(GAIN_RANGE_DB.0..=GAIN_RANGE_DB.1))
            }
        };
        Self {
            class,
            sub_seed: sub,
            gain_db,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            class: self.class,
            rng_seed: self.sub_seed,
            interferer_gain_db: self.gain_db.unwrap_or(0.0),
            ..SynthConfig::default()
        }
    }
}

/// Synthesizes and renders one labeled spectrogram.
pub fn generate_sample(params: &SampleParams) -> Result<Spectrogram> {
    let iq = synth_sample(&params.synth_config())?;
    Ok(spectrogram(&iq, &StftConfig::default())?.with_label(params.class))
}

mod u64_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Class,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    #[serde(with = "u64_text")]
    pub sub_seed: u64,
}

/// TOML manifest describing a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(with = "u64_text")]
    pub seed: u64,
    pub per_class: usize,
    /// Patch size of the cipher applied to the files, absent for plaintext.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encrypted_patch_size: Option<usize>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Class> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported schema version {}", m.schema_version),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::write(dir.as_ref().join(MANIFEST_FILE), self.to_toml())?;
        Ok(())
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    DatasetManifest::from_toml(&fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?)
}

/// Loads every image listed in a dataset directory's manifest, labeled.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Spectrogram>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let images = manifest
        .samples
        .iter()
        .map(|e| Ok(Spectrogram::read_sgrm(dir.join(&e.path))?.with_label(e.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, images))
}

fn relative_path(class: Class, index: usize) -> PathBuf {
    PathBuf::from(class.name().to_ascii_lowercase()).join(format!("{index:05}.sgrm"))
}

/// Writes `per_class` spectrograms per class plus a manifest into `out_dir`.
///
/// Output depends only on `(per_class, seed)`.
pub fn make_dataset(
    per_class: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let mut samples = Vec::with_capacity(per_class * Class::COUNT);
    for class in Class::ALL {
        fs::create_dir_all(out_dir.join(class.name().to_ascii_lowercase()))?;
        for index in 0..per_class {
            let params = SampleParams::derive(seed, class, index);
            let image = generate_sample(&params)?;
            let rel = relative_path(class, index);
            image.write_sgrm(out_dir.join(&rel))?;
            samples.push(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                label: class,
                gain_db: params.gain_db,
                sub_seed: params.sub_seed,
            });
        }
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        per_class,
        encrypted_patch_size: None,
        samples,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}
