//! Baseband synthesis for the three interference classes and conversion of
//! captures into normalized spectrogram images.

mod dataset;
mod iq;
mod spectrogram;
mod waveform;

pub use dataset::{
    generate_sample, load_dataset, make_dataset, read_manifest, DatasetManifest, ManifestEntry,
    SampleParams, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};
pub use iq::{Complex, IqBuffer};
pub use spectrogram::{
    row_center_frequency_hz, spectrogram, ImageData, Spectrogram, StftConfig, IMAGE_CHANNELS, IMAGE_SIZE,
};
pub use waveform::{
    mix, synth_chirp, synth_cw, synth_ofdm_clean, synth_sample, synth_soi, SynthConfig,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Interference class of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    /// Uplink signal of interest without interference.
    #[serde(rename = "SOI")]
    Soi = 0,
    /// Signal of interest plus a continuous-wave jammer.
    #[serde(rename = "CWI")]
    Cwi = 1,
    /// Signal of interest plus a linear chirp jammer.
    #[serde(rename = "CI")]
    Ci = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Soi, Class::Cwi, Class::Ci];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Class::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Soi => "SOI",
            Class::Cwi => "CWI",
            Class::Ci => "CI",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "SOI" => Ok(Class::Soi),
            "CWI" => Ok(Class::Cwi),
            "CI" => Ok(Class::Ci),
            other => Err(Error::InvalidArgument(format!("unknown class {other:?}"))),
        }
    }
}

pub(crate) use spectrogram::encode_sgrm as spectrogram_bytes;
