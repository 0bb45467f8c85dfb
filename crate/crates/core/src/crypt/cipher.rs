use super::key::{KeyId, ShuffleKey};
use super::{fisher_yates, SplitMix64};
use crate::error::{Error, Result};
use crate::signal::{ImageData, Spectrogram};

/// Partition of an H×W×C image into square `patch × patch × C` grids,
/// numbered row-major. Positions inside a grid are flattened in
/// (row, column, channel) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
}

impl GridGeometry {
    pub fn new(height: usize, width: usize, channels: usize, patch: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if height % patch != 0 {
            return Err(Error::NotDivisible {
                patch_size: patch,
                dimension: "height",
                extent: height,
            });
        }
        if width % patch != 0 {
            return Err(Error::NotDivisible {
                patch_size: patch,
                dimension: "width",
                extent: width,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            patch,
        })
    }

    pub fn grids_per_row(&self) -> usize {
        self.width / self.patch
    }

    pub fn grid_count(&self) -> usize {
        (self.height / self.patch) * self.grids_per_row()
    }

    /// Number of scalar positions inside one grid.
    pub fn grid_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Flat image index of position `pos` inside grid `grid`.
    #[inline]
    pub fn flat_index(&self, grid: usize, pos: usize) -> usize {
        let gr = grid / self.grids_per_row();
        let gc = grid % self.grids_per_row();
        let row_len = self.patch * self.channels;
        let r = pos / row_len;
        let rem = pos % row_len;
        ((gr * self.patch + r) * self.width + gc * self.patch) * self.channels + rem
    }

    /// First flat index of each row segment of grid `grid`; each segment
    /// spans `patch × channels` contiguous values.
    pub fn row_starts(&self, grid: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.patch).map(move |r| self.flat_index(grid, r * self.patch * self.channels))
    }
}

/// Permutations expanded from a key for one image geometry.
///
/// Grid `s` of the source moves to grid `grid[s]`; inside destination grid
/// `d`, position `q` moves to `pixel[d][q]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutations {
    pub geometry: GridGeometry,
    pub grid: Vec<usize>,
    pub pixel: Vec<Vec<usize>>,
}

/// Expands `key` into the grid permutation followed by one pixel
/// permutation per grid, all from a single SplitMix64 stream.
pub fn derive_permutations(
    key: &ShuffleKey,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Permutations> {
    let geometry = GridGeometry::new(height, width, channels, key.patch_size)?;
    let mut stream = SplitMix64::new(key.master_seed);
    let grid = fisher_yates(geometry.grid_count(), &mut stream);
    let pixel = (0..geometry.grid_count())
        .map(|_| fisher_yates(geometry.grid_len(), &mut stream))
        .collect();
    Ok(Permutations {
        geometry,
        grid,
        pixel,
    })
}

/// Which stages of the cipher to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherMode {
    pub shuffle_grids: bool,
    pub shuffle_pixels: bool,
}

impl CipherMode {
    pub const FULL: CipherMode = CipherMode {
        shuffle_grids: true,
        shuffle_pixels: true,
    };
    pub const GRID_ONLY: CipherMode = CipherMode {
        shuffle_grids: true,
        shuffle_pixels: false,
    };
}

/// Ciphertext image. Same shape and value range as its plaintext.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedSpectrogram {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    pub patch_size: usize,
    pub key_id: KeyId,
}

impl ImageData for EncryptedSpectrogram {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

impl EncryptedSpectrogram {
    /// Wraps ciphertext pixels received from storage or the wire.
    pub fn from_parts(
        image: Spectrogram,
        patch_size: usize,
        key_id: KeyId,
    ) -> Result<Self> {
        let (h, w, c) = image.dims();
        GridGeometry::new(h, w, c, patch_size)?;
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            pixels: image.into_pixels(),
            patch_size,
            key_id,
        })
    }

    /// Ciphertext in the plaintext `SGRM` file layout.
    pub fn to_sgrm_bytes(&self) -> Vec<u8> {
        crate::signal::spectrogram_bytes(self.height, self.width, self.channels, &self.pixels)
    }

    /// Drops cipher metadata, keeping the pixels as an ordinary image.
    pub fn into_spectrogram(self) -> Spectrogram {
        Spectrogram::new(self.height, self.width, self.channels, self.pixels)
            .expect("ciphertext keeps plaintext shape and range")
    }
}

fn check_patch(image_patch: usize, key: &ShuffleKey) -> Result<()> {
    if image_patch != key.patch_size {
        return Err(Error::InvalidArgument(format!(
            "key patch size {} does not match ciphertext patch size {}",
            key.patch_size, image_patch
        )));
    }
    Ok(())
}

/// Full two-stage encryption.
pub fn encrypt(image: &Spectrogram, key: &ShuffleKey) -> Result<EncryptedSpectrogram> {
    encrypt_with(image, key, CipherMode::FULL)
}

/// Encryption with selectable stages; disabled stages act as identity.
pub fn encrypt_with(
    image: &Spectrogram,
    key: &ShuffleKey,
    mode: CipherMode,
) -> Result<EncryptedSpectrogram> {
    let (h, w, c) = image.dims();
    let perms = derive_permutations(key, h, w, c)?;
    let g = perms.geometry;
    let src = image.pixels();
    let mut out = vec![0f32; src.len()];
    for s in 0..g.grid_count() {
        let d = if mode.shuffle_grids { perms.grid[s] } else { s };
        let pixel = &perms.pixel[d];
        for q in 0..g.grid_len() {
            let to = if mode.shuffle_pixels { pixel[q] } else { q };
            out[g.flat_index(d, to)] = src[g.flat_index(s, q)];
        }
    }
    Ok(EncryptedSpectrogram {
        height: h,
        width: w,
        channels: c,
        pixels: out,
        patch_size: key.patch_size,
        key_id: key.id(),
    })
}

/// Exact inverse of [`encrypt`]. A wrong seed yields a wrong image rather
/// than an error; only a patch-size mismatch is detectable.
pub fn decrypt(enc: &EncryptedSpectrogram, key: &ShuffleKey) -> Result<Spectrogram> {
    check_patch(enc.patch_size, key)?;
    let (h, w, c) = enc.dims();
    let perms = derive_permutations(key, h, w, c)?;
    let g = perms.geometry;
    let mut out = vec![0f32; enc.pixels.len()];
    for s in 0..g.grid_count() {
        let d = perms.grid[s];
        let pixel = &perms.pixel[d];
        for q in 0..g.grid_len() {
            out[g.flat_index(s, q)] = enc.pixels[g.flat_index(d, pixel[q])];
        }
    }
    Spectrogram::new(h, w, c, out)
}
