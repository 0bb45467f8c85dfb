use crate::crypt::GridGeometry;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::signal::ImageData;

/// Splits an image into `[n, p²·C]` rows using the cipher's grid geometry,
/// so grid `i` of a ciphertext is exactly patch row `i`.
pub fn extract_patches(image: &dyn ImageData, patch: usize) -> Result<Tensor> {
    let (h, w, c) = image.dims();
    let g = GridGeometry::new(h, w, c, patch)?;
    let src = image.pixels();
    let row_len = patch * c;
    let mut data = Vec::with_capacity(src.len());
    for grid in 0..g.grid_count() {
        for start in g.row_starts(grid) {
            data.extend(src[start..start + row_len].iter().map(|&v| f64::from(v)));
        }
    }
    Tensor::new(&[g.grid_count(), g.grid_len()], data)
}

/// Maps patch entries from `[0, 1]` to `[-1, 1]`.
pub fn center_pixels(patches: &mut Tensor) {
    patches.data_mut().iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
}

/// Inverse of [`extract_patches`].
pub fn assemble_patches(
    patches: &Tensor,
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<Vec<f32>> {
    let g = GridGeometry::new(height, width, channels, patch)?;
    if patches.shape() != [g.grid_count(), g.grid_len()] {
        return Err(Error::Shape(format!(
            "expected patches [{}, {}], got {:?}",
            g.grid_count(),
            g.grid_len(),
            patches.shape()
        )));
    }
    let row_len = patch * channels;
    let mut out = vec![0f32; height * width * channels];
    for grid in 0..g.grid_count() {
        let values = patches.row(grid);
        for (r, start) in g.row_starts(grid).enumerate() {
            for (dst, &v) in out[start..start + row_len]
                .iter_mut()
                .zip(&values[r * row_len..(r + 1) * row_len])
            {
                *dst = v as f32;
            }
        }
    }
    Ok(out)
}
