//! C ABI for the shufflevit toolkit.
//!
//! Objects cross the boundary as opaque handles created by `sv_*_new` or
//! `sv_*_load` and released by the matching `sv_*_free`. Every fallible
//! call returns an [`SvStatus`]; on failure the message is available from
//! [`sv_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use shufflevit::crypt::{self, EncryptedSpectrogram, ShuffleKey};
use shufflevit::models::Model;
use shufflevit::ric::{ControlDecision, Message};
use shufflevit::rng::SplitMix64;
use shufflevit::signal::Spectrogram;
use shufflevit::{Class, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Protocol = 4,
    Budget = 5,
    Shape = 6,
    Format = 7,
    Numeric = 8,
    Panic = 9,
}

impl From<&Error> for SvStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::NotDivisible { .. } | Error::Config(_) => {
                SvStatus::InvalidArgument
            }
            Error::Io(_) => SvStatus::Io,
            Error::Protocol(_) | Error::TruncatedFrame { .. } => SvStatus::Protocol,
            Error::Budget(_) => SvStatus::Budget,
            Error::Shape(_) => SvStatus::Shape,
            Error::Format { .. } => SvStatus::Format,
            Error::Aliasing { .. } | Error::NonFinite(_) => SvStatus::Numeric,
        }
    }
}

/// Per-image shuffle key.
pub struct SvKey(ShuffleKey);

/// Image of `height × width × channels` pixels in `[0, 1]`.
pub struct SvImage(Spectrogram);

/// Trained classifier loaded from a checkpoint.
pub struct SvModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), (SvStatus, String)>) -> SvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside shufflevit".into());
            SvStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SvStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (SvStatus, String) {
    (SvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SvStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (SvStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Advances a SplitMix64 state in place and returns the next output.
///
/// # Safety
/// `state` must point to a valid `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn sv_splitmix64_next(state: *mut u64) -> u64 {
    let Some(s) = state.as_mut() else { return 0 };
    let mut rng = SplitMix64::new(*s);
    let out = rng.next_u64();
    *s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
    out
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_key_new(seed: u64, patch_size: usize, out: *mut *mut SvKey) -> SvStatus {
    guard(|| put(out, SvKey(ShuffleKey::new(seed, patch_size).map_err(lib)?)))
}

/// Loads a key file written by the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_key_read(path: *const c_char, out: *mut *mut SvKey) -> SvStatus {
    guard(|| {
        let path = c_path(path)?;
        put(out, SvKey(ShuffleKey::read(path).map_err(lib)?))
    })
}

/// Copies the 16-byte key identifier into `out`.
///
/// # Safety
/// `key` must be a live handle and `out` must hold 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn sv_key_id(key: *const SvKey, out: *mut u8) -> SvStatus {
    guard(|| {
        let key = deref(key, "key")?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(key.0.id().0.as_ptr(), out, 16);
        Ok(())
    })
}

/// # Safety
/// `key` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sv_key_free(key: *mut SvKey) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Copies `height·width·channels` pixels laid out row, column, channel.
///
/// # Safety
/// `pixels` must point to `len` floats and `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_image_new(
    height: usize,
    width: usize,
    channels: usize,
    pixels: *const f32,
    len: usize,
    out: *mut *mut SvImage,
) -> SvStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        put(out, SvImage(Spectrogram::new(height, width, channels, data).map_err(lib)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_image_read(path: *const c_char, out: *mut *mut SvImage) -> SvStatus {
    guard(|| {
        let path = c_path(path)?;
        put(out, SvImage(Spectrogram::read_sgrm(path).map_err(lib)?))
    })
}

/// Writes the dimensions of `image` into the three out-parameters.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sv_image_dims(
    image: *const SvImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> SvStatus {
    guard(|| {
        let img = deref(image, "image")?;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(null("dimension output"));
        }
        let (h, w, c) = img.0.dims();
        *height = h;
        *width = w;
        *channels = c;
        Ok(())
    })
}

/// Copies the pixels into `out`, which must hold exactly `len` floats.
///
/// # Safety
/// `image` must be live and `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sv_image_pixels(image: *const SvImage, out: *mut f32, len: usize) -> SvStatus {
    guard(|| {
        let img = deref(image, "image")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let px = img.0.pixels();
        if px.len() != len {
            return Err((SvStatus::Shape, format!("image holds {} pixels, buffer {len}", px.len())));
        }
        ptr::copy_nonoverlapping(px.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sv_image_free(image: *mut SvImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Encrypts `image` under `key` into a new image handle.
///
/// # Safety
/// Handles must be live and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_encrypt(image: *const SvImage, key: *const SvKey, out: *mut *mut SvImage) -> SvStatus {
    guard(|| {
        let (img, key) = (deref(image, "image")?, deref(key, "key")?);
        let enc = crypt::encrypt(&img.0, &key.0).map_err(lib)?;
        put(out, SvImage(enc.into_spectrogram()))
    })
}

/// Inverts [`sv_encrypt`] for the same key.
///
/// # Safety
/// Handles must be live and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_decrypt(image: *const SvImage, key: *const SvKey, out: *mut *mut SvImage) -> SvStatus {
    guard(|| {
        let (img, key) = (deref(image, "image")?, deref(key, "key")?);
        let enc = EncryptedSpectrogram::from_parts(img.0.clone(), key.0.patch_size, key.0.id()).map_err(lib)?;
        put(out, SvImage(crypt::decrypt(&enc, &key.0).map_err(lib)?))
    })
}

unsafe fn c_path<'a>(path: *const c_char) -> Result<&'a str, (SvStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| (SvStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sv_model_load(path: *const c_char, out: *mut *mut SvModel) -> SvStatus {
    guard(|| {
        let path = c_path(path)?;
        put(out, SvModel(Model::load(path).map_err(lib)?))
    })
}

/// Patch size the model was built for, or 0 for patch-free models.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sv_model_patch_size(model: *const SvModel) -> usize {
    model.as_ref().and_then(|m| m.0.patch_size()).unwrap_or(0)
}

/// Writes the three class probabilities (SOI, CWI, CI) into `probs`.
///
/// # Safety
/// Handles must be live and `probs` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn sv_model_probabilities(
    model: *const SvModel,
    image: *const SvImage,
    probs: *mut f64,
) -> SvStatus {
    guard(|| {
        let (m, img) = (deref(model, "model")?, deref(image, "image")?);
        if probs.is_null() {
            return Err(null("probs"));
        }
        let p = m.0.probabilities(&img.0).map_err(lib)?;
        ptr::copy_nonoverlapping(p.as_ptr(), probs, p.len().min(Class::COUNT));
        Ok(())
    })
}

/// Predicted class index (0 SOI, 1 CWI, 2 CI) and its probability.
///
/// # Safety
/// Handles must be live and the outputs valid.
#[no_mangle]
pub unsafe extern "C" fn sv_model_classify(
    model: *const SvModel,
    image: *const SvImage,
    class_index: *mut u8,
    confidence: *mut f64,
) -> SvStatus {
    guard(|| {
        let (m, img) = (deref(model, "model")?, deref(image, "image")?);
        if class_index.is_null() || confidence.is_null() {
            return Err(null("classification output"));
        }
        let (c, p) = m.0.classify(&img.0).map_err(lib)?;
        *class_index = c.index() as u8;
        *confidence = p;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sv_model_free(model: *mut SvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of an encoded CONTROL frame.
pub const SV_CONTROL_FRAME_LEN: usize = 16;

/// Encodes a CONTROL frame for `class_index` into `out`.
///
/// # Safety
/// `out` must hold `SV_CONTROL_FRAME_LEN` bytes.
#[no_mangle]
pub unsafe extern "C" fn sv_control_encode(class_index: u8, confidence: f32, out: *mut u8) -> SvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let class = Class::from_index(class_index as usize)
            .ok_or_else(|| (SvStatus::InvalidArgument, format!("unknown class {class_index}")))?;
        let bytes = Message::Control(ControlDecision::new(class, confidence))
            .encode()
            .map_err(lib)?;
        ptr::copy_nonoverlapping(bytes.as_ptr(), out, SV_CONTROL_FRAME_LEN);
        Ok(())
    })
}

/// Decodes a CONTROL frame of `len` bytes.
///
/// # Safety
/// `bytes` must point to `len` bytes and the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sv_control_decode(
    bytes: *const u8,
    len: usize,
    class_index: *mut u8,
    action: *mut u8,
    confidence: *mut f32,
) -> SvStatus {
    guard(|| {
        if bytes.is_null() || class_index.is_null() || action.is_null() || confidence.is_null() {
            return Err(null("argument"));
        }
        let data = std::slice::from_raw_parts(bytes, len);
        let (frame, used) = shufflevit::ric::E2Frame::decode(data).map_err(lib)?;
        if used != len {
            return Err((SvStatus::Protocol, format!("{} trailing bytes", len - used)));
        }
        match Message::from_frame(&frame).map_err(lib)? {
            Message::Control(c) => {
                *class_index = c.predicted_class.index() as u8;
                *action = c.action as u8;
                *confidence = c.confidence;
                Ok(())
            }
            _ => Err((SvStatus::Protocol, "not a CONTROL frame".into())),
        }
    })
}
