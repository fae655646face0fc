//! C ABI over the avatar library.
//!
//! Objects are opaque handles created by `cbav_*_open`/`cbav_avatar_*`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`CbavStatus`]; on failure the message is kept per thread and
//! can be read with [`cbav_last_error`]. Panics are caught at the boundary
//! and reported as `CBAV_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cbav::avatar::{init_avatar, repose, transfer_region, Avatar, AvatarSource};
use cbav::cli::{Checkpoint, TemplateChoice};
use cbav::codebook::{pca_fit, KindMask};
use cbav::geometry::io::save_mesh;
use cbav::geometry::{PoseParams, TemplateMesh, Vec3};
use cbav::mesher::extract_mesh;
use cbav::training::TrainConfig;
use cbav::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    TemplateMismatch = 7,
    Numeric = 8,
    Panic = 9,
}

pub const CBAV_TEMPLATE_HUMANOID: u32 = 0;
pub const CBAV_TEMPLATE_SPHERE: u32 = 1;

pub const CBAV_KIND_GEOMETRY: u32 = 1;
pub const CBAV_KIND_TEXTURE: u32 = 2;

/// A trained checkpoint together with the template it was trained on.
pub struct CbavModel {
    template: TemplateMesh,
    config: TrainConfig,
    ckpt: Checkpoint,
}

/// A customized avatar: codebook plus pose.
pub struct CbavAvatar {
    inner: Avatar,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CbavStatus {
    match e {
        Error::Dimension(_) | Error::IndexOutOfRange { .. } => CbavStatus::Dimension,
        Error::Path { .. } | Error::Io(_) | Error::Image(_) => CbavStatus::Io,
        Error::Format { .. } => CbavStatus::Format,
        Error::Config(_) => CbavStatus::Config,
        Error::TemplateMismatch { .. } => CbavStatus::TemplateMismatch,
        Error::Numeric(_) | Error::NonFinite | Error::NotPositiveSemiDefinite => CbavStatus::Numeric,
        _ => CbavStatus::InvalidArgument,
    }
}

/// Failure inside a call: a status with a message.
struct Fail(CbavStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CbavStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CbavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbavStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CbavStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(CbavStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(CbavStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(CbavStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail(CbavStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(CbavStatus::NullPointer, "output handle pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn points(xyz: &[f64]) -> Vec<Vec3> {
    xyz.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

impl CbavModel {
    fn wrap(&self, avatar: Avatar) -> Result<CbavAvatar, Fail> {
        avatar.check_template(&self.template)?;
        avatar.check_decoders(&self.ckpt.state.decoders)?;
        Ok(CbavAvatar { inner: avatar })
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbav_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// NUL-terminated if `len > 0`). Returns the full message length plus one,
/// or 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn cbav_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Load a training checkpoint for one of the `CBAV_TEMPLATE_*` templates.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_model_open(path: *const c_char, template: u32, out: *mut *mut CbavModel) -> CbavStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let choice = match template {
            CBAV_TEMPLATE_HUMANOID => TemplateChoice::Humanoid,
            CBAV_TEMPLATE_SPHERE => TemplateChoice::Sphere,
            other => return Err(invalid(format!("unknown template {other}"))),
        };
        let template = choice.build();
        let ckpt = Checkpoint::load_for(&path, &template)?;
        let config = ckpt.config()?;
        store(out, CbavModel { template, config, ckpt })
    })
}

/// # Safety
/// `model` must come from [`cbav_model_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbav_model_free(model: *mut CbavModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_model_subject_count(model: *const CbavModel, out: *mut usize) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *slice_out(out, 1, "out")?.first_mut().expect("one slot") = m.ckpt.subject_count();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_model_vertex_count(model: *const CbavModel, out: *mut usize) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *slice_out(out, 1, "out")?.first_mut().expect("one slot") = m.template.vertex_count();
        Ok(())
    })
}

/// Avatar from training subject `index`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_from_index(
    model: *const CbavModel,
    index: usize,
    out: *mut *mut CbavAvatar,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let st = &m.ckpt.state;
        let a = init_avatar(&m.template, &st.shape, &st.color, &st.decoders, AvatarSource::Index(index))?;
        store(out, m.wrap(a)?)
    })
}

/// New avatar drawn from the PCA models of both dictionaries.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_sample(
    model: *const CbavModel,
    seed: u64,
    temperature: f64,
    out: *mut *mut CbavAvatar,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let st = &m.ckpt.state;
        let n = st.shape.subject_count();
        if n < 2 {
            return Err(invalid("sampling needs at least two training subjects"));
        }
        let g = pca_fit(&st.shape, m.config.pca_dim_geometry.min(n - 1))?;
        let c = pca_fit(&st.color, m.config.pca_dim_texture.min(n - 1))?;
        let src = AvatarSource::Pca { geometry: &g, texture: &c, seed, temperature };
        let a = init_avatar(&m.template, &st.shape, &st.color, &st.decoders, src)?;
        store(out, m.wrap(a)?)
    })
}

/// Load an avatar file made for this model.
///
/// # Safety
/// `model` must be a live handle, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_load(
    model: *const CbavModel,
    path: *const c_char,
    out: *mut *mut CbavAvatar,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let a = Avatar::load(&path_arg(path, "path")?)?;
        store(out, m.wrap(a)?)
    })
}

/// # Safety
/// `avatar` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_save(avatar: *const CbavAvatar, path: *const c_char) -> CbavStatus {
    guard(|| {
        let a = deref(avatar, "avatar")?;
        a.inner.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `avatar` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_free(avatar: *mut CbavAvatar) {
    if !avatar.is_null() {
        drop(Box::from_raw(avatar));
    }
}

/// Copy the `CBAV_KIND_*` features of `vertices` from `src` into a copy of
/// `dst`.
///
/// # Safety
/// Handles must be live, `vertices` valid for `count` entries, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_transfer(
    model: *const CbavModel,
    dst: *const CbavAvatar,
    src: *const CbavAvatar,
    vertices: *const usize,
    count: usize,
    kinds: u32,
    out: *mut *mut CbavAvatar,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let (d, s) = (deref(dst, "dst")?, deref(src, "src")?);
        if kinds == 0 || kinds & !(CBAV_KIND_GEOMETRY | CBAV_KIND_TEXTURE) != 0 {
            return Err(invalid(format!("bad kind mask {kinds}")));
        }
        let mask = KindMask { geometry: kinds & CBAV_KIND_GEOMETRY != 0, texture: kinds & CBAV_KIND_TEXTURE != 0 };
        let verts = slice_arg(vertices, count, "vertices")?;
        let a = transfer_region(&d.inner, &s.inner, verts, mask)?;
        store(out, m.wrap(a)?)
    })
}

/// Copy of `avatar` with a new pose: `rotations` holds one axis-angle
/// triple per joint, `shape` one value per blendshape, `translation` three.
///
/// # Safety
/// Handles must be live and the arrays valid for the given lengths.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_repose(
    model: *const CbavModel,
    avatar: *const CbavAvatar,
    rotations: *const f64,
    joint_count: usize,
    shape: *const f64,
    shape_count: usize,
    translation: *const f64,
    out: *mut *mut CbavAvatar,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let a = deref(avatar, "avatar")?;
        let rot = slice_arg(rotations, joint_count * 3, "rotations")?;
        let tr = slice_arg(translation, 3, "translation")?;
        let pose = PoseParams {
            joint_rotations: rot.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            shape_coeffs: slice_arg(shape, shape_count, "shape")?.to_vec(),
            root_translation: [tr[0], tr[1], tr[2]],
        };
        store(out, m.wrap(repose(&m.template, &a.inner, pose)?)?)
    })
}

/// Signed distances at `count` points (`xyz` interleaved) into `out`.
///
/// # Safety
/// Handles must be live, `xyz` valid for `3 * count` values and `out` for `count`.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_sdf(
    model: *const CbavModel,
    avatar: *const CbavAvatar,
    xyz: *const f64,
    count: usize,
    out: *mut f64,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let a = &deref(avatar, "avatar")?.inner;
        let pts = points(slice_arg(xyz, count * 3, "xyz")?);
        let dst = slice_out(out, count, "out")?;
        let posed = a.posed(&m.template)?;
        dst.copy_from_slice(&a.sdf(&posed, &m.ckpt.state.decoders, &pts)?);
        Ok(())
    })
}

/// RGB in `[0, 1]` at `count` points into `out` (`3 * count` values).
///
/// # Safety
/// Handles must be live, `xyz` and `out` valid for `3 * count` values.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_colors(
    model: *const CbavModel,
    avatar: *const CbavAvatar,
    xyz: *const f64,
    count: usize,
    out: *mut f64,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let a = &deref(avatar, "avatar")?.inner;
        let pts = points(slice_arg(xyz, count * 3, "xyz")?);
        let dst = slice_out(out, count * 3, "out")?;
        let posed = a.posed(&m.template)?;
        let colors = a.colors(&posed, &m.ckpt.state.decoders, &pts)?;
        for (d, c) in dst.chunks_exact_mut(3).zip(&colors) {
            d.copy_from_slice(c);
        }
        Ok(())
    })
}

/// Extract the colored zero level set at `resolution` and write it as PLY or
/// OBJ, chosen by the extension of `path`.
///
/// # Safety
/// Handles must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cbav_avatar_extract(
    model: *const CbavModel,
    avatar: *const CbavAvatar,
    resolution: usize,
    path: *const c_char,
) -> CbavStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let a = &deref(avatar, "avatar")?.inner;
        let path = path_arg(path, "path")?;
        let mesh = extract_mesh(a, &a.posed(&m.template)?, &m.ckpt.state.decoders, resolution)?;
        save_mesh(&mesh, &path)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let n = unsafe { cbav_last_error(std::ptr::null_mut(), 0) };
        let mut buf = vec![0 as c_char; n];
        unsafe { cbav_last_error(buf.as_mut_ptr(), n) };
        unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(status_of(&Error::Config("x".into())), CbavStatus::Config);
        assert_eq!(status_of(&Error::IndexOutOfRange { index: 3, len: 2 }), CbavStatus::Dimension);
        assert_eq!(status_of(&Error::EmptyMesh), CbavStatus::InvalidArgument);
    }

    #[test]
    fn null_and_panic_are_reported() {
        let mut out = std::ptr::null_mut();
        let s = unsafe { cbav_model_open(std::ptr::null(), 0, &mut out) };
        assert_eq!(s, CbavStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(guard(|| panic!("boom")), CbavStatus::Panic);
        assert!(last_error().contains("boom"));
    }

    #[test]
    fn truncated_message_is_terminated() {
        set_error("abcdef".into());
        let mut buf = [1 as c_char; 4];
        assert_eq!(unsafe { cbav_last_error(buf.as_mut_ptr(), 4) }, 7);
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes(), b"abc");
    }
}
