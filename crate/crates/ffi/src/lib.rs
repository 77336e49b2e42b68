//! C interface to the `psdf` reconstruction library.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every fallible call returns a
//! [`PsdfStatus`]; on failure a description is stored per thread and can be
//! read with [`psdf_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use psdf::extraction::{PlyFormat, TriangleMesh};
use psdf::pipeline::{PipelineConfig, Reconstructor};
use psdf::sensor::{CameraIntrinsics, DepthFrame};
use psdf::{Error, Isometry3, Quaternion, UnitQuaternion, Vector3};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    InvalidFrame = 4,
    Io = 5,
    Parse = 6,
    EmptyMesh = 7,
    Panic = 8,
}

/// Pinhole camera model. Pixel centers are at integer coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsdfIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Camera-to-world pose: translation and unit quaternion (x, y, z, w).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsdfPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

/// Incremental reconstruction state.
pub struct PsdfReconstructor {
    inner: Reconstructor,
}

/// Triangle mesh snapshot with flattened vertex and index buffers.
pub struct PsdfMesh {
    mesh: TriangleMesh,
    positions: Vec<f64>,
    normals: Vec<f64>,
    confidence: Vec<f64>,
    indices: Vec<u32>,
}

impl PsdfMesh {
    fn new(mesh: TriangleMesh) -> Self {
        let mut positions = Vec::with_capacity(mesh.vertex_count() * 3);
        let mut normals = Vec::with_capacity(mesh.vertex_count() * 3);
        let mut confidence = Vec::with_capacity(mesh.vertex_count());
        for v in &mesh.vertices {
            positions.extend_from_slice(v.surfel.position.coords.as_slice());
            normals.extend_from_slice(v.surfel.normal.as_slice());
            confidence.push(v.surfel.confidence);
        }
        let indices = mesh.triangles.iter().flatten().copied().collect();
        PsdfMesh {
            mesh,
            positions,
            normals,
            confidence,
            indices,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(status: PsdfStatus, message: impl Into<String>) -> PsdfStatus {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
    status
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> PsdfStatus {
    match err {
        Error::InvalidConfig(_) => PsdfStatus::InvalidConfig,
        Error::InvalidFrame(_) => PsdfStatus::InvalidFrame,
        Error::Io { .. } | Error::MissingFile { .. } => PsdfStatus::Io,
        Error::Image { .. } | Error::Json { .. } | Error::Ply { .. } => PsdfStatus::Parse,
        Error::EmptyMesh => PsdfStatus::EmptyMesh,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), PsdfStatus>) -> PsdfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsdfStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(PsdfStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lib_err(err: Error) -> PsdfStatus {
    set_error(status_of(&err), err.to_string())
}

fn null(what: &str) -> PsdfStatus {
    set_error(PsdfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PsdfStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(
            PsdfStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. The pointer stays valid until the next call into this
/// library from the same thread.
#[no_mangle]
pub extern "C" fn psdf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn psdf_status_string(status: PsdfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PsdfStatus::Ok => c"ok",
        PsdfStatus::NullPointer => c"null pointer argument",
        PsdfStatus::InvalidArgument => c"invalid argument",
        PsdfStatus::InvalidConfig => c"invalid configuration",
        PsdfStatus::InvalidFrame => c"invalid depth frame",
        PsdfStatus::Io => c"i/o error",
        PsdfStatus::Parse => c"parse error",
        PsdfStatus::EmptyMesh => c"empty mesh",
        PsdfStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Library version as a NUL-terminated string.
#[no_mangle]
pub extern "C" fn psdf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a reconstructor. `config_json` may be null for defaults; otherwise
/// it is a JSON object overriding individual settings.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_new(
    config_json: *const c_char,
    out: *mut *mut PsdfReconstructor,
) -> PsdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_json_str(str_arg(config_json, "config_json")?).map_err(lib_err)?
        };
        let inner = Reconstructor::new(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PsdfReconstructor { inner }));
        Ok(())
    })
}

/// Releases a reconstructor. Null is ignored.
///
/// # Safety
/// `handle` must be null or a pointer returned by [`psdf_reconstructor_new`]
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_free(handle: *mut PsdfReconstructor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Fuses one depth image given in meters, row-major, `width * height`
/// values. Non-positive and non-finite depths are treated as missing.
///
/// # Safety
/// `handle`, `depth`, `intrinsics` and `pose` must be valid; `depth` must
/// point to `intrinsics->width * intrinsics->height` floats.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_integrate(
    handle: *mut PsdfReconstructor,
    depth: *const f32,
    intrinsics: *const PsdfIntrinsics,
    pose: *const PsdfPose,
    timestamp: f64,
) -> PsdfStatus {
    guard(|| {
        let rec = handle.as_mut().ok_or_else(|| null("handle"))?;
        let intr = intrinsics.as_ref().ok_or_else(|| null("intrinsics"))?;
        let pose = pose.as_ref().ok_or_else(|| null("pose"))?;
        if depth.is_null() {
            return Err(null("depth"));
        }
        let intrinsics = CameraIntrinsics {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width as usize,
            height: intr.height as usize,
        };
        intrinsics.validate().map_err(lib_err)?;
        let n = intrinsics.width * intrinsics.height;
        let values = std::slice::from_raw_parts(depth, n)
            .iter()
            .map(|&d| {
                if d.is_finite() && d > 0.0 {
                    d as f64
                } else {
                    0.0
                }
            })
            .collect();
        let q = Quaternion::new(pose.qw, pose.qx, pose.qy, pose.qz);
        if !(q.norm() > 0.0 && q.coords.iter().all(|c| c.is_finite())) {
            return Err(set_error(
                PsdfStatus::InvalidArgument,
                "pose quaternion must be finite and non-zero",
            ));
        }
        let iso = Isometry3::from_parts(
            Vector3::new(pose.tx, pose.ty, pose.tz).into(),
            UnitQuaternion::from_quaternion(q),
        );
        let frame = DepthFrame::new(values, intrinsics, iso, timestamp).map_err(lib_err)?;
        rec.inner.process(&frame).map_err(lib_err)?;
        Ok(())
    })
}

/// Number of frames fused so far.
///
/// # Safety
/// `handle` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_frame_count(handle: *const PsdfReconstructor) -> usize {
    handle.as_ref().map_or(0, |r| r.inner.stats().len())
}

/// Number of allocated voxel blocks.
///
/// # Safety
/// `handle` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_block_count(handle: *const PsdfReconstructor) -> usize {
    handle.as_ref().map_or(0, |r| r.inner.grid().len())
}

/// Mean inlier ratio of the most recent frame; NaN before any frame or when
/// the mode does not compute one.
///
/// # Safety
/// `handle` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_last_mean_rho(handle: *const PsdfReconstructor) -> f64 {
    handle
        .as_ref()
        .and_then(|r| r.inner.stats().last())
        .and_then(|s| s.mean_rho)
        .unwrap_or(f64::NAN)
}

/// Extracts the current mesh into a new handle.
///
/// # Safety
/// `handle` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psdf_reconstructor_extract(
    handle: *mut PsdfReconstructor,
    out: *mut *mut PsdfMesh,
) -> PsdfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let rec = handle.as_mut().ok_or_else(|| null("handle"))?;
        let mesh = rec.inner.finish().clone();
        *out = Box::into_raw(Box::new(PsdfMesh::new(mesh)));
        Ok(())
    })
}

/// Releases a mesh. Null is ignored.
///
/// # Safety
/// `mesh` must be null or a pointer returned by [`psdf_reconstructor_extract`]
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_free(mesh: *mut PsdfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_vertex_count(mesh: *const PsdfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.vertex_count())
}

/// # Safety
/// `mesh` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_triangle_count(mesh: *const PsdfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.mesh.triangle_count())
}

/// Vertex positions as `3 * vertex_count` doubles (x, y, z), owned by the mesh.
///
/// # Safety
/// `mesh` must be null or valid. The pointer lives as long as the mesh.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_positions(mesh: *const PsdfMesh) -> *const f64 {
    mesh.as_ref().map_or(ptr::null(), |m| m.positions.as_ptr())
}

/// Unit vertex normals as `3 * vertex_count` doubles, owned by the mesh.
///
/// # Safety
/// `mesh` must be null or valid. The pointer lives as long as the mesh.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_normals(mesh: *const PsdfMesh) -> *const f64 {
    mesh.as_ref().map_or(ptr::null(), |m| m.normals.as_ptr())
}

/// Per-vertex confidence, `vertex_count` doubles, owned by the mesh.
///
/// # Safety
/// `mesh` must be null or valid. The pointer lives as long as the mesh.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_confidence(mesh: *const PsdfMesh) -> *const f64 {
    mesh.as_ref().map_or(ptr::null(), |m| m.confidence.as_ptr())
}

/// Triangle vertex indices, `3 * triangle_count` values, owned by the mesh.
///
/// # Safety
/// `mesh` must be null or valid. The pointer lives as long as the mesh.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_indices(mesh: *const PsdfMesh) -> *const u32 {
    mesh.as_ref().map_or(ptr::null(), |m| m.indices.as_ptr())
}

/// Writes the mesh as PLY, binary little-endian when `binary` is non-zero.
///
/// # Safety
/// `mesh` must be valid and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psdf_mesh_write_ply(
    mesh: *const PsdfMesh,
    path: *const c_char,
    binary: i32,
) -> PsdfStatus {
    guard(|| {
        let m = mesh.as_ref().ok_or_else(|| null("mesh"))?;
        let path = str_arg(path, "path")?;
        let format = if binary != 0 {
            PlyFormat::BinaryLittleEndian
        } else {
            PlyFormat::Ascii
        };
        m.mesh.write_ply(Path::new(path), format).map_err(lib_err)
    })
}
