use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use psdf_ffi::*;

fn wall_intrinsics() -> PsdfIntrinsics {
    PsdfIntrinsics {
        width: 64,
        height: 48,
        fx: 52.5,
        fy: 52.5,
        cx: 31.5,
        cy: 23.5,
    }
}

fn identity_pose() -> PsdfPose {
    PsdfPose {
        tx: 0.0,
        ty: 0.0,
        tz: 0.0,
        qx: 0.0,
        qy: 0.0,
        qz: 0.0,
        qw: 1.0,
    }
}

fn last_error() -> String {
    let p = psdf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn wall_roundtrip_through_c_api() {
    let intr = wall_intrinsics();
    let depth = vec![1.0f32; (intr.width * intr.height) as usize];
    let pose = identity_pose();
    let mut rec = ptr::null_mut();
    unsafe {
        assert_eq!(
            psdf_reconstructor_new(ptr::null(), &mut rec),
            PsdfStatus::Ok
        );
        assert!(psdf_last_error_message().is_null());
        for i in 0..3 {
            let st =
                psdf_reconstructor_integrate(rec, depth.as_ptr(), &intr, &pose, i as f64 / 30.0);
            assert_eq!(st, PsdfStatus::Ok);
        }
        assert_eq!(psdf_reconstructor_frame_count(rec), 3);
        assert!(psdf_reconstructor_block_count(rec) > 0);
        let rho = psdf_reconstructor_last_mean_rho(rec);
        assert!(rho > 0.1 && rho <= 1.0, "rho = {rho}");

        let mut mesh = ptr::null_mut();
        assert_eq!(psdf_reconstructor_extract(rec, &mut mesh), PsdfStatus::Ok);
        let nv = psdf_mesh_vertex_count(mesh);
        let nt = psdf_mesh_triangle_count(mesh);
        assert!(nv > 0 && nt > 0);
        let pos = std::slice::from_raw_parts(psdf_mesh_positions(mesh), 3 * nv);
        let nrm = std::slice::from_raw_parts(psdf_mesh_normals(mesh), 3 * nv);
        let conf = std::slice::from_raw_parts(psdf_mesh_confidence(mesh), nv);
        let idx = std::slice::from_raw_parts(psdf_mesh_indices(mesh), 3 * nt);
        for v in 0..nv {
            assert!(
                (pos[3 * v + 2] - 1.0).abs() < 2e-3,
                "z = {}",
                pos[3 * v + 2]
            );
            let n = &nrm[3 * v..3 * v + 3];
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-9);
            assert!(conf[v] > 0.4);
        }
        assert!(idx.iter().all(|&i| (i as usize) < nv));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wall.ply");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(psdf_mesh_write_ply(mesh, cpath.as_ptr(), 1), PsdfStatus::Ok);
        let read = psdf::extraction::PlyMesh::read(&path).unwrap();
        assert_eq!(read.positions.len(), nv);
        assert_eq!(read.triangles.len(), nt);

        psdf_mesh_free(mesh);
        psdf_reconstructor_free(rec);
    }
}

#[test]
fn null_and_invalid_arguments_report_errors() {
    let intr = wall_intrinsics();
    let pose = identity_pose();
    unsafe {
        assert_eq!(
            psdf_reconstructor_new(ptr::null(), ptr::null_mut()),
            PsdfStatus::NullPointer
        );
        assert!(last_error().contains("out"));

        let mut rec = ptr::null_mut();
        let bad = CString::new(r#"{"voxel_size": -1.0}"#).unwrap();
        assert_eq!(
            psdf_reconstructor_new(bad.as_ptr(), &mut rec),
            PsdfStatus::InvalidConfig
        );
        assert!(rec.is_null());
        assert!(last_error().contains("voxel"));

        let unknown = CString::new(r#"{"no_such_key": 1}"#).unwrap();
        assert_eq!(
            psdf_reconstructor_new(unknown.as_ptr(), &mut rec),
            PsdfStatus::InvalidConfig
        );

        let cfg = CString::new(r#"{"voxel_size": 0.01, "mode": "tsdf"}"#).unwrap();
        assert_eq!(
            psdf_reconstructor_new(cfg.as_ptr(), &mut rec),
            PsdfStatus::Ok
        );
        assert_eq!(
            psdf_reconstructor_integrate(rec, ptr::null(), &intr, &pose, 0.0),
            PsdfStatus::NullPointer
        );
        let depth = vec![1.0f32; (intr.width * intr.height) as usize];
        let zero_q = PsdfPose { qw: 0.0, ..pose };
        assert_eq!(
            psdf_reconstructor_integrate(rec, depth.as_ptr(), &intr, &zero_q, 0.0),
            PsdfStatus::InvalidArgument
        );
        let bad_intr = PsdfIntrinsics { fx: 0.0, ..intr };
        assert_eq!(
            psdf_reconstructor_integrate(rec, depth.as_ptr(), &bad_intr, &pose, 0.0),
            PsdfStatus::InvalidFrame
        );
        assert_eq!(psdf_reconstructor_frame_count(rec), 0);
        assert!(psdf_reconstructor_last_mean_rho(rec).is_nan());

        let mut mesh = ptr::null_mut();
        assert_eq!(psdf_reconstructor_extract(rec, &mut mesh), PsdfStatus::Ok);
        assert_eq!(psdf_mesh_vertex_count(mesh), 0);
        let dir = tempfile::tempdir().unwrap();
        let missing = CString::new(dir.path().join("no/such/dir/m.ply").to_str().unwrap()).unwrap();
        assert_eq!(
            psdf_mesh_write_ply(mesh, missing.as_ptr(), 0),
            PsdfStatus::Io
        );
        psdf_mesh_free(mesh);
        psdf_reconstructor_free(rec);

        psdf_mesh_free(ptr::null_mut());
        psdf_reconstructor_free(ptr::null_mut());
        assert_eq!(psdf_mesh_vertex_count(ptr::null()), 0);
        assert!(psdf_mesh_positions(ptr::null()).is_null());
    }
}

#[test]
fn status_strings_and_version() {
    let s = unsafe { CStr::from_ptr(psdf_status_string(PsdfStatus::EmptyMesh)) };
    assert_eq!(s.to_str().unwrap(), "empty mesh");
    let v = unsafe { CStr::from_ptr(psdf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/psdf.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<_> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap().to_string())
        .collect();
    assert!(exports.len() >= 15);
    for name in &exports {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    // Syntax check with the system C compiler when one is present.
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
