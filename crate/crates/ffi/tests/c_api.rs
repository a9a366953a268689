use std::ffi::CStr;
use std::ptr;

use hdb_ffi::*;

fn reference_model() -> *mut HdbModel {
    let mut m = ptr::null_mut();
    let s = unsafe { hdb_model_new(0.05, -0.5, 10.0, 0.05, 0.5, 0.5, &mut m) };
    assert_eq!(s, HdbStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = hdb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn benchmark_through_the_c_api() {
    let m = reference_model();
    let mut v = 0.0;
    assert_eq!(unsafe { hdb_benchmark(m, &mut v) }, HdbStatus::Ok);
    assert!((v - 2.074842).abs() < 5e-6, "{v}");
    unsafe { hdb_model_free(m) };
}

#[test]
fn invalid_parameters_are_reported() {
    let mut m = ptr::null_mut();
    let s = unsafe { hdb_model_new(0.05, 1.5, 10.0, 0.05, 0.5, 0.5, &mut m) };
    assert_eq!(s, HdbStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("model.rho"));

    let m = reference_model();
    assert_eq!(
        unsafe { hdb_model_set_power(m, 1.5) },
        HdbStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { hdb_model_set_simulation(m, 0, 10, 1, 0) },
        HdbStatus::InvalidArgument
    );
    // power utility is not a constant-volatility benchmark case
    assert_eq!(unsafe { hdb_model_set_nonhara(m) }, HdbStatus::Ok);
    let mut v = 0.0;
    assert_eq!(unsafe { hdb_benchmark(m, &mut v) }, HdbStatus::Unsupported);
    unsafe { hdb_model_free(m) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { hdb_benchmark(ptr::null(), &mut v) },
        HdbStatus::NullPointer
    );
    assert!(last_error().contains("model"));
    let m = reference_model();
    assert_eq!(
        unsafe { hdb_benchmark(m, ptr::null_mut()) },
        HdbStatus::NullPointer
    );
    let status = unsafe {
        hdb_bounds(
            m,
            HdbFamily::TimesSqrtV,
            ptr::null(),
            1,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HdbStatus::NullPointer);
    unsafe {
        hdb_model_free(m);
        hdb_model_free(ptr::null_mut());
        hdb_report_free(ptr::null_mut());
    }
}

#[test]
fn single_control_bounds() {
    let m = reference_model();
    let c = [0.0];
    let (mut lb, mut lb_se, mut ub, mut ub_se) = (0.0, 1.0, 0.0, 1.0);
    let s = unsafe {
        hdb_bounds(
            m,
            HdbFamily::TimesSqrtV,
            c.as_ptr(),
            1,
            &mut lb,
            &mut lb_se,
            &mut ub,
            &mut ub_se,
        )
    };
    assert_eq!(s, HdbStatus::Ok);
    assert!((lb - 2.074842060).abs() < 1e-6);
    assert!((ub - 2.074844628).abs() < 1e-6);
    assert_eq!((lb_se, ub_se), (0.0, 0.0));
    unsafe { hdb_model_free(m) };
}

#[test]
fn optimize_and_read_report() {
    let m = reference_model();
    let mut r = ptr::null_mut();
    assert_eq!(
        unsafe { hdb_optimize(m, HdbFamily::TimesSqrtV, 5, -0.5, 0.5, 1, &mut r) },
        HdbStatus::Ok
    );
    let mut n = 0;
    assert_eq!(unsafe { hdb_report_len(r, &mut n) }, HdbStatus::Ok);
    assert_eq!(n, 5);
    let mut row = HdbRow {
        lb: 0.0,
        lb_se: 0.0,
        ub: 0.0,
        ub_se: 0.0,
        pieces: 0,
        failed: 0,
    };
    assert_eq!(unsafe { hdb_report_row(r, 2, &mut row) }, HdbStatus::Ok);
    assert_eq!((row.pieces, row.failed), (1, 0));
    assert!(row.lb <= row.ub);
    let mut c = [9.0];
    assert_eq!(
        unsafe { hdb_report_coefficients(r, 2, c.as_mut_ptr(), 1) },
        HdbStatus::Ok
    );
    assert_eq!(c[0], 0.0);
    let (mut lb, mut li, mut ub, mut ui) = (0.0, 0, 0.0, 0);
    assert_eq!(
        unsafe { hdb_report_tight(r, &mut lb, &mut li, &mut ub, &mut ui) },
        HdbStatus::Ok
    );
    assert_eq!(ui, 2);
    assert!(lb <= 2.074842060 + 1e-9 && ub >= 2.074842060 - 1e-9);
    assert_eq!(
        unsafe { hdb_report_row(r, 7, &mut row) },
        HdbStatus::InvalidArgument
    );
    unsafe {
        hdb_report_free(r);
        hdb_model_free(m);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/hdb.h")).unwrap();
    for name in [
        "hdb_model_new",
        "hdb_model_free",
        "hdb_benchmark",
        "hdb_bounds",
        "hdb_optimize",
        "hdb_report_row",
        "hdb_report_free",
        "hdb_last_error",
        "HDB_STATUS_NUMERICAL",
        "typedef struct HdbModel HdbModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hdb.h\"\nint main(void) { HdbModel *m = 0; double v;\n\
         if (hdb_model_new(0.05, -0.5, 10, 0.05, 0.5, 0.5, &m) != HDB_STATUS_OK) return 1;\n\
         hdb_benchmark(m, &v); hdb_model_free(m); return 0; }\n",
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; header syntax not checked");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
