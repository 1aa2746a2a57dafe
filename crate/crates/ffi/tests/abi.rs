use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use quadnls_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { qn_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    assert!(n >= bytes.len());
    String::from_utf8(bytes).unwrap()
}

fn solve(n: u32, r_max: f64, nodes: u64) -> *mut QnGroundState {
    let mut gs = ptr::null_mut();
    let status = unsafe { qn_ground_state_solve(n, 0.5, r_max, nodes, &mut gs) };
    assert_eq!(status, QnStatus::Ok, "{}", last_error());
    assert!(!gs.is_null());
    gs
}

#[test]
fn ground_state_round_trip() {
    let gs = solve(5, 32.0, 512);
    let mut info = QnGroundStateInfo::default();
    assert_eq!(unsafe { qn_ground_state_info(gs, &mut info) }, QnStatus::Ok);
    assert_eq!(info.n, 5);
    assert_eq!(info.num_nodes, 512);
    assert!((info.c_op * info.alpha1 - 1.0).abs() < 1e-6);
    assert!(info.pohozaev_residual < 1e-4);

    let len = info.num_nodes as usize;
    let (mut r, mut phi, mut psi) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let status = unsafe { qn_ground_state_profile(gs, r.as_mut_ptr(), phi.as_mut_ptr(), psi.as_mut_ptr(), len as u64) };
    assert_eq!(status, QnStatus::Ok);
    assert!(r.windows(2).all(|w| w[1] > w[0]));
    assert!(phi[0] > 0.0 && psi[0] > 0.0);
    assert!(phi.windows(2).all(|w| w[1] <= w[0]));

    let status = unsafe { qn_ground_state_profile(gs, r.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 7) };
    assert_eq!(status, QnStatus::InvalidArgument);
    assert!(last_error().contains("nodes"));

    let mut th = QnThresholds::default();
    assert_eq!(unsafe { qn_thresholds(gs, info.q, &mut th) }, QnStatus::Ok);
    assert!(th.eq_star > 0.0 && th.kq_star > 0.0);
    unsafe { qn_ground_state_free(gs) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut gs = ptr::null_mut();
    let status = unsafe { qn_ground_state_solve(6, 0.5, 32.0, 256, &mut gs) };
    assert_eq!(status, QnStatus::UnsupportedDimension);
    assert!(gs.is_null());
    assert!(last_error().contains("n = 6"));

    assert_eq!(
        unsafe { qn_ground_state_solve(5, 0.5, 32.0, 256, ptr::null_mut()) },
        QnStatus::NullPointer
    );
    assert_eq!(
        unsafe { qn_ground_state_solve(5, -1.0, 32.0, 256, &mut gs) },
        QnStatus::InvalidArgument
    );

    let mut info = QnGroundStateInfo::default();
    assert_eq!(
        unsafe { qn_ground_state_info(ptr::null(), &mut info) },
        QnStatus::NullPointer
    );

    // A success clears the previous message.
    let gs = solve(3, 32.0, 256);
    assert_eq!(last_error(), "");
    let mut th = QnThresholds::default();
    assert_eq!(unsafe { qn_thresholds(gs, 1.0, &mut th) }, QnStatus::InvalidArgument);
    unsafe { qn_ground_state_free(gs) };
    unsafe { qn_ground_state_free(ptr::null_mut()) };
}

#[test]
fn dichotomy_sides() {
    let gs = solve(5, 32.0, 512);
    let run = |scale: f64| {
        let mut out = QnDichotomyResult {
            eq_ratio: 0.0,
            kq_ratio: 0.0,
            classification: QnClassification::Indeterminate,
            verdict: QnVerdict::NotRun,
            consistency: QnConsistency::NotRun,
            t_detect: 0.0,
            q_drift: 0.0,
            e_drift: 0.0,
        };
        let status = unsafe { qn_dichotomy_scaled(gs, scale, 2e-3, 0.05, 1024, &mut out) };
        assert_eq!(status, QnStatus::Ok, "{}", last_error());
        out
    };
    let below = run(0.9);
    assert_eq!(below.classification, QnClassification::Global);
    assert!(below.kq_ratio < 1.0);
    assert!(below.q_drift < 1e-8);
    let above = run(1.1);
    assert_eq!(above.classification, QnClassification::BlowupCandidate);
    assert!(above.kq_ratio > 1.0);
    unsafe { qn_ground_state_free(gs) };
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cmd = CString::new("ground-state").unwrap();
    let cfg = CString::new(r#"{"grid": {"n": 4, "num_nodes": 512}}"#).unwrap();
    let status = unsafe { qn_run(cmd.as_ptr(), cfg.as_ptr(), out.as_ptr()) };
    assert_eq!(status, QnStatus::Ok, "{}", last_error());
    assert!(dir.path().join("ground_state.json").exists());
    assert!(dir.path().join("ground_state.csv").exists());

    let bad = CString::new(r#"{"grid": {"n": "five"}}"#).unwrap();
    assert_eq!(
        unsafe { qn_run(cmd.as_ptr(), bad.as_ptr(), out.as_ptr()) },
        QnStatus::Config
    );
    assert!(last_error().contains("grid.n"));

    let unknown = CString::new("plot").unwrap();
    assert_eq!(
        unsafe { qn_run(unknown.as_ptr(), ptr::null(), out.as_ptr()) },
        QnStatus::InvalidArgument
    );
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/quadnls.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "qn_ground_state_solve",
        "qn_ground_state_free",
        "qn_ground_state_info",
        "qn_ground_state_profile",
        "qn_thresholds",
        "qn_dichotomy_scaled",
        "qn_run",
        "qn_last_error_message",
        "QN_STATUS_OK",
        "typedef struct QnGroundState QnGroundState;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint f(void) {{ QnGroundState *g = 0; return (int)qn_ground_state_solve(5, 0.5, 32.0, 64, &g); }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; header only checked textually"),
    }
}
