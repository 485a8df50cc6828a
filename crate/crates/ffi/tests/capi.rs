use std::ffi::{CStr, CString};
use std::ptr;

use cdpinn_ffi::*;

fn last_error() -> String {
    let p = cdpinn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_net(dims: &[usize], seed: u64) -> *mut CdpinnNet {
    let mut net = ptr::null_mut();
    let st = unsafe { cdpinn_net_new(dims.as_ptr(), dims.len(), seed, &mut net) };
    assert_eq!(st, CdpinnStatus::Ok);
    assert!(!net.is_null());
    net
}

#[test]
fn net_lifecycle_and_text_round_trip() {
    let net = new_net(&[1, 4, 1], 7);
    unsafe {
        assert_eq!(cdpinn_net_num_params(net), 13);
        assert_eq!(cdpinn_net_input_dim(net), 1);
        let text = cdpinn_net_to_text(net);
        assert!(!text.is_null());
        let mut copy = ptr::null_mut();
        assert_eq!(cdpinn_net_from_text(text, &mut copy), CdpinnStatus::Ok);
        cdpinn_string_free(text);

        let x = [0.0, 0.25, 1.0];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        assert_eq!(cdpinn_net_forward(net, ptr::null(), ptr::null(), x.as_ptr(), 3, a.as_mut_ptr()), CdpinnStatus::Ok);
        assert_eq!(cdpinn_net_forward(copy, ptr::null(), ptr::null(), x.as_ptr(), 3, b.as_mut_ptr()), CdpinnStatus::Ok);
        assert_eq!(a, b);

        let (s, t) = (2.0, -1.0);
        let mut c = [0.0; 3];
        assert_eq!(cdpinn_net_forward(net, &s, &t, x.as_ptr(), 3, c.as_mut_ptr()), CdpinnStatus::Ok);
        let xt = [-2.0, -1.5, 0.0];
        let mut d = [0.0; 3];
        assert_eq!(cdpinn_net_forward(net, ptr::null(), ptr::null(), xt.as_ptr(), 3, d.as_mut_ptr()), CdpinnStatus::Ok);
        assert_eq!(c, d);

        cdpinn_net_free(copy);
        cdpinn_net_free(net);
        cdpinn_net_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut net = ptr::null_mut();
        let dims = [1usize, 0, 1];
        assert_ne!(cdpinn_net_new(dims.as_ptr(), 3, 0, &mut net), CdpinnStatus::Ok);
        assert!(net.is_null());

        assert_eq!(cdpinn_net_new(ptr::null(), 3, 0, &mut net), CdpinnStatus::NullPointer);
        assert!(last_error().contains("dims"));

        let bad = CString::new("dims = 1 x 1").unwrap();
        assert_eq!(cdpinn_net_from_text(bad.as_ptr(), &mut net), CdpinnStatus::Config);

        let mut buf = [0.0; 4];
        assert_eq!(cdpinn_fdm_solve(CdpinnProblem::Primary, 0.01, 32, buf.as_mut_ptr(), 4), CdpinnStatus::BufferTooSmall);
        assert!(last_error().contains("33"));
        assert_eq!(cdpinn_fdm_solve(CdpinnProblem::Primary, -1.0, 32, buf.as_mut_ptr(), 4), CdpinnStatus::Domain);
        assert!(cdpinn_net_to_text(ptr::null()).is_null());
    }
}

#[test]
fn fdm_matches_boundaries() {
    let mut u = vec![0.0; 33];
    let st = unsafe { cdpinn_fdm_solve(CdpinnProblem::Forced, 0.01, 32, u.as_mut_ptr(), u.len()) };
    assert_eq!(st, CdpinnStatus::Ok);
    assert_eq!(u[0], 0.0);
    assert_eq!(u[32], 0.0);
    assert!(u[16] > 0.0);
}

#[test]
fn kernel_handle() {
    let net = new_net(&[1, 10, 1], 3);
    unsafe {
        let mut k = ptr::null_mut();
        let (a, b) = (10.0, -1.0);
        assert_eq!(cdpinn_kernel_reduced(net, CdpinnProblem::Primary, 1e-4, &a, &b, 32, &mut k), CdpinnStatus::Ok);
        let n = cdpinn_kernel_size(k);
        assert_eq!(n, 33);
        let (mut tu, mut tr, mut c) = (0.0, 0.0, 0.0);
        assert_eq!(cdpinn_kernel_traces(k, &mut tu, &mut tr, &mut c), CdpinnStatus::Ok);
        assert!((c * n as f64 - (tu + tr)).abs() <= 1e-12 * (tu + tr));
        let mut ev = vec![0.0; n];
        assert_eq!(cdpinn_kernel_eigenvalues(k, ev.as_mut_ptr(), n), CdpinnStatus::Ok);
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        assert!(ev.iter().all(|&l| l >= 0.0));
        let sum: f64 = ev.iter().sum();
        assert!((sum - (tu + tr)).abs() <= 1e-8 * sum);
        let mut m = vec![0.0; n * n];
        assert_eq!(cdpinn_kernel_matrix(k, m.as_mut_ptr(), n * n), CdpinnStatus::Ok);
        assert_eq!(m[1], m[n]);
        cdpinn_kernel_free(k);
        cdpinn_net_free(net);
    }
}

#[test]
fn short_training_reports_loss() {
    let net = new_net(&[1, 5, 1], 1);
    unsafe {
        let mut loss = f64::NAN;
        let mut label = CdpinnLabel::Accurate;
        let st = cdpinn_train_reduced(net, CdpinnProblem::Primary, 0.1, ptr::null(), ptr::null(), 32, 50, 5, &mut loss, &mut label);
        assert_eq!(st, CdpinnStatus::Ok);
        assert!(loss.is_finite() && loss >= 0.0);
        cdpinn_net_free(net);
    }
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cdpinn.h")).unwrap();
    for sym in [
        "CDPINN_H",
        "typedef struct CdpinnNet CdpinnNet;",
        "typedef struct CdpinnKernel CdpinnKernel;",
        "CDPINN_STATUS_OK = 0",
        "cdpinn_last_error",
        "cdpinn_net_new",
        "cdpinn_kernel_eigenvalues",
        "cdpinn_train_reduced",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}
