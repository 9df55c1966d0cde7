//! End-to-end exercise of the C surface from Rust.

use std::ffi::{CStr, CString};
use std::ptr;

use bargain_ffi::*;

const CONFIG: &str = r#"
[market]
payoffs = [1.0, 2.0]

[seller]
risk_level = 0.4
utility = { family = "exponential", risk_aversion = 2.0 }

[buyer]
risk_level = 0.3
utility = { family = "exponential", risk_aversion = 1.0 }

[anchors]
seller = [0.25, 0.75]
buyer = [0.75, 0.25]

[penalty]
epsilon = 0.1
lambda = 0.4

[dynamics]
alpha = 0.05
"#;

const PRICE_A0: f64 = 1.584_327_545_372_567_6;
const PRICE_B0: f64 = 1.434_375_325_224_621_2;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bargain_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn parse(text: &str) -> *mut BargainExperiment {
    let text = CString::new(text).unwrap();
    let mut handle = ptr::null_mut();
    let code = unsafe { bargain_experiment_parse(text.as_ptr(), &mut handle) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

#[test]
fn lifecycle_prices_trajectory_solve() {
    let handle = parse(CONFIG);
    assert_eq!(unsafe { bargain_experiment_k(handle) }, 2);

    let (mut price_a, mut price_b) = (0.0, 0.0);
    let code = unsafe { bargain_reservation_prices(handle, &mut price_a, &mut price_b) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert!((price_a - PRICE_A0).abs() < 1e-9);
    assert!((price_b - PRICE_B0).abs() < 1e-9);

    for (side, price) in [(BARGAIN_SIDE_SELLER, price_a), (BARGAIN_SIDE_BUYER, price_b)] {
        let (mut lo, mut hi) = (0.0, 0.0);
        let code = unsafe { bargain_price_bounds(handle, side, &mut lo, &mut hi) };
        assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
        assert!(lo < hi);
        assert!(lo <= price && price <= hi);
    }

    let mut feasible = -1;
    let code = unsafe { bargain_agreement_feasible(handle, &mut feasible) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(feasible, 1);

    let mut trajectory = ptr::null_mut();
    let code = unsafe { bargain_run_trajectory(handle, &mut trajectory) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(
        unsafe { bargain_trajectory_status(trajectory) },
        BARGAIN_TRAJECTORY_CONVERGED
    );
    assert_eq!(unsafe { bargain_trajectory_feasibility_warning(trajectory) }, 0);
    let rows = unsafe { bargain_trajectory_rows(trajectory) };
    assert!(rows >= 2);

    let mut first = BargainPeriod {
        t: 99,
        price_a: 0.0,
        price_b: 0.0,
        lyapunov: 0.0,
        delta_lyapunov: 1.0,
        boundary_violation: -1,
        solver_iters: 0,
    };
    let code = unsafe { bargain_trajectory_row(trajectory, 0, &mut first) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(first.t, 0);
    assert!((first.price_a - PRICE_A0).abs() < 1e-9);
    assert_eq!(first.delta_lyapunov, 0.0);

    let mut terminal = first;
    let code = unsafe { bargain_trajectory_row(trajectory, rows - 1, &mut terminal) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert!((terminal.price_a - terminal.price_b).abs() < 1e-6);

    let (mut q_a, mut q_b) = ([0.0; 2], [0.0; 2]);
    let code = unsafe {
        bargain_trajectory_beliefs(trajectory, 0, q_a.as_mut_ptr(), q_b.as_mut_ptr(), 2)
    };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(q_a, [0.25, 0.75]);
    assert_eq!(q_b, [0.75, 0.25]);

    let mut primal = BargainPrimal {
        price_star: 0.0,
        objective: 0.0,
        constraint_residual: 1.0,
        kkt_multiplier_estimate: 0.0,
        status: -1,
        uniqueness_guaranteed: -1,
    };
    let code = unsafe {
        bargain_solve_primal(handle, q_a.as_mut_ptr(), q_b.as_mut_ptr(), 2, &mut primal)
    };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(primal.status, BARGAIN_PRIMAL_OPTIMAL);
    assert_eq!(primal.uniqueness_guaranteed, 1);
    assert!(primal.constraint_residual < 1e-6);
    assert!(primal.price_star > PRICE_B0 && primal.price_star < PRICE_A0);
    assert!(primal.objective > 0.0);
    assert!((q_a[0] + q_a[1] - 1.0).abs() < 1e-9);
    assert!((q_b[0] + q_b[1] - 1.0).abs() < 1e-9);

    let mut price_star = 0.0;
    let code = unsafe { bargain_asymptotic_price(handle, &mut price_star) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert!(price_star > PRICE_B0 && price_star < PRICE_A0);
    assert!((price_star - terminal.price_a).abs() < 1e-6);

    unsafe {
        bargain_trajectory_free(trajectory);
        bargain_experiment_free(handle);
        bargain_trajectory_free(ptr::null_mut());
        bargain_experiment_free(ptr::null_mut());
    }
}

#[test]
fn error_paths_set_codes_and_messages() {
    let mut handle = ptr::null_mut();

    let bad = CString::new("this is not TOML").unwrap();
    let code = unsafe { bargain_experiment_parse(bad.as_ptr(), &mut handle) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let short = CONFIG.replace("seller = [0.25, 0.75]", "seller = [0.25, 0.65]");
    let short = CString::new(short).unwrap();
    let code = unsafe { bargain_experiment_parse(short.as_ptr(), &mut handle) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("anchors.seller"), "{}", last_error());

    let not_utf8 = CString::new([0xff, 0xfe]).unwrap();
    let code = unsafe { bargain_experiment_parse(not_utf8.as_ptr(), &mut handle) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("UTF-8"), "{}", last_error());

    let code = unsafe { bargain_experiment_parse(ptr::null(), &mut handle) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);

    let (mut price_a, mut price_b) = (0.0, 0.0);
    let code = unsafe { bargain_reservation_prices(ptr::null(), &mut price_a, &mut price_b) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("null"), "{}", last_error());

    let handle = parse(CONFIG);
    let (mut lo, mut hi) = (0.0, 0.0);
    let code = unsafe { bargain_price_bounds(handle, 7, &mut lo, &mut hi) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("side"), "{}", last_error());

    let code = unsafe { bargain_reservation_prices(handle, ptr::null_mut(), &mut price_b) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);

    let mut trajectory = ptr::null_mut();
    let code = unsafe { bargain_run_trajectory(handle, &mut trajectory) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    let rows = unsafe { bargain_trajectory_rows(trajectory) };

    let mut row = BargainPeriod {
        t: 0,
        price_a: 0.0,
        price_b: 0.0,
        lyapunov: 0.0,
        delta_lyapunov: 0.0,
        boundary_violation: 0,
        solver_iters: 0,
    };
    let code = unsafe { bargain_trajectory_row(trajectory, rows, &mut row) };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("out of range"), "{}", last_error());

    let (mut q_a, mut q_b) = ([0.0; 3], [0.0; 3]);
    let code = unsafe {
        bargain_trajectory_beliefs(trajectory, 0, q_a.as_mut_ptr(), q_b.as_mut_ptr(), 3)
    };
    assert_eq!(code, BARGAIN_STATUS_INVALID);
    assert!(last_error().contains("K = 2"), "{}", last_error());

    let mut primal = BargainPrimal {
        price_star: 0.0,
        objective: 0.0,
        constraint_residual: 0.0,
        kkt_multiplier_estimate: 0.0,
        status: 0,
        uniqueness_guaranteed: 0,
    };
    let code = unsafe {
        bargain_solve_primal(handle, q_a.as_mut_ptr(), q_b.as_mut_ptr(), 3, &mut primal)
    };
    assert_eq!(code, BARGAIN_STATUS_INVALID);

    assert_eq!(unsafe { bargain_trajectory_status(ptr::null()) }, -1);
    assert_eq!(unsafe { bargain_trajectory_rows(ptr::null()) }, 0);
    assert_eq!(unsafe { bargain_experiment_k(ptr::null()) }, 0);

    unsafe {
        bargain_trajectory_free(trajectory);
        bargain_experiment_free(handle);
    }
}

#[test]
fn infeasible_instance_reports_zero_flag() {
    // Risk slack beyond the payoff spread: feasibility is a clean negative,
    // not an error.
    let config = CONFIG.replace("risk_level = 0.4", "risk_level = 5.0");
    let handle = parse(&config);
    let mut feasible = -1;
    let code = unsafe { bargain_agreement_feasible(handle, &mut feasible) };
    assert_eq!(code, BARGAIN_STATUS_OK, "{}", last_error());
    assert_eq!(feasible, 0);
    unsafe { bargain_experiment_free(handle) };
}
