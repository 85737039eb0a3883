mod common;

use common::*;

#[test]
fn signed_surrogate_partials_match_finite_differences() {
    let st = check_signed(200, 11);
    assert!(st.passed(), "{st:?}");
}

#[test]
fn unsigned_surrogate_partials_match_finite_differences() {
    let st = check_unsigned(200, 12);
    assert!(st.passed(), "{st:?}");
}

#[test]
fn log_surrogate_slope_matches_finite_differences() {
    let st = check_log(200, 13);
    assert!(st.passed(), "{st:?}");
}

#[test]
fn network_op_gradients_match_finite_differences() {
    let st = check_network(120, 14);
    assert!(st.trials >= 100);
    assert!(st.passed(), "{st:?}");
}
