//! Two-point dominated cycles with gamma^2 > lambda where the cyclic F- and
//! E-blocks differ. Values are checked by hand below with gamma = 0.8
//! (log -0.2231) and lambda = 0.5 (log -0.6931).

use pliss_lab::pliss::bi_pliss_check;

fn logs() -> (f64, f64) {
    (0.8f64.ln(), 0.5f64.ln())
}

#[test]
fn e_block_strictly_larger() {
    // domination: -0.60 - 0.15 and -0.35 - 0.35 are both <= -0.6931
    // F at 1: u_1 = -0.15 > log gamma, so 1 is not in pF; every e_i < log gamma
    let (lg, ll) = logs();
    let b = bi_pliss_check(&[-0.60, -0.35], &[-0.35, -0.15], lg, ll).unwrap();
    assert!(b.hypotheses);
    assert_eq!(b.pf.members(), &[0]);
    assert_eq!(b.pe.members(), &[0, 1]);
    assert!(!b.equal);
}

#[test]
fn f_block_strictly_larger() {
    // domination: -0.21 - 0.53 and -0.40 - 0.30 are both <= -0.6931
    // E at 0: e_0 = -0.21 > log gamma, so 0 is not in pE; every u_i < log gamma
    let (lg, ll) = logs();
    let b = bi_pliss_check(&[-0.21, -0.40], &[-0.30, -0.53], lg, ll).unwrap();
    assert!(b.hypotheses);
    assert_eq!(b.pf.members(), &[0, 1]);
    assert_eq!(b.pe.members(), &[1]);
    assert!(!b.equal);
}
