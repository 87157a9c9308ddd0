use pliss_lab::entropy::{pesin_check, ruelle_check, EntropyParams, GridPartition};
use pliss_lab::models::{Cat2, MapModel, Point, Solenoid, CAT_LAMBDA};

const ORBIT: usize = 10_000_000;

#[test]
fn cat2_entropy_matches_top_exponent() {
    let params = EntropyParams {
        n: ORBIT,
        partition: GridPartition::uniform(Cat2.manifold(), 32).unwrap(),
        block_max: 8,
        jitter_seed: Some(11),
        lyapunov_n: 10_000,
    };
    let x = Point::new(&[0.1234, 0.5678]);
    let p = pesin_check(&Cat2, &x, &params).unwrap();
    eprintln!("cat2 {p:?}");
    let h = CAT_LAMBDA.ln();
    assert!((p.h_est - h).abs() <= 0.05, "h_est {}", p.h_est);
    assert!(p.residual.abs() <= 0.05);
    assert!(p.monotone);
    let r = ruelle_check(&Cat2, &x, &params).unwrap();
    assert!(r.slack >= -0.05 && r.slack <= 0.05, "slack {}", r.slack);
}

#[test]
fn solenoid_entropy_is_log_two() {
    let m = Solenoid::default();
    let params = EntropyParams {
        n: ORBIT,
        partition: GridPartition::new(m.manifold(), vec![2, 1, 1]).unwrap(),
        block_max: 12,
        jitter_seed: Some(5),
        lyapunov_n: 10_000,
    };
    let x = Point::new(&[0.1234, 0.2, -0.1]);
    let p = pesin_check(&m, &x, &params).unwrap();
    eprintln!("solenoid {p:?}");
    assert!((p.h_est - 2f64.ln()).abs() <= 0.02, "h_est {}", p.h_est);
    assert!(p.residual.abs() <= 0.05);
    assert!(p.monotone);
    let r = ruelle_check(&m, &x, &params).unwrap();
    assert!(r.slack >= -0.05, "slack {}", r.slack);
}
