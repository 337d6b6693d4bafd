//! Monte Carlo calibration of the contextuality verdict.

use ctxaudit::cbd::CbdOptions;
use ctxaudit::simulate::{simulate, Scenario, SimulateOptions};

#[test]
fn detection_rate_grows_with_replicates() {
    let mut o = SimulateOptions::new(Scenario::DeltaC);
    o.grid = vec![50, 200, 800];
    o.replicates = 200;
    o.cbd.bootstrap_replicates = 0;
    let r = simulate(&o).unwrap();
    let rates: Vec<f64> = r.rows.iter().map(|row| row.rate).collect();
    assert!(r.monotone_nondecreasing, "{rates:?}");
    assert!(rates[2] > 0.95, "{rates:?}");
}

#[test]
fn null_false_positive_rate_with_gate() {
    let mut o = SimulateOptions::new(Scenario::Null);
    o.grid = vec![200];
    o.replicates = 200;
    o.seed = 3;
    o.cbd = CbdOptions {
        tolerance: 0.0,
        ci_gate: true,
        bootstrap_replicates: 500,
        ..CbdOptions::default()
    };
    let r = simulate(&o).unwrap();
    assert!(r.rows[0].rate <= 0.07, "{:?}", r.rows[0]);
}

#[test]
fn null_without_gate_is_not_calibrated() {
    // the raw sign test has no sampling guard, so it flags noise often
    let mut o = SimulateOptions::new(Scenario::Null);
    o.grid = vec![200];
    o.replicates = 100;
    o.cbd.bootstrap_replicates = 0;
    let raw = simulate(&o).unwrap().rows[0].rate;
    assert!(raw > 0.07, "{raw}");
}

#[test]
fn stereotype_and_repeater_signatures() {
    let mut o = SimulateOptions::new(Scenario::Stereotype);
    o.grid = vec![100];
    o.replicates = 5;
    o.n_pairs = 40;
    assert_eq!(simulate(&o).unwrap().rows[0].detections, 5);

    let mut o = SimulateOptions::new(Scenario::Repeater);
    o.grid = vec![50];
    o.replicates = 3;
    o.n_pairs = 10;
    assert_eq!(simulate(&o).unwrap().rows[0].detections, 3);
}
