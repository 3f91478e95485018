use slipgait_demo::{gait_curves, spectrum, walk};

#[test]
fn controlled_walk_outlasts_open_loop() {
    let c = walk("controlled", 12, 1.0, 100.0).unwrap();
    let o = walk("open-loop", 12, 1.0, 100.0).unwrap();
    assert_eq!(c.successful_steps, 12);
    assert!(c.failure.is_none());
    assert!(o.successful_steps < 12 && o.failure.is_some());
    assert_eq!(c.poses.len(), c.hip.len());
    // Hip of each pose agrees with the hip path.
    for (pose, hip) in c.poses.iter().zip(&c.hip) {
        assert!((pose[0][0] - hip[1]).abs() < 1e-12 && (pose[0][1] - hip[2]).abs() < 1e-12);
    }
    let json = serde_json::to_value(&c).unwrap();
    assert_eq!(json["steps"].as_array().unwrap().len(), 12);
}

#[test]
fn walk_rejects_bad_input() {
    assert!(walk("sideways", 3, 1.0, 100.0).is_err());
    assert!(walk("controlled", 3, 1.0, -1.0).is_err());
    assert!(walk("controlled", 1000, 1.0, 100.0).is_err());
}

#[test]
fn scalar_gain_spectrum() {
    let s = spectrum(20.0, 100.0, 20.0).unwrap();
    assert!(s.hurwitz);
    assert_eq!(s.eigenvalues.len(), 13);
    // Critically damped pairs at -10 and the slip pole at -20.
    assert!((s.slowest_rate - 10.0).abs() < 1e-6);
    assert!(spectrum(0.0, 100.0, 20.0).is_err());
}

#[test]
fn gait_curves_start_and_end_on_the_gait() {
    let g = gait_curves(51).unwrap();
    assert_eq!(g.theta.len(), 51);
    assert_eq!(g.outputs.len(), 6);
    assert_eq!(g.labels.len(), 6);
    // Stance-foot height output is identically zero.
    assert!(g.outputs[0].iter().all(|v| v.abs() < 1e-12));
    // Legs exchange roles across the step.
    let (first, last) = (0, 50);
    assert!((g.outputs[2][first] - g.outputs[4][last]).abs() < 1e-9);
}
