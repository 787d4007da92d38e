//! Finite differences for every trainable module over twenty seeds.

use std::time::Instant;

use emoc_core::gradsuite::{check_joint_gradients, check_mapping_gradients, MODULES};

#[test]
fn every_module_passes_over_twenty_seeds() {
    let start = Instant::now();
    let mut worst = vec![0.0f64; MODULES.len() + 1];
    for seed in 0..20 {
        let mut reports = check_joint_gradients(seed).unwrap();
        reports.push(check_mapping_gradients(seed).unwrap());
        for (w, r) in worst.iter_mut().zip(&reports) {
            assert!(r.report.pass, "{} at seed {seed}: {:?}", r.module, r.report);
            assert!(r.report.checked > 0);
            *w = w.max(r.report.max_rel_err);
        }
    }
    println!(
        "worst relative errors {worst:?} in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    assert!(start.elapsed().as_secs() < 60);
}
