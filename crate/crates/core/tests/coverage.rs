use prosody_core::analysis::stats::{bootstrap_ci, mean, BootstrapOptions};
use prosody_core::rng;

#[test]
fn bootstrap_mean_interval_covers_zero() {
    let mut covered = 0;
    for run in 0..100u64 {
        let mut r = rng::substream(2024, run);
        let data: Vec<f64> = (0..1000).map(|_| rng::standard_normal(&mut r)).collect();
        let (lo, hi) = bootstrap_ci(&data, mean, BootstrapOptions { seed: run, ..Default::default() }).unwrap();
        assert!(lo < hi);
        covered += usize::from(lo <= 0.0 && 0.0 <= hi);
    }
    assert!(covered >= 93, "covered {covered}/100");
}
