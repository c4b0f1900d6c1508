use fossa::experiment::{SeedRun, Settings};
use fossa::geometry::WeightedGraph;
use fossa::importance::HvpMode;
use fossa::impute::{impute, partition, ImputationConfig};
use fossa::selection::Strategy;
use proptest::prelude::*;

fn tiny() -> Settings {
    let mut s = Settings::default();
    s.benchmark.heart_nodes = 16;
    s.benchmark.body_nodes = 20;
    s.hidden = vec![4];
    s.n_collocation = 32;
    s.pretrain_iters = 50;
    s.train.max_iters = 150;
    s.retrain_iters = Some(40);
    s.hvp.mode = HvpMode::Assembled;
    s.hvp.damping = 0.1;
    s.imputation.tau = 0.2;
    s.require_optimality = false;
    s
}

#[test]
fn seed_run_end_to_end() {
    let settings = tiny();
    let run = SeedRun::prepare(&settings, 0).unwrap();
    let n = run.problem.n_sensors();
    assert_eq!(n, 20);

    let imputed = &run.refined.imputed;
    assert_eq!(imputed.s_tilde.len(), n);
    for i in 0..n {
        assert!(imputed.s_tilde[i].is_finite());
        if imputed.trusted_mask[i] {
            assert_eq!(imputed.s_tilde[i].to_bits(), run.scores.s[i].to_bits());
        }
    }
    for c in &run.refined.confidence.c {
        assert!((0.0..=1.0).contains(c));
    }

    let pick = run.select(Strategy::FossaTopk, 5, 0).unwrap();
    assert_eq!(pick.len(), 5);
    let min_picked = pick.iter().map(|&i| imputed.s_tilde[i]).fold(f64::INFINITY, f64::min);
    let beaten = (0..n).filter(|i| !pick.contains(i) && imputed.s_tilde[*i] > min_picked).count();
    assert_eq!(beaten, 0);

    let re = run.evaluate(&settings, &pick).unwrap();
    assert!(re.is_finite() && re > 0.0);

    // same seed, same numbers
    let again = SeedRun::prepare(&settings, 0).unwrap();
    assert_eq!(again.refined.imputed.s_tilde, imputed.s_tilde);
}

proptest! {
    #[test]
    fn path_imputation_is_monotone_between_anchors(
        n in 3usize..40,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        // only the two ends trusted: the harmonic extension is the linear ramp
        let graph = WeightedGraph::path(n, 1.0).unwrap();
        let mut c = vec![0.0; n];
        c[0] = 1.0;
        c[n - 1] = 1.0;
        let mut s = vec![f64::NAN; n];
        s[0] = a;
        s[n - 1] = b;
        let part = partition(&c, 0.5).unwrap();
        let cfg = ImputationConfig { delta: 1e-10, max_iters: 200_000, ..Default::default() };
        let out = impute(&graph, &s, &part, &cfg).unwrap();
        // below about n^2 ulp the rounded sweep cycles instead of settling
        prop_assert!(out.converged);
        for (i, v) in out.s_tilde.iter().enumerate() {
            let ramp = a + (b - a) * i as f64 / (n - 1) as f64;
            prop_assert!((v - ramp).abs() < 1e-6, "node {}: {} vs {}", i, v, ramp);
        }
    }
}
