use dynaconf::synthetic::{generate, oracle_forecast, spectral_radius, ProcessKind, SyntheticSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gen(kind: ProcessKind, seed: u64) -> dynaconf::synthetic::GeneratedSeries {
    generate(&SyntheticSpec::new(kind), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn regimes_hold_coefficients_fixed(seed in 0u64..10_000, ix in 0usize..3) {
        let kind = [ProcessKind::Ar1Flip, ProcessKind::Ar1Dynamic, ProcessKind::Var1Dynamic][ix];
        let g = gen(kind, seed);
        prop_assert_eq!(g.series.len(), 2500);
        let regime = g.spec.regime();
        for r in 1..g.coefficients.len() {
            if r % regime != 0 {
                prop_assert_eq!(&g.coefficients[r], &g.coefficients[r - 1]);
            }
        }
        for w in &g.coefficients {
            prop_assert!(spectral_radius(w) < 1.0);
        }
    }
}

#[test]
fn processes_parse_by_name() {
    for kind in [
        ProcessKind::Ar1Flip,
        ProcessKind::Ar1Dynamic,
        ProcessKind::Ar1Sin,
        ProcessKind::Var1Dynamic,
    ] {
        assert_eq!(ProcessKind::parse(kind.name()), Some(kind));
    }
    assert_eq!(ProcessKind::parse("nope"), None);
}

#[test]
fn oracle_one_step_is_the_true_conditional() {
    let g = gen(ProcessKind::Ar1Sin, 4);
    let origin = 1700;
    let block = oracle_forecast(&g, origin, 1, 40_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let s = block.marginal(0, 0);
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let expect = g.coefficients[origin].item() * g.series.y.get(origin - 1, 0);
    assert!((m - expect).abs() < 0.02, "{m} vs {expect}");
    assert!((v - 1.0).abs() < 0.03, "{v}");
    assert!(oracle_forecast(&g, 0, 1, 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    assert!(oracle_forecast(&g, 2500, 1, 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn lengths_and_regimes_are_configurable() {
    let spec = SyntheticSpec {
        length: 120,
        regime_length: Some(30),
        ..SyntheticSpec::new(ProcessKind::Ar1Dynamic)
    };
    let g = generate(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(g.series.len(), 120);
    let distinct = g.coefficients.windows(2).filter(|w| w[0] != w[1]).count();
    assert!(distinct <= 3);
    let bad = SyntheticSpec {
        length: 0,
        ..SyntheticSpec::new(ProcessKind::Ar1Flip)
    };
    assert!(generate(&bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
