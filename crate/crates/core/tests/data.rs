use dynaconf::data::{dequantize, standardize, winsorize, StandardizeMode};
use dynaconf::metrics::quantile_sorted;
use dynaconf::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn column(rows: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-1e3f64..1e3, rows * 2).prop_map(move |v| Tensor::new(rows, 2, v))
}

proptest! {
    #[test]
    fn standardize_round_trips(y in column(40), window in 2usize..15, mode_ix in 0usize..3) {
        let mode = [StandardizeMode::None, StandardizeMode::Global, StandardizeMode::Moving][mode_ix];
        let (z, st) = standardize(&y, mode, window, 30).unwrap();
        let back = st.inverse(&z);
        for (a, b) in back.data().iter().zip(y.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for r in 0..y.rows() {
            for d in 0..2 {
                prop_assert_eq!(st.inverse_at(r, d, z.get(r, d)), back.get(r, d));
            }
        }
    }

    #[test]
    fn moving_standardizer_ignores_the_future(y in column(30), window in 2usize..10, cut in 5usize..30) {
        let (_, full) = standardize(&y, StandardizeMode::Moving, window, 0).unwrap();
        let head = Tensor::new(cut, 2, y.data()[..cut * 2].to_vec());
        let (_, part) = standardize(&head, StandardizeMode::Moving, window, 0).unwrap();
        prop_assert_eq!(&full.shift.data()[..cut * 2], part.shift.data());
        prop_assert_eq!(&full.scale.data()[..cut * 2], part.scale.data());
    }

    #[test]
    fn dequantize_stays_within_half_unit(vals in prop::collection::vec(-50i32..50, 1..200), seed in 0u64..1000) {
        let y = Tensor::new(vals.len(), 1, vals.iter().map(|&v| v as f64).collect());
        let d = dequantize(&y, &mut ChaCha8Rng::seed_from_u64(seed));
        for (a, b) in d.data().iter().zip(y.data()) {
            prop_assert!((a - b).abs() <= 0.5);
        }
    }

    #[test]
    fn winsorize_clamps_to_past_quantiles(y in column(30), lo in 0.0f64..0.5, width in 0.0f64..0.5, window in 1usize..12) {
        let hi = lo + width;
        let w = winsorize(&y, lo, hi, window).unwrap();
        prop_assert_eq!(w.row_slice(0), y.row_slice(0));
        for r in 1..y.rows() {
            for d in 0..2 {
                let mut past: Vec<f64> = (r.saturating_sub(window)..r).map(|k| y.get(k, d)).collect();
                past.sort_by(f64::total_cmp);
                let v = w.get(r, d);
                prop_assert!(v >= quantile_sorted(&past, lo) && v <= quantile_sorted(&past, hi));
                // only values outside the band move
                if v != y.get(r, d) {
                    prop_assert!(v == quantile_sorted(&past, lo) || v == quantile_sorted(&past, hi));
                }
            }
        }
    }

    #[test]
    fn winsorize_is_monotone_in_the_current_value(y in column(20), bump in 0.0f64..100.0) {
        let r = 19;
        let mut up = y.clone();
        up.set(r, 0, y.get(r, 0) + bump);
        let a = winsorize(&y, 0.1, 0.9, 8).unwrap();
        let b = winsorize(&up, 0.1, 0.9, 8).unwrap();
        prop_assert!(b.get(r, 0) >= a.get(r, 0));
    }
}

#[test]
fn dequantize_noise_has_zero_mean() {
    let y = Tensor::full(20_000, 1, 4.0);
    let d = dequantize(&y, &mut ChaCha8Rng::seed_from_u64(9));
    let m = d.data().iter().map(|v| v - 4.0).sum::<f64>() / 20_000.0;
    // sd of the mean is 0.289 / sqrt(20000) = 0.002
    assert!(m.abs() < 0.008, "{m}");
}

#[test]
fn invalid_settings_are_rejected() {
    let y = Tensor::full(10, 1, 1.0);
    assert!(standardize(&y, StandardizeMode::Moving, 1, 0).is_err());
    assert!(standardize(&y, StandardizeMode::Global, 0, 0).is_err());
    assert!(winsorize(&y, 0.9, 0.1, 5).is_err());
    assert!(winsorize(&y, 0.1, 0.9, 0).is_err());
}
