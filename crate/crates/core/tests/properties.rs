use std::path::Path;

use proptest::prelude::*;
use trimodal::fusion::{dlf_predict, FusionWeights};
use trimodal::metrics::Metrics;
use trimodal::traits::TraitVector;

fn trait_vector() -> impl Strategy<Value = TraitVector> {
    prop::array::uniform5(0.0..=1.0f64)
}

/// Rows with free first two entries and the third closing the sum.
fn weights() -> impl Strategy<Value = FusionWeights> {
    prop::array::uniform5((-2.0..3.0f64, -2.0..3.0f64)).prop_map(|rows| {
        FusionWeights::new(rows.map(|(a, b)| [a, b, 1.0 - a - b])).expect("rows sum to one")
    })
}

proptest! {
    #[test]
    fn fused_scores_stay_in_unit_interval(w in weights(), a in trait_vector(), t in trait_vector(), v in trait_vector()) {
        let out = dlf_predict(&w, &[a, t, v]).unwrap();
        prop_assert!(out.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn equal_channels_pass_through(w in weights(), p in trait_vector()) {
        let out = dlf_predict(&w, &[p, p, p]).unwrap();
        for (o, x) in out.iter().zip(&p) {
            prop_assert!((o - x).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_text_round_trip(w in weights()) {
        let back = FusionWeights::parse(&w.to_text(), Path::new("w.txt")).unwrap();
        for (r, s) in back.rows().iter().zip(w.rows()) {
            for (x, y) in r.iter().zip(s) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_mirrors_mae(pairs in prop::collection::vec((trait_vector(), trait_vector()), 1..20)) {
        let (p, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = Metrics::from_predictions(&p, &y).unwrap();
        for i in 0..5 {
            prop_assert!((m.accuracy[i] - (1.0 - m.mae[i])).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&m.mae[i]));
        }
        prop_assert!((m.mean_accuracy - (1.0 - m.mean_mae)).abs() < 1e-12);
        prop_assert!(m.mse <= m.mean_mae + 1e-12);
    }
}
