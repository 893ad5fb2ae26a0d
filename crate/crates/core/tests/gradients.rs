use fedsched::model::{ClientDataset, LossKind, LossModel, ParamVector};
use proptest::prelude::*;

fn dataset(rows: &[(Vec<f64>, bool)]) -> ClientDataset {
    let features: Vec<Vec<f64>> = rows.iter().map(|(x, _)| x.clone()).collect();
    let labels = rows.iter().map(|(_, y)| f64::from(u8::from(*y))).collect();
    ClientDataset::from_rows(&features, labels).unwrap()
}

fn central_difference(model: &LossModel, w: &ParamVector, data: &ClientDataset, j: usize) -> f64 {
    let h = 1e-6;
    let mut plus = w.clone().into_inner();
    let mut minus = plus.clone();
    plus[j] += h;
    minus[j] -= h;
    let fp = model.loss(&ParamVector::new(plus), data).unwrap();
    let fm = model.loss(&ParamVector::new(minus), data).unwrap();
    (fp - fm) / (2.0 * h)
}

const DIM: usize = 4;

fn kind() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::LogLoss),
        Just(LossKind::Hinge),
        Just(LossKind::MeanSquaredError)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn gradient_matches_finite_differences(
        kind in kind(),
        l2 in prop_oneof![Just(0.0), 0.0..0.5f64],
        rows in prop::collection::vec((prop::collection::vec(-2.0..2.0f64, DIM), any::<bool>()), 1..12),
        w in prop::collection::vec(-1.5..1.5f64, DIM),
    ) {
        let model = LossModel::with_l2(kind, l2).unwrap();
        let data = dataset(&rows);
        let w = ParamVector::new(w);
        // hinge is not differentiable on the margin; skip points within FD reach of it
        if kind == LossKind::Hinge {
            let near_kink = data.rows().zip(data.labels()).any(|(x, &y)| {
                let z: f64 = x.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
                ((2.0 * y - 1.0) * z - 1.0).abs() < 1e-4
            });
            prop_assume!(!near_kink);
        }
        let g = model.gradient(&w, &data).unwrap();
        for j in 0..DIM {
            let fd = central_difference(&model, &w, &data, j);
            prop_assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "coord {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn losses_are_finite_and_nonnegative(
        kind in kind(),
        rows in prop::collection::vec((prop::collection::vec(-50.0..50.0f64, DIM), any::<bool>()), 1..8),
        w in prop::collection::vec(-20.0..20.0f64, DIM),
    ) {
        let model = LossModel::new(kind);
        let loss = model.loss(&ParamVector::new(w), &dataset(&rows)).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}
