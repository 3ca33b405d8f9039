use std::path::PathBuf;

use choice_lab::experiment::{load_tabular, TabularSchema};
use choice_lab::interpret::market_share;
use choice_lab::metrics::prediction_loss;
use choice_lab::{train_erm, MlpArch, TrainConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn nhts_like_sample_loads_and_splits() {
    let schema = TabularSchema::load(fixture("nhts_like_schema.toml")).unwrap();
    let data = load_tabular(fixture("nhts_like.csv"), &schema).unwrap();
    assert_eq!(data.train.len(), 216);
    assert_eq!(data.test.as_ref().unwrap().len(), 24);
    assert_eq!(
        data.feature_names,
        [
            "travel_time",
            "travel_cost",
            "distance",
            "age",
            "income",
            "vehicles",
            "purpose=school",
            "purpose=shopping",
            "purpose=social",
        ]
    );
    for j in 0..6 {
        let m: f64 = (0..216).map(|i| data.train.x.get(i, j)).sum::<f64>() / 216.0;
        assert!(m.abs() < 1e-9);
    }
    assert!(data.stds.iter().all(|s| *s > 0.0));
    let again = load_tabular(fixture("nhts_like.csv"), &schema).unwrap();
    assert_eq!(again, data);
}

#[test]
fn logit_recovers_generating_signs() {
    let schema = TabularSchema {
        test_fraction: 0.0,
        ..TabularSchema::load(fixture("nhts_like_schema.toml")).unwrap()
    };
    let data = load_tabular(fixture("nhts_like.csv"), &schema).unwrap();
    let config = TrainConfig {
        max_epochs: 400,
        batch_size: 216,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let fit = train_erm(&MlpArch::bnl(data.train.dim()).unwrap(), &data.train, None, &config).unwrap();
    let (w, _) = fit.params.linear_coefficients().unwrap();
    let idx = |name: &str| data.feature_names.iter().position(|f| f == name).unwrap();
    assert!(w[idx("vehicles")] > 0.0, "{w:?}");
    assert!(w[idx("income")] > 0.0, "{w:?}");
    assert!(prediction_loss(&fit.params, &data.train).unwrap() < 0.45);
    let observed = data.train.y.iter().map(|&v| f64::from(v)).sum::<f64>() / data.train.len() as f64;
    // A logit with an intercept matches the sample share at its optimum.
    assert!((market_share(&fit.params, &data.train).unwrap() - observed).abs() < 0.02);
}
