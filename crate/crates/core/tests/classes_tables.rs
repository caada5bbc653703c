//! Exact class bookkeeping on synthetic intersection tables and the shipped
//! model files.

mod common;

use common::{check_synthetic_table, data_path, q};
use krflow::cli::validate;
use krflow::config::ExperimentConfig;

#[test]
fn reference_volume_vanishes_to_order_r() {
    for r in 1..=3 {
        check_synthetic_table(r).unwrap();
    }
}

#[test]
fn shipped_models_collapse_exactly() {
    for (name, t) in [("f1.cfg", q(1, 2)), ("product.cfg", q(1, 1)), ("cp1xcp1.cfg", q(1, 1))] {
        let cfg = ExperimentConfig::load(&data_path(name)).unwrap();
        let v = validate(&cfg).unwrap();
        assert!(v.passed(), "{name}");
        assert_eq!(v.singular_time.finite(), Some(t), "{name}");
        assert!(v.residual.as_ref().is_some_and(|r| r.is_zero()), "{name}");
    }
}
