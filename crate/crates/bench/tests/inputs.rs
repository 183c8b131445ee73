use ibl_bench::{moons_split, scored_labels, CLAMP_MODEL};
use ibl_core::parse_expression_model;

#[test]
fn inputs_are_usable() {
    let (scores, labels) = scored_labels(500, 9);
    assert!(ibl_core::auc(&scores, &labels).is_ok());
    let (train, test) = moons_split(300, 20, 9);
    assert_eq!(train.class_counts(), (10, 10));
    assert_eq!(test.n_rows(), 280);
    let program = parse_expression_model(CLAMP_MODEL, train.feature_names()).unwrap();
    assert!(test.rows().map(|r| program.eval(r)).all(|v| (0.0..=1.0).contains(&v)));
}
