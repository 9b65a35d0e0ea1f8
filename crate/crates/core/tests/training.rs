use qaproxy_core::embed::{BundleArchive, HashEmbedder};
use qaproxy_core::eval::{macro_accuracy, make_synthetic, split_examples};
use qaproxy_core::ingest::{Containment, Dataset};
use qaproxy_core::model::train;
use qaproxy_core::{Exec, ExperimentConfig, Label, Split, Variant};

fn clean_archive(dim: usize) -> BundleArchive {
    let data = make_synthetic(400, 10, 0.0, 1).unwrap();
    let (ds, _) = Dataset::build(data.claims, &data.qa_sets, 10, Containment::Substring).unwrap();
    BundleArchive::build(&HashEmbedder::new(dim, 0).unwrap(), &ds, Exec::default()).unwrap()
}

#[test]
fn separable_set_is_fit_and_loss_does_not_rise() {
    // Narrow hash vectors collide too often for a perfect fit.
    let archive = clean_archive(256);
    let examples = split_examples(&archive, Split::Train);
    for variant in [Variant::AttentionCQAa, Variant::AA] {
        let config = ExperimentConfig {
            variant,
            epochs: 30,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let out = train(&examples, &config, 0, Exec::default()).unwrap();
        assert_eq!(out.loss_history.len(), config.epochs);
        for w in out.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "{variant}: {:?}", out.loss_history);
        }
        let preds: Vec<Label> = examples
            .iter()
            .map(|(b, _)| out.model.predict(b).unwrap().predicted)
            .collect();
        let golds: Vec<Label> = examples.iter().map(|(_, l)| *l).collect();
        let acc = macro_accuracy(&preds, &golds).unwrap();
        assert!(acc >= 0.99, "{variant}: train accuracy {acc}");
    }
}

#[test]
fn training_is_seed_deterministic_and_seed_sensitive() {
    let archive = clean_archive(64);
    let examples = split_examples(&archive, Split::Train);
    let config = ExperimentConfig {
        epochs: 1,
        ..Default::default()
    };
    let a = train(&examples, &config, 3, Exec::Parallel).unwrap();
    let b = train(&examples, &config, 3, Exec::Sequential).unwrap();
    let c = train(&examples, &config, 4, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.loss_history, c.loss_history);
}
