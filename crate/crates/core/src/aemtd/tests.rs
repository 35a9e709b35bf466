use ndarray::{Array2, Axis};
use rand::Rng;

use super::*;
use crate::dataset::{FunnelDataset, Outcome, RowOutcomes};
use crate::nn::{grad_check, SgdConfig};
use crate::schema::{ColumnKind, StageSchema, StageSpec};
use crate::synth::{synth_funnel_with_truth, SynthFunnelConfig};
use crate::util::{rng_from_seed, standard_normal};

fn small_config() -> AemtdConfig {
    AemtdConfig {
        embedding_dim: 3,
        encoder_hidden: vec![5, 4],
        decoder_hidden: vec![4, 5],
        discriminator_hidden: vec![4],
        ..Default::default()
    }
}

/// Ten rows over three stages with binary columns mixed in.
fn mixed_dataset(seed: u64) -> FunnelDataset {
    let kinds = vec![
        ColumnKind::Continuous,
        ColumnKind::Binary,
        ColumnKind::Continuous,
        ColumnKind::Binary,
        ColumnKind::Continuous,
        ColumnKind::Continuous,
    ];
    let schema = StageSchema::new(
        vec![
            StageSpec { name: "a".into(), cumulative_features: 2 },
            StageSpec { name: "b".into(), cumulative_features: 4 },
            StageSpec { name: "c".into(), cumulative_features: 6 },
        ],
        (0..6).map(|j| format!("x{j}")).collect(),
        kinds.clone(),
        "pass",
    )
    .unwrap();
    let mut rng = rng_from_seed(seed);
    let n = 10;
    let features = Array2::from_shape_fn((n, 6), |(_, j)| match kinds[j] {
        ColumnKind::Binary => f64::from(rng.random_bool(0.5) as u8),
        ColumnKind::Continuous => rng.random_range(-1.0..1.0),
    });
    let depth = vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 2];
    let outcome = depth
        .iter()
        .enumerate()
        .map(|(i, &d)| if d == 0 { None } else if i % 2 == 0 { Some(Outcome::Pass) } else { Some(Outcome::Reject) })
        .collect();
    let rows = RowOutcomes::new((0..n).collect(), depth, outcome, None).unwrap();
    FunnelDataset::new(schema, features, rows).unwrap()
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let ds = mixed_dataset(seed);
        let model = AemtdModel::new(ds.schema().clone(), small_config(), seed).unwrap();
        for stage in 0..=2 {
            let rows: Vec<usize> = ds.rows_reaching(stage).collect();
            let batch = StageBatch::new(&ds, &rows, stage);
            let noise = standard_normal(rows.len(), 3, &mut rng_from_seed(seed + 100));
            let point = model.autoencoder_params();
            let loss = |p: &[f64]| {
                let mut m = model.clone();
                m.set_autoencoder_params(p);
                let (parts, g) = m.reconstruction_objective(&batch, noise.view())?;
                Ok((parts.total, g.flat()))
            };
            let err = grad_check(loss, &point, 1e-6).unwrap();
            assert!(err < 1e-4, "seed {seed} stage {stage}: {err}");
        }
    }
}

#[test]
fn discriminator_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let ds = mixed_dataset(seed);
        let model = AemtdModel::new(ds.schema().clone(), small_config(), seed).unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let batch = StageBatch::new(&ds, &rows, 0);
        let mut rng = rng_from_seed(seed + 7);
        let noise = standard_normal(rows.len(), 3, &mut rng);
        let prior = standard_normal(rows.len(), 3, &mut rng);
        let point = model.discriminator().params_flat();
        let loss = |p: &[f64]| {
            let mut m = model.clone();
            m.discriminator_mut().set_params_flat(p);
            let (v, g) = m.discriminator_objective(&batch, noise.view(), prior.view())?;
            Ok((v, g.flat()))
        };
        assert!(grad_check(loss, &point, 1e-6).unwrap() < 1e-4);
    }
}

#[test]
fn objective_matches_the_gradient_pass() {
    let ds = mixed_dataset(3);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 1).unwrap();
    let rows: Vec<usize> = ds.rows_reaching(1).collect();
    let batch = StageBatch::new(&ds, &rows, 1);
    let noise = standard_normal(rows.len(), 3, &mut rng_from_seed(2));
    let a = model.objective(&batch, noise.view()).unwrap();
    let (b, _) = model.reconstruction_objective(&batch, noise.view()).unwrap();
    assert!((a.total - b.total).abs() < 1e-12);
}

#[test]
fn phases_touch_disjoint_parameters() {
    let ds = mixed_dataset(4);
    let sgd = SgdConfig { learning_rate: 0.05, ..Default::default() };
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 4).unwrap();
    let rows: Vec<usize> = ds.rows_reaching(1).collect();
    let batch = StageBatch::new(&ds, &rows, 1);
    let mut rng = rng_from_seed(9);
    let noise = standard_normal(rows.len(), 3, &mut rng);
    let prior = standard_normal(rows.len(), 3, &mut rng);

    let mut after_d = model.clone();
    let (_, g) = after_d.discriminator_objective(&batch, noise.view(), prior.view()).unwrap();
    crate::nn::sgd_step(after_d.discriminator_mut(), &g, &sgd).unwrap();
    assert_eq!(after_d.autoencoder_params(), model.autoencoder_params());
    assert_ne!(after_d.discriminator().params_flat(), model.discriminator().params_flat());

    let mut after_ae = model.clone();
    let (_, g) = after_ae.reconstruction_objective(&batch, noise.view()).unwrap();
    after_ae.apply_autoencoder_step(&g, &sgd).unwrap();
    assert_eq!(after_ae.discriminator().params_flat(), model.discriminator().params_flat());
    assert_ne!(after_ae.autoencoder_params(), model.autoencoder_params());
}

#[test]
fn unobserved_cells_are_never_read() {
    let mut ds = mixed_dataset(5);
    let mask = ds.observation_mask();
    for ((i, j), v) in ds.features_mut().indexed_iter_mut() {
        if !mask[(i, j)] {
            *v = f64::NAN;
        }
    }
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 5).unwrap();
    for stage in 0..=2 {
        let rows: Vec<usize> = ds.rows_reaching(stage).collect();
        let batch = StageBatch::new(&ds, &rows, stage);
        let noise = standard_normal(rows.len(), 3, &mut rng_from_seed(1));
        let (parts, grads) = model.reconstruction_objective(&batch, noise.view()).unwrap();
        assert!(parts.total.is_finite());
        assert!(grads.flat().iter().all(|g| g.is_finite()));
        let future = model.decode(model.encode(batch.input.view()).unwrap().0.view()).unwrap().1;
        assert!(fn_loss(&ds, &rows, stage, future.view()).unwrap().is_finite());
    }
}

#[test]
fn feature_net_loss_is_zero_without_future_targets() {
    let ds = mixed_dataset(6);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 6).unwrap();
    // only depth-1 rows presented at stage 1, and everything at the last stage
    let depth1: Vec<usize> = (0..ds.len()).filter(|&i| ds.observed_depth()[i] == 1).collect();
    let all: Vec<usize> = ds.rows_reaching(2).collect();
    for (rows, stage) in [(depth1, 1), (all, 2)] {
        let batch = StageBatch::new(&ds, &rows, stage);
        let (_, fut) = model.decode(model.encode(batch.input.view()).unwrap().0.view()).unwrap();
        assert_eq!(fn_loss(&ds, &rows, stage, fut.view()).unwrap(), 0.0);
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let ds = mixed_dataset(7);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 7).unwrap();
    let sgd = SgdConfig { max_epochs: 0, ..Default::default() };
    let fit = train_aemtd(&ds, &sgd, model.clone()).unwrap();
    assert_eq!(fit.model, model);
    assert_eq!(fit.history.len(), 1);
    assert_eq!(fit.best_epoch, 0);
}

#[test]
fn training_is_deterministic_and_improves() {
    let cfg = SynthFunnelConfig { n0: 200, ..SynthFunnelConfig::with_stages(2, 200, 3) };
    let ds = synth_funnel_with_truth(&cfg).unwrap().dataset;
    let sgd = SgdConfig { learning_rate: 0.01, max_epochs: 15, seed: 3, ..Default::default() };
    let run = || {
        let model = AemtdModel::new(ds.schema().clone(), AemtdConfig::default(), 3).unwrap();
        train_aemtd(&ds, &sgd, model).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert!(a.best().train_objective < a.history[0].train_objective);
    assert!(a.validation_rows.iter().all(|r| !a.train_rows.contains(r)));
}

#[test]
fn completion_contract() {
    let ds = mixed_dataset(8);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 8).unwrap();
    let a = complete(&model, &ds, SplicePolicy::PaperFaithful).unwrap();
    let b = complete(&model, &ds, SplicePolicy::PaperFaithful).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.features.dim(), (10, 6));
    assert_eq!(a.provenance, ds.observation_mask());
    for (j, kind) in ds.schema().column_kinds().iter().enumerate() {
        if *kind == ColumnKind::Binary {
            assert!(a.features.column(j).iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    let keep = complete(&model, &ds, SplicePolicy::KeepObserved).unwrap();
    for i in 0..ds.len() {
        let w = ds.schema().width(ds.observed_depth()[i]);
        for j in 0..6 {
            if j < w {
                assert_eq!(keep.features[(i, j)], ds.features()[(i, j)]);
            } else {
                assert_eq!(keep.features[(i, j)], a.features[(i, j)]);
            }
        }
    }
    // fully observed rows come back unchanged
    let full: Vec<usize> = (0..ds.len()).filter(|&i| ds.observed_depth()[i] == 2).collect();
    assert_eq!(keep.features.select(Axis(0), &full), ds.features().select(Axis(0), &full));
    assert!(keep.provenance.select(Axis(0), &full).iter().all(|&o| o));
}

#[test]
fn completed_csv_round_trip() {
    let ds = mixed_dataset(9);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 9).unwrap();
    let done = complete(&model, &ds, SplicePolicy::PaperFaithful).unwrap();
    let mut buf = Vec::new();
    done.write_csv_to(&mut buf).unwrap();
    let back = CompletedDataset::from_reader(buf.as_slice()).unwrap();
    assert_eq!(back, done);
}

#[test]
fn model_file_round_trip() {
    let ds = mixed_dataset(10);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path, None).unwrap();
    let (back, enc) = AemtdModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert!(enc.is_none());
}

#[test]
fn embeddings_use_bounded_variance() {
    let ds = mixed_dataset(11);
    let model = AemtdModel::new(ds.schema().clone(), small_config(), 11).unwrap();
    let (mean, var) = embedding_statistics(&model, &ds, 0).unwrap();
    assert_eq!(mean.len(), 3);
    assert!(var.iter().all(|v| v.is_finite() && *v >= 0.0));
}
