use cmde::cmgp;
use cmde::datagen::{generate_synthetic, read_dataset, write_dataset, GeneratorConfig, SemiSynthSpec};
use cmde::ensemble::{Cmde, TrainingConfig};
use cmde::gpkernels::{MatrixKernel, ScalarKernel};
use cmde::learner::{Architecture, CoregionalizationSpec, ModelSpec};
use cmde::metrics::{evaluate, MetricKind};
use cmde::nets::Activation;
use cmde::numerics::{DenseMatrix, SeededRng};

fn tiny_model() -> ModelSpec {
    ModelSpec::new(CoregionalizationSpec::icm3(0.3, 0.3, 1.0), Architecture::new(vec![32], Activation::Relu, 0.1))
}

#[test]
fn untrained_prior_variance_at_origin() {
    let model = ModelSpec::new(CoregionalizationSpec::icm3(0.0, 0.0, 1.0), Architecture::new(vec![2048], Activation::Relu, 0.1));
    let cmde = Cmde::new(model, 500, 1, 99, TrainingConfig::default()).unwrap();
    let est = cmde.predict_row(&[0.0]).unwrap();
    // relu, bias included: σ²(1 + σ²/2) at the origin; B₀₀ = 1
    let target = 0.1 * (1.0 + 0.1 / 2.0);
    let rel = (est.variance[0] - target).abs() / target;
    assert!(rel <= 0.15, "variance {} vs {target}", est.variance[0]);
}

#[test]
fn file_round_trip_then_train_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let data = generate_synthetic(&mut SeededRng::new(4), 300).unwrap();
    write_dataset(&data, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, data);

    let config = TrainingConfig {
        learning_rate: 0.2,
        epochs: 15,
        batch_size: 64,
        ..TrainingConfig::default()
    };
    let mut cmde = Cmde::new(tiny_model(), 4, 1, 5, config).unwrap();
    let report = cmde.train(&back, &mut SeededRng::new(6)).unwrap();
    assert_eq!(report.epochs.len(), 15);
    let first = report.epochs[0].factual_mse;
    let last = report.epochs.last().unwrap().factual_mse;
    assert!(last < 0.5 * first, "{first} -> {last}");

    let est = cmde.predict_dataset(&back).unwrap();
    let (y1, y0): (Vec<f64>, Vec<f64>) = est.iter().map(|e| (e.mean[1], e.mean[0])).unzip();
    let rep = evaluate(MetricKind::Pehe, &back, &y1, &y0, None).unwrap();
    assert_eq!(rep.n, 300);
    assert!(rep.value.is_finite() && rep.value >= 0.0);
    let ate = evaluate(MetricKind::AteError, &back, &y1, &y0, Some(1.0)).unwrap();
    assert!(ate.value < 1.0);
}

#[test]
fn checkpoint_predictions_survive_reload() {
    let cmde = Cmde::new(tiny_model(), 3, 1, 12, TrainingConfig::default()).unwrap();
    let again = Cmde::from_json(&cmde.to_json().unwrap()).unwrap();
    let xs: Vec<Vec<f64>> = (-3..=3).map(|i| vec![i as f64]).collect();
    assert_eq!(cmde.predict(&xs).unwrap(), again.predict(&xs).unwrap());
}

#[test]
fn oracle_recovers_unit_effect_in_dense_region() {
    let data = generate_synthetic(&mut SeededRng::new(21), 400).unwrap();
    let b = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
    let kernel = MatrixKernel::icm(ScalarKernel::Arcsine { sigma_w2: 0.1 }, b).unwrap();
    let gp = cmgp::fit(&data, &kernel, 0.0025).unwrap();
    for x in [-2.0, -0.5, 0.0, 1.0, 2.5] {
        let row = &gp.posterior(&[vec![x]]).unwrap()[0];
        assert!((row.cate_mean() - 1.0).abs() < 0.1, "x = {x}: {}", row.cate_mean());
        assert!(row.cate_variance() >= 0.0);
    }
}

#[test]
fn semisynthetic_config_trains_with_modalities() {
    let cfg = GeneratorConfig::Semisynthetic {
        seed: 3,
        n: 120,
        spec: SemiSynthSpec::clinical_preset(),
    };
    let data = cfg.generate().unwrap();
    let blocks = data.modalities.clone().unwrap();
    let mut model = ModelSpec::new(CoregionalizationSpec::icm3(0.5, 0.5, 1.0), Architecture::new(vec![16], Activation::Tanh, 0.5));
    model.modality = Some(cmde::learner::ModalityPlan { blocks, fusion_dim: 4 });
    let config = TrainingConfig {
        learning_rate: 0.01,
        epochs: 2,
        batch_size: 40,
        ..TrainingConfig::default()
    };
    let mut cmde = Cmde::new(model, 2, data.dim(), 8, config).unwrap();
    let report = cmde.train(&data, &mut SeededRng::new(9)).unwrap();
    assert!(report.epochs.iter().all(|e| e.risk.is_finite()));
}
