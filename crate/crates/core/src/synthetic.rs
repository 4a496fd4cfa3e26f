//! End-to-end run on the one-dimensional synthetic benchmark: a trained
//! ensemble next to the exact GP, with effect-estimation errors for both.

use serde::{Deserialize, Serialize};

use crate::cmgp::{self, PosteriorRow};
use crate::datagen::{generate_synthetic_with, Dataset, SyntheticSpec};
use crate::ensemble::{CateEstimate, Cmde, TrainingConfig, TrainingReport};
use crate::error::{Error, Result};
use crate::gpkernels::{MatrixKernel, ScalarKernel};
use crate::learner::{coregionalization_matrices, Architecture, CoregionalizationSpec, IcmCoefficients, ModelSpec};
use crate::metrics::pehe;
use crate::nets::{Activation, Parameterization};
use crate::numerics::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Mixing coefficients that set the GP's coregionalization matrix.
    pub alpha: IcmCoefficients,
    pub sigma_w2: f64,
    pub noise_variance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            alpha: IcmCoefficients {
                alpha_h: 1.0,
                alpha_t: 1.0,
                alpha_ht: 1.0,
            },
            sigma_w2: 0.1,
            noise_variance: 0.0025,
        }
    }
}

impl OracleConfig {
    pub fn kernel(&self) -> Result<MatrixKernel> {
        let a = self.alpha;
        let spec = CoregionalizationSpec::icm3(a.alpha_h, a.alpha_t, a.alpha_ht);
        let b = coregionalization_matrices(&spec, &spec.coefficients())?.remove(0);
        MatrixKernel::icm(ScalarKernel::Arcsine { sigma_w2: self.sigma_w2 }, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticExperimentConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub members: usize,
    pub width: usize,
    pub activation: Activation,
    pub sigma_w2: f64,
    pub parameterization: Parameterization,
    /// Initial ensemble coefficients.
    pub alpha: IcmCoefficients,
    /// Defaults to a short, fast schedule: `lr = 0.5` for 20 epochs.
    pub training: TrainingConfig,
    pub oracle: OracleConfig,
    /// Effects are compared between models on rows with `|x| ≤ dense_radius`.
    pub dense_radius: f64,
    /// Points of the plotting grid over `[-grid_radius, grid_radius]`.
    pub grid_points: usize,
    pub grid_radius: f64,
}

impl Default for SyntheticExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: SyntheticSpec::default(),
            members: 10,
            width: 2048,
            activation: Activation::Relu,
            sigma_w2: 0.1,
            parameterization: Parameterization::Ntk,
            alpha: IcmCoefficients {
                alpha_h: 0.0,
                alpha_t: 0.0,
                alpha_ht: 1.0,
            },
            training: TrainingConfig {
                learning_rate: 0.5,
                epochs: 20,
                ..TrainingConfig::default()
            },
            oracle: OracleConfig::default(),
            dense_radius: 6.0,
            grid_points: 241,
            grid_radius: 10.0,
        }
    }
}

impl SyntheticExperimentConfig {
    pub fn model(&self) -> ModelSpec {
        let a = self.alpha;
        let mut arch = Architecture::new(vec![self.width], self.activation, self.sigma_w2);
        arch.parameterization = self.parameterization;
        ModelSpec::new(CoregionalizationSpec::icm3(a.alpha_h, a.alpha_t, a.alpha_ht), arch)
    }

    /// Data from `seed`, ensemble from `seed + 1`, batch order from `seed + 2`.
    pub fn seeds(&self) -> [u64; 3] {
        [self.seed, self.seed.wrapping_add(1), self.seed.wrapping_add(2)]
    }

    pub fn grid(&self) -> Vec<Vec<f64>> {
        let n = self.grid_points.max(2);
        (0..n)
            .map(|i| vec![-self.grid_radius + 2.0 * self.grid_radius * i as f64 / (n - 1) as f64])
            .collect()
    }
}

/// Curves on the plotting grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCurves {
    pub x: Vec<Vec<f64>>,
    pub cmde: Vec<CateEstimate>,
    pub oracle: Vec<PosteriorRow>,
    /// Per grid point, the ensemble mean of each learner's `coefficient · f_n(x)`
    /// for every network.
    pub components: Vec<Vec<f64>>,
    pub component_labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub cmde_sqrt_pehe: f64,
    pub oracle_sqrt_pehe: f64,
    /// RMSE between the two models' effect estimates on the dense rows.
    pub dense_cate_rmse: f64,
    pub dense_rows: usize,
    pub final_factual_rmse: f64,
    pub oracle_jitter: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticOutcome {
    pub data: Dataset,
    pub cmde: Cmde,
    pub report: TrainingReport,
    pub summary: SyntheticSummary,
    pub cmde_rows: Vec<CateEstimate>,
    pub oracle_rows: Vec<Vec<f64>>,
}

/// Generates data, trains the ensemble, fits the GP and scores both.
pub fn run_synthetic(cfg: &SyntheticExperimentConfig) -> Result<SyntheticOutcome> {
    let [data_seed, model_seed, train_seed] = cfg.seeds();
    let data = generate_synthetic_with(&mut SeededRng::new(data_seed), &cfg.data)?;
    let mut cmde = Cmde::new(cfg.model(), cfg.members, 1, model_seed, cfg.training.clone())?;
    let report = cmde.train(&data, &mut SeededRng::new(train_seed))?;
    let gp = cmgp::fit(&data, &cfg.oracle.kernel()?, cfg.oracle.noise_variance)?;

    let rows = data.rows();
    let cmde_rows = cmde.predict_dataset(&data)?;
    let oracle_rows = gp.posterior_mean(&rows)?;
    let (mu1, mu0) = (
        data.mu1.as_ref().ok_or(Error::MissingGroundTruth("mu1"))?,
        data.mu0.as_ref().ok_or(Error::MissingGroundTruth("mu0"))?,
    );
    let c1: Vec<f64> = cmde_rows.iter().map(|e| e.mean[1]).collect();
    let c0: Vec<f64> = cmde_rows.iter().map(|e| e.mean[0]).collect();
    let o1: Vec<f64> = oracle_rows.iter().map(|m| m[1]).collect();
    let o0: Vec<f64> = oracle_rows.iter().map(|m| m[0]).collect();

    let dense: Vec<usize> = (0..data.len()).filter(|&i| data.row(i)[0].abs() <= cfg.dense_radius).collect();
    if dense.is_empty() {
        return Err(Error::InvalidArgument("no rows in the dense region".into()));
    }
    let gap = dense
        .iter()
        .map(|&i| ((c1[i] - c0[i]) - (o1[i] - o0[i])).powi(2))
        .sum::<f64>()
        / dense.len() as f64;
    let factual = (0..data.len())
        .map(|i| (data.y[i] - cmde_rows[i].mean[data.t[i]]).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    let summary = SyntheticSummary {
        cmde_sqrt_pehe: pehe(mu1, mu0, &c1, &c0)?.sqrt(),
        oracle_sqrt_pehe: pehe(mu1, mu0, &o1, &o0)?.sqrt(),
        dense_cate_rmse: gap.sqrt(),
        dense_rows: dense.len(),
        final_factual_rmse: factual.sqrt(),
        oracle_jitter: gp.jitter(),
    };
    log::info!(
        "synthetic: cmde sqrt-PEHE {:.4}, oracle {:.4}, dense gap {:.4}",
        summary.cmde_sqrt_pehe,
        summary.oracle_sqrt_pehe,
        summary.dense_cate_rmse
    );
    Ok(SyntheticOutcome {
        data,
        cmde,
        report,
        summary,
        cmde_rows,
        oracle_rows,
    })
}

/// Grid curves for plotting, including the oracle's full posterior.
pub fn grid_curves(cfg: &SyntheticExperimentConfig, outcome: &SyntheticOutcome) -> Result<GridCurves> {
    let x = cfg.grid();
    let gp = cmgp::fit(&outcome.data, &cfg.oracle.kernel()?, cfg.oracle.noise_variance)?;
    let cmde = outcome.cmde.predict(&x)?;
    let oracle = gp.posterior(&x)?;
    let spec = &outcome.cmde.model.coregionalization;
    let links = spec.links();
    let m = outcome.cmde.members() as f64;
    let components = x
        .iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; spec.network_count()];
            for l in &outcome.cmde.learners {
                let f = l.network_outputs(p)?;
                for n in 0..acc.len() {
                    // each network appears with a single coefficient in icm3
                    let coef = links.iter().find(|k| k.net == n).map_or(0.0, |k| l.coefficients()[k.coef]);
                    acc[n] += coef * f[n] / m;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridCurves {
        x,
        cmde,
        oracle,
        components,
        component_labels: spec.network_labels(),
    })
}
