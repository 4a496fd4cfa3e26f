//! Compares the covariance of untrained baselearner outputs with the
//! analytic matrix-valued kernel.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::format_f64;
use crate::error::{Error, Result};
use crate::gpkernels::{monte_carlo_moments, MatrixKernel, ScalarKernel};
use crate::learner::{combine_links, coregionalization_matrices, ComponentNetwork, ModelSpec};
use crate::numerics::DenseMatrix;

pub const DEFAULT_DRAWS: usize = 20_000;

/// Monte-Carlo moments of the stacked outputs `[f̂(x₁); …; f̂(x_P)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorCovarianceEstimate {
    /// `|grid|·C` square, point-major and task-minor.
    pub covariance: DenseMatrix,
    pub std_error: DenseMatrix,
    pub mean: Vec<f64>,
    pub mean_std_error: Vec<f64>,
}

/// `(1/draws)·Σ f̂ f̂ᵀ` over baselearners drawn from `SeededRng::new(seed).split(d)`.
///
/// Networks whose coefficients are all zero contribute nothing and are not
/// drawn. Every network has its own stream, so the result equals that of a
/// full [`crate::learner::build_baselearner`] draw.
pub fn empirical_prior_covariance(model: &ModelSpec, grid: &[Vec<f64>], draws: usize, seed: u64) -> Result<PriorCovarianceEstimate> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws".into()));
    }
    let input_dim = grid
        .first()
        .ok_or_else(|| Error::InvalidArgument("grid is empty".into()))?
        .len();
    model.validate(input_dim)?;
    let spec = &model.coregionalization;
    let coefs = spec.coefficients();
    let links = spec.links();
    let arms = spec.arms();
    let active: Vec<usize> = (0..spec.network_count())
        .filter(|&n| links.iter().any(|l| l.net == n && coefs[l.coef] != 0.0))
        .collect();
    let dim = grid.len() * arms;
    let est = monte_carlo_moments(draws, seed, dim, |rng| {
        let mut outs = vec![vec![0.0; spec.network_count()]; grid.len()];
        for &n in &active {
            let arch = model.architecture_for_group(spec.network_group(n));
            let net = ComponentNetwork::build(&rng.split(n as u64), arch, input_dim, model.modality.as_ref())?;
            for (p, x) in grid.iter().enumerate() {
                outs[p][n] = net.forward(x)?;
            }
        }
        Ok(outs.iter().flat_map(|o| combine_links(&links, &coefs, arms, o)).collect())
    })?;
    Ok(PriorCovarianceEstimate {
        std_error: est.second_std_error(),
        mean_std_error: est.mean_std_error(),
        mean: est.mean,
        covariance: est.second,
    })
}

/// `Σ_q k_q·B_q` for the initial coefficients of `model`.
pub fn analytic_matrix_kernel(model: &ModelSpec) -> Result<MatrixKernel> {
    let spec = &model.coregionalization;
    let bs = coregionalization_matrices(spec, &spec.coefficients())?;
    let terms = bs
        .into_iter()
        .enumerate()
        .map(|(q, b)| {
            let arch = model.architecture_for_group(q);
            let k = match &model.modality {
                None => ScalarKernel::for_architecture(arch)?,
                Some(plan) => ScalarKernel::fused(arch, &plan.blocks, plan.fusion_dim)?,
            };
            Ok((k, b))
        })
        .collect::<Result<Vec<_>>>()?;
    MatrixKernel::new(terms)
}

pub fn analytic_prior_covariance(model: &ModelSpec, grid: &[Vec<f64>]) -> Result<DenseMatrix> {
    analytic_matrix_kernel(model)?.stacked_gram(grid)
}

/// `‖a − b‖_F / ‖b‖_F`
pub fn relative_frobenius_error(estimate: &DenseMatrix, target: &DenseMatrix) -> Result<f64> {
    Ok(estimate.sub(target)?.frobenius_norm() / target.frobenius_norm())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthResult {
    pub width: usize,
    /// One error per replicate seed.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    /// Largest Monte-Carlo standard error over the stacked entries, first replicate.
    pub max_std_error: f64,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub grid: Vec<Vec<f64>>,
    pub draws: usize,
    pub seed: u64,
    pub replicates: usize,
    pub widths: Vec<WidthResult>,
    /// Mean error is non-increasing from the smallest to the largest width.
    pub pass: bool,
}

impl ConvergenceReport {
    /// `width,replicate,error` rows; timings are left out so the file is reproducible.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["width", "replicate", "error"])?;
        for r in &self.widths {
            for (k, e) in r.errors.iter().enumerate() {
                w.write_record([r.width.to_string(), k.to_string(), format_f64(*e)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative error against the analytic kernel for each width. Replicate `r`
/// uses seed `seed + r`.
pub fn convergence_sweep(
    model: &ModelSpec,
    widths: &[usize],
    draws: usize,
    grid: &[Vec<f64>],
    seed: u64,
    replicates: usize,
) -> Result<ConvergenceReport> {
    if widths.len() < 2 {
        return Err(Error::InvalidArgument("convergence sweep needs at least 2 widths".into()));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("widths must be strictly increasing".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let target = analytic_prior_covariance(model, grid)?;
    let mut results = Vec::with_capacity(widths.len());
    for &width in widths {
        let m = model.with_width(width);
        let start = Instant::now();
        let mut errors = Vec::with_capacity(replicates);
        let mut max_std_error = 0.0;
        for r in 0..replicates {
            let est = empirical_prior_covariance(&m, grid, draws, seed.wrapping_add(r as u64))?;
            if r == 0 {
                max_std_error = est.std_error.as_slice().iter().copied().fold(0.0, f64::max);
            }
            errors.push(relative_frobenius_error(&est.covariance, &target)?);
        }
        let mean_error = errors.iter().sum::<f64>() / replicates as f64;
        log::info!("width {width}: mean relative error {mean_error:.4}");
        results.push(WidthResult {
            width,
            errors,
            mean_error,
            max_std_error,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }
    let pass = results.windows(2).all(|w| w[1].mean_error <= w[0].mean_error);
    Ok(ConvergenceReport {
        grid: grid.to_vec(),
        draws,
        seed,
        replicates,
        widths: results,
        pass,
    })
}
