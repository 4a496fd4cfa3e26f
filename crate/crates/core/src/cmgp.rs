//! Exact multi-task GP regression with a matrix-valued kernel prior.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{format_f64, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::gpkernels::MatrixKernel;
use crate::numerics::{cholesky_with_retry, dot, map_indexed, solve_lower, solve_lower_transpose, DenseMatrix};

/// Factorized posterior over the task functions given factual observations.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    x: DenseMatrix,
    t: Vec<usize>,
    kernel: MatrixKernel,
    noise_variance: f64,
    chol: DenseMatrix,
    jitter: f64,
    /// `K_obs⁻¹ y`
    weights: Vec<f64>,
}

/// Posterior over all tasks at one query point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
}

impl PosteriorRow {
    pub fn cate_mean(&self) -> f64 {
        self.mean[1] - self.mean[0]
    }

    /// `eᵀ Cov e` with `e = [−1, 1]`.
    pub fn cate_variance(&self) -> f64 {
        (self.cov[(0, 0)] + self.cov[(1, 1)] - 2.0 * self.cov[(0, 1)]).max(0.0)
    }

    pub fn sd(&self, task: usize) -> f64 {
        self.cov[(task, task)].max(0.0).sqrt()
    }
}

/// Observed covariance `K(xᵢ, xⱼ)[tᵢ, tⱼ] + σ_n²·δᵢⱼ`.
pub fn observed_covariance(x: &DenseMatrix, t: &[usize], kernel: &MatrixKernel, noise_variance: f64) -> Result<DenseMatrix> {
    let n = x.rows();
    let rows = map_indexed(n, |i| -> Result<Vec<f64>> {
        (0..=i)
            .map(|j| {
                let mut v = 0.0;
                for (k, b) in &kernel.terms {
                    v += k.eval(x.row(i), x.row(j))? * b[(t[i], t[j])];
                }
                Ok(v)
            })
            .collect()
    });
    let mut k = DenseMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise_variance;
    }
    Ok(k)
}

/// Conditions the prior on the factual outcomes of `data`.
pub fn fit(data: &Dataset, kernel: &MatrixKernel, noise_variance: f64) -> Result<GpPosterior> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
    }
    kernel.validate()?;
    data.validate(Some(kernel.tasks()))?;
    let k = observed_covariance(&data.x, &data.t, kernel, noise_variance)?;
    let (chol, jitter) = cholesky_with_retry(&k)?;
    let weights = solve_lower_transpose(&chol, &solve_lower(&chol, &data.y)?)?;
    Ok(GpPosterior {
        x: data.x.clone(),
        t: data.t.clone(),
        kernel: kernel.clone(),
        noise_variance,
        chol,
        jitter,
        weights,
    })
}

impl GpPosterior {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn tasks(&self) -> usize {
        self.kernel.tasks()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Diagonal jitter the factorization needed, 0 when none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn kernel(&self) -> &MatrixKernel {
        &self.kernel
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.chol
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Column `c` holds `Cov(f_c(x), y_i)` for every observation `i`.
    fn cross_covariance(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim("GpPosterior query", self.x.cols(), x.len())?;
        let c = self.tasks();
        let mut cols = vec![vec![0.0; self.len()]; c];
        for i in 0..self.len() {
            let xi = self.x.row(i);
            for (k, b) in &self.kernel.terms {
                let v = k.eval(x, xi)?;
                for (task, col) in cols.iter_mut().enumerate() {
                    col[i] += v * b[(task, self.t[i])];
                }
            }
        }
        Ok(cols)
    }

    /// Posterior mean of every task at `x`.
    pub fn mean_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cross_covariance(x)?.iter().map(|col| dot(col, &self.weights)).collect())
    }

    pub fn posterior_at(&self, x: &[f64]) -> Result<PosteriorRow> {
        let cols = self.cross_covariance(x)?;
        let mean = cols.iter().map(|col| dot(col, &self.weights)).collect();
        let v = cols.iter().map(|col| solve_lower(&self.chol, col)).collect::<Result<Vec<_>>>()?;
        let prior = self.kernel.eval(x, x)?;
        let c = self.tasks();
        let cov = DenseMatrix::from_fn(c, c, |a, b| prior[(a, b)] - dot(&v[a], &v[b]));
        Ok(PosteriorRow { mean, cov })
    }

    pub fn posterior(&self, xs: &[Vec<f64>]) -> Result<Vec<PosteriorRow>> {
        map_indexed(xs.len(), |i| self.posterior_at(&xs[i])).into_iter().collect()
    }

    /// Means only; skips the triangular solves.
    pub fn posterior_mean(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        map_indexed(xs.len(), |i| self.mean_at(&xs[i])).into_iter().collect()
    }
}

/// CSV with covariates, per-task means and sds, and the effect of task 1
/// over task 0.
pub fn write_posterior_csv<W: Write>(xs: &[Vec<f64>], rows: &[PosteriorRow], out: W) -> Result<()> {
    if xs.len() != rows.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: rows.len() });
    }
    let mut w = csv::Writer::from_writer(out);
    let d = xs.first().map_or(0, Vec::len);
    let c = rows.first().map_or(2, |r| r.mean.len());
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.extend((0..c).map(|k| format!("mean{k}")));
    header.push("cate".into());
    header.extend((0..c).map(|k| format!("sd{k}")));
    header.push("cate_sd".into());
    w.write_record(&header)?;
    for (x, r) in xs.iter().zip(rows) {
        let mut rec: Vec<String> = x.iter().map(|&v| format_f64(v)).collect();
        rec.extend(r.mean.iter().map(|&v| format_f64(v)));
        rec.push(format_f64(r.cate_mean()));
        rec.extend((0..c).map(|k| format_f64(r.sd(k))));
        rec.push(format_f64(r.cate_variance().sqrt()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_synthetic;
    use crate::gpkernels::ScalarKernel;
    use crate::learner::{coregionalization_matrices, CoregionalizationSpec};
    use crate::numerics::SeededRng;

    fn icm(alpha: [f64; 3]) -> MatrixKernel {
        let spec = CoregionalizationSpec::icm3(alpha[0], alpha[1], alpha[2]);
        let b = coregionalization_matrices(&spec, &alpha).unwrap().remove(0);
        MatrixKernel::icm(ScalarKernel::Arcsine { sigma_w2: 0.1 }, b).unwrap()
    }

    fn small(n: usize, seed: u64) -> Dataset {
        generate_synthetic(&mut SeededRng::new(seed), n).unwrap()
    }

    #[test]
    fn empty_rejected() {
        let ds = small(3, 1).subset(&[]);
        assert!(matches!(fit(&ds, &icm([1.0, 1.0, 1.0]), 0.01), Err(Error::EmptyDataset)));
    }

    #[test]
    fn single_point_interpolation() {
        let ds = small(1, 2);
        let gp = fit(&ds, &icm([1.0, 1.0, 1.0]), 0.0).unwrap();
        let r = gp.posterior_at(ds.row(0)).unwrap();
        let t = ds.t[0];
        assert!((r.mean[t] - ds.y[0]).abs() <= 1e-12 * ds.y[0].abs());
        assert!(r.cov[(t, t)].abs() < 1e-8);
    }

    #[test]
    fn noiseless_interpolation_at_training_points() {
        let mut ds = small(6, 3);
        for i in 0..6 {
            ds.x[(i, 0)] = i as f64 - 2.5;
        }
        let gp = fit(&ds, &icm([1.0, 1.0, 1.0]), 0.0).unwrap();
        for i in 0..6 {
            let r = gp.posterior_at(ds.row(i)).unwrap();
            let t = ds.t[i];
            assert!((r.mean[t] - ds.y[i]).abs() < 1e-6, "{} vs {}", r.mean[t], ds.y[i]);
            assert!(r.cov[(t, t)] < 1e-8);
        }
    }

    #[test]
    fn prior_reversion_far_from_data() {
        let mut ds = small(40, 4);
        for i in 0..40 {
            ds.x[(i, 0)] = (i as f64 - 20.0) * 1e-4;
        }
        let mk = icm([1.0, 0.5, 0.7]);
        let gp = fit(&ds, &mk, 0.0025).unwrap();
        let far = [400.0];
        let r = gp.posterior_at(&far).unwrap();
        let prior = mk.eval(&far, &far).unwrap();
        for c in 0..2 {
            assert!((r.cov[(c, c)] / prior[(c, c)] - 1.0).abs() < 0.05, "{} vs {}", r.cov[(c, c)], prior[(c, c)]);
        }
    }

    #[test]
    fn shared_only_kernel_has_no_effect_variance() {
        let ds = small(50, 5);
        let gp = fit(&ds, &icm([0.0, 0.0, 1.0]), 0.0025).unwrap();
        for x in [-5.0, 0.0, 2.0, 9.0] {
            let r = gp.posterior_at(&[x]).unwrap();
            assert!(r.cate_variance() <= 1e-8);
        }
    }

    #[test]
    fn mean_is_linear_in_outcomes() {
        let ds = small(60, 6);
        let mut doubled = ds.clone();
        doubled.y.iter_mut().for_each(|v| *v *= 2.0);
        let mk = icm([1.0, 1.0, 1.0]);
        let (a, b) = (fit(&ds, &mk, 0.01).unwrap(), fit(&doubled, &mk, 0.01).unwrap());
        let qs: Vec<Vec<f64>> = (-6..=6).map(|i| vec![i as f64]).collect();
        for (ma, mb) in a.posterior_mean(&qs).unwrap().iter().zip(b.posterior_mean(&qs).unwrap()) {
            for c in 0..2 {
                assert!((2.0 * ma[c] - mb[c]).abs() <= 1e-9 * mb[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn posterior_variance_below_prior_and_means_agree() {
        let ds = small(80, 7);
        let mk = icm([0.8, 1.2, 0.5]);
        let gp = fit(&ds, &mk, 0.0025).unwrap();
        let qs: Vec<Vec<f64>> = (-20..=20).map(|i| vec![i as f64 * 0.5]).collect();
        let rows = gp.posterior(&qs).unwrap();
        let means = gp.posterior_mean(&qs).unwrap();
        for ((q, r), m) in qs.iter().zip(&rows).zip(&means) {
            let prior = mk.eval(q, q).unwrap();
            for c in 0..2 {
                assert!(r.cov[(c, c)] <= prior[(c, c)] + 1e-8);
                assert_eq!(r.mean[c], m[c]);
            }
        }
    }

    #[test]
    fn solve_residual() {
        let ds = small(120, 8);
        let mk = icm([1.0, 1.0, 1.0]);
        let gp = fit(&ds, &mk, 0.0025).unwrap();
        let k = observed_covariance(&ds.x, &ds.t, &mk, 0.0025).unwrap();
        let back = k.matvec(gp.weights()).unwrap();
        let num: f64 = back.iter().zip(&ds.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = ds.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-8, "{}", num / den);
    }

    #[test]
    fn csv_export() {
        let ds = small(10, 9);
        let gp = fit(&ds, &icm([1.0, 1.0, 1.0]), 0.01).unwrap();
        let qs = vec![vec![0.0], vec![1.0]];
        let rows = gp.posterior(&qs).unwrap();
        let mut buf = Vec::new();
        write_posterior_csv(&qs, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_0,mean0,mean1,cate,sd0,sd1,cate_sd\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn query_dimension_checked() {
        let ds = small(5, 10);
        let gp = fit(&ds, &icm([1.0, 1.0, 1.0]), 0.01).unwrap();
        assert!(matches!(gp.posterior_at(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
