//! Kernels implied by infinitely wide random networks, a Monte-Carlo
//! estimator for the finite-width covariance, and matrix-valued lifts.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learner::Architecture;
use crate::nets::{init_network, Activation};
use crate::numerics::{dot, map_indexed, DenseMatrix, SeededRng};

const CLAMP_TOLERANCE: f64 = 1e-12;

/// Draws per Monte-Carlo work unit. Partial sums are reduced in unit order,
/// so results do not depend on the thread count.
pub const MC_CHUNK: usize = 256;

fn clamp_unit(v: f64) -> f64 {
    if v > 1.0 && v <= 1.0 + CLAMP_TOLERANCE {
        1.0
    } else if v < -1.0 && v >= -1.0 - CLAMP_TOLERANCE {
        -1.0
    } else {
        v
    }
}

/// Second-moment matrix of a bivariate centred Gaussian with entries
/// `k11, k22, k12`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub k11: f64,
    pub k22: f64,
    pub k12: f64,
}

/// `E[erf(u) erf(v)]`
pub fn erf_expectation(k: Moments) -> f64 {
    let denom = ((1.0 + 2.0 * k.k11) * (1.0 + 2.0 * k.k22)).sqrt();
    2.0 / PI * clamp_unit(2.0 * k.k12 / denom).asin()
}

/// `E[relu(u) relu(v)]`, the degree-one arc-cosine form.
pub fn relu_expectation(k: Moments) -> f64 {
    let norm = (k.k11 * k.k22).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let theta = clamp_unit(k.k12 / norm).acos();
    norm / (2.0 * PI) * (theta.sin() + (PI - theta) * theta.cos())
}

/// Closed-form `E[φ(u) φ(v)]` where one exists.
pub fn activation_expectation(activation: Activation, k: Moments) -> Option<f64> {
    match activation {
        Activation::Erf => Some(erf_expectation(k)),
        Activation::Relu => Some(relu_expectation(k)),
        Activation::Identity => Some(k.k12),
        Activation::Tanh | Activation::Softplus => None,
    }
}

fn augmented_inner(x: &[f64], y: &[f64], bias: bool) -> f64 {
    dot(x, y) + if bias { 1.0 } else { 0.0 }
}

/// `(2/π)·asin(2x̃ᵀΣx̃′ / √((1+2x̃ᵀΣx̃)(1+2x̃′ᵀΣx̃′)))` with `x̃ = [1, x]` and
/// `Σ = σ_w²·I`.
pub fn arcsine_kernel(x: &[f64], y: &[f64], sigma_w2: f64) -> Result<f64> {
    check_dim("arcsine_kernel", x.len(), y.len())?;
    Ok(erf_expectation(Moments {
        k11: sigma_w2 * augmented_inner(x, x, true),
        k22: sigma_w2 * augmented_inner(y, y, true),
        k12: sigma_w2 * augmented_inner(x, y, true),
    }))
}

/// Output covariance of a network with `depth` hidden layers whose weights
/// and biases are all `N(0, σ_w²)`, each layer after the first reading its
/// input through `1/√fan_in`. With `bias = false` bias terms are dropped.
pub fn network_kernel(activation: Activation, sigma_w2: f64, depth: usize, bias: bool, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("network_kernel", x.len(), y.len())?;
    let b = if bias { 1.0 } else { 0.0 };
    let mut k = Moments {
        k11: sigma_w2 * augmented_inner(x, x, bias),
        k22: sigma_w2 * augmented_inner(y, y, bias),
        k12: sigma_w2 * augmented_inner(x, y, bias),
    };
    for _ in 0..depth {
        let e = |m: Moments| {
            activation_expectation(activation, m).ok_or_else(|| {
                Error::InvalidArgument(format!("no closed-form kernel for {} activation", activation.name()))
            })
        };
        let diag1 = Moments { k22: k.k11, k12: k.k11, ..k };
        let diag2 = Moments { k11: k.k22, k12: k.k22, ..k };
        k = Moments {
            k11: sigma_w2 * (b + e(diag1)?),
            k22: sigma_w2 * (b + e(diag2)?),
            k12: sigma_w2 * (b + e(k)?),
        };
    }
    Ok(k.k12)
}

/// `network_kernel` for relu.
pub fn arccosine_relu_kernel(x: &[f64], y: &[f64], sigma_w2: f64, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InvalidArgument("arc-cosine recursion needs depth >= 1".into()));
    }
    network_kernel(Activation::Relu, sigma_w2, depth, true, x, y)
}

/// `Π_m k_m(x_m, x′_m)` over modality blocks.
pub fn multiplicative_kernel(kernels: &[ScalarKernel], blocks: &[[usize; 2]], x: &[f64], y: &[f64]) -> Result<f64> {
    if kernels.len() != blocks.len() {
        return Err(Error::SpecMismatch(format!(
            "{} kernels for {} modalities",
            kernels.len(),
            blocks.len()
        )));
    }
    check_dim("multiplicative_kernel", x.len(), y.len())?;
    let mut prod = 1.0;
    for (k, &[s, e]) in kernels.iter().zip(blocks) {
        if s >= e || e > x.len() {
            return Err(Error::SpecMismatch(format!("modality block [{s}, {e}) out of range")));
        }
        prod *= k.eval(&x[s..e], &y[s..e])?;
    }
    Ok(prod)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarKernel {
    /// Expected product of two erf units, without readout.
    Arcsine { sigma_w2: f64 },
    /// Analytic covariance of a scalar network output.
    Network {
        activation: Activation,
        sigma_w2: f64,
        depth: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    /// `scale · Π_m k_m` over modality blocks.
    Product {
        factors: Vec<ScalarKernel>,
        blocks: Vec<[usize; 2]>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Precomputed values on a fixed point set, e.g. a Monte-Carlo estimate.
    Tabulated { points: Vec<Vec<f64>>, gram: DenseMatrix },
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl ScalarKernel {
    /// Analytic kernel of a network built from `arch`.
    pub fn for_architecture(arch: &Architecture) -> Result<Self> {
        let k = Self::Network {
            activation: arch.activation,
            sigma_w2: arch.sigma_w2,
            depth: arch.hidden.len(),
            bias: true,
        };
        k.eval(&[0.0], &[0.0])?;
        Ok(k)
    }

    /// Kernel of the fused network `Σ_j Π_m (Z_m)_j` with `fusion_dim` outputs
    /// per encoder.
    pub fn fused(arch: &Architecture, blocks: &[[usize; 2]], fusion_dim: usize) -> Result<Self> {
        let base = Self::for_architecture(arch)?;
        Ok(Self::Product {
            factors: vec![base; blocks.len()],
            blocks: blocks.to_vec(),
            scale: fusion_dim as f64,
        })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Self::Arcsine { sigma_w2 } => arcsine_kernel(x, y, *sigma_w2),
            Self::Network {
                activation,
                sigma_w2,
                depth,
                bias,
            } => network_kernel(*activation, *sigma_w2, *depth, *bias, x, y),
            Self::Product { factors, blocks, scale } => Ok(scale * multiplicative_kernel(factors, blocks, x, y)?),
            Self::Tabulated { points, gram } => {
                let find = |p: &[f64]| {
                    points.iter().position(|q| q.as_slice() == p).ok_or_else(|| {
                        Error::InvalidArgument("point not in tabulated kernel".into())
                    })
                };
                Ok(gram[(find(x)?, find(y)?)])
            }
        }
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> Result<DenseMatrix> {
        let n = xs.len();
        let mut g = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&xs[i], &xs[j])?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }
}

/// `K(x, x′) = Σ_q k_q(x, x′)·B_q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixKernel {
    pub terms: Vec<(ScalarKernel, DenseMatrix)>,
}

impl MatrixKernel {
    pub fn new(terms: Vec<(ScalarKernel, DenseMatrix)>) -> Result<Self> {
        let mk = Self { terms };
        mk.validate()?;
        Ok(mk)
    }

    pub fn icm(kernel: ScalarKernel, b: DenseMatrix) -> Result<Self> {
        Self::new(vec![(kernel, b)])
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .terms
            .first()
            .ok_or_else(|| Error::SpecMismatch("matrix kernel has no terms".into()))?;
        let c = first.1.rows();
        for (_, b) in &self.terms {
            if !b.is_square() || b.rows() != c {
                return Err(Error::SpecMismatch(format!(
                    "coregionalization matrices disagree: {}x{} vs {c}x{c}",
                    b.rows(),
                    b.cols()
                )));
            }
            if b.asymmetry() > 1e-12 * b.frobenius_norm().max(1.0) {
                return Err(Error::SpecMismatch("coregionalization matrix is not symmetric".into()));
            }
        }
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.terms[0].1.rows()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DenseMatrix> {
        let c = self.tasks();
        let mut out = DenseMatrix::zeros(c, c);
        for (k, b) in &self.terms {
            if b.rows() != c || b.cols() != c {
                return Err(Error::SpecMismatch("coregionalization matrices disagree".into()));
            }
            let v = k.eval(x, y)?;
            for (o, bv) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *o += v * bv;
            }
        }
        Ok(out)
    }

    /// `NC × NC` covariance, point-major and task-minor.
    pub fn stacked_gram(&self, xs: &[Vec<f64>]) -> Result<DenseMatrix> {
        let c = self.tasks();
        let n = xs.len();
        let mut g = DenseMatrix::zeros(n * c, n * c);
        let grams = self
            .terms
            .iter()
            .map(|(k, _)| k.gram(xs))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..n {
            for j in 0..n {
                for (gk, (_, b)) in grams.iter().zip(&self.terms) {
                    let v = gk[(i, j)];
                    for s in 0..c {
                        for t in 0..c {
                            g[(i * c + s, j * c + t)] += v * b[(s, t)];
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

/// Sample moments of a vector-valued random draw.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub draws: usize,
    pub mean: Vec<f64>,
    /// `(1/draws)·Σ f fᵀ`
    pub second: DenseMatrix,
    /// `(1/draws)·Σ (f fᵀ)²` entrywise, for standard errors.
    pub fourth: DenseMatrix,
}

impl MomentEstimate {
    /// Standard error of each entry of `second`.
    pub fn second_std_error(&self) -> DenseMatrix {
        let d = self.draws as f64;
        DenseMatrix::from_fn(self.second.rows(), self.second.cols(), |i, j| {
            let m = self.second[(i, j)];
            ((self.fourth[(i, j)] - m * m).max(0.0) / d).sqrt()
        })
    }

    /// Standard error of each entry of `mean`.
    pub fn mean_std_error(&self) -> Vec<f64> {
        let d = self.draws as f64;
        (0..self.mean.len())
            .map(|i| ((self.second[(i, i)] - self.mean[i] * self.mean[i]).max(0.0) / d).sqrt())
            .collect()
    }
}

struct MomentSums {
    sum: Vec<f64>,
    second: Vec<f64>,
    fourth: Vec<f64>,
}

impl MomentSums {
    fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            second: vec![0.0; dim * dim],
            fourth: vec![0.0; dim * dim],
        }
    }

    fn add_draw(&mut self, f: &[f64]) {
        let dim = self.sum.len();
        for i in 0..dim {
            self.sum[i] += f[i];
            for j in i..dim {
                let p = f[i] * f[j];
                self.second[i * dim + j] += p;
                self.fourth[i * dim + j] += p * p;
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            *a += b;
        }
        for (a, b) in self.fourth.iter_mut().zip(&other.fourth) {
            *a += b;
        }
    }
}

/// Moments of `sampler(rng_d)` over draws `d = 0..draws`, where `rng_d` is
/// `SeededRng::new(seed).split(d)`.
pub fn monte_carlo_moments<F>(draws: usize, seed: u64, dim: usize, sampler: F) -> Result<MomentEstimate>
where
    F: Fn(SeededRng) -> Result<Vec<f64>> + Sync + Send,
{
    if draws == 0 {
        return Err(Error::InvalidArgument("draw count must be at least 1".into()));
    }
    let root = SeededRng::new(seed);
    let chunks = draws.div_ceil(MC_CHUNK);
    let partials = map_indexed(chunks, |c| -> Result<MomentSums> {
        let mut acc = MomentSums::new(dim);
        for d in (c * MC_CHUNK)..((c + 1) * MC_CHUNK).min(draws) {
            let f = sampler(root.split(d as u64))?;
            check_dim("monte_carlo_moments draw", dim, f.len())?;
            acc.add_draw(&f);
        }
        Ok(acc)
    });
    let mut total = MomentSums::new(dim);
    for p in partials {
        total.merge(&p?);
    }
    let n = draws as f64;
    let sym = |v: &[f64]| {
        DenseMatrix::from_fn(dim, dim, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            v[a * dim + b] / n
        })
    };
    Ok(MomentEstimate {
        draws,
        mean: total.sum.iter().map(|s| s / n).collect(),
        second: sym(&total.second),
        fourth: sym(&total.fourth),
    })
}

/// `(1/draws)·Σ f⁽ᵐ⁾(X) f⁽ᵐ⁾(X)ᵀ` over independently drawn scalar networks.
pub fn monte_carlo_kernel(arch: &Architecture, draws: usize, seed: u64, xs: &[Vec<f64>]) -> Result<DenseMatrix> {
    let d = xs.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo kernel needs nonempty points".into()));
    }
    let widths = arch.widths(d, 1);
    init_network(&mut SeededRng::new(seed), &widths, arch.activation, arch.sigma_w2, arch.parameterization)?;
    let est = monte_carlo_moments(draws, seed, xs.len(), |mut rng| {
        let net = init_network(&mut rng, &widths, arch.activation, arch.sigma_w2, arch.parameterization)?;
        xs.iter().map(|x| net.forward(x)).collect()
    })?;
    Ok(est.second)
}

/// Writes a Gram matrix as headerless CSV with round-trip precision.
pub fn write_gram_csv<W: Write>(gram: &DenseMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in 0..gram.rows() {
        w.write_record(gram.row(r).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&p| vec![p]).collect()
    }

    fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn arcsine_at_origin() {
        let v = arcsine_kernel(&[0.0], &[0.0], 0.1).unwrap();
        assert_relative_eq!(v, 2.0 / PI * (0.2f64 / 1.2).asin(), max_relative = 1e-15);
        assert!((v - 0.10659).abs() < 2e-5);
    }

    #[test]
    fn arcsine_cauchy_schwarz_and_range() {
        let pts: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
        for &a in &pts {
            let kaa = arcsine_kernel(&[a], &[a], 0.1).unwrap();
            for &b in &pts {
                let kab = arcsine_kernel(&[a], &[b], 0.1).unwrap();
                let kbb = arcsine_kernel(&[b], &[b], 0.1).unwrap();
                assert!(kab.abs() <= (kaa * kbb).sqrt() * (1.0 + 1e-12));
                assert!((-1.0..=1.0).contains(&kab));
                assert_eq!(kab, arcsine_kernel(&[b], &[a], 0.1).unwrap());
            }
        }
    }

    #[test]
    fn arcsine_is_not_diagonally_dominant() {
        // the kernel is not stationary: a larger input can covary more
        let k11 = arcsine_kernel(&[1.0], &[1.0], 0.1).unwrap();
        let k1_10 = arcsine_kernel(&[1.0], &[10.0], 0.1).unwrap();
        assert!(k1_10 > k11);
    }

    #[test]
    fn arcsine_vanishes_with_prior_variance() {
        assert!(arcsine_kernel(&[3.0, -1.0], &[2.0, 0.5], 1e-12).unwrap().abs() < 1e-10);
        assert!(matches!(arcsine_kernel(&[1.0], &[1.0, 2.0], 0.1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn clamp_absorbs_drift_only() {
        assert_eq!(clamp_unit(1.0 + 1e-13), 1.0);
        assert!(clamp_unit(1.0 + 1e-6) > 1.0);
        // very large equal inputs push the ratio to 1
        let v = arcsine_kernel(&[1e8], &[1e8], 1.0).unwrap();
        assert!(v.is_finite() && v <= 1.0);
    }

    #[test]
    fn relu_recursion_positive_diagonal() {
        for depth in 1..=6 {
            for x in [-3.0, 0.0, 0.5, 10.0] {
                assert!(arccosine_relu_kernel(&[x], &[x], 0.1, depth).unwrap() > 0.0);
            }
        }
        assert!(arccosine_relu_kernel(&[1.0], &[1.0], 0.1, 0).is_err());
    }

    #[test]
    fn zero_bias_orthogonal_correlation() {
        let e = |a: &[f64], b: &[f64]| network_kernel(Activation::Relu, 1.0, 1, false, a, b).unwrap();
        let (x, y) = ([1.0, 0.0], [0.0, 2.0]);
        let corr = e(&x, &y) / (e(&x, &x) * e(&y, &y)).sqrt();
        assert_relative_eq!(corr, 1.0 / PI, max_relative = 1e-14);
    }

    #[test]
    fn relu_expectation_diagonal_is_half_variance() {
        let k = Moments { k11: 2.0, k22: 2.0, k12: 2.0 };
        assert_relative_eq!(relu_expectation(k), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn linear_network_kernel_is_affine() {
        let x = [0.5, -2.0];
        let y = [1.5, 3.0];
        let k = network_kernel(Activation::Identity, 0.3, 0, true, &x, &y).unwrap();
        assert_relative_eq!(k, 0.3 * (1.0 + 0.75 - 6.0), max_relative = 1e-14);
        assert!(network_kernel(Activation::Tanh, 0.3, 1, true, &x, &y).is_err());
    }

    #[test]
    fn erf_network_kernel_wraps_arcsine() {
        let k = network_kernel(Activation::Erf, 0.1, 1, true, &[1.3], &[-0.4]).unwrap();
        let a = arcsine_kernel(&[1.3], &[-0.4], 0.1).unwrap();
        assert_relative_eq!(k, 0.1 * (1.0 + a), max_relative = 1e-14);
    }

    #[test]
    fn mc_single_draw_is_rank_one() {
        let arch = Architecture::new(vec![8], Activation::Tanh, 0.5);
        let g = monte_carlo_kernel(&arch, 1, 4, &grid(&[-1.0, 0.0, 2.0])).unwrap();
        let ev = g.symmetric_eigenvalues().unwrap();
        assert!(ev[0].abs() < 1e-12 * ev[2] && ev[1].abs() < 1e-12 * ev[2]);
    }

    #[test]
    fn mc_is_deterministic() {
        let arch = Architecture::new(vec![16], Activation::Relu, 0.1);
        let xs = grid(&[-1.0, 1.0]);
        let a = monte_carlo_kernel(&arch, 600, 11, &xs).unwrap();
        let b = monte_carlo_kernel(&arch, 600, 11, &xs).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_kernel(&Architecture::new(vec![0], Activation::Relu, 0.1), 2, 1, &xs).is_err());
        assert!(monte_carlo_kernel(&arch, 0, 1, &xs).is_err());
    }

    #[test]
    fn mc_linear_network_converges() {
        let arch = Architecture::new(vec![], Activation::Identity, 0.5);
        let xs = grid(&[-2.0, 0.0, 1.0, 3.0]);
        let mc = monte_carlo_kernel(&arch, 100_000, 2, &xs).unwrap();
        let exact = ScalarKernel::for_architecture(&arch).unwrap().gram(&xs).unwrap();
        assert!(rel_frobenius(&mc, &exact) < 0.02);
    }

    #[test]
    fn mc_erf_matches_closed_form() {
        let arch = Architecture::new(vec![8192], Activation::Erf, 0.1);
        let xs = grid(&[0.0]);
        let mc = monte_carlo_kernel(&arch, 20_000, 5, &xs).unwrap();
        let target = 0.1 * (1.0 + arcsine_kernel(&[0.0], &[0.0], 0.1).unwrap());
        assert!((mc[(0, 0)] / target - 1.0).abs() < 0.02, "{} vs {target}", mc[(0, 0)]);
    }

    #[test]
    fn mc_relu_gram_matches_recursion() {
        let arch = Architecture::new(vec![8192], Activation::Relu, 0.1);
        let xs = grid(&[-4.0, -2.0, 0.0, 2.0, 4.0]);
        let mc = monte_carlo_kernel(&arch, 10_000, 6, &xs).unwrap();
        let exact = DenseMatrix::from_fn(5, 5, |i, j| arccosine_relu_kernel(&xs[i], &xs[j], 0.1, 1).unwrap());
        assert!(rel_frobenius(&mc, &exact) < 0.03);
    }

    #[test]
    fn mc_error_scales_with_draws() {
        let arch = Architecture::new(vec![], Activation::Identity, 1.0);
        let xs = grid(&[-1.0, 0.5, 2.0]);
        let exact = ScalarKernel::for_architecture(&arch).unwrap().gram(&xs).unwrap();
        let mean_err = |draws| {
            (0..10u64)
                .map(|s| rel_frobenius(&monte_carlo_kernel(&arch, draws, 100 + s, &xs).unwrap(), &exact))
                .sum::<f64>()
                / 10.0
        };
        let ratio = mean_err(40_000) / mean_err(10_000);
        assert!((0.3..=0.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn multiplicative_kernel_rules() {
        let k = ScalarKernel::Arcsine { sigma_w2: 0.1 };
        let x = [0.3, 1.0];
        let y = [-0.2, 2.0];
        assert_eq!(
            multiplicative_kernel(std::slice::from_ref(&k), &[[0, 1]], &x, &y).unwrap(),
            k.eval(&x[..1], &y[..1]).unwrap()
        );
        let zero = ScalarKernel::Network {
            activation: Activation::Identity,
            sigma_w2: 1.0,
            depth: 0,
            bias: false,
        };
        assert_eq!(
            multiplicative_kernel(&[k.clone(), zero], &[[0, 1], [1, 2]], &[0.3, 0.0], &y).unwrap(),
            0.0
        );
        assert!(matches!(
            multiplicative_kernel(&[k], &[[0, 1], [1, 2]], &x, &y),
            Err(Error::SpecMismatch(_))
        ));
    }

    #[test]
    fn matrix_kernel_examples() {
        let k = ScalarKernel::Arcsine { sigma_w2: 0.1 };
        let (x, y) = ([0.7], [-1.1]);
        let kv = k.eval(&x, &y).unwrap();
        let id = MatrixKernel::icm(k.clone(), DenseMatrix::identity(2)).unwrap();
        assert_eq!(id.eval(&x, &y).unwrap(), DenseMatrix::identity(2).scale(kv));
        let ones = MatrixKernel::icm(k.clone(), DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap()).unwrap();
        assert!(ones.eval(&x, &y).unwrap().as_slice().iter().all(|&v| v == kv));

        let b = DenseMatrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let two = MatrixKernel::new(vec![(k.clone(), b.clone()), (k.clone(), b.clone())]).unwrap();
        let doubled = MatrixKernel::icm(k.clone(), b.scale(2.0)).unwrap();
        let (a, c) = (two.eval(&x, &y).unwrap(), doubled.eval(&x, &y).unwrap());
        assert!(a.sub(&c).unwrap().frobenius_norm() < 1e-15);

        assert!(MatrixKernel::new(vec![(k.clone(), b), (k, DenseMatrix::identity(3))]).is_err());
        assert!(MatrixKernel::new(vec![]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let k = ScalarKernel::fused(&Architecture::new(vec![32], Activation::Erf, 0.1), &[[0, 1], [1, 3]], 16).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<ScalarKernel>(&json).unwrap(), k);
    }

    #[test]
    fn tabulated_lookup() {
        let xs = grid(&[0.0, 1.0]);
        let gram = DenseMatrix::from_rows(&[[2.0, 0.5], [0.5, 3.0]]).unwrap();
        let k = ScalarKernel::Tabulated { points: xs.clone(), gram };
        assert_eq!(k.eval(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!(k.eval(&[2.0], &[0.0]).is_err());
    }

    #[test]
    fn gram_csv_is_round_trip_exact() {
        let g = DenseMatrix::from_rows(&[[0.1, 1.0 / 3.0], [1.0 / 3.0, 2.0f64.sqrt()]]).unwrap();
        let mut buf = Vec::new();
        write_gram_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<f64> = text.split(['\n', ',']).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, g.as_slice());
    }

    fn kernels() -> Vec<ScalarKernel> {
        vec![
            ScalarKernel::Arcsine { sigma_w2: 0.1 },
            ScalarKernel::Network { activation: Activation::Erf, sigma_w2: 0.7, depth: 2, bias: true },
            ScalarKernel::Network { activation: Activation::Relu, sigma_w2: 0.1, depth: 3, bias: true },
            ScalarKernel::Network { activation: Activation::Relu, sigma_w2: 2.0, depth: 1, bias: false },
            ScalarKernel::Network { activation: Activation::Identity, sigma_w2: 1.0, depth: 1, bias: true },
            ScalarKernel::fused(&Architecture::new(vec![8], Activation::Erf, 0.3), &[[0, 1], [1, 2]], 4).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn grams_are_psd(points in prop::collection::vec(prop::collection::vec(-6.0..6.0f64, 2), 1..50)) {
            for k in kernels() {
                let g = k.gram(&points).unwrap();
                prop_assert_eq!(g.asymmetry(), 0.0);
                let scale = g.frobenius_norm().max(1.0);
                for ev in g.symmetric_eigenvalues().unwrap() {
                    prop_assert!(ev >= -1e-8 * scale, "{:?}: {}", k, ev);
                }
            }
        }

        #[test]
        fn matrix_kernel_transpose_symmetry(
            x in prop::collection::vec(-5.0..5.0f64, 2),
            y in prop::collection::vec(-5.0..5.0f64, 2),
            a in prop::collection::vec(-2.0..2.0f64, 3),
        ) {
            let spec = crate::learner::CoregionalizationSpec::icm3(a[0], a[1], a[2]);
            let b = crate::learner::coregionalization_matrices(&spec, &a).unwrap();
            let mk = MatrixKernel::new(kernels().into_iter().map(|k| (k, b[0].clone())).collect()).unwrap();
            prop_assert_eq!(mk.eval(&x, &y).unwrap(), mk.eval(&y, &x).unwrap().transpose());
        }

        #[test]
        fn stacked_gram_is_psd(points in prop::collection::vec(prop::collection::vec(-6.0..6.0f64, 2), 1..12)) {
            let b = DenseMatrix::from_rows(&[[3.0, 1.0, 1.0], [1.0, 3.0, 1.0], [1.0, 1.0, 3.0]]).unwrap();
            let mk = MatrixKernel::icm(ScalarKernel::Arcsine { sigma_w2: 0.1 }, b).unwrap();
            let g = mk.stacked_gram(&points).unwrap();
            let scale = g.frobenius_norm().max(1.0);
            for ev in g.symmetric_eigenvalues().unwrap() {
                prop_assert!(ev >= -1e-8 * scale);
            }
        }
    }
}
