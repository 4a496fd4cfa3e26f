//! Ensembles of baselearners trained on the joint factual-plus-variance risk.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{format_f64, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::learner::{build_baselearner, Baselearner, LearnerCache, LearnerGradient, ModelSpec};
use crate::numerics::{map_indexed, SeededRng};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// One loss over ensemble statistics.
    #[default]
    Joint,
    /// Each learner fits its own factual error.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub variance_weight: f64,
    pub mode: TrainingMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 128,
            weight_decay: 1e-4,
            variance_weight: 1.0,
            mode: TrainingMode::Joint,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.variance_weight >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay and variance_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Components of the training objective on one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub risk: f64,
    pub factual_mse: f64,
    pub variance_term: f64,
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub risk: f64,
    pub factual_mse: f64,
    pub variance_term: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "risk", "factual_mse", "variance_term", "l2"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format_f64(e.risk),
                format_f64(e.factual_mse),
                format_f64(e.variance_term),
                format_f64(e.l2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Across-ensemble statistics at one covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub cate_mean: f64,
    pub cate_variance: f64,
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Ensemble of `M` baselearners sharing one model specification.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmde {
    pub model: ModelSpec,
    pub learners: Vec<Baselearner>,
    pub config: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    model: ModelSpec,
    config: TrainingConfig,
    learners: Vec<Baselearner>,
}

impl Cmde {
    /// Learner `m` is built from `SeededRng::new(seed).split(m)`.
    pub fn new(model: ModelSpec, members: usize, input_dim: usize, seed: u64, config: TrainingConfig) -> Result<Self> {
        if members == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        config.validate()?;
        let root = SeededRng::new(seed);
        let learners = (0..members)
            .map(|m| build_baselearner(&root.split(m as u64), &model, input_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, learners, config })
    }

    pub fn members(&self) -> usize {
        self.learners.len()
    }

    pub fn arms(&self) -> usize {
        self.model.coregionalization.arms()
    }

    pub fn input_dim(&self) -> usize {
        self.learners[0].input_dim()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            config: self.config.clone(),
            learners: self.learners.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {}", cp.version)));
        }
        if cp.learners.is_empty() {
            return Err(Error::Schema("checkpoint has no learners".into()));
        }
        let learners = cp
            .learners
            .into_iter()
            .map(|l| {
                let l = l.validated()?;
                if l.spec() != &cp.model.coregionalization {
                    return Err(Error::Schema("learner variant differs from model".into()));
                }
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: cp.model,
            learners,
            config: cp.config,
        })
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<CateEstimate> {
        let outs = self
            .learners
            .iter()
            .map(|l| l.predict_potential_outcomes(x))
            .collect::<Result<Vec<_>>>()?;
        let arms = self.arms();
        let (mean, variance) = (0..arms).map(|c| mean_var(outs.iter().map(|o| o[c]))).unzip();
        let (cate_mean, cate_variance) = mean_var(outs.iter().map(|o| o[1] - o[0]));
        Ok(CateEstimate {
            mean,
            variance,
            cate_mean,
            cate_variance,
        })
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<CateEstimate>> {
        map_indexed(xs.len(), |i| self.predict_row(&xs[i])).into_iter().collect()
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<CateEstimate>> {
        check_dim("Cmde::predict covariates", self.input_dim(), ds.dim())?;
        map_indexed(ds.len(), |i| self.predict_row(ds.row(i))).into_iter().collect()
    }

    /// `Σ_m ‖θ_m‖²`
    pub fn squared_norm(&self) -> f64 {
        self.learners.iter().map(Baselearner::squared_norm).sum()
    }

    /// Objective on rows `idx` of `ds`, without touching parameters.
    pub fn risk(&self, ds: &Dataset, idx: &[usize]) -> Result<RiskBreakdown> {
        Ok(self.risk_and_upstream(ds, idx)?.0)
    }

    /// `(risk, ∂risk/∂ŷ[m][i][c])` where the L2 term is excluded from the
    /// derivatives.
    fn risk_and_upstream(&self, ds: &Dataset, idx: &[usize]) -> Result<(RiskBreakdown, Vec<Vec<Vec<f64>>>)> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim("Cmde covariates", self.input_dim(), ds.dim())?;
        let outs: Vec<Vec<Vec<f64>>> = map_indexed(self.members(), |m| {
            idx.iter()
                .map(|&i| self.learners[m].predict_potential_outcomes(ds.row(i)))
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
        self.upstream_from_outputs(ds, idx, &outs)
    }

    /// Objective and upstream derivatives from per-member outputs
    /// `outs[m][r][c]` on rows `idx`.
    fn upstream_from_outputs(
        &self,
        ds: &Dataset,
        idx: &[usize],
        outs: &[Vec<Vec<f64>>],
    ) -> Result<(RiskBreakdown, Vec<Vec<Vec<f64>>>)> {
        let arms = self.arms();
        let members = self.members();
        let b = idx.len() as f64;
        let mf = members as f64;
        let w = self.config.variance_weight;
        let mut up = vec![vec![vec![0.0; arms]; idx.len()]; members];
        let (mut fact, mut var) = (0.0, 0.0);
        for (r, &i) in idx.iter().enumerate() {
            let (t, y) = (ds.t[i], ds.y[i]);
            if t >= arms {
                return Err(if arms == 2 {
                    Error::NonBinaryTreatment { row: i, value: t }
                } else {
                    Error::InvalidArgument(format!("row {i}: treatment {t} outside 0..{arms}"))
                });
            }
            match self.config.mode {
                TrainingMode::Joint => {
                    let mean_t = outs.iter().map(|o| o[r][t]).sum::<f64>() / mf;
                    fact += (y - mean_t).powi(2);
                    for u in up.iter_mut() {
                        u[r][t] = -2.0 * (y - mean_t) / (mf * b);
                    }
                    for c in (0..arms).filter(|&c| c != t) {
                        let mean_c = outs.iter().map(|o| o[r][c]).sum::<f64>() / mf;
                        var += outs.iter().map(|o| (o[r][c] - mean_c).powi(2)).sum::<f64>() / mf;
                        for (u, o) in up.iter_mut().zip(outs) {
                            u[r][c] = w * 2.0 * (o[r][c] - mean_c) / (mf * b);
                        }
                    }
                }
                TrainingMode::Independent => {
                    for (u, o) in up.iter_mut().zip(outs) {
                        let e = y - o[r][t];
                        fact += e * e / mf;
                        u[r][t] = -2.0 * e / b;
                    }
                }
            }
        }
        let l2 = self.config.weight_decay * self.squared_norm();
        let (factual_mse, variance_term) = (fact / b, var / b);
        let data_risk = match self.config.mode {
            TrainingMode::Joint => factual_mse + w * variance_term,
            TrainingMode::Independent => factual_mse * mf,
        };
        let breakdown = RiskBreakdown {
            risk: data_risk + l2,
            factual_mse,
            variance_term,
            l2,
        };
        Ok((breakdown, up))
    }

    /// Data-term gradients per learner (L2 excluded).
    pub fn data_gradients(&self, ds: &Dataset, idx: &[usize]) -> Result<(RiskBreakdown, Vec<LearnerGradient>)> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim("Cmde covariates", self.input_dim(), ds.dim())?;
        let caches: Vec<Vec<LearnerCache>> = map_indexed(self.members(), |m| {
            idx.iter()
                .map(|&i| {
                    let mut cache = LearnerCache::default();
                    self.learners[m].forward_cached(ds.row(i), &mut cache)?;
                    Ok(cache)
                })
                .collect::<Result<Vec<_>>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let outs: Vec<Vec<Vec<f64>>> = caches
            .iter()
            .map(|rows| rows.iter().map(|c| c.tasks().to_vec()).collect())
            .collect();
        let (risk, up) = self.upstream_from_outputs(ds, idx, &outs)?;
        let grads = map_indexed(self.members(), |m| -> Result<LearnerGradient> {
            let learner = &self.learners[m];
            let mut grad = LearnerGradient::zeros_like(learner);
            for (r, cache) in caches[m].iter().enumerate() {
                if up[m][r].iter().all(|&g| g == 0.0) {
                    continue;
                }
                learner.accumulate_gradient(cache, &up[m][r], &mut grad)?;
            }
            Ok(grad)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok((risk, grads))
    }

    /// Gradient of the full objective, all learners concatenated in
    /// [`Cmde::params_flat`] order.
    pub fn risk_gradient_flat(&self, ds: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
        let (_, grads) = self.data_gradients(ds, idx)?;
        let lambda = self.config.weight_decay;
        Ok(grads
            .iter()
            .zip(&self.learners)
            .flat_map(|(g, l)| {
                g.flatten()
                    .into_iter()
                    .zip(l.params_flat())
                    .map(|(gv, p)| gv + 2.0 * lambda * p)
                    .collect::<Vec<_>>()
            })
            .collect())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.learners.iter().flat_map(Baselearner::params_flat).collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self.learners.iter().map(Baselearner::param_count).sum();
        check_dim("Cmde::set_params_flat", total, params.len())?;
        let mut at = 0;
        for l in &mut self.learners {
            let k = l.param_count();
            l.set_params_flat(&params[at..at + k])?;
            at += k;
        }
        Ok(())
    }

    /// One SGD step on rows `idx`; returns the pre-step objective.
    pub fn step(&mut self, ds: &Dataset, idx: &[usize]) -> Result<RiskBreakdown> {
        let (risk, grads) = self.data_gradients(ds, idx)?;
        let (lr, wd) = (self.config.learning_rate, self.config.weight_decay);
        for (l, g) in self.learners.iter_mut().zip(&grads) {
            l.sgd_step(g, lr, wd);
        }
        Ok(risk)
    }

    /// Minibatch SGD over shuffled epochs. Batch order comes from `rng`.
    pub fn train(&mut self, ds: &Dataset, rng: &mut SeededRng) -> Result<TrainingReport> {
        self.config.validate()?;
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        ds.validate(Some(self.arms()))?;
        check_dim("Cmde::train covariates", self.input_dim(), ds.dim())?;
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut report = TrainingReport::default();
        for epoch in 0..self.config.epochs {
            rng.shuffle(&mut order);
            let mut acc = RiskBreakdown::default();
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                let r = self.step(ds, chunk)?;
                if !r.risk.is_finite() {
                    return Err(Error::DivergedTraining { epoch });
                }
                acc.risk += r.risk;
                acc.factual_mse += r.factual_mse;
                acc.variance_term += r.variance_term;
                acc.l2 += r.l2;
                batches += 1;
            }
            let n = batches as f64;
            let rec = EpochRecord {
                epoch,
                risk: acc.risk / n,
                factual_mse: acc.factual_mse / n,
                variance_term: acc.variance_term / n,
                l2: acc.l2 / n,
            };
            log::debug!("epoch {epoch}: risk {:.6e} factual {:.6e}", rec.risk, rec.factual_mse);
            report.epochs.push(rec);
        }
        Ok(report)
    }
}

/// CSV of ensemble predictions with covariates.
pub fn write_predictions_csv<W: Write>(xs: &[Vec<f64>], est: &[CateEstimate], out: W) -> Result<()> {
    if xs.len() != est.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: est.len() });
    }
    let mut w = csv::Writer::from_writer(out);
    let d = xs.first().map_or(0, Vec::len);
    let arms = est.first().map_or(2, |e| e.mean.len());
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.extend((0..arms).map(|c| format!("yhat{c}")));
    header.extend((0..arms).map(|c| format!("var{c}")));
    header.extend(["cate".to_string(), "cate_var".to_string()]);
    w.write_record(&header)?;
    for (x, e) in xs.iter().zip(est) {
        let mut rec: Vec<String> = x.iter().map(|&v| format_f64(v)).collect();
        rec.extend(e.mean.iter().map(|&v| format_f64(v)));
        rec.extend(e.variance.iter().map(|&v| format_f64(v)));
        rec.push(format_f64(e.cate_mean));
        rec.push(format_f64(e.cate_variance));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
