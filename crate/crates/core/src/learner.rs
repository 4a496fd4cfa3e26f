//! Baselearners: independently initialized networks combined through
//! trainable mixing coefficients into one draw from a multi-task prior.
//!
//! Every variant is described by a sparse set of [`Link`]s: task `c` receives
//! `coefficient[k] · f_n(x)` for each link `(c, n, k)`. The coregionalization
//! matrix of group `q` is the Gram matrix of the mixing rows restricted to the
//! networks of that group, which is what the closed forms in
//! [`coregionalization_matrices`] spell out.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nets::{
    init_network, Activation, ForwardCache, GradientTape, MlpNetwork, Parameterization,
};
use crate::numerics::{DenseMatrix, SeededRng};

pub const DEFAULT_FUSION_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcmCoefficients {
    pub alpha_h: f64,
    pub alpha_t: f64,
    pub alpha_ht: f64,
}

/// Which coregionalization structure a baselearner realizes, with the
/// initial values of its mixing coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoregionalizationSpec {
    /// `f̂₀ = α_H f_H + α_HT f_HT`, `f̂₁ = α_HT f_HT + α_T f_T`.
    Icm3 { alpha_h: f64, alpha_t: f64, alpha_ht: f64 },
    /// One ICM triple per component `q`.
    Lmc { components: Vec<IcmCoefficients> },
    /// `C = group.len()` arms. `shared` holds `α_cd` for `c < d` in
    /// lexicographic order `(1,2), (1,3), …, (1,C), (2,3), …`.
    MultiTreatment { group: Vec<f64>, shared: Vec<f64> },
    /// `f̂₀ = α₀ f_A + β₀ f_B`, `f̂₁ = α₁ f_A + β₁ f_B`.
    TwoNet {
        alpha0: f64,
        beta0: f64,
        alpha1: f64,
        beta1: f64,
    },
}

/// Task `task` receives `coefficients[coef] · f_net(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub task: usize,
    pub net: usize,
    pub coef: usize,
}

fn pair_index(arms: usize, c: usize, d: usize) -> usize {
    debug_assert!(c < d && d < arms);
    c * (2 * arms - c - 1) / 2 + (d - c - 1)
}

impl CoregionalizationSpec {
    pub fn icm3(alpha_h: f64, alpha_t: f64, alpha_ht: f64) -> Self {
        Self::Icm3 {
            alpha_h,
            alpha_t,
            alpha_ht,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Icm3 { .. } => "icm3",
            Self::Lmc { .. } => "lmc",
            Self::MultiTreatment { .. } => "multi_treatment",
            Self::TwoNet { .. } => "two_net",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Lmc { components } if components.is_empty() => {
                return Err(Error::SpecMismatch("lmc needs at least one component".into()))
            }
            Self::MultiTreatment { group, shared } => {
                let c = group.len();
                if c < 2 {
                    return Err(Error::SpecMismatch(format!("multi_treatment needs at least 2 arms, got {c}")));
                }
                if shared.len() != c * (c - 1) / 2 {
                    return Err(Error::SpecMismatch(format!(
                        "multi_treatment with {c} arms needs {} shared coefficients, got {}",
                        c * (c - 1) / 2,
                        shared.len()
                    )));
                }
            }
            _ => {}
        }
        if self.coefficients().iter().any(|v| !v.is_finite()) {
            return Err(Error::SpecMismatch("coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Number of potential outcomes `C`.
    pub fn arms(&self) -> usize {
        match self {
            Self::MultiTreatment { group, .. } => group.len(),
            _ => 2,
        }
    }

    /// Number of coregionalization components `Q`.
    pub fn groups(&self) -> usize {
        match self {
            Self::Lmc { components } => components.len(),
            _ => 1,
        }
    }

    /// Initial coefficients in storage order.
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            Self::Icm3 {
                alpha_h,
                alpha_t,
                alpha_ht,
            } => vec![*alpha_h, *alpha_t, *alpha_ht],
            Self::Lmc { components } => components
                .iter()
                .flat_map(|c| [c.alpha_h, c.alpha_t, c.alpha_ht])
                .collect(),
            Self::MultiTreatment { group, shared } => group.iter().chain(shared).copied().collect(),
            Self::TwoNet {
                alpha0,
                beta0,
                alpha1,
                beta1,
            } => vec![*alpha0, *beta0, *alpha1, *beta1],
        }
    }

    pub fn network_count(&self) -> usize {
        match self {
            Self::Icm3 { .. } => 3,
            Self::Lmc { components } => 3 * components.len(),
            Self::MultiTreatment { group, .. } => group.len() * (group.len() + 1) / 2,
            Self::TwoNet { .. } => 2,
        }
    }

    /// Human-readable network names, indexed like the networks.
    pub fn network_labels(&self) -> Vec<String> {
        match self {
            Self::Icm3 { .. } => vec!["f_H".into(), "f_T".into(), "f_HT".into()],
            Self::Lmc { components } => (1..=components.len())
                .flat_map(|q| [format!("f_H^{q}"), format!("f_T^{q}"), format!("f_HT^{q}")])
                .collect(),
            Self::MultiTreatment { group, .. } => {
                let c = group.len();
                let mut labels: Vec<String> = (1..=c).map(|i| format!("f_{i}")).collect();
                for i in 1..=c {
                    for j in (i + 1)..=c {
                        labels.push(format!("f_{i}{j}"));
                    }
                }
                labels
            }
            Self::TwoNet { .. } => vec!["f_A".into(), "f_B".into()],
        }
    }

    /// Component `q` that network `net` belongs to.
    pub fn network_group(&self, net: usize) -> usize {
        match self {
            Self::Lmc { .. } => net / 3,
            _ => 0,
        }
    }

    pub fn links(&self) -> Vec<Link> {
        let l = |task, net, coef| Link { task, net, coef };
        match self {
            Self::Icm3 { .. } => vec![l(0, 0, 0), l(0, 2, 2), l(1, 2, 2), l(1, 1, 1)],
            Self::Lmc { components } => (0..components.len())
                .flat_map(|q| {
                    let (h, t, ht) = (3 * q, 3 * q + 1, 3 * q + 2);
                    [l(0, h, h), l(0, ht, ht), l(1, ht, ht), l(1, t, t)]
                })
                .collect(),
            Self::MultiTreatment { group, .. } => {
                let arms = group.len();
                let mut links: Vec<Link> = (0..arms).map(|c| l(c, c, c)).collect();
                for c in 0..arms {
                    for d in (c + 1)..arms {
                        let k = arms + pair_index(arms, c, d);
                        links.push(l(c, k, k));
                        links.push(l(d, k, k));
                    }
                }
                links
            }
            Self::TwoNet { .. } => vec![l(0, 0, 0), l(0, 1, 1), l(1, 0, 2), l(1, 1, 3)],
        }
    }
}

/// Coregionalization matrices `{B_q}` for `coefficients` laid out like
/// [`CoregionalizationSpec::coefficients`]. ICM variants return one matrix.
pub fn coregionalization_matrices(spec: &CoregionalizationSpec, coefficients: &[f64]) -> Result<Vec<DenseMatrix>> {
    spec.validate()?;
    if coefficients.len() != spec.coefficients().len() {
        return Err(Error::SpecMismatch(format!(
            "{} expects {} coefficients, got {}",
            spec.name(),
            spec.coefficients().len(),
            coefficients.len()
        )));
    }
    let icm = |h: f64, t: f64, ht: f64| {
        DenseMatrix::from_rows(&[[h * h + ht * ht, ht * ht], [ht * ht, t * t + ht * ht]]).expect("2x2")
    };
    Ok(match spec {
        CoregionalizationSpec::Icm3 { .. } => vec![icm(coefficients[0], coefficients[1], coefficients[2])],
        CoregionalizationSpec::Lmc { .. } => coefficients
            .chunks(3)
            .map(|c| icm(c[0], c[1], c[2]))
            .collect(),
        CoregionalizationSpec::MultiTreatment { group, .. } => {
            let arms = group.len();
            let (own, shared) = coefficients.split_at(arms);
            let mut b = DenseMatrix::zeros(arms, arms);
            for c in 0..arms {
                b[(c, c)] = own[c] * own[c];
            }
            for c in 0..arms {
                for d in (c + 1)..arms {
                    let a2 = shared[pair_index(arms, c, d)].powi(2);
                    b[(c, d)] = a2;
                    b[(d, c)] = a2;
                    b[(c, c)] += a2;
                    b[(d, d)] += a2;
                }
            }
            vec![b]
        }
        CoregionalizationSpec::TwoNet { .. } => {
            let (a0, b0, a1, b1) = (coefficients[0], coefficients[1], coefficients[2], coefficients[3]);
            let off = a0 * a1 + b0 * b1;
            vec![DenseMatrix::from_rows(&[[a0 * a0 + b0 * b0, off], [off, a1 * a1 + b1 * b1]]).expect("2x2")]
        }
    })
}

/// Layer layout shared by every network of one coregionalization component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub sigma_w2: f64,
    #[serde(default)]
    pub parameterization: Parameterization,
}

impl Architecture {
    pub fn new(hidden: Vec<usize>, activation: Activation, sigma_w2: f64) -> Self {
        Self {
            hidden,
            activation,
            sigma_w2,
            parameterization: Parameterization::Ntk,
        }
    }

    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(&self.hidden);
        w.push(output);
        w
    }

    pub fn with_width(&self, width: usize) -> Self {
        Self {
            hidden: vec![width; self.hidden.len()],
            ..self.clone()
        }
    }
}

/// Splits the covariate vector into modality blocks, each encoded to a
/// `fusion_dim`-dimensional representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityPlan {
    /// Half-open covariate ranges `[start, end)`.
    pub blocks: Vec<[usize; 2]>,
    #[serde(default = "default_fusion_dim")]
    pub fusion_dim: usize,
}

fn default_fusion_dim() -> usize {
    DEFAULT_FUSION_DIM
}

impl ModalityPlan {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::SpecMismatch("modality plan has no blocks".into()));
        }
        if self.fusion_dim == 0 {
            return Err(Error::SpecMismatch("fusion dimension must be positive".into()));
        }
        for [start, end] in &self.blocks {
            if start >= end || *end > input_dim {
                return Err(Error::SpecMismatch(format!(
                    "modality block [{start}, {end}) invalid for {input_dim} covariates"
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to build baselearners of one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub coregionalization: CoregionalizationSpec,
    /// One architecture shared by all components, or one per component.
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub modality: Option<ModalityPlan>,
}

impl ModelSpec {
    pub fn new(coregionalization: CoregionalizationSpec, architecture: Architecture) -> Self {
        Self {
            coregionalization,
            architectures: vec![architecture],
            modality: None,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        self.coregionalization.validate()?;
        let q = self.coregionalization.groups();
        if self.architectures.len() != 1 && self.architectures.len() != q {
            return Err(Error::SpecMismatch(format!(
                "need 1 or {q} architectures, got {}",
                self.architectures.len()
            )));
        }
        if input_dim == 0 {
            return Err(Error::InvalidArchitecture("input dimension is zero".into()));
        }
        if let Some(plan) = &self.modality {
            plan.validate(input_dim)?;
        }
        Ok(())
    }

    pub fn architecture_for_group(&self, q: usize) -> &Architecture {
        if self.architectures.len() == 1 {
            &self.architectures[0]
        } else {
            &self.architectures[q]
        }
    }

    /// Same model with every hidden layer set to `width`.
    pub fn with_width(&self, width: usize) -> Self {
        Self {
            architectures: self.architectures.iter().map(|a| a.with_width(width)).collect(),
            ..self.clone()
        }
    }
}

/// Multi-modal network `f(X) = Σ_j Π_m (Z_m)_j` with one encoder per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedNetwork {
    pub blocks: Vec<[usize; 2]>,
    pub encoders: Vec<MlpNetwork>,
}

/// `Σ_j Π_m (Z_m)_j`
pub fn fuse(representations: &[Vec<f64>]) -> Result<f64> {
    let first = representations
        .first()
        .ok_or_else(|| Error::SpecMismatch("no representations to fuse".into()))?;
    let dim = first.len();
    for z in representations {
        if z.len() != dim {
            return Err(Error::SpecMismatch(format!(
                "representation dimensions disagree: {dim} vs {}",
                z.len()
            )));
        }
    }
    Ok((0..dim)
        .map(|j| representations.iter().map(|z| z[j]).product::<f64>())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentNetwork {
    Plain(MlpNetwork),
    Fused(FusedNetwork),
}

impl ComponentNetwork {
    fn encoders(&self) -> &[MlpNetwork] {
        match self {
            Self::Plain(n) => std::slice::from_ref(n),
            Self::Fused(f) => &f.encoders,
        }
    }

    fn encoders_mut(&mut self) -> &mut [MlpNetwork] {
        match self {
            Self::Plain(n) => std::slice::from_mut(n),
            Self::Fused(f) => &mut f.encoders,
        }
    }

    /// Builds the network for `arch`; networks with a modality plan get one
    /// encoder per block drawn from `rng.split(block)`.
    pub fn build(rng: &SeededRng, arch: &Architecture, input_dim: usize, plan: Option<&ModalityPlan>) -> Result<Self> {
        match plan {
            None => {
                let widths = arch.widths(input_dim, 1);
                let net = init_network(&mut rng.clone(), &widths, arch.activation, arch.sigma_w2, arch.parameterization)?;
                Ok(Self::Plain(net))
            }
            Some(plan) => {
                plan.validate(input_dim)?;
                let encoders = plan
                    .blocks
                    .iter()
                    .enumerate()
                    .map(|(m, [s, e])| {
                        let widths = arch.widths(e - s, plan.fusion_dim);
                        init_network(&mut rng.split(m as u64), &widths, arch.activation, arch.sigma_w2, arch.parameterization)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Fused(FusedNetwork {
                    blocks: plan.blocks.clone(),
                    encoders,
                }))
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let mut cache = Vec::new();
        self.forward_cached(x, &mut cache)
    }

    fn forward_cached(&self, x: &[f64], caches: &mut Vec<ForwardCache>) -> Result<f64> {
        match self {
            Self::Plain(net) => {
                caches.resize_with(1, ForwardCache::default);
                net.forward_cached(x, &mut caches[0])?;
                Ok(caches[0].output()[0])
            }
            Self::Fused(f) => {
                caches.resize_with(f.encoders.len(), ForwardCache::default);
                for ((enc, [s, e]), cache) in f.encoders.iter().zip(&f.blocks).zip(caches.iter_mut()) {
                    if *e > x.len() {
                        return Err(Error::DimensionMismatch {
                            context: "fused network covariates",
                            expected: *e,
                            found: x.len(),
                        });
                    }
                    enc.forward_cached(&x[*s..*e], cache)?;
                }
                let reps: Vec<Vec<f64>> = caches.iter().map(|c| c.output().to_vec()).collect();
                fuse(&reps)
            }
        }
    }

    fn accumulate_gradient(&self, caches: &[ForwardCache], upstream: f64, tapes: &mut [GradientTape]) -> Result<()> {
        match self {
            Self::Plain(net) => net.accumulate_gradient(&caches[0], &[upstream], &mut tapes[0]),
            Self::Fused(f) => {
                let dim = caches[0].output().len();
                for (m, enc) in f.encoders.iter().enumerate() {
                    let grad: Vec<f64> = (0..dim)
                        .map(|j| {
                            upstream
                                * caches
                                    .iter()
                                    .enumerate()
                                    .filter(|&(o, _)| o != m)
                                    .map(|(_, c)| c.output()[j])
                                    .product::<f64>()
                        })
                        .collect();
                    enc.accumulate_gradient(&caches[m], &grad, &mut tapes[m])?;
                }
                Ok(())
            }
        }
    }
}

/// One ensemble member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselearner {
    spec: CoregionalizationSpec,
    input_dim: usize,
    networks: Vec<ComponentNetwork>,
    coefficients: Vec<f64>,
    #[serde(skip)]
    links: Vec<Link>,
}

/// Per-call scratch space for [`Baselearner::forward_cached`].
#[derive(Clone, Debug, Default)]
pub struct LearnerCache {
    nets: Vec<Vec<ForwardCache>>,
    outputs: Vec<f64>,
    tasks: Vec<f64>,
}

impl LearnerCache {
    /// Potential outcomes of the last forward pass.
    pub fn tasks(&self) -> &[f64] {
        &self.tasks
    }

    /// Raw network outputs of the last forward pass.
    pub fn network_outputs(&self) -> &[f64] {
        &self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerGradient {
    pub networks: Vec<Vec<GradientTape>>,
    pub coefficients: Vec<f64>,
}

impl LearnerGradient {
    pub fn zeros_like(learner: &Baselearner) -> Self {
        Self {
            networks: learner
                .networks
                .iter()
                .map(|n| n.encoders().iter().map(GradientTape::zeros_like).collect())
                .collect(),
            coefficients: vec![0.0; learner.coefficients.len()],
        }
    }

    pub fn clear(&mut self) {
        self.networks.iter_mut().flatten().for_each(GradientTape::clear);
        self.coefficients.fill(0.0);
    }

    /// Same order as [`Baselearner::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.networks.iter().flatten().flat_map(|t| t.flatten()).collect();
        out.extend_from_slice(&self.coefficients);
        out
    }
}

/// Builds a baselearner. Network `n` is initialized from `rng.split(n)`.
pub fn build_baselearner(rng: &SeededRng, model: &ModelSpec, input_dim: usize) -> Result<Baselearner> {
    model.validate(input_dim)?;
    let spec = &model.coregionalization;
    let networks = (0..spec.network_count())
        .map(|n| {
            let arch = model.architecture_for_group(spec.network_group(n));
            ComponentNetwork::build(&rng.split(n as u64), arch, input_dim, model.modality.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Baselearner {
        links: spec.links(),
        coefficients: spec.coefficients(),
        spec: spec.clone(),
        input_dim,
        networks,
    })
}

impl Baselearner {
    /// Rebuilds derived state after deserialization and checks consistency.
    pub fn validated(mut self) -> Result<Self> {
        self.spec.validate()?;
        if self.coefficients.len() != self.spec.coefficients().len() {
            return Err(Error::SpecMismatch("coefficient count does not match variant".into()));
        }
        if self.networks.len() != self.spec.network_count() {
            return Err(Error::SpecMismatch("network count does not match variant".into()));
        }
        self.links = self.spec.links();
        Ok(self)
    }

    pub fn spec(&self) -> &CoregionalizationSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn arms(&self) -> usize {
        self.spec.arms()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn set_coefficients(&mut self, coefficients: &[f64]) -> Result<()> {
        check_dim("Baselearner::set_coefficients", self.coefficients.len(), coefficients.len())?;
        self.coefficients.copy_from_slice(coefficients);
        Ok(())
    }

    pub fn networks(&self) -> &[ComponentNetwork] {
        &self.networks
    }

    pub fn networks_mut(&mut self) -> &mut [ComponentNetwork] {
        &mut self.networks
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn has_modality_plan(&self) -> bool {
        matches!(self.networks.first(), Some(ComponentNetwork::Fused(_)))
    }

    /// Current `{B_q}` implied by the (possibly trained) coefficients.
    pub fn coregionalization(&self) -> Result<Vec<DenseMatrix>> {
        coregionalization_matrices(&self.spec, &self.coefficients)
    }

    pub fn network_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("Baselearner covariates", self.input_dim, x.len())?;
        self.networks.iter().map(|n| n.forward(x)).collect()
    }

    /// Fused outputs of every constituent network; requires a modality plan.
    pub fn encode_and_fuse(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.has_modality_plan() {
            return Err(Error::SpecMismatch("baselearner has no modality plan".into()));
        }
        self.network_outputs(x)
    }

    pub fn combine(&self, outputs: &[f64]) -> Vec<f64> {
        combine_links(&self.links, &self.coefficients, self.arms(), outputs)
    }

    pub fn predict_potential_outcomes(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.combine(&self.network_outputs(x)?))
    }

    /// Forward pass keeping what [`Baselearner::accumulate_gradient`] needs.
    pub fn forward_cached(&self, x: &[f64], cache: &mut LearnerCache) -> Result<()> {
        check_dim("Baselearner covariates", self.input_dim, x.len())?;
        cache.nets.resize_with(self.networks.len(), Vec::new);
        cache.outputs.clear();
        for (net, c) in self.networks.iter().zip(cache.nets.iter_mut()) {
            cache.outputs.push(net.forward_cached(x, c)?);
        }
        cache.tasks = self.combine(&cache.outputs);
        Ok(())
    }

    /// Adds the gradient of `Σ_c upstream[c]·f̂_c(x)` to `grad`.
    pub fn accumulate_gradient(&self, cache: &LearnerCache, upstream: &[f64], grad: &mut LearnerGradient) -> Result<()> {
        check_dim("Baselearner upstream", self.arms(), upstream.len())?;
        let mut net_upstream = vec![0.0; self.networks.len()];
        for l in &self.links {
            net_upstream[l.net] += upstream[l.task] * self.coefficients[l.coef];
            grad.coefficients[l.coef] += upstream[l.task] * cache.outputs[l.net];
        }
        for (n, net) in self.networks.iter().enumerate() {
            if net_upstream[n] != 0.0 {
                net.accumulate_gradient(&cache.nets[n], net_upstream[n], &mut grad.networks[n])?;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.networks
            .iter()
            .flat_map(|n| n.encoders())
            .map(MlpNetwork::param_count)
            .sum::<usize>()
            + self.coefficients.len()
    }

    /// `‖θ‖²` over network parameters and coefficients.
    pub fn squared_norm(&self) -> f64 {
        self.networks
            .iter()
            .flat_map(|n| n.encoders())
            .map(MlpNetwork::squared_norm)
            .sum::<f64>()
            + self.coefficients.iter().map(|c| c * c).sum::<f64>()
    }

    /// All parameters: networks in order (encoders in block order), then coefficients.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .networks
            .iter()
            .flat_map(|n| n.encoders())
            .flat_map(|e| e.params_flat())
            .collect();
        out.extend_from_slice(&self.coefficients);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        check_dim("Baselearner::set_params_flat", self.param_count(), params.len())?;
        let mut at = 0;
        for enc in self.networks.iter_mut().flat_map(|n| n.encoders_mut()) {
            let k = enc.param_count();
            enc.set_params_flat(&params[at..at + k])?;
            at += k;
        }
        self.coefficients.copy_from_slice(&params[at..]);
        Ok(())
    }

    pub fn sgd_step(&mut self, grad: &LearnerGradient, lr: f64, weight_decay: f64) {
        for (net, tapes) in self.networks.iter_mut().zip(&grad.networks) {
            for (enc, tape) in net.encoders_mut().iter_mut().zip(tapes) {
                enc.sgd_step(tape, lr, weight_decay);
            }
        }
        for (c, g) in self.coefficients.iter_mut().zip(&grad.coefficients) {
            *c -= lr * (g + 2.0 * weight_decay * *c);
        }
    }
}

pub(crate) fn combine_links(links: &[Link], coefficients: &[f64], arms: usize, outputs: &[f64]) -> Vec<f64> {
    let mut tasks = vec![0.0; arms];
    for l in links {
        tasks[l.task] += coefficients[l.coef] * outputs[l.net];
    }
    tasks
}
