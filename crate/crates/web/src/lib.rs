//! Browser bindings. Each export takes a JSON request and returns a JSON
//! response; the same functions are callable natively for testing.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use cmde::cmgp;
use cmde::datagen::{generate_synthetic_with, SyntheticSpec};
use cmde::gpkernels::{network_kernel, MatrixKernel, ScalarKernel};
use cmde::learner::{build_baselearner, coregionalization_matrices, Architecture, CoregionalizationSpec, IcmCoefficients, ModelSpec};
use cmde::nets::Activation;
use cmde::numerics::SeededRng;
use cmde::{Error, Result};

const MAX_POINTS: usize = 2000;
const MAX_WIDTH: usize = 8192;
const MAX_DRAWS: usize = 200;
const MAX_ROWS: usize = 1500;

fn grid(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if !(to > from) || !(2..=MAX_POINTS).contains(&points) {
        return Err(Error::InvalidArgument(format!("grid needs from < to and 2..={MAX_POINTS} points")));
    }
    let step = (to - from) / (points - 1) as f64;
    Ok((0..points).map(|i| from + step * i as f64).collect())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRequest {
    pub activation: Activation,
    pub sigma_w2: f64,
    pub depth: usize,
    pub anchors: Vec<f64>,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelCurve {
    pub anchor: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelCurves {
    pub x: Vec<f64>,
    pub curves: Vec<KernelCurve>,
}

/// `x ↦ k(anchor, x)` for each anchor.
pub fn kernel_curves(req: &KernelRequest) -> Result<KernelCurves> {
    if !(req.sigma_w2 > 0.0) || req.depth == 0 || req.depth > 8 {
        return Err(Error::InvalidArgument("need sigma_w2 > 0 and depth in 1..=8".into()));
    }
    let x = grid(req.from, req.to, req.points)?;
    let curves = req
        .anchors
        .iter()
        .map(|&a| {
            let values = x
                .iter()
                .map(|&v| network_kernel(req.activation, req.sigma_w2, req.depth, true, &[a], &[v]))
                .collect::<Result<Vec<_>>>()?;
            Ok(KernelCurve { anchor: a, values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelCurves { x, curves })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRequest {
    pub activation: Activation,
    pub sigma_w2: f64,
    pub width: usize,
    pub draws: usize,
    pub seed: u64,
    pub alpha: IcmCoefficients,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorDraw {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorDraws {
    pub x: Vec<f64>,
    pub draws: Vec<PriorDraw>,
    /// Analytic prior standard deviations of each outcome and of the effect.
    pub sd0: Vec<f64>,
    pub sd1: Vec<f64>,
    pub cate_sd: Vec<f64>,
}

/// Untrained baselearners on a grid, next to the analytic prior spread.
pub fn prior_draws(req: &PriorRequest) -> Result<PriorDraws> {
    if !(1..=MAX_WIDTH).contains(&req.width) || !(1..=MAX_DRAWS).contains(&req.draws) {
        return Err(Error::InvalidArgument(format!("need width in 1..={MAX_WIDTH} and draws in 1..={MAX_DRAWS}")));
    }
    let x = grid(req.from, req.to, req.points)?;
    let a = req.alpha;
    let spec = CoregionalizationSpec::icm3(a.alpha_h, a.alpha_t, a.alpha_ht);
    let arch = Architecture::new(vec![req.width], req.activation, req.sigma_w2);
    let model = ModelSpec::new(spec.clone(), arch.clone());
    let root = SeededRng::new(req.seed);
    let draws = (0..req.draws)
        .map(|d| {
            let bl = build_baselearner(&root.split(d as u64), &model, 1)?;
            let (mut f0, mut f1) = (Vec::with_capacity(x.len()), Vec::with_capacity(x.len()));
            for &v in &x {
                let y = bl.predict_potential_outcomes(&[v])?;
                f0.push(y[0]);
                f1.push(y[1]);
            }
            Ok(PriorDraw { f0, f1 })
        })
        .collect::<Result<Vec<_>>>()?;
    let b = coregionalization_matrices(&spec, &spec.coefficients())?.remove(0);
    let k = ScalarKernel::for_architecture(&arch)?;
    let diag = x.iter().map(|&v| k.eval(&[v], &[v])).collect::<Result<Vec<_>>>()?;
    let sd = |w: f64| diag.iter().map(|d| (d * w).max(0.0).sqrt()).collect::<Vec<_>>();
    Ok(PriorDraws {
        sd0: sd(b[(0, 0)]),
        sd1: sd(b[(1, 1)]),
        cate_sd: sd(b[(0, 0)] + b[(1, 1)] - 2.0 * b[(0, 1)]),
        x,
        draws,
    })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub n: usize,
    pub seed: u64,
    pub alpha: IcmCoefficients,
    pub sigma_w2: f64,
    pub noise_variance: f64,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResponse {
    pub data_x: Vec<f64>,
    pub data_y: Vec<f64>,
    pub data_t: Vec<usize>,
    pub x: Vec<f64>,
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub sd0: Vec<f64>,
    pub sd1: Vec<f64>,
    pub cate: Vec<f64>,
    pub cate_sd: Vec<f64>,
    /// Root PEHE of the posterior mean on the training rows.
    pub sqrt_pehe: f64,
    pub jitter: f64,
}

/// Exact GP with the arcsine kernel on freshly generated synthetic data.
pub fn synthetic_fit(req: &FitRequest) -> Result<FitResponse> {
    if !(1..=MAX_ROWS).contains(&req.n) {
        return Err(Error::InvalidArgument(format!("n must be in 1..={MAX_ROWS}")));
    }
    let data = generate_synthetic_with(
        &mut SeededRng::new(req.seed),
        &SyntheticSpec {
            n: req.n,
            ..SyntheticSpec::default()
        },
    )?;
    let a = req.alpha;
    let spec = CoregionalizationSpec::icm3(a.alpha_h, a.alpha_t, a.alpha_ht);
    let b = coregionalization_matrices(&spec, &spec.coefficients())?.remove(0);
    let kernel = MatrixKernel::icm(ScalarKernel::Arcsine { sigma_w2: req.sigma_w2 }, b)?;
    let gp = cmgp::fit(&data, &kernel, req.noise_variance)?;
    let x = grid(req.from, req.to, req.points)?;
    let rows = gp.posterior(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>())?;
    let means = gp.posterior_mean(&data.rows())?;
    let (mu0, mu1) = (data.mu0.as_ref().unwrap(), data.mu1.as_ref().unwrap());
    let pehe = means
        .iter()
        .zip(mu0.iter().zip(mu1))
        .map(|(m, (a, b))| ((b - a) - (m[1] - m[0])).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    Ok(FitResponse {
        data_x: (0..data.len()).map(|i| data.row(i)[0]).collect(),
        data_y: data.y.clone(),
        data_t: data.t.clone(),
        mean0: rows.iter().map(|r| r.mean[0]).collect(),
        mean1: rows.iter().map(|r| r.mean[1]).collect(),
        sd0: rows.iter().map(|r| r.sd(0)).collect(),
        sd1: rows.iter().map(|r| r.sd(1)).collect(),
        cate: rows.iter().map(|r| r.cate_mean()).collect(),
        cate_sd: rows.iter().map(|r| r.cate_variance().sqrt()).collect(),
        sqrt_pehe: pehe.sqrt(),
        jitter: gp.jitter(),
        x,
    })
}

fn call<Req, Resp>(request: &str, f: impl Fn(&Req) -> Result<Resp>) -> std::result::Result<String, String>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let req: Req = serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))?;
    let resp = f(&req).map_err(|e| e.to_string())?;
    serde_json::to_string(&resp).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = kernelCurves)]
pub fn kernel_curves_js(request: &str) -> std::result::Result<String, JsValue> {
    call(request, kernel_curves).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = priorDraws)]
pub fn prior_draws_js(request: &str) -> std::result::Result<String, JsValue> {
    call(request, prior_draws).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = syntheticFit)]
pub fn synthetic_fit_js(request: &str) -> std::result::Result<String, JsValue> {
    call(request, synthetic_fit).map_err(|e| JsValue::from_str(&e))
}

/// Native entry point with the same contract as the browser exports.
pub fn dispatch(operation: &str, request: &str) -> std::result::Result<String, String> {
    match operation {
        "kernelCurves" => call(request, kernel_curves),
        "priorDraws" => call(request, prior_draws),
        "syntheticFit" => call(request, synthetic_fit),
        other => Err(format!("unknown operation {other:?}")),
    }
}
