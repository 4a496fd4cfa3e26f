//! Data-generating processes and dataset file IO.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};

/// Propensities produced by ratio normalization are clamped to `[ε, 1−ε]`.
pub const PROPENSITY_CLAMP: f64 = 1e-3;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rounds to a multiple of 2⁻⁵¹. Values below 4 on this grid add and subtract
/// exactly, so outcomes sharing one noise draw differ by exactly 1.
fn snap(v: f64) -> f64 {
    const GRID: f64 = 4503599627370496.0 / 2.0; // 2^51
    (v * GRID).round() / GRID
}

/// Observational data with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub t: Vec<usize>,
    pub y: Vec<f64>,
    pub y0: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub propensity: Option<Vec<f64>>,
    /// Half-open covariate ranges, one per modality.
    pub modalities: Option<Vec<[usize; 2]>>,
}

impl Dataset {
    /// Factual-only dataset.
    pub fn new(x: DenseMatrix, t: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        let ds = Self {
            x,
            t,
            y,
            y0: None,
            y1: None,
            mu0: None,
            mu1: None,
            propensity: None,
            modalities: None,
        };
        ds.validate(None)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Checks shapes and, when `arms` is given, that every `t < arms`.
    pub fn validate(&self, arms: Option<usize>) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let same = |len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::LengthMismatch { left: n, right: len })
            }
        };
        same(self.x.rows())?;
        same(self.y.len())?;
        for col in [&self.y0, &self.y1, &self.mu0, &self.mu1, &self.propensity].into_iter().flatten() {
            same(col.len())?;
        }
        if let Some(arms) = arms {
            if let Some((row, &value)) = self.t.iter().enumerate().find(|(_, &t)| t >= arms) {
                return Err(if arms == 2 {
                    Error::NonBinaryTreatment { row, value }
                } else {
                    Error::InvalidArgument(format!("row {row}: treatment {value} outside 0..{arms}"))
                });
            }
        }
        if let Some(blocks) = &self.modalities {
            for &[s, e] in blocks {
                if s >= e || e > self.dim() {
                    return Err(Error::Schema(format!("modality block [{s}, {e}) out of range")));
                }
            }
        }
        Ok(())
    }

    /// `μ¹ − μ⁰` when the generator means are stored.
    pub fn true_cate(&self) -> Option<Vec<f64>> {
        Some(self.mu1.as_ref()?.iter().zip(self.mu0.as_ref()?).map(|(a, b)| a - b).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut x = DenseMatrix::zeros(idx.len(), self.dim());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).copy_from_slice(self.row(i));
        }
        Self {
            x,
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: pick(&self.y),
            y0: self.y0.as_ref().map(pick),
            y1: self.y1.as_ref().map(pick),
            mu0: self.mu0.as_ref().map(pick),
            mu1: self.mu1.as_ref().map(pick),
            propensity: self.propensity.as_ref().map(pick),
            modalities: self.modalities.clone(),
        }
    }
}

/// One-dimensional benchmark with constant unit effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_x_variance")]
    pub x_variance: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
}

fn default_n() -> usize {
    3000
}

fn default_x_variance() -> f64 {
    9.0
}

fn default_noise_variance() -> f64 {
    0.0025
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: default_n(),
            x_variance: default_x_variance(),
            noise_variance: default_noise_variance(),
        }
    }
}

/// `x ~ N(0, 9)`, `t ~ Bern(sigmoid(x))`, `μ⁰ = 1 + sigmoid(x)`,
/// `μ¹ = 2 + sigmoid(x)`, and both outcomes share one noise draw.
pub fn generate_synthetic(rng: &mut SeededRng, n: usize) -> Result<Dataset> {
    generate_synthetic_with(rng, &SyntheticSpec { n, ..SyntheticSpec::default() })
}

pub fn generate_synthetic_with(rng: &mut SeededRng, spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(spec.x_variance > 0.0) || !(spec.noise_variance >= 0.0) {
        return Err(Error::InvalidArgument("variances must be positive".into()));
    }
    let (sx, sn) = (spec.x_variance.sqrt(), spec.noise_variance.sqrt());
    let n = spec.n;
    let mut x = DenseMatrix::zeros(n, 1);
    let (mut t, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y0, mut y1, mut mu0, mut mu1, mut prop) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let xi = sx * rng.normal();
        let p = sigmoid(xi);
        let ti = usize::from(rng.bernoulli(p));
        let xi_noise = snap(sn * rng.normal());
        let p = snap(p);
        let (m0, m1) = (1.0 + p, 2.0 + p);
        x[(i, 0)] = xi;
        t.push(ti);
        mu0.push(m0);
        mu1.push(m1);
        y0.push(m0 + xi_noise);
        y1.push(m1 + xi_noise);
        y.push(if ti == 1 { m1 + xi_noise } else { m0 + xi_noise });
        prop.push(p);
    }
    Ok(Dataset {
        x,
        t,
        y,
        y0: Some(y0),
        y1: Some(y1),
        mu0: Some(mu0),
        mu1: Some(mu1),
        propensity: Some(prop),
        modalities: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseEntry {
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assignment {
    /// `t ~ Bern(p1)`
    Randomized { p1: f64 },
    /// `t ~ Bern(clamp(p2·p(x)/mean p(X)))` with `p(x) = sigmoid(β_tᵀx)`.
    PropensityLogistic { beta_t: Vec<f64>, p2: f64 },
}

/// Tabular block `X_d ~ N(0, I)` plus a one-hot categorical block `X_im`,
/// with Kronecker interaction terms in both outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSynthSpec {
    pub tabular_dim: usize,
    pub categories: usize,
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Indexes `X_d ⊗ X_d`, entry `i·D + j`.
    pub beta3: Vec<SparseEntry>,
    pub beta_t1: Vec<f64>,
    /// Indexes `X_d ⊗ X_im`, entry `i·K + k`.
    pub beta_t2: Vec<SparseEntry>,
    #[serde(default = "default_semi_noise")]
    pub noise_variance: f64,
    pub assignment: Assignment,
}

fn default_semi_noise() -> f64 {
    0.1
}

impl SemiSynthSpec {
    /// Sparse preset with a few demographic main effects, two pairwise
    /// interactions and category-dependent effects.
    pub fn clinical_preset() -> Self {
        Self {
            tabular_dim: 6,
            categories: 4,
            beta0: 1.0,
            beta1: vec![0.8, -0.5, 0.0, 0.3, 0.0, 0.0],
            beta2: vec![0.0, 0.4, -0.2, 0.6],
            beta3: vec![
                SparseEntry { index: 1, value: 0.25 },
                SparseEntry { index: 3 * 6 + 4, value: -0.3 },
            ],
            beta_t1: vec![0.5, 1.0, 1.5, 0.0],
            beta_t2: vec![
                SparseEntry { index: 0, value: 0.4 },
                SparseEntry { index: 2 * 4 + 3, value: -0.6 },
            ],
            noise_variance: 0.1,
            assignment: Assignment::PropensityLogistic {
                beta_t: vec![0.7, 0.0, -0.4, 0.0, 0.2, 0.0, 0.0, 0.5, 0.0, -0.5],
                p2: 0.3,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.tabular_dim + self.categories
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.tabular_dim, self.categories);
        if d == 0 || k == 0 {
            return Err(Error::SpecMismatch("tabular_dim and categories must be positive".into()));
        }
        let len = |name: &str, v: &[f64], want: usize| {
            if v.len() == want {
                Ok(())
            } else {
                Err(Error::SpecMismatch(format!("{name} has {} entries, expected {want}", v.len())))
            }
        };
        len("beta1", &self.beta1, d)?;
        len("beta2", &self.beta2, k)?;
        len("beta_t1", &self.beta_t1, k)?;
        let bounds = |name: &str, v: &[SparseEntry], limit: usize| {
            match v.iter().find(|e| e.index >= limit) {
                Some(e) => Err(Error::SpecMismatch(format!("{name} index {} exceeds {limit}", e.index))),
                None => Ok(()),
            }
        };
        bounds("beta3", &self.beta3, d * d)?;
        bounds("beta_t2", &self.beta_t2, d * k)?;
        if !(self.noise_variance >= 0.0) {
            return Err(Error::SpecMismatch("noise_variance must be nonnegative".into()));
        }
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        match &self.assignment {
            Assignment::Randomized { p1 } if !open_unit(*p1) => {
                Err(Error::SpecMismatch(format!("p1 = {p1} is not in (0, 1)")))
            }
            Assignment::PropensityLogistic { beta_t, p2 } => {
                len("beta_t", beta_t, d + k)?;
                if open_unit(*p2) {
                    Ok(())
                } else {
                    Err(Error::SpecMismatch(format!("p2 = {p2} is not in (0, 1)")))
                }
            }
            _ => Ok(()),
        }
    }
}

pub fn generate_semisynthetic(rng: &mut SeededRng, n: usize, spec: &SemiSynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (d, k) = (spec.tabular_dim, spec.categories);
    let sn = spec.noise_variance.sqrt();
    let mut x = DenseMatrix::zeros(n, d + k);
    let (mut mu0, mut mu1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y0, mut y1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let row = x.row_mut(i);
        for v in &mut row[..d] {
            *v = rng.normal();
        }
        let cat = rng.below(k);
        row[d + cat] = 1.0;
        let xd = &row[..d];
        let base = spec.beta0
            + xd.iter().zip(&spec.beta1).map(|(a, b)| a * b).sum::<f64>()
            + spec.beta2[cat]
            + spec.beta3.iter().map(|e| e.value * xd[e.index / d] * xd[e.index % d]).sum::<f64>();
        let effect = spec.beta_t1[cat]
            + spec
                .beta_t2
                .iter()
                .filter(|e| e.index % k == cat)
                .map(|e| e.value * xd[e.index / k])
                .sum::<f64>();
        mu0.push(base);
        mu1.push(base + effect);
        y0.push(base + sn * rng.normal());
        y1.push(base + effect + sn * rng.normal());
    }
    let propensity: Vec<f64> = match &spec.assignment {
        Assignment::Randomized { p1 } => vec![*p1; n],
        Assignment::PropensityLogistic { beta_t, p2 } => {
            let raw: Vec<f64> = (0..n)
                .map(|i| sigmoid(x.row(i).iter().zip(beta_t).map(|(a, b)| a * b).sum()))
                .collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            raw.iter()
                .map(|p| (p2 * p / mean).clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))
                .collect()
        }
    };
    let t: Vec<usize> = propensity.iter().map(|&p| usize::from(rng.bernoulli(p))).collect();
    let y = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| if ti == 1 { y1[i] } else { y0[i] })
        .collect();
    Ok(Dataset {
        x,
        t,
        y,
        y0: Some(y0),
        y1: Some(y1),
        mu0: Some(mu0),
        mu1: Some(mu1),
        propensity: Some(propensity),
        modalities: Some(vec![[0, d], [d, d + k]]),
    })
}

/// Generator selection inside a JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Synthetic {
        seed: u64,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_x_variance")]
        x_variance: f64,
        #[serde(default = "default_noise_variance")]
        noise_variance: f64,
    },
    Semisynthetic {
        seed: u64,
        n: usize,
        #[serde(default = "SemiSynthSpec::clinical_preset")]
        spec: SemiSynthSpec,
    },
}

impl GeneratorConfig {
    pub fn seed(&self) -> u64 {
        match self {
            Self::Synthetic { seed, .. } | Self::Semisynthetic { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            Self::Synthetic { seed, .. } | Self::Semisynthetic { seed, .. } => *seed = value,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        let mut rng = SeededRng::new(self.seed());
        match self {
            Self::Synthetic {
                n,
                x_variance,
                noise_variance,
                ..
            } => generate_synthetic_with(
                &mut rng,
                &SyntheticSpec {
                    n: *n,
                    x_variance: *x_variance,
                    noise_variance: *noise_variance,
                },
            ),
            Self::Semisynthetic { n, spec, .. } => generate_semisynthetic(&mut rng, *n, spec),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModalitySidecar {
    blocks: Vec<[usize; 2]>,
}

/// `data.csv` → `data.modalities.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("modalities.json")
}

fn optional_columns(ds: &Dataset) -> Vec<(&'static str, &Vec<f64>)> {
    [
        ("y0", &ds.y0),
        ("y1", &ds.y1),
        ("mu0", &ds.mu0),
        ("mu1", &ds.mu1),
        ("propensity", &ds.propensity),
    ]
    .into_iter()
    .filter_map(|(name, col)| col.as_ref().map(|c| (name, c)))
    .collect()
}

/// Shortest representation that parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate(None)?;
    let mut w = csv::Writer::from_path(path)?;
    let optional = optional_columns(ds);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x_{j}")).collect();
    header.extend(["t".to_string(), "y".to_string()]);
    header.extend(optional.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|&v| format_f64(v)).collect();
        rec.push(ds.t[i].to_string());
        rec.push(format_f64(ds.y[i]));
        rec.extend(optional.iter().map(|(_, c)| format_f64(c[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let sidecar = sidecar_path(path);
    if let Some(blocks) = &ds.modalities {
        let doc = ModalitySidecar { blocks: blocks.clone() };
        std::fs::write(&sidecar, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}

/// Reads a binary-treatment dataset.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_with_arms(path, 2)
}

pub fn read_dataset_with_arms(path: &Path, arms: usize) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut x_cols = Vec::new();
    while let Some(c) = find(&format!("x_{}", x_cols.len())) {
        x_cols.push(c);
    }
    if x_cols.is_empty() {
        return Err(Error::Schema("missing covariate column x_0".into()));
    }
    let t_col = find("t").ok_or_else(|| Error::Schema("missing column t".into()))?;
    let y_col = find("y").ok_or_else(|| Error::Schema("missing column y".into()))?;
    let opt_names = ["y0", "y1", "mu0", "mu1", "propensity"];
    let opt_cols: Vec<Option<usize>> = opt_names.iter().map(|n| find(n)).collect();

    let mut xs = Vec::new();
    let (mut t, mut y) = (Vec::new(), Vec::new());
    let mut opts: Vec<Vec<f64>> = vec![Vec::new(); opt_names.len()];
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |col: usize| -> Result<f64> {
            let s = rec.get(col).unwrap_or("");
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: headers[col].to_string(),
                message: format!("{s:?}: {e}"),
            })
        };
        for &c in &x_cols {
            xs.push(field(c)?);
        }
        let tv = field(t_col)?;
        if tv.fract() != 0.0 || tv < 0.0 || tv >= arms as f64 {
            return Err(Error::Parse {
                row,
                column: "t".into(),
                message: format!("treatment {tv} outside 0..{arms}"),
            });
        }
        t.push(tv as usize);
        y.push(field(y_col)?);
        for (slot, col) in opts.iter_mut().zip(&opt_cols) {
            if let Some(c) = col {
                slot.push(field(*c)?);
            }
        }
    }
    let n = t.len();
    let x = DenseMatrix::from_row_major(n, x_cols.len(), xs)?;
    let mut opts = opts.into_iter().zip(&opt_cols).map(|(v, c)| c.map(|_| v));
    let mut next = || opts.next().flatten();
    let sidecar = sidecar_path(path);
    let modalities = if sidecar.exists() {
        let doc: ModalitySidecar = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        Some(doc.blocks)
    } else {
        None
    };
    let ds = Dataset {
        x,
        t,
        y,
        y0: next(),
        y1: next(),
        mu0: next(),
        mu1: next(),
        propensity: next(),
        modalities,
    };
    ds.validate(Some(arms))?;
    Ok(ds)
}
