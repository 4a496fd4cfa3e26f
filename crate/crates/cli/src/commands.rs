use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use cmde::cmgp;
use cmde::datagen::{write_dataset, Dataset};
use cmde::ensemble::{write_predictions_csv, Cmde};
use cmde::kernelcheck::{convergence_sweep, ConvergenceReport};
use cmde::learner::ModelSpec;
use cmde::metrics::{evaluate, MetricReport};
use cmde::numerics::SeededRng;
use cmde::synthetic::{grid_curves, run_synthetic, GridCurves, SyntheticOutcome};

use crate::config::{
    load, resolve, CliError, CliResult, DataSource, EvalConfig, FigSyntheticConfig, GenConfig, GpFitConfig, KernelCheckConfig,
    PredictConfig, TrainConfig,
};
use crate::plot::{render, Panel, Series};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Gen,
    Train,
    Predict,
    GpFit,
    Eval,
    KernelCheck,
    FigSynthetic,
}

/// Inputs shared by every command.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Invocation {
    fn base_dir(&self) -> PathBuf {
        let dir = self.config.parent().unwrap_or(Path::new("."));
        std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf())
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare<T: Serialize>(&self, resolved: &T) -> CliResult<()> {
        fs::create_dir_all(&self.out)?;
        let text = serde_json::to_string_pretty(resolved).map_err(cmde::Error::from)?;
        fs::write(self.output(RESOLVED_CONFIG), text + "\n")?;
        Ok(())
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(cmde::Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Rejects a malformed model before any data is touched.
fn check_model(model: &ModelSpec) -> CliResult<()> {
    model
        .coregionalization
        .validate()
        .map_err(|e| CliError::field("model.coregionalization", e.to_string()))?;
    let q = model.coregionalization.groups();
    if model.architectures.len() != 1 && model.architectures.len() != q {
        return Err(CliError::field("model.architectures", format!("need 1 or {q} entries")));
    }
    for (i, a) in model.architectures.iter().enumerate() {
        if !(a.sigma_w2 > 0.0) || !a.sigma_w2.is_finite() {
            return Err(CliError::field(&format!("model.architectures[{i}].sigma_w2"), "must be positive"));
        }
        if a.hidden.is_empty() || a.hidden.contains(&0) {
            return Err(CliError::field(&format!("model.architectures[{i}].hidden"), "need at least one non-empty layer"));
        }
    }
    Ok(())
}

fn check_data(data: &mut DataSource, field: &str, base: &Path, seed: Option<u64>) -> CliResult<()> {
    data.validate(field)?;
    data.resolve(base);
    if let (Some(s), Some(g)) = (seed, data.generate.as_mut()) {
        g.set_seed(s);
    }
    Ok(())
}

pub fn run(kind: CommandKind, inv: &Invocation) -> CliResult<()> {
    match kind {
        CommandKind::Gen => gen(inv),
        CommandKind::Train => train(inv),
        CommandKind::Predict => predict(inv),
        CommandKind::GpFit => gp_fit(inv),
        CommandKind::Eval => eval(inv),
        CommandKind::KernelCheck => kernel_check(inv),
        CommandKind::FigSynthetic => fig_synthetic(inv),
    }
}

fn gen(inv: &Invocation) -> CliResult<()> {
    let mut cfg: GenConfig = load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.data.set_seed(s);
    }
    inv.prepare(&cfg)?;
    let data = cfg.data.generate()?;
    write_dataset(&data, &inv.output("data.csv"))?;
    log::info!("wrote {} rows", data.len());
    Ok(())
}

fn train(inv: &Invocation) -> CliResult<()> {
    let mut cfg: TrainConfig = load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    check_data(&mut cfg.data, "data", &inv.base_dir(), None)?;
    check_model(&cfg.model)?;
    cfg.training.validate().map_err(|e| CliError::field("training", e.to_string()))?;
    if cfg.members == 0 {
        return Err(CliError::field("members", "need at least one baselearner"));
    }
    inv.prepare(&cfg)?;
    let data = cfg.data.load()?;
    let mut ensemble = Cmde::new(cfg.model.clone(), cfg.members, data.dim(), cfg.seed, cfg.training.clone())?;
    let report = ensemble.train(&data, &mut SeededRng::new(cfg.seed.wrapping_add(1)))?;
    fs::write(inv.output("checkpoint.json"), ensemble.to_json()?)?;
    report.write_csv(create(&inv.output("training_report.csv"))?)?;
    if let Some(last) = report.epochs.last() {
        log::info!("final risk {:.6e}, factual MSE {:.6e}", last.risk, last.factual_mse);
    }
    Ok(())
}

fn predict(inv: &Invocation) -> CliResult<()> {
    let mut cfg: PredictConfig = load(&inv.config)?;
    let base = inv.base_dir();
    resolve(&base, &mut cfg.checkpoint);
    match (&mut cfg.data, &cfg.grid) {
        (Some(d), None) => check_data(d, "data", &base, inv.seed)?,
        (None, Some(g)) => g.validate("grid")?,
        _ => return Err(CliError::config("set exactly one of `data` and `grid`")),
    }
    inv.prepare(&cfg)?;
    let text = fs::read_to_string(&cfg.checkpoint)?;
    let ensemble = Cmde::from_json(&text)?;
    let xs = match (&cfg.data, &cfg.grid) {
        (Some(d), _) => d.load()?.rows(),
        (_, Some(g)) => g.rows(),
        _ => unreachable!(),
    };
    let est = ensemble.predict(&xs)?;
    write_predictions_csv(&xs, &est, create(&inv.output("predictions.csv"))?)?;
    Ok(())
}

fn gp_fit(inv: &Invocation) -> CliResult<()> {
    let mut cfg: GpFitConfig = load(&inv.config)?;
    check_data(&mut cfg.data, "data", &inv.base_dir(), inv.seed)?;
    if let Some(g) = &cfg.grid {
        g.validate("grid")?;
    }
    let kernel = cfg.oracle.kernel().map_err(|e| CliError::field("oracle", e.to_string()))?;
    if !(cfg.oracle.noise_variance >= 0.0) {
        return Err(CliError::field("oracle.noise_variance", "must be >= 0"));
    }
    inv.prepare(&cfg)?;
    let data = cfg.data.load()?;
    let gp = cmgp::fit(&data, &kernel, cfg.oracle.noise_variance)?;
    let xs = cfg.grid.map_or_else(|| data.rows(), |g| g.rows());
    let rows = gp.posterior(&xs)?;
    cmgp::write_posterior_csv(&xs, &rows, create(&inv.output("oracle_predictions.csv"))?)?;
    log::info!("oracle fitted on {} rows, jitter {:e}", gp.len(), gp.jitter());
    Ok(())
}

/// `yhat0`, `yhat1` columns of a predictions CSV.
fn read_predictions(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(cmde::Error::from)?;
    let headers = r.headers().map_err(cmde::Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Runtime(cmde::Error::Schema(format!("{} has no `{name}` column", path.display()))))
    };
    let (c0, c1) = (col("yhat0")?, col("yhat1")?);
    let (mut y0, mut y1) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(cmde::Error::from)?;
        for (c, dst) in [(c0, &mut y0), (c1, &mut y1)] {
            let s = rec.get(c).unwrap_or("");
            let v = s.trim().parse::<f64>().map_err(|e| cmde::Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("{s:?}: {e}"),
            })?;
            dst.push(v);
        }
    }
    Ok((y1, y0))
}

#[derive(Serialize)]
struct MetricRow<'a> {
    dataset: &'a str,
    model: &'a str,
    metric: &'a str,
    value: String,
    n: usize,
}

fn eval(inv: &Invocation) -> CliResult<()> {
    let mut cfg: EvalConfig = load(&inv.config)?;
    let base = inv.base_dir();
    check_data(&mut cfg.data, "data", &base, inv.seed)?;
    resolve(&base, &mut cfg.predictions);
    if cfg.metrics.is_empty() {
        return Err(CliError::field("metrics", "select at least one metric"));
    }
    inv.prepare(&cfg)?;
    let data: Dataset = cfg.data.load()?;
    let (yhat1, yhat0) = read_predictions(&cfg.predictions)?;
    if yhat1.len() != data.len() {
        return Err(cmde::Error::LengthMismatch {
            left: data.len(),
            right: yhat1.len(),
        }
        .into());
    }
    let reports = cfg
        .metrics
        .iter()
        .map(|&m| evaluate(m, &data, &yhat1, &yhat0, cfg.ate_true))
        .collect::<Result<Vec<MetricReport>, _>>()?;
    write_json(&inv.output("metrics.json"), &reports)?;

    let stem = |p: &Path| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let dataset = cfg.data.path.as_deref().map_or_else(|| "generated".to_string(), stem);
    let model = stem(&cfg.predictions);
    let mut w = csv::Writer::from_writer(create(&inv.output("metrics.csv"))?);
    for r in &reports {
        w.serialize(MetricRow {
            dataset: &dataset,
            model: &model,
            metric: r.metric.name(),
            value: cmde::datagen::format_f64(r.value),
            n: r.n,
        })
        .map_err(cmde::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn convergence_plot(report: &ConvergenceReport) -> String {
    let mut series = Vec::new();
    let (mut px, mut py) = (Vec::new(), Vec::new());
    for w in &report.widths {
        for e in &w.errors {
            px.push(w.width as f64);
            py.push(*e);
        }
    }
    series.push(Series::points("replicates", "#888888", px, py, 3.0));
    series.push(Series::line(
        "mean",
        "#1f77b4",
        report.widths.iter().map(|w| w.width as f64).collect(),
        report.widths.iter().map(|w| w.mean_error).collect(),
    ));
    render(&[Panel {
        title: format!("Prior covariance error ({} draws)", report.draws),
        x_label: "hidden width".into(),
        y_label: "relative Frobenius error".into(),
        log_x: true,
        series,
    }])
}

fn kernel_check(inv: &Invocation) -> CliResult<()> {
    let mut cfg: KernelCheckConfig = load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    check_model(&cfg.model)?;
    if cfg.widths.len() < 2 || cfg.widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::field("widths", "need at least 2 strictly increasing widths"));
    }
    if cfg.grid.is_empty() || cfg.grid.iter().any(|p| p.len() != cfg.grid[0].len()) {
        return Err(CliError::field("grid", "need a non-empty grid of equal-length points"));
    }
    if cfg.draws < 2 || cfg.replicates == 0 {
        return Err(CliError::config("need draws >= 2 and replicates >= 1"));
    }
    inv.prepare(&cfg)?;
    let report = convergence_sweep(&cfg.model, &cfg.widths, cfg.draws, &cfg.grid, cfg.seed, cfg.replicates)?;
    write_json(&inv.output("convergence.json"), &report)?;
    report.write_csv(create(&inv.output("convergence.csv"))?)?;
    fs::write(inv.output("convergence.svg"), convergence_plot(&report))?;
    Ok(())
}

fn curves_csv(curves: &GridCurves, path: &Path) -> CliResult<()> {
    let f = cmde::datagen::format_f64;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = [
        "x",
        "cmde_mean0",
        "cmde_mean1",
        "cmde_sd0",
        "cmde_sd1",
        "cmde_cate",
        "cmde_cate_sd",
        "oracle_mean0",
        "oracle_mean1",
        "oracle_sd0",
        "oracle_sd1",
        "oracle_cate",
        "oracle_cate_sd",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(curves.component_labels.iter().map(|l| format!("component_{l}")));
    w.write_record(&header).map_err(cmde::Error::from)?;
    for i in 0..curves.x.len() {
        let (c, o) = (&curves.cmde[i], &curves.oracle[i]);
        let mut rec = vec![
            f(curves.x[i][0]),
            f(c.mean[0]),
            f(c.mean[1]),
            f(c.variance[0].sqrt()),
            f(c.variance[1].sqrt()),
            f(c.cate_mean),
            f(c.cate_variance.sqrt()),
            f(o.mean[0]),
            f(o.mean[1]),
            f(o.sd(0)),
            f(o.sd(1)),
            f(o.cate_mean()),
            f(o.cate_variance().sqrt()),
        ];
        rec.extend(curves.components[i].iter().map(|&v| f(v)));
        w.write_record(&rec).map_err(cmde::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn band(label: &str, color: &'static str, x: &[f64], mean: &[f64], sd: &[f64]) -> Series {
    Series::band(
        label,
        color,
        x.to_vec(),
        mean.iter().zip(sd).map(|(m, s)| m - 2.0 * s).collect(),
        mean.iter().zip(sd).map(|(m, s)| m + 2.0 * s).collect(),
    )
}

fn synthetic_figure(outcome: &SyntheticOutcome, curves: &GridCurves) -> String {
    let x: Vec<f64> = curves.x.iter().map(|p| p[0]).collect();
    let pick = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let data = &outcome.data;
    let split = |arm: usize| {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.t[i] == arm).collect();
        (
            idx.iter().map(|&i| data.row(i)[0]).collect::<Vec<_>>(),
            idx.iter().map(|&i| data.y[i]).collect::<Vec<_>>(),
        )
    };
    let (x0, y0) = split(0);
    let (x1, y1) = split(1);
    let (c0, c1) = (pick(&|i| curves.cmde[i].mean[0]), pick(&|i| curves.cmde[i].mean[1]));
    let (s0, s1) = (
        pick(&|i| curves.cmde[i].variance[0].sqrt()),
        pick(&|i| curves.cmde[i].variance[1].sqrt()),
    );
    let (o0, o1) = (pick(&|i| curves.oracle[i].mean[0]), pick(&|i| curves.oracle[i].mean[1]));
    let outcomes = Panel {
        title: "Potential outcomes".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        log_x: false,
        series: vec![
            Series::points("control", "#9ecae1", x0, y0, 1.5),
            Series::points("treated", "#fdae6b", x1, y1, 1.5),
            band("ensemble ±2 sd, t=0", "#1f77b4", &x, &c0, &s0),
            band("ensemble ±2 sd, t=1", "#d62728", &x, &c1, &s1),
            Series::line("ensemble mean, t=0", "#1f77b4", x.clone(), c0),
            Series::line("ensemble mean, t=1", "#d62728", x.clone(), c1),
            Series::line("GP mean, t=0", "#08306b", x.clone(), o0).dashed(),
            Series::line("GP mean, t=1", "#67000d", x.clone(), o1).dashed(),
        ],
    };
    let cc = pick(&|i| curves.cmde[i].cate_mean);
    let cs = pick(&|i| curves.cmde[i].cate_variance.sqrt());
    let oc = pick(&|i| curves.oracle[i].cate_mean());
    let os = pick(&|i| curves.oracle[i].cate_variance().sqrt());
    let effects = Panel {
        title: "Treatment effect".into(),
        x_label: "x".into(),
        y_label: "CATE".into(),
        log_x: false,
        series: vec![
            band("ensemble ±2 sd", "#2ca02c", &x, &cc, &cs),
            band("GP ±2 sd", "#9467bd", &x, &oc, &os),
            Series::line("ensemble", "#2ca02c", x.clone(), cc),
            Series::line("GP", "#9467bd", x.clone(), oc).dashed(),
            Series::line("true", "#000000", x.clone(), vec![1.0; x.len()]).dashed(),
        ],
    };
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let parts = Panel {
        title: "Ensemble components".into(),
        x_label: "x".into(),
        y_label: "coefficient × network".into(),
        log_x: false,
        series: curves
            .component_labels
            .iter()
            .enumerate()
            .map(|(n, label)| {
                let coef = label.replacen("f_", "α_", 1);
                Series::line(&format!("{coef} {label}"), COLORS[n % COLORS.len()], x.clone(), pick(&|i| curves.components[i][n]))
            })
            .collect(),
    };
    render(&[outcomes, effects, parts])
}

fn fig_synthetic(inv: &Invocation) -> CliResult<()> {
    let mut cfg: FigSyntheticConfig = load(&inv.config)?;
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    check_model(&cfg.model())?;
    cfg.training.validate().map_err(|e| CliError::field("training", e.to_string()))?;
    if cfg.members == 0 || cfg.grid_points < 2 {
        return Err(CliError::config("need members >= 1 and grid_points >= 2"));
    }
    inv.prepare(&cfg)?;
    let outcome = run_synthetic(&cfg)?;
    let curves = grid_curves(&cfg, &outcome)?;
    write_dataset(&outcome.data, &inv.output("data.csv"))?;
    outcome.report.write_csv(create(&inv.output("training_report.csv"))?)?;
    curves_csv(&curves, &inv.output("fig_synthetic.csv"))?;
    write_json(&inv.output("summary.json"), &outcome.summary)?;
    fs::write(inv.output("fig_synthetic.svg"), synthetic_figure(&outcome, &curves))?;
    Ok(())
}
