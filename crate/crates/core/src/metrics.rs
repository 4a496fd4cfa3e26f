//! Treatment-effect evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};

fn same_len(lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if let Some(&other) = lens.iter().find(|&&l| l != n) {
        return Err(Error::LengthMismatch { left: n, right: other });
    }
    if n == 0 {
        return Err(Error::EmptyPredictions);
    }
    Ok(n)
}

fn mean_squared_effect_gap(a1: &[f64], a0: &[f64], yhat1: &[f64], yhat0: &[f64]) -> Result<f64> {
    let n = same_len(&[a1.len(), a0.len(), yhat1.len(), yhat0.len()])?;
    let sum: f64 = (0..n)
        .map(|i| ((a1[i] - a0[i]) - (yhat1[i] - yhat0[i])).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// Mean squared error of predicted effects against the true mean effects.
pub fn pehe(mu1: &[f64], mu0: &[f64], yhat1: &[f64], yhat0: &[f64]) -> Result<f64> {
    mean_squared_effect_gap(mu1, mu0, yhat1, yhat0)
}

/// As [`pehe`], with observed paired outcomes in place of the means.
pub fn empirical_pehe(y1: &[f64], y0: &[f64], yhat1: &[f64], yhat0: &[f64]) -> Result<f64> {
    mean_squared_effect_gap(y1, y0, yhat1, yhat0)
}

/// Treat when the predicted treated outcome is strictly larger; ties decline.
pub fn policy_from_predictions(yhat1: &[f64], yhat0: &[f64]) -> Vec<usize> {
    yhat1.iter().zip(yhat0).map(|(a, b)| usize::from(a > b)).collect()
}

/// `1 − mean of factual outcomes over rows where the policy agrees with t`.
pub fn policy_risk(y_factual: &[f64], t: &[usize], policy: &[usize]) -> Result<f64> {
    let n = same_len(&[y_factual.len(), t.len(), policy.len()])?;
    let (mut sum, mut matched) = (0.0, 0usize);
    for i in 0..n {
        if policy[i] == t[i] {
            sum += y_factual[i];
            matched += 1;
        }
    }
    if matched == 0 {
        return Err(Error::NoMatchedRows);
    }
    Ok(1.0 - sum / matched as f64)
}

/// `|ate_true − mean(ŷ¹ − ŷ⁰)|`
pub fn ate_error(ate_true: f64, yhat1: &[f64], yhat0: &[f64]) -> Result<f64> {
    let n = same_len(&[yhat1.len(), yhat0.len()])?;
    let est = yhat1.iter().zip(yhat0).map(|(a, b)| a - b).sum::<f64>() / n as f64;
    Ok((ate_true - est).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Pehe,
    EmpiricalPehe,
    PolicyRisk,
    AteError,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [Self::Pehe, Self::EmpiricalPehe, Self::PolicyRisk, Self::AteError];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pehe => "pehe",
            Self::EmpiricalPehe => "empirical_pehe",
            Self::PolicyRisk => "policy_risk",
            Self::AteError => "ate_error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub value: f64,
    pub n: usize,
    /// Ground-truth columns the value was computed from.
    pub columns: Vec<String>,
}

/// Evaluates `metric` for predictions on `ds`. `ate_true` overrides the
/// mean of `μ¹ − μ⁰` for the ATE error.
pub fn evaluate(metric: MetricKind, ds: &Dataset, yhat1: &[f64], yhat0: &[f64], ate_true: Option<f64>) -> Result<MetricReport> {
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
    let (value, columns) = match metric {
        MetricKind::Pehe => {
            let mu1 = ds.mu1.as_ref().ok_or(Error::MissingGroundTruth("mu1"))?;
            let mu0 = ds.mu0.as_ref().ok_or(Error::MissingGroundTruth("mu0"))?;
            (pehe(mu1, mu0, yhat1, yhat0)?, cols(&["mu0", "mu1"]))
        }
        MetricKind::EmpiricalPehe => {
            let y1 = ds.y1.as_ref().ok_or(Error::MissingGroundTruth("y1"))?;
            let y0 = ds.y0.as_ref().ok_or(Error::MissingGroundTruth("y0"))?;
            (empirical_pehe(y1, y0, yhat1, yhat0)?, cols(&["y0", "y1"]))
        }
        MetricKind::PolicyRisk => {
            let policy = policy_from_predictions(yhat1, yhat0);
            (policy_risk(&ds.y, &ds.t, &policy)?, cols(&["t", "y"]))
        }
        MetricKind::AteError => match ate_true {
            Some(a) => (ate_error(a, yhat1, yhat0)?, cols(&["ate_true"])),
            None => {
                let cate = ds.true_cate().ok_or(Error::MissingGroundTruth("mu0/mu1"))?;
                let a = cate.iter().sum::<f64>() / cate.len() as f64;
                (ate_error(a, yhat1, yhat0)?, cols(&["mu0", "mu1"]))
            }
        },
    };
    Ok(MetricReport {
        metric,
        value,
        n: yhat1.len(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_synthetic;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[2.0, 3.0], &[1.0, 1.0], &[2.0, 3.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(pehe(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(pehe(&[1.0], &[0.0, 1.0], &[1.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn synthetic_identities() {
        let ds = generate_synthetic(&mut SeededRng::new(1), 500).unwrap();
        let (mu0, mu1) = (ds.mu0.clone().unwrap(), ds.mu1.clone().unwrap());
        let ones: Vec<f64> = vec![1.0; ds.len()];
        let zeros: Vec<f64> = vec![0.0; ds.len()];
        assert_eq!(pehe(&mu1, &mu0, &ones, &zeros).unwrap(), 0.0);
        assert_eq!(evaluate(MetricKind::EmpiricalPehe, &ds, &mu1, &mu0, None).unwrap().value, 0.0);
        assert_eq!(evaluate(MetricKind::EmpiricalPehe, &ds, &zeros, &zeros, None).unwrap().value, 1.0);
        assert_eq!(ate_error(1.0, &ones, &zeros).unwrap(), 0.0);
        assert_eq!(evaluate(MetricKind::AteError, &ds, &ones, &zeros, None).unwrap().value, 0.0);
    }

    #[test]
    fn policy_risk_examples() {
        assert_eq!(policy_risk(&[1.0, 1.0], &[1, 0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(policy_risk(&[1.0, 0.0], &[1, 0], &[1, 0]).unwrap(), 0.5);
        assert!(matches!(policy_risk(&[1.0, 0.0], &[1, 0], &[0, 1]), Err(Error::NoMatchedRows)));
        assert_eq!(policy_from_predictions(&[1.0, 2.0, 0.0], &[1.0, 1.0, 3.0]), vec![0, 1, 0]);
    }

    #[test]
    fn ate_examples() {
        assert!((ate_error(1.0, &[0.5, 0.9], &[0.0, 0.0]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(ate_error(1.0, &[], &[]), Err(Error::EmptyPredictions)));
    }

    #[test]
    fn pehe_refuses_without_means() {
        let mut ds = generate_synthetic(&mut SeededRng::new(2), 10).unwrap();
        ds.mu1 = None;
        let z = vec![0.0; 10];
        assert!(matches!(
            evaluate(MetricKind::Pehe, &ds, &z, &z, None),
            Err(Error::MissingGroundTruth("mu1"))
        ));
        let r = evaluate(MetricKind::PolicyRisk, &ds, &z, &z, None).unwrap();
        assert_eq!(r.columns, vec!["t", "y"]);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"metric\":\"policy_risk\""));
    }

    proptest! {
        #[test]
        fn effect_translation_invariance(
            rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..40),
            shift in -10.0..10.0f64,
        ) {
            let (m1, m0, h1, h0): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = rows.iter().fold(
                (vec![], vec![], vec![], vec![]),
                |mut acc, r| { acc.0.push(r.0); acc.1.push(r.1); acc.2.push(r.2); acc.3.push(r.3); acc },
            );
            let s1: Vec<f64> = h1.iter().map(|v| v + shift).collect();
            let s0: Vec<f64> = h0.iter().map(|v| v + shift).collect();
            let a = pehe(&m1, &m0, &h1, &h0).unwrap();
            let b = pehe(&m1, &m0, &s1, &s0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            let a = empirical_pehe(&m1, &m0, &h1, &h0).unwrap();
            let b = empirical_pehe(&m1, &m0, &s1, &s0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn policy_risk_scale_invariance(
            rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0usize..2, 0.0..1.0f64), 1..40),
            scale in 0.01..100.0f64,
        ) {
            let h1: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let h0: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let t: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let p = policy_from_predictions(&h1, &h0);
            let ps = policy_from_predictions(
                &h1.iter().map(|v| v * scale).collect::<Vec<_>>(),
                &h0.iter().map(|v| v * scale).collect::<Vec<_>>(),
            );
            prop_assert_eq!(&p, &ps);
            match (policy_risk(&y, &t, &p), policy_risk(&y, &t, &ps)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(Error::NoMatchedRows), Err(Error::NoMatchedRows)) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }

        #[test]
        fn row_permutation_invariance(
            rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 2..30),
            seed in 0u64..1000,
        ) {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            SeededRng::new(seed).shuffle(&mut idx);
            let col = |k: usize, order: &[usize]| -> Vec<f64> {
                order.iter().map(|&i| [rows[i].0, rows[i].1, rows[i].2, rows[i].3][k]).collect()
            };
            let id: Vec<usize> = (0..rows.len()).collect();
            let a = pehe(&col(0, &id), &col(1, &id), &col(2, &id), &col(3, &id)).unwrap();
            let b = pehe(&col(0, &idx), &col(1, &idx), &col(2, &idx), &col(3, &idx)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            let a = ate_error(0.3, &col(2, &id), &col(3, &id)).unwrap();
            let b = ate_error(0.3, &col(2, &idx), &col(3, &idx)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
