use cmde_web::{dispatch, kernel_curves, prior_draws, synthetic_fit, FitRequest, KernelRequest, PriorRequest};
use cmde::learner::IcmCoefficients;
use cmde::nets::Activation;

fn alpha(h: f64, t: f64, ht: f64) -> IcmCoefficients {
    IcmCoefficients { alpha_h: h, alpha_t: t, alpha_ht: ht }
}

#[test]
fn kernel_curve_peaks_are_symmetric_for_relu_at_origin() {
    let req = KernelRequest {
        activation: Activation::Relu,
        sigma_w2: 1.0,
        depth: 1,
        anchors: vec![0.0, 2.0],
        from: -3.0,
        to: 3.0,
        points: 61,
    };
    let out = kernel_curves(&req).unwrap();
    assert_eq!(out.x.len(), 61);
    let at_origin = &out.curves[0].values;
    for i in 0..61 {
        assert!((at_origin[i] - at_origin[60 - i]).abs() < 1e-12);
    }
    // k(0, 0) = σ²(1 + σ²/2)
    assert!((at_origin[30] - 1.5).abs() < 1e-12);
}

#[test]
fn prior_draws_have_shared_only_zero_effect() {
    let req = PriorRequest {
        activation: Activation::Erf,
        sigma_w2: 0.1,
        width: 64,
        draws: 5,
        seed: 3,
        alpha: alpha(0.0, 0.0, 1.0),
        from: -4.0,
        to: 4.0,
        points: 9,
    };
    let out = prior_draws(&req).unwrap();
    assert_eq!(out.draws.len(), 5);
    for d in &out.draws {
        assert_eq!(d.f0, d.f1);
    }
    assert!(out.cate_sd.iter().all(|&s| s == 0.0));
    assert_eq!(out.sd0, out.sd1);
}

#[test]
fn synthetic_fit_tracks_the_unit_effect() {
    let req = FitRequest {
        n: 300,
        seed: 1,
        alpha: alpha(1.0, 1.0, 1.0),
        sigma_w2: 0.1,
        noise_variance: 0.0025,
        from: -2.0,
        to: 2.0,
        points: 21,
    };
    let out = synthetic_fit(&req).unwrap();
    assert_eq!(out.data_x.len(), 300);
    assert!(out.cate.iter().all(|c| (c - 1.0).abs() < 0.15), "{:?}", out.cate);
    assert!(out.sqrt_pehe < 0.3);
}

#[test]
fn json_dispatch_and_errors() {
    let ok = dispatch(
        "kernelCurves",
        r#"{"activation":"erf","sigma_w2":0.1,"depth":1,"anchors":[1],"from":-1,"to":1,"points":3}"#,
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok).unwrap();
    assert_eq!(v["x"].as_array().unwrap().len(), 3);
    assert!(dispatch("kernelCurves", r#"{"activation":"nope"}"#).unwrap_err().starts_with("bad request"));
    assert!(dispatch("priorDraws", r#"{"activation":"erf","sigma_w2":0.1,"width":0,"draws":1,"seed":0,"alpha":{"alpha_h":0,"alpha_t":0,"alpha_ht":1},"from":0,"to":1,"points":2}"#).is_err());
    assert!(dispatch("train", "{}").is_err());
}
