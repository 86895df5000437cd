use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::FeatureConfig;
use crate::eval::{binary_metrics, segmentation_metrics, TrackPair, SEG_CLASSES};
use crate::labels::{rasterize, segments_from_frames, FrameTrack, TurnState, STEP_MS};
use crate::nn::{grad_check, toy_sample, ArchKind};
use crate::wire::{decode_request, decode_response, encode_request, encode_response, VerdictRequest, GOLDEN_REQUEST, VerdictResponse};

const GRAD_TOL: f64 = 1e-4;
const METRIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn grad(kind: ArchKind) -> Result<String, String> {
    let floor = FeatureConfig::default().floor_value();
    let err = grad_check(kind, &toy_sample(kind, 11), 1e-4, 11, floor).map_err(|e| e.to_string())?;
    if err < GRAD_TOL {
        Ok(format!("max relative error {err:.2e}"))
    } else {
        Err(format!("max relative error {err:.2e} >= {GRAD_TOL:.0e}"))
    }
}

fn random_states(rng: &mut ChaCha8Rng, n: usize) -> Vec<TurnState> {
    (0..n).map(|_| TurnState::ALL[rng.random_range(0..3)]).collect()
}

fn segmentation_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let n = rng.random_range(1..=50);
        let pred = random_states(&mut rng, n);
        let truth = random_states(&mut rng, n);
        let report = segmentation_metrics(&[TrackPair {
            sample_id: format!("case{case}"),
            pred: FrameTrack::new(pred.clone()),
            truth: FrameTrack::new(truth.clone()),
        }])
        .map_err(|e| e.to_string())?;
        for c in SEG_CLASSES {
            let a: BTreeSet<usize> = (0..n).filter(|&i| pred[i] == c).collect();
            let b: BTreeSet<usize> = (0..n).filter(|&i| truth[i] == c).collect();
            let inter = a.intersection(&b).count() as f64;
            let union = a.union(&b).count() as f64;
            let iou = if union == 0.0 { 0.0 } else { inter / union };
            let sizes = (a.len() + b.len()) as f64;
            let f1 = if sizes == 0.0 { 0.0 } else { 2.0 * inter / sizes };
            let got = report.class(c).expect("every class reported");
            if (got.iou - iou).abs() > METRIC_TOL || (got.f1 - f1).abs() > METRIC_TOL {
                return Err(format!("case {case} class {c}: iou {} vs {iou}, f1 {} vs {f1}", got.iou, got.f1));
            }
        }
    }
    Ok("100 random cases agree with set counting".into())
}

fn binary_oracle() -> Result<String, String> {
    use TurnState::{Gap, Pause};
    let r = binary_metrics(&[Gap, Pause, Pause, Pause], &[Gap, Gap, Pause, Pause]).map_err(|e| e.to_string())?;
    let want_f1 = (2.0 / 3.0 + 0.8) / 2.0;
    if (r.accuracy - 0.75).abs() > METRIC_TOL || (r.f1 - want_f1).abs() > METRIC_TOL {
        return Err(format!("accuracy {} f1 {} (want 0.75, {want_f1})", r.accuracy, r.f1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..100 {
        let n = rng.random_range(1..=50);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<TurnState> { (0..n).map(|_| if rng.random() { Gap } else { Pause }).collect() };
        let pred = draw(&mut rng);
        let truth = draw(&mut rng);
        let r = binary_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        if (r.accuracy - correct as f64 / n as f64).abs() > METRIC_TOL {
            return Err(format!("case {case}: accuracy {}", r.accuracy));
        }
        let mut f1s = 0.0;
        for c in [Pause, Gap] {
            let tp = (0..n).filter(|&i| pred[i] == c && truth[i] == c).count() as f64;
            let p = (0..n).filter(|&i| pred[i] == c).count() as f64;
            let t = (0..n).filter(|&i| truth[i] == c).count() as f64;
            let prec = if p == 0.0 { 0.0 } else { tp / p };
            let rec = if t == 0.0 { 0.0 } else { tp / t };
            f1s += if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        }
        if (r.f1 - f1s / 2.0).abs() > METRIC_TOL {
            return Err(format!("case {case}: macro f1 {} vs {}", r.f1, f1s / 2.0));
        }
    }
    Ok("hand count and 100 random cases agree".into())
}

fn label_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for case in 0..100 {
        let n = rng.random_range(1..=50);
        let frames = FrameTrack::new(random_states(&mut rng, n));
        let back = rasterize(&segments_from_frames(&frames), STEP_MS).map_err(|e| e.to_string())?;
        if back != frames {
            return Err(format!("case {case}: round trip changed the labels"));
        }
    }
    Ok("100 random tracks".into())
}

fn wire_golden() -> Result<String, String> {
    let req = VerdictRequest::new(1, vec![0, 1, -1, 32767]);
    let bytes = encode_request(&req).map_err(|e| e.to_string())?;
    if bytes != GOLDEN_REQUEST {
        return Err(format!("request encodes to {bytes:02X?}"));
    }
    if decode_request(&GOLDEN_REQUEST).map_err(|e| e.to_string())? != req {
        return Err("golden request decodes differently".into());
    }
    let resp = VerdictResponse::from_p_gap(1, 0.75);
    let rbytes = encode_response(&resp);
    if rbytes.len() != 18 || decode_response(&rbytes).map_err(|e| e.to_string())? != resp {
        return Err("response round trip failed".into());
    }
    Ok("request and response bytes exact".into())
}

/// Runs every check; none of them needs files or the network.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("grad_check_light", grad(ArchKind::Light)),
        check("grad_check_heavy", grad(ArchKind::Heavy)),
        check("segmentation_metrics_oracle", segmentation_oracle()),
        check("binary_metrics_oracle", binary_oracle()),
        check("label_round_trip", label_round_trip()),
        check("wire_golden_vectors", wire_golden()),
    ]
}
