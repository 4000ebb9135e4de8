//! Clinical metrics: resection ratio, specificity in the preserved region,
//! the balanced outcome regression on RR, and accuracy/F1 across folds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FoldSplit, SubjectRecord};
use crate::error::{Error, Result};
use crate::util::{mean_std, write_atomic};

/// One event's prediction as the metrics see it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventCall {
    pub channel: String,
    pub pathological: bool,
}

/// Share of pathological predictions that fall in resected channels, or
/// `None` without any pathological prediction or resection map.
pub fn resection_ratio(calls: &[EventCall], subject: &SubjectRecord) -> Option<f64> {
    subject.resected_channels.as_ref()?;
    let path: Vec<&EventCall> = calls.iter().filter(|c| c.pathological).collect();
    if path.is_empty() {
        return None;
    }
    let inside = path.iter().filter(|c| subject.is_resected(&c.channel)).count();
    Some(inside as f64 / path.len() as f64)
}

/// Share of preserved-region events predicted non-pathological, or `None`
/// when the preserved region has no events (or there is no resection map).
pub fn specificity(calls: &[EventCall], subject: &SubjectRecord) -> Option<f64> {
    subject.resected_channels.as_ref()?;
    let preserved: Vec<&EventCall> = calls.iter().filter(|c| !subject.is_resected(&c.channel)).collect();
    if preserved.is_empty() {
        return None;
    }
    let clean = preserved.iter().filter(|c| !c.pathological).count();
    Some(clean as f64 / preserved.len() as f64)
}

/// Single-feature logistic model `P(success) = sigmoid(weight * rr + bias)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub weight: f64,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl OutcomeModel {
    pub fn logit(&self, rr: f64) -> f64 {
        self.weight * rr + self.bias
    }

    /// Success iff the logit is non-negative (a zero logit goes to the
    /// success class).
    pub fn predict(&self, rr: f64) -> bool {
        self.logit(rr) >= 0.0
    }
}

pub const OUTCOME_GRAD_TOL: f64 = 1e-8;
pub const OUTCOME_MAX_ITER: usize = 100_000;

/// Weighted mean negative log-likelihood, its gradient and Hessian.
fn weighted_nll(x: &[f64], y: &[bool], w: &[f64], theta: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let n = x.len() as f64;
    let (mut f, mut g, mut h) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let z = theta[0] * xi + theta[1];
        // log(1 + e^z) without overflow
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        f += wi * (softplus - if yi { z } else { 0.0 });
        let p = crate::tensor::sigmoid(z);
        let r = wi * (p - f64::from(u8::from(yi)));
        g[0] += r * xi;
        g[1] += r;
        let s = wi * p * (1.0 - p);
        h[0][0] += s * xi * xi;
        h[0][1] += s * xi;
        h[1][1] += s;
    }
    h[1][0] = h[0][1];
    (f / n, [g[0] / n, g[1] / n], [[h[0][0] / n, h[0][1] / n], [h[1][0] / n, h[1][1] / n]])
}

/// Fits the outcome model with per-sample weights by damped Newton steps
/// with backtracking, from `(0, 0)`, until the gradient norm drops below
/// [`OUTCOME_GRAD_TOL`].
pub fn fit_weighted_logistic(x: &[f64], y: &[bool], w: &[f64]) -> Result<OutcomeModel> {
    if x.is_empty() || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Evaluation("logistic regression needs aligned, non-empty inputs".into()));
    }
    if x.iter().chain(w).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite regression input".into()));
    }
    let mut theta = [0.0, 0.0];
    let (mut f, mut g, mut h) = weighted_nll(x, y, w, theta);
    let mut it = 0;
    while g[0].hypot(g[1]) >= OUTCOME_GRAD_TOL && it < OUTCOME_MAX_ITER {
        it += 1;
        // Levenberg damping keeps the step defined when the feature is
        // constant (singular Hessian) or the data are separable.
        let lambda = 1e-12 * (h[0][0] + h[1][1]).max(1e-300);
        let (a, b, d) = (h[0][0] + lambda, h[0][1], h[1][1] + lambda);
        let det = a * d - b * b;
        let mut step = if det > 0.0 && det.is_finite() {
            [(d * g[0] - b * g[1]) / det, (a * g[1] - b * g[0]) / det]
        } else {
            g
        };
        let slope = step[0] * g[0] + step[1] * g[1];
        if !(slope > 0.0) {
            step = g;
        }
        let slope = step[0] * g[0] + step[1] * g[1];
        let mut t = 1.0;
        loop {
            let cand = [theta[0] - t * step[0], theta[1] - t * step[1]];
            let (fc, gc, hc) = weighted_nll(x, y, w, cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-20 {
                theta = cand;
                f = fc;
                g = gc;
                h = hc;
                break;
            }
            t *= 0.5;
        }
    }
    let grad_norm = g[0].hypot(g[1]);
    Ok(OutcomeModel {
        weight: theta[0],
        bias: theta[1],
        iterations: it,
        grad_norm,
    })
}

/// Balanced class weights `n / (2 n_class)`.
pub fn balanced_weights(y: &[bool]) -> Result<Vec<f64>> {
    let n = y.len();
    let pos = y.iter().filter(|&&v| v).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "outcome regression needs both classes, got {pos} successes and {neg} failures"
        )));
    }
    let (wp, wn) = (n as f64 / (2.0 * pos as f64), n as f64 / (2.0 * neg as f64));
    Ok(y.iter().map(|&v| if v { wp } else { wn }).collect())
}

/// Balanced-weight logistic regression of surgical success on RR. Missing
/// RR values should be imputed by the caller.
pub fn fit_outcome_model(rr: &[f64], success: &[bool]) -> Result<OutcomeModel> {
    let w = balanced_weights(success)?;
    let m = fit_weighted_logistic(rr, success, &w)?;
    assert!(
        m.grad_norm < OUTCOME_GRAD_TOL,
        "outcome regression stopped at gradient norm {}",
        m.grad_norm
    );
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccF1 {
    pub acc: f64,
    pub f1: f64,
    /// No positive predictions and no positive truths: F1 reported as 0.
    pub f1_degenerate: bool,
}

/// Accuracy and F1 with `positive` as the positive class.
pub fn accuracy_f1(predicted: &[bool], truth: &[bool], positive: bool) -> Result<AccF1> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::Evaluation("accuracy needs equal-length, non-empty inputs".into()));
    }
    let (mut tp, mut fp, mut fne, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        correct += usize::from(p == t);
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fne;
    Ok(AccF1 {
        acc: correct as f64 / predicted.len() as f64,
        f1: if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        f1_degenerate: denom == 0,
    })
}

/// RR imputed for subjects without pathological predictions.
pub const IMPUTED_RR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject: String,
    pub split: String,
    pub outcome: crate::data::Outcome,
    pub n_events: usize,
    pub n_pathological: usize,
    pub rr: Option<f64>,
    pub rr_imputed: bool,
    pub specificity: Option<f64>,
    pub predicted_success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub acc: f64,
    pub f1: f64,
    pub f1_degenerate: bool,
    pub model: OutcomeModel,
    /// Mean specificity over this fold's seizure-free test subjects.
    pub spec: Option<f64>,
    pub subjects: Vec<SubjectMetrics>,
}

/// Metrics of one fold from per-subject event calls covering at least the
/// fold's train, validation and test subjects. The outcome model is fitted
/// on train + validation and scored on test; specificity is reported for
/// seizure-free test subjects.
pub fn evaluate_fold(
    fold: &FoldSplit,
    subjects: &BTreeMap<String, SubjectRecord>,
    calls: &BTreeMap<String, Vec<EventCall>>,
    f1_positive_success: bool,
) -> Result<FoldMetrics> {
    let lookup = |id: &str| {
        subjects
            .get(id)
            .ok_or_else(|| Error::Evaluation(format!("fold {} names unknown subject {id}", fold.fold_id)))
    };
    let empty = Vec::new();
    let mut rows = Vec::new();
    for (split, ids) in [("train", &fold.train), ("val", &fold.val), ("test", &fold.test)] {
        for id in ids {
            let rec = lookup(id)?;
            let c = calls.get(id).unwrap_or(&empty);
            let rr = resection_ratio(c, rec);
            let spec = if split == "test" && rec.outcome.is_success() == Some(true) {
                specificity(c, rec)
            } else {
                None
            };
            rows.push(SubjectMetrics {
                subject: id.clone(),
                split: split.into(),
                outcome: rec.outcome,
                n_events: c.len(),
                n_pathological: c.iter().filter(|e| e.pathological).count(),
                rr,
                rr_imputed: rr.is_none(),
                specificity: spec,
                predicted_success: None,
            });
        }
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in rows.iter().filter(|r| r.split != "test") {
        if let Some(s) = r.outcome.is_success() {
            x.push(r.rr.unwrap_or(IMPUTED_RR));
            y.push(s);
        }
    }
    let model = fit_outcome_model(&x, &y)
        .map_err(|e| Error::Evaluation(format!("fold {}: {e}", fold.fold_id)))?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for r in rows.iter_mut().filter(|r| r.split == "test") {
        if let Some(s) = r.outcome.is_success() {
            let p = model.predict(r.rr.unwrap_or(IMPUTED_RR));
            r.predicted_success = Some(p);
            pred.push(p);
            truth.push(s);
        }
    }
    let scores = accuracy_f1(&pred, &truth, f1_positive_success)
        .map_err(|e| Error::Evaluation(format!("fold {}: test split has no subject with known outcome ({e})", fold.fold_id)))?;
    let specs: Vec<f64> = rows.iter().filter_map(|r| r.specificity).collect();
    Ok(FoldMetrics {
        fold: fold.fold_id,
        acc: scores.acc,
        f1: scores.f1,
        f1_degenerate: scores.f1_degenerate,
        model,
        spec: (!specs.is_empty()).then(|| specs.iter().sum::<f64>() / specs.len() as f64),
        subjects: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (N denominator).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub acc: MeanStd,
    pub f1: MeanStd,
    /// Mean specificity over all seizure-free subjects, each scored in the
    /// fold where it was a test subject.
    pub spec: Option<f64>,
    /// Seizure-free test subjects without preserved-region events.
    pub spec_excluded: Vec<String>,
    pub f1_positive: String,
    pub std_convention: String,
    pub imputed_rr_subjects: Vec<String>,
}

pub fn aggregate(folds: Vec<FoldMetrics>, f1_positive_success: bool) -> Result<MetricsReport> {
    if folds.is_empty() {
        return Err(Error::Evaluation("no folds to aggregate".into()));
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.acc).collect();
    let f1s: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let mut specs = Vec::new();
    let mut excluded = Vec::new();
    let mut imputed = Vec::new();
    for f in &folds {
        for s in f.subjects.iter().filter(|s| s.split == "test") {
            if s.outcome.is_success() == Some(true) {
                match s.specificity {
                    Some(v) => specs.push(v),
                    None => excluded.push(s.subject.clone()),
                }
            }
            if s.rr_imputed && s.outcome.is_success().is_some() {
                imputed.push(s.subject.clone());
            }
        }
    }
    excluded.sort();
    imputed.sort();
    Ok(MetricsReport {
        acc: MeanStd::of(&accs),
        f1: MeanStd::of(&f1s),
        spec: (!specs.is_empty()).then(|| specs.iter().sum::<f64>() / specs.len() as f64),
        spec_excluded: excluded,
        f1_positive: if f1_positive_success { "success" } else { "failure" }.into(),
        std_convention: "population".into(),
        imputed_rr_subjects: imputed,
        folds,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn report_markdown(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Cross-validation report\n");
    let _ = writeln!(s, "| metric | mean | std |\n|---|---|---|");
    let _ = writeln!(s, "| ACC | {:.4} | {:.4} |", r.acc.mean, r.acc.std);
    let _ = writeln!(s, "| F1 ({} positive) | {:.4} | {:.4} |", r.f1_positive, r.f1.mean, r.f1.std);
    let _ = writeln!(s, "| SPEC | {} | |\n", opt(r.spec));
    let _ = writeln!(s, "Standard deviations use the {} convention.\n", r.std_convention);
    let _ = writeln!(s, "| fold | ACC | F1 | SPEC | weight | bias |\n|---|---|---|---|---|---|");
    for f in &r.folds {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4}{} | {} | {:.4} | {:.4} |",
            f.fold,
            f.acc,
            f.f1,
            if f.f1_degenerate { " (degenerate)" } else { "" },
            opt(f.spec),
            f.model.weight,
            f.model.bias
        );
    }
    let _ = writeln!(s, "\n## Test subjects\n");
    let _ = writeln!(s, "| fold | subject | outcome | events | pathological | RR | specificity | predicted |\n|---|---|---|---|---|---|---|---|");
    for f in &r.folds {
        for m in f.subjects.iter().filter(|m| m.split == "test") {
            let _ = writeln!(
                s,
                "| {} | {} | {:?} | {} | {} | {}{} | {} | {} |",
                f.fold,
                m.subject,
                m.outcome,
                m.n_events,
                m.n_pathological,
                opt(m.rr),
                if m.rr_imputed { " (imputed 1.0)" } else { "" },
                opt(m.specificity),
                match m.predicted_success {
                    Some(true) => "success",
                    Some(false) => "failure",
                    None => "n/a",
                }
            );
        }
    }
    if !r.spec_excluded.is_empty() {
        let _ = writeln!(s, "\nExcluded from SPEC (no preserved-region events): {}", r.spec_excluded.join(", "));
    }
    s
}

/// Writes `report.json`, `report.md` and `outcome_model.csv` into `dir`.
pub fn write_report(dir: &Path, r: &MetricsReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(r).expect("report serializes");
    write_atomic(&dir.join("report.json"), &json)?;
    write_atomic(&dir.join("report.md"), report_markdown(r).as_bytes())?;
    let mut csv = Vec::new();
    writeln!(csv, "fold,weight,bias").expect("write to vec");
    for f in &r.folds {
        writeln!(csv, "{},{},{}", f.fold, f.model.weight, f.model.bias).expect("write to vec");
    }
    write_atomic(&dir.join("outcome_model.csv"), &csv)
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Outcome;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn subject(resected: &[&str], outcome: Outcome) -> SubjectRecord {
        SubjectRecord {
            subject_id: "s".into(),
            institution: "i".into(),
            outcome,
            resected_channels: Some(resected.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>()),
        }
    }

    fn call(ch: &str, p: bool) -> EventCall {
        EventCall {
            channel: ch.into(),
            pathological: p,
        }
    }

    #[test]
    fn rr_examples() {
        let s = subject(&["a"], Outcome::SeizureFree);
        assert_eq!(resection_ratio(&[call("a", true), call("a", true), call("b", false)], &s), Some(1.0));
        assert_eq!(resection_ratio(&[call("b", true), call("a", false)], &s), Some(0.0));
        let c = [call("a", true), call("a", true), call("a", true), call("b", true)];
        assert_eq!(resection_ratio(&c, &s), Some(0.75));
        assert_eq!(resection_ratio(&[call("a", false)], &s), None);
    }

    #[test]
    fn specificity_examples() {
        let s = subject(&["a"], Outcome::SeizureFree);
        let all_clean: Vec<EventCall> = (0..5).map(|_| call("b", false)).collect();
        assert_eq!(specificity(&all_clean, &s), Some(1.0));
        let mut c: Vec<EventCall> = (0..8).map(|_| call("b", false)).collect();
        c.push(call("b", true));
        c.push(call("c", true));
        c.push(call("a", true));
        assert_eq!(specificity(&c, &s), Some(0.8));
        assert_eq!(specificity(&[call("a", false)], &s), None);
        // SPEC is the arithmetic mean over subjects
        let spec = [1.0, 0.5].iter().sum::<f64>() / 2.0;
        assert_eq!(spec, 0.75);
    }

    #[test]
    fn acc_f1_examples() {
        let r = accuracy_f1(&[true, false], &[true, false], true).unwrap();
        assert_eq!((r.acc, r.f1), (1.0, 1.0));
        // TP=2, FP=1, FN=1, TN=0
        let r = accuracy_f1(&[true, true, true, false], &[true, true, false, true], true).unwrap();
        assert_eq!(r.f1, 4.0 / 6.0);
        assert_eq!(r.acc, 0.5);
        let r = accuracy_f1(&[false, false], &[false, false], true).unwrap();
        assert_eq!((r.acc, r.f1, r.f1_degenerate), (1.0, 0.0, true));
        assert!(accuracy_f1(&[], &[], true).is_err());
    }

    #[test]
    fn fold_mean_and_population_std() {
        let m = MeanStd::of(&[1.0, 0.5]);
        assert_eq!((m.mean, m.std), (0.75, 0.25));
        let m = MeanStd::of(&[0.6, 0.6, 0.6]);
        assert_eq!(m.std, 0.0);
    }

    #[test]
    fn separable_outcomes() {
        let rr = [1.0, 1.0, 1.0, 0.0, 0.0];
        let y = [true, true, true, false, false];
        let m = fit_outcome_model(&rr, &y).unwrap();
        assert!(m.grad_norm < OUTCOME_GRAD_TOL);
        let acc = rr.iter().zip(&y).filter(|(r, t)| m.predict(**r) == **t).count();
        assert_eq!(acc, 5);
    }

    #[test]
    fn constant_feature_uses_bias() {
        let rr = [0.5; 6];
        let y = [true, true, true, true, false, false];
        let m = fit_outcome_model(&rr, &y).unwrap();
        // balanced weights leave both classes equally likely; ties go to success
        assert!(m.logit(0.5).abs() < 1e-9);
        assert!(m.predict(0.5));
        // unweighted, the majority wins through the bias
        let u = fit_weighted_logistic(&rr, &y, &[1.0; 6]).unwrap();
        assert!(u.predict(0.5));
        assert!((crate::tensor::sigmoid(u.logit(0.5)) - 4.0 / 6.0).abs() < 1e-8);
    }

    #[test]
    fn balanced_equals_duplicated_minority() {
        // 2:1 imbalance: balanced weights are 0.75 / 1.5, a 1:2 ratio, the
        // same as duplicating each minority subject once with unit weights.
        let rr = [0.9, 0.8, 0.95, 0.3, 0.7, 0.6, 0.4, 0.85, 0.2];
        let y = [true, true, true, true, true, true, false, false, false];
        let a = fit_outcome_model(&rr, &y).unwrap();
        let (mut x2, mut y2) = (rr.to_vec(), y.to_vec());
        for (r, t) in rr.iter().zip(&y) {
            if !t {
                x2.push(*r);
                y2.push(false);
            }
        }
        let b = fit_weighted_logistic(&x2, &y2, &vec![1.0; x2.len()]).unwrap();
        assert!((a.weight - b.weight).abs() < 1e-6, "{a:?} {b:?}");
        assert!((a.bias - b.bias).abs() < 1e-6);
    }

    #[test]
    fn single_class_rejected() {
        assert!(fit_outcome_model(&[0.1, 0.2], &[true, true]).is_err());
    }

    fn fold() -> (FoldSplit, BTreeMap<String, SubjectRecord>, BTreeMap<String, Vec<EventCall>>) {
        let mut subjects = BTreeMap::new();
        let mut calls = BTreeMap::new();
        for i in 0..8 {
            let id = format!("s{i}");
            let success = i % 2 == 0;
            let mut rec = subject(&["a"], if success { Outcome::SeizureFree } else { Outcome::NotSeizureFree });
            rec.subject_id = id.clone();
            subjects.insert(id.clone(), rec);
            let c = if success {
                vec![call("a", true), call("a", true), call("b", false), call("b", false)]
            } else {
                vec![call("b", true), call("b", true), call("a", true), call("b", false)]
            };
            calls.insert(id, c);
        }
        let f = FoldSplit {
            fold_id: 0,
            train: (0..4).map(|i| format!("s{i}")).collect(),
            val: vec!["s4".into(), "s5".into()],
            test: vec!["s6".into(), "s7".into()],
        };
        (f, subjects, calls)
    }

    #[test]
    fn fold_evaluation_and_report_files() {
        let (f, subjects, calls) = fold();
        let m = evaluate_fold(&f, &subjects, &calls, true).unwrap();
        assert_eq!((m.acc, m.f1), (1.0, 1.0));
        assert_eq!(m.spec, Some(1.0));
        let r = aggregate(vec![m.clone(), FoldMetrics { fold: 1, acc: 0.5, ..m }], true).unwrap();
        assert_eq!((r.acc.mean, r.acc.std), (0.75, 0.25));
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r).unwrap();
        assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), r);
        let csv = std::fs::read_to_string(dir.path().join("outcome_model.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let first = std::fs::read(dir.path().join("report.json")).unwrap();
        write_report(dir.path(), &r).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("report.json")).unwrap());
    }

    proptest! {
        #[test]
        fn rr_bounds_and_monotone(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            let s = subject(&["a"], Outcome::SeizureFree);
            let calls: Vec<EventCall> = flags.iter().map(|&(r, p)| call(if r { "a" } else { "b" }, p)).collect();
            let rr = resection_ratio(&calls, &s);
            if let Some(v) = rr {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(v) = specificity(&calls, &s) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let mut more = calls.clone();
            more.push(call("a", true));
            prop_assert!(resection_ratio(&more, &s).unwrap() >= rr.unwrap_or(0.0));
            // flipping a preserved non-pathological call never matters
            let mut extra = calls.clone();
            extra.push(call("b", false));
            prop_assert_eq!(resection_ratio(&extra, &s), rr);
        }

        #[test]
        fn regression_reaches_tolerance(xs in proptest::collection::vec(0.0f64..1.0, 4..20), seed in 0u64..100) {
            let y: Vec<bool> = xs.iter().enumerate().map(|(i, &x)| (x + (i as u64 * 7 + seed) as f64 % 3.0 * 0.2) > 0.6).collect();
            prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
            let m = fit_outcome_model(&xs, &y).unwrap();
            prop_assert!(m.grad_norm < OUTCOME_GRAD_TOL);
        }
    }
}
