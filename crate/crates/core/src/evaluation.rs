//! ROC curves, AuROC, error rates and report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::labels::{class_keys, class_titles, is_shape_class, LabelVector, N_ATTRIBUTES, N_CLASSES, N_SHAPES};
use crate::error::{ensure, Error, Result};
use crate::model::PredictionVector;
use crate::parallel::Executor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub truth: bool,
}

/// Positives and negatives per distinct score, highest score first.
fn tie_groups(samples: &[ScoredLabel]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    ensure!(
        samples.iter().all(|s| s.score.is_finite()),
        Error::Data("scores must be finite".into())
    );
    let pos = samples.iter().filter(|s| s.truth).count() as u64;
    let neg = samples.len() as u64 - pos;
    ensure!(
        pos > 0 && neg > 0,
        Error::Data(format!("undefined ROC: {pos} positives and {neg} negatives"))
    );
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for s in &sorted {
        // -0.0 and 0.0 are one threshold
        if groups.is_empty() || s.score != last {
            groups.push((0, 0));
            last = s.score;
        }
        let g = groups.last_mut().expect("pushed above");
        if s.truth {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok((groups, pos, neg))
}

/// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(samples: &[ScoredLabel]) -> Result<Vec<(f64, f64)>> {
    let (groups, pos, neg) = tie_groups(samples)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in groups {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under the tie-grouped ROC curve.
pub fn auroc(samples: &[ScoredLabel]) -> Result<f64> {
    let (groups, pos, neg) = tie_groups(samples)?;
    // Each trapezoid is n_g * (2 tp_before + p_g) / (2 P N); summing the
    // integer numerators keeps the area exact up to one final division.
    let mut tp = 0u128;
    let mut twice_area = 0u128;
    for (p, n) in groups {
        twice_area += n as u128 * (2 * tp + p as u128);
        tp += p as u128;
    }
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Micro-averaged attribute error at threshold 0.5 and shape argmax error.
pub fn error_rates(predictions: &[PredictionVector], truths: &[LabelVector]) -> Result<(f64, f64)> {
    ensure!(
        predictions.len() == truths.len() && !truths.is_empty(),
        Error::Data(format!(
            "{} predictions for {} images",
            predictions.len(),
            truths.len()
        ))
    );
    let mut attr_wrong = 0usize;
    let mut shape_wrong = 0usize;
    for (p, t) in predictions.iter().zip(truths) {
        ensure!(
            p.attributes.len() == N_ATTRIBUTES && p.shapes.len() == N_SHAPES,
            Error::Data("prediction does not cover the label universe".into())
        );
        attr_wrong += p
            .attributes
            .iter()
            .zip(&t.attributes)
            .filter(|(&s, &y)| (s >= 0.5) != y)
            .count();
        if p.predicted_shape() != t.shape.index() {
            shape_wrong += 1;
        }
    }
    let n = truths.len() as f64;
    Ok((attr_wrong as f64 / (n * N_ATTRIBUTES as f64), shape_wrong as f64 / n))
}

/// Scores and truths of each of the 15 classes.
pub fn class_samples(predictions: &[PredictionVector], truths: &[LabelVector]) -> Vec<Vec<ScoredLabel>> {
    let mut out = vec![Vec::with_capacity(truths.len()); N_CLASSES];
    for (p, t) in predictions.iter().zip(truths) {
        let scores = p.class_scores();
        let truth = t.class_truths();
        for c in 0..N_CLASSES {
            out[c].push(ScoredLabel {
                score: scores[c],
                truth: truth[c],
            });
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Results of one variant on one round's test split. Classes without both
/// positives and negatives have no AuROC and are left out of the means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: String,
    pub round: usize,
    pub per_class: Vec<Option<f64>>,
    pub mean_auroc: f64,
    pub mean_attribute_auroc: f64,
    pub mean_shape_auroc: f64,
    pub attr_error: f64,
    pub shape_error: f64,
    pub excluded: Vec<String>,
}

/// ROC points of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRoc {
    pub class: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub fn evaluate(
    variant: &str,
    round: usize,
    predictions: &[PredictionVector],
    truths: &[LabelVector],
    exec: &Executor,
) -> Result<(EvaluationReport, Vec<ClassRoc>)> {
    let (attr_error, shape_error) = error_rates(predictions, truths)?;
    let samples = class_samples(predictions, truths);
    let keys = class_keys();
    let per = exec.map(N_CLASSES, |c| -> Option<(f64, Vec<(f64, f64)>)> {
        Some((auroc(&samples[c]).ok()?, roc_curve(&samples[c]).ok()?))
    });
    let mut per_class = Vec::with_capacity(N_CLASSES);
    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    for (c, r) in per.into_iter().enumerate() {
        match r {
            Some((a, pts)) => {
                per_class.push(Some(a));
                curves.push(ClassRoc {
                    class: keys[c],
                    points: pts,
                });
            }
            None => {
                log::warn!("{variant} round {round}: class {} has a single outcome; excluded from means", keys[c]);
                per_class.push(None);
                excluded.push(keys[c].to_string());
            }
        }
    }
    let pick = |f: &dyn Fn(usize) -> bool| mean((0..N_CLASSES).filter(|&c| f(c)).filter_map(|c| per_class[c]));
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::Data(format!("no {what} class has both outcomes in round {round}")))
    };
    let report = EvaluationReport {
        variant: variant.to_string(),
        round,
        mean_auroc: need(pick(&|_| true), "")?,
        mean_attribute_auroc: need(pick(&|c| !is_shape_class(c)), "attribute")?,
        mean_shape_auroc: need(pick(&is_shape_class), "shape")?,
        per_class,
        attr_error,
        shape_error,
        excluded,
    };
    Ok((report, curves))
}

/// Round-averaged results of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub rounds: usize,
    /// Mean over the rounds in which the class was defined.
    pub per_class: Vec<Option<f64>>,
    pub mean_auroc: f64,
    pub mean_attribute_auroc: f64,
    pub mean_shape_auroc: f64,
    pub attr_error: f64,
    pub shape_error: f64,
}

pub fn summarize(reports: &[EvaluationReport]) -> Result<VariantSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Data("no rounds to summarize".into()))?;
    ensure!(
        reports
            .iter()
            .all(|r| r.variant == first.variant && r.per_class.len() == first.per_class.len()),
        Error::Data("rounds disagree on variant or class set".into())
    );
    let avg = |f: &dyn Fn(&EvaluationReport) -> f64| mean(reports.iter().map(f)).expect("non-empty");
    Ok(VariantSummary {
        variant: first.variant.clone(),
        rounds: reports.len(),
        per_class: (0..first.per_class.len())
            .map(|c| mean(reports.iter().filter_map(|r| r.per_class[c])))
            .collect(),
        mean_auroc: avg(&|r| r.mean_auroc),
        mean_attribute_auroc: avg(&|r| r.mean_attribute_auroc),
        mean_shape_auroc: avg(&|r| r.mean_shape_auroc),
        attr_error: avg(&|r| r.attr_error),
        shape_error: avg(&|r| r.shape_error),
    })
}

#[derive(Serialize)]
struct ReportMetadata {
    attribute_error: &'static str,
    shape_error: &'static str,
    auroc: &'static str,
    excluded_classes: &'static str,
}

const METADATA: ReportMetadata = ReportMetadata {
    attribute_error: "micro-average over 10 attribute labels and all test images of [p >= 0.5] != truth",
    shape_error: "fraction of test images whose argmax over the 6 shape scores differs from the true shape",
    auroc: "trapezoidal area under the tie-grouped ROC curve (ties credited 0.5)",
    excluded_classes: "a class with no positives or no negatives in a round is left out of that round's means",
};

#[derive(Serialize)]
struct ReportFile<'a> {
    metadata: ReportMetadata,
    classes: Vec<&'static str>,
    summaries: &'a [VariantSummary],
    rounds: &'a [EvaluationReport],
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

/// Writes `report.csv` (one row per class, one column per variant, then
/// summary rows) and `report.json` into `dir`.
pub fn write_report(dir: &Path, summaries: &[VariantSummary], rounds: &[EvaluationReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let wr = |w: &mut csv::Writer<fs::File>, row: Vec<String>| {
        w.write_record(&row)
            .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))
    };
    let mut header = vec!["class".to_string()];
    header.extend(summaries.iter().map(|s| s.variant.clone()));
    wr(&mut w, header)?;
    for (c, title) in class_titles().into_iter().enumerate() {
        let mut row = vec![title.to_string()];
        row.extend(summaries.iter().map(|s| fmt_opt(s.per_class[c])));
        wr(&mut w, row)?;
    }
    let rows: [(&str, fn(&VariantSummary) -> f64); 5] = [
        ("Mean AuROC", |s| s.mean_auroc),
        ("Mean AuROC for Shapes Alone", |s| s.mean_shape_auroc),
        ("Mean AuROC for Attributes Alone", |s| s.mean_attribute_auroc),
        ("Error Rate on Attr.", |s| s.attr_error),
        ("Error Rate on Shape", |s| s.shape_error),
    ];
    for (name, f) in rows {
        let mut row = vec![name.to_string()];
        row.extend(summaries.iter().map(|s| format!("{:.6}", f(s))));
        wr(&mut w, row)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join("report.json");
    let file = ReportFile {
        metadata: METADATA,
        classes: class_titles(),
        summaries,
        rounds,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Writes one `fpr,tpr` file per class under `dir/<variant>/round<r>/`.
pub fn write_roc_curves(dir: &Path, variant: &str, round: usize, curves: &[ClassRoc]) -> Result<()> {
    let sub = dir.join(variant).join(format!("round{round}"));
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    for c in curves {
        let mut text = String::from("fpr,tpr\n");
        for (x, y) in &c.points {
            text.push_str(&format!("{x},{y}\n"));
        }
        let path = sub.join(format!("{}.csv", c.class));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::ShapeClass;

    fn samples(scores: &[f64], truths: &[u8]) -> Vec<ScoredLabel> {
        scores
            .iter()
            .zip(truths)
            .map(|(&score, &t)| ScoredLabel { score, truth: t == 1 })
            .collect()
    }

    #[test]
    fn perfect_separation_curve() {
        let s = samples(&[0.9, 0.1], &[1, 0]);
        assert_eq!(roc_curve(&s).unwrap(), vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
    }

    #[test]
    fn ties_form_one_threshold() {
        let s = samples(&[0.3; 4], &[1, 0, 1, 0]);
        assert_eq!(roc_curve(&s).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auroc(&samples(&[0.2, 0.4], &[1, 1])).is_err());
    }

    #[test]
    fn shape_error_counts_argmax() {
        let truth = |s| LabelVector {
            attributes: [false; N_ATTRIBUTES],
            shape: s,
        };
        let pred = |k: usize| {
            let mut shapes = vec![0.1; N_SHAPES];
            shapes[k] = 0.9;
            PredictionVector {
                attributes: vec![0.49; N_ATTRIBUTES],
                shapes,
            }
        };
        let truths = [truth(ShapeClass::Oval), truth(ShapeClass::Round), truth(ShapeClass::Irregular)];
        let preds = [pred(0), pred(2), pred(3)];
        let (a, s) = error_rates(&preds, &truths).unwrap();
        assert_eq!(a, 0.0);
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_rounds_average() {
        let mk = |v: f64| EvaluationReport {
            variant: "wfm".into(),
            round: 0,
            per_class: vec![Some(v); N_CLASSES],
            mean_auroc: v,
            mean_attribute_auroc: v,
            mean_shape_auroc: v,
            attr_error: 0.1,
            shape_error: 0.2,
            excluded: vec![],
        };
        let s = summarize(&[mk(0.8), mk(0.9)]).unwrap();
        assert!((s.per_class[3].unwrap() - 0.85).abs() < 1e-12);
        assert!((s.mean_auroc - 0.85).abs() < 1e-12);
    }
}
