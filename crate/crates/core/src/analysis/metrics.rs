//! Evaluation metrics for the user-study style tasks.

use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Intersection over union of two boolean masks of equal size. Two empty
/// masks count as identical.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Input(format!(
            "mask sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Kendall rank correlation (tau-b, equal to tau-a when there are no ties).
pub fn kendall_tau(ranking: &[f64], truth: &[f64]) -> Result<f64, AnalysisError> {
    if ranking.len() != truth.len() {
        return Err(AnalysisError::Input("rankings differ in length".into()));
    }
    if ranking.len() < 2 {
        return Err(AnalysisError::Insufficient {
            needed: 2,
            got: ranking.len(),
        });
    }
    if ranking.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Input("rankings must be finite".into()));
    }
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    let n = ranking.len();
    for i in 0..n {
        for j in i + 1..n {
            let da = ranking[i] - ranking[j];
            let db = truth[i] - truth[j];
            if da == 0.0 && db == 0.0 {
                continue;
            } else if da == 0.0 {
                tie_a += 1;
            } else if db == 0.0 {
                tie_b += 1;
            } else if (da > 0.0) == (db > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let denom = (((conc + disc + tie_a) * (conc + disc + tie_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(AnalysisError::Degenerate("a ranking is entirely tied".into()));
    }
    Ok((conc - disc) as f64 / denom)
}

/// System Usability Scale score from ten 1–5 responses in questionnaire order.
pub fn sus_score(responses: &[u8]) -> Result<f64, AnalysisError> {
    if responses.len() != 10 {
        return Err(AnalysisError::Input(format!(
            "SUS needs 10 responses, got {}",
            responses.len()
        )));
    }
    let mut sum = 0u32;
    for (i, &r) in responses.iter().enumerate() {
        if !(1..=5).contains(&r) {
            return Err(AnalysisError::Input(format!(
                "response {} = {r} is outside 1..=5",
                i + 1
            )));
        }
        // Items are numbered from 1, so even indices are the odd items.
        sum += if i % 2 == 0 { r as u32 - 1 } else { 5 - r as u32 };
    }
    Ok(sum as f64 * 2.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationError {
    pub mean_cm: f64,
    pub std_cm: f64,
    pub per_truth_cm: Vec<f64>,
    /// `assignment[i]` is the index of the point matched to truth `i`.
    pub assignment: Vec<usize>,
}

/// Distance between marked points and true centers (both in mm), under the
/// one-to-one matching that minimizes the summed distance. Reported in cm.
pub fn localization_error(
    points_mm: &[(f64, f64)],
    truths_mm: &[(f64, f64)],
) -> Result<LocalizationError, AnalysisError> {
    if truths_mm.is_empty() {
        return Err(AnalysisError::Input("no ground-truth centers".into()));
    }
    if points_mm.len() < truths_mm.len() {
        return Err(AnalysisError::Insufficient {
            needed: truths_mm.len(),
            got: points_mm.len(),
        });
    }
    if points_mm.len() > 10 {
        return Err(AnalysisError::Input("at most 10 marks are matched".into()));
    }
    let dist = |p: (f64, f64), t: (f64, f64)| ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt();

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut chosen = Vec::with_capacity(truths_mm.len());
    let mut used = vec![false; points_mm.len()];
    fn search(
        depth: usize,
        acc: f64,
        truths: &[(f64, f64)],
        points: &[(f64, f64)],
        used: &mut [bool],
        chosen: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
        dist: &dyn Fn((f64, f64), (f64, f64)) -> f64,
    ) {
        if depth == truths.len() {
            if best.as_ref().is_none_or(|(b, _)| acc < *b) {
                *best = Some((acc, chosen.clone()));
            }
            return;
        }
        for p in 0..points.len() {
            if used[p] {
                continue;
            }
            used[p] = true;
            chosen.push(p);
            search(depth + 1, acc + dist(points[p], truths[depth]), truths, points, used, chosen, best, dist);
            chosen.pop();
            used[p] = false;
        }
    }
    search(0, 0.0, truths_mm, points_mm, &mut used, &mut chosen, &mut best, &dist);
    let (_, assignment) = best.expect("at least one assignment exists");
    let per_truth_cm: Vec<f64> = truths_mm
        .iter()
        .zip(&assignment)
        .map(|(&t, &p)| dist(points_mm[p], t) / 10.0)
        .collect();
    let n = per_truth_cm.len() as f64;
    let mean_cm = per_truth_cm.iter().sum::<f64>() / n;
    let std_cm = (per_truth_cm.iter().map(|e| (e - mean_cm).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LocalizationError {
        mean_cm,
        std_cm,
        per_truth_cm,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = [true, true, false, false];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(iou(&a, &[true, false, true, false]).unwrap(), 1.0 / 3.0);
        assert!(iou(&a, &[true]).is_err());
    }

    #[test]
    fn tau_cases() {
        let id = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&id, &id).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[4.0, 3.0, 2.0, 1.0], &id).unwrap(), -1.0);
        assert_eq!(kendall_tau(&[1.0, 3.0, 2.0, 4.0], &id).unwrap(), 4.0 / 6.0);
        assert!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn sus_cases() {
        assert_eq!(sus_score(&[5, 1, 5, 1, 5, 1, 5, 1, 5, 1]).unwrap(), 100.0);
        assert_eq!(sus_score(&[1, 5, 1, 5, 1, 5, 1, 5, 1, 5]).unwrap(), 0.0);
        assert_eq!(sus_score(&[3; 10]).unwrap(), 50.0);
        assert!(sus_score(&[3; 9]).is_err());
        assert!(sus_score(&[0, 3, 3, 3, 3, 3, 3, 3, 3, 3]).is_err());
    }

    #[test]
    fn localization_matches_best_pairing() {
        let truths = [(10.0, 10.0), (40.0, 40.0)];
        // Given in swapped order; matching must pair them correctly.
        let marks = [(43.0, 44.0), (10.0, 13.0)];
        let e = localization_error(&marks, &truths).unwrap();
        assert_eq!(e.assignment, vec![1, 0]);
        assert!((e.per_truth_cm[0] - 0.3).abs() < 1e-12);
        assert!((e.per_truth_cm[1] - 0.5).abs() < 1e-12);
        assert!((e.mean_cm - 0.4).abs() < 1e-12);
        assert!(localization_error(&marks[..1], &truths).is_err());
    }
}
