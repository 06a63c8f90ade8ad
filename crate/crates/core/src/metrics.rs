//! Trajectory error, reward/success, trajectory mAP and rank correlation.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_angle_deg, Pose6D, Trajectory};

/// Reward at or above which an episode counts as a success.
pub const SUCCESS_THRESHOLD: f64 = 0.75;

/// L1 thresholds (cm) averaged by [`compute_map`].
pub const MAP_THRESHOLDS_CM: [f64; 7] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate episode: initial position coincides with goal")]
    DegenerateEpisode,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("invalid unit exchange rate {0}")]
    InvalidRate(f64),
}

/// How many degrees of rotation error count as one centimeter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitExchange {
    pub deg_per_cm: f64,
}

impl UnitExchange {
    /// 1 cm = 1°, used for the scalar trajectory L1.
    pub const L1: UnitExchange = UnitExchange { deg_per_cm: 1.0 };
    /// 1 cm = 10°, used for mAP thresholds.
    pub const MAP: UnitExchange = UnitExchange { deg_per_cm: 10.0 };

    pub fn new(deg_per_cm: f64) -> Result<Self, MetricsError> {
        if deg_per_cm > 0.0 && deg_per_cm.is_finite() {
            Ok(Self { deg_per_cm })
        } else {
            Err(MetricsError::InvalidRate(deg_per_cm))
        }
    }
}

/// Position L1 in cm plus relative rotation angle converted to cm.
pub fn pose_l1(pred: &Pose6D, gt: &Pose6D, units: UnitExchange) -> f64 {
    let d = pred.position() - gt.position();
    let position_cm = 100.0 * (d.x.abs() + d.y.abs() + d.z.abs());
    position_cm + relative_angle_deg(gt.orientation(), pred.orientation()) / units.deg_per_cm
}

/// Mean of [`pose_l1`] over corresponding poses.
pub fn poses_l1(pred: &[Pose6D], gt: &[Pose6D], units: UnitExchange) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::DegenerateInput("no poses"));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| pose_l1(p, g, units)).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean trajectory L1 over the grasp and release keyposes, in cm-equivalents.
pub fn traj_l1(pred: &Trajectory, gt: &Trajectory, units: UnitExchange) -> f64 {
    poses_l1(&pred.poses(), &gt.poses(), units).expect("trajectories have two keyposes")
}

/// `clamp(1 - |p - goal| / |init - goal|, 0, 1)` with Euclidean norms.
pub fn reward(current: &Vector3<f64>, init: &Vector3<f64>, goal: &Vector3<f64>) -> Result<f64, MetricsError> {
    let start = (init - goal).norm();
    if start <= 1e-9 {
        return Err(MetricsError::DegenerateEpisode);
    }
    Ok((1.0 - (current - goal).norm() / start).clamp(0.0, 1.0))
}

pub fn is_success(reward: f64) -> bool {
    reward >= SUCCESS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trajectory: Trajectory,
    /// Beam log-probability; higher is more confident.
    pub confidence: f64,
}

/// One ground-truth trajectory and any number of scored predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub ground_truth: Trajectory,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Confidence of the last prediction included at this cut.
    pub confidence_cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub threshold_cm: f64,
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub threshold_cm: f64,
    pub ap: f64,
    pub curve: PrCurve,
}

struct Ranked {
    episode: usize,
    error: f64,
    confidence: f64,
}

/// Every prediction with its error, sorted by confidence descending; ties are
/// broken by episode id, then prediction index.
fn ranked_predictions(episodes: &[EpisodeRecord], units: UnitExchange) -> Vec<Ranked> {
    let mut order: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.predictions.len()).map(move |p| (e, p)))
        .collect();
    order.sort_by(|&(ea, pa), &(eb, pb)| {
        let ca = episodes[ea].predictions[pa].confidence;
        let cb = episodes[eb].predictions[pb].confidence;
        cb.total_cmp(&ca)
            .then_with(|| episodes[ea].episode_id.cmp(&episodes[eb].episode_id))
            .then(ea.cmp(&eb))
            .then(pa.cmp(&pb))
    });
    order
        .into_iter()
        .map(|(e, p)| {
            let pred = &episodes[e].predictions[p];
            Ranked {
                episode: e,
                error: traj_l1(&pred.trajectory, &episodes[e].ground_truth, units),
                confidence: pred.confidence,
            }
        })
        .collect()
}

/// Average precision at one L1 threshold.
///
/// A prediction is a true positive iff its error is within `threshold_cm`
/// and its episode has not already been matched by a more confident
/// prediction. Recall is relative to the number of episodes. AP is the area
/// under the precision envelope (all-point interpolation).
pub fn compute_ap(episodes: &[EpisodeRecord], threshold_cm: f64, units: UnitExchange) -> ApResult {
    let ranked = ranked_predictions(episodes, units);
    ap_from_ranked(&ranked, episodes.len(), threshold_cm)
}

fn ap_from_ranked(ranked: &[Ranked], num_episodes: usize, threshold_cm: f64) -> ApResult {
    let mut matched = vec![false; num_episodes];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, r) in ranked.iter().enumerate() {
        if r.error <= threshold_cm && !matched[r.episode] {
            matched[r.episode] = true;
            tp += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / num_episodes as f64,
            precision: tp as f64 / (k + 1) as f64,
            confidence_cut: r.confidence,
        });
    }
    // Every recall step is exactly 1/n, so the envelope area is the summed
    // envelope precision at the steps divided once by n (summing 0.1-wide
    // steps would drift below 1 for perfect predictions).
    let mut area = 0.0;
    let mut envelope = 0.0f64;
    for i in (0..points.len()).rev() {
        envelope = envelope.max(points[i].precision);
        let prev_recall = if i == 0 { 0.0 } else { points[i - 1].recall };
        if points[i].recall > prev_recall {
            area += envelope;
        }
    }
    let ap = if num_episodes == 0 { 0.0 } else { area / num_episodes as f64 };
    ApResult {
        threshold_cm,
        ap,
        curve: PrCurve { threshold_cm, points },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub per_threshold: Vec<ApResult>,
}

/// Unweighted mean AP over `thresholds_cm`.
pub fn compute_map_at(episodes: &[EpisodeRecord], thresholds_cm: &[f64], units: UnitExchange) -> MapResult {
    let ranked = ranked_predictions(episodes, units);
    let per_threshold: Vec<ApResult> = thresholds_cm
        .iter()
        .map(|&t| ap_from_ranked(&ranked, episodes.len(), t))
        .collect();
    let map = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|r| r.ap).sum::<f64>() / per_threshold.len() as f64
    };
    MapResult { map, per_threshold }
}

/// mAP over [`MAP_THRESHOLDS_CM`] with the 1 cm = 10° exchange rate.
pub fn compute_map(episodes: &[EpisodeRecord]) -> MapResult {
    compute_map_at(episodes, &MAP_THRESHOLDS_CM, UnitExchange::MAP)
}

/// Lowest error among the `k` most confident predictions of an episode.
pub fn best_of_k_l1(episode: &EpisodeRecord, k: usize, units: UnitExchange) -> Option<f64> {
    let mut preds: Vec<&Prediction> = episode.predictions.iter().collect();
    preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    preds
        .into_iter()
        .take(k)
        .map(|p| traj_l1(&p.trajectory, &episode.ground_truth, units))
        .min_by(|a, b| a.total_cmp(b))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::DegenerateInput("need at least two samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(MetricsError::DegenerateInput("NaN in input"));
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(MetricsError::DegenerateInput("all values identical"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub thresholds_cm: Vec<f64>,
    /// Exchange rate for mAP thresholds.
    pub map_units: UnitExchange,
    /// Exchange rate for the scalar L1 summaries and the correlation.
    pub l1_units: UnitExchange,
    /// `k` for the best-of-k L1 summary.
    pub top_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds_cm: MAP_THRESHOLDS_CM.to_vec(),
            map_units: UnitExchange::MAP,
            l1_units: UnitExchange::L1,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold_cm: f64,
    pub ap: f64,
    pub pr_points: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_threshold: Vec<ThresholdReport>,
    pub map: f64,
    /// Correlation between confidence and L1 error over all predictions;
    /// `None` when undefined.
    pub spearman: Option<f64>,
    /// Mean L1 of each episode's most confident prediction.
    pub mean_top1_l1: Option<f64>,
    /// Mean of the lowest error among each episode's top-k predictions.
    pub mean_best_of_k_l1: Option<f64>,
    pub num_episodes: usize,
    pub num_predictions: usize,
}

pub fn evaluate(episodes: &[EpisodeRecord], opts: &EvalOptions) -> EvalReport {
    let m = compute_map_at(episodes, &opts.thresholds_cm, opts.map_units);
    let (mut conf, mut err) = (Vec::new(), Vec::new());
    for ep in episodes {
        for p in &ep.predictions {
            conf.push(p.confidence);
            err.push(traj_l1(&p.trajectory, &ep.ground_truth, opts.l1_units));
        }
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let top1 = episodes
        .iter()
        .filter_map(|e| best_of_k_l1(e, 1, opts.l1_units))
        .collect();
    let topk = episodes
        .iter()
        .filter_map(|e| best_of_k_l1(e, opts.top_k, opts.l1_units))
        .collect();
    EvalReport {
        per_threshold: m
            .per_threshold
            .into_iter()
            .map(|r| ThresholdReport {
                threshold_cm: r.threshold_cm,
                ap: r.ap,
                pr_points: r.curve.points,
            })
            .collect(),
        map: m.map,
        spearman: spearman(&conf, &err).ok(),
        mean_top1_l1: mean(top1),
        mean_best_of_k_l1: mean(topk),
        num_episodes: episodes.len(),
        num_predictions: conf.len(),
    }
}

/// PR points as CSV: `threshold_cm,recall,precision,confidence_cut`.
pub fn pr_csv(report: &EvalReport) -> String {
    let mut out = String::from("threshold_cm,recall,precision,confidence_cut\n");
    for t in &report.per_threshold {
        for p in &t.pr_points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                t.threshold_cm, p.recall, p.precision, p.confidence_cut
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerXyz;
    use proptest::prelude::*;

    fn at(x: f64, y: f64, z: f64) -> Pose6D {
        Pose6D::from_translation(Vector3::new(x, y, z))
    }

    fn traj(dx: f64) -> Trajectory {
        Trajectory::new(at(0.3 + dx, 0.0, 0.02), at(0.4, 0.1, 0.05))
    }

    #[test]
    fn identical_trajectories_zero() {
        assert_eq!(traj_l1(&traj(0.0), &traj(0.0), UnitExchange::L1), 0.0);
    }

    #[test]
    fn one_cm_one_degree() {
        let gt = traj(0.0);
        let rotated = Pose6D::new(
            gt.grasp().position() + Vector3::new(0.01, 0.0, 0.0),
            EulerXyz::new(0.0, 0.0, 1.0).to_quaternion(),
        );
        let pred = Trajectory::new(rotated, *gt.release());
        let l1 = traj_l1(&pred, &gt, UnitExchange::L1);
        assert!((l1 - 1.0).abs() < 1e-9, "{l1}");
        let l1 = traj_l1(&pred, &gt, UnitExchange::MAP);
        assert!((l1 - 0.55).abs() < 1e-9, "{l1}");
    }

    #[test]
    fn poses_length_mismatch() {
        assert_eq!(
            poses_l1(&[at(0.0, 0.0, 0.0)], &[], UnitExchange::L1),
            Err(MetricsError::LengthMismatch(1, 0))
        );
    }

    #[test]
    fn reward_cases() {
        let init = Vector3::new(1.0, 0.0, 0.0);
        let goal = Vector3::zeros();
        assert_eq!(reward(&goal, &init, &goal).unwrap(), 1.0);
        assert_eq!(reward(&init, &init, &goal).unwrap(), 0.0);
        assert_eq!(reward(&Vector3::new(2.0, 0.0, 0.0), &init, &goal).unwrap(), 0.0);
        assert_eq!(reward(&goal, &goal, &goal), Err(MetricsError::DegenerateEpisode));
        let r = reward(&Vector3::new(0.25, 0.0, 0.0), &init, &goal).unwrap();
        assert_eq!(r, 0.75);
        assert!(is_success(r));
        assert!(!is_success(0.7499999));
    }

    fn episode(id: &str, preds: &[(f64, f64)]) -> EpisodeRecord {
        // (confidence, position offset in cm along x)
        EpisodeRecord {
            episode_id: id.into(),
            ground_truth: traj(0.0),
            predictions: preds
                .iter()
                .map(|&(c, cm)| Prediction {
                    trajectory: traj(cm / 100.0 * 2.0),
                    confidence: c,
                })
                .collect(),
        }
    }

    #[test]
    fn single_exact_prediction() {
        let eps = [episode("a", &[(-0.1, 0.0)])];
        for t in MAP_THRESHOLDS_CM {
            assert_eq!(compute_ap(&eps, t, UnitExchange::MAP).ap, 1.0);
        }
    }

    #[test]
    fn hand_case_half() {
        // Errors 100 cm (more confident) and 0 cm.
        let eps = [episode("a", &[(-1.0, 100.0), (-2.0, 0.0)])];
        let r = compute_ap(&eps, 5.0, UnitExchange::MAP);
        assert_eq!(r.ap, 0.5);
        assert_eq!(r.curve.points[0].recall, 0.0);
        assert_eq!(r.curve.points[1].precision, 0.5);
    }

    #[test]
    fn duplicate_matches_are_false_positives() {
        let eps = [episode("a", &[(-1.0, 0.0), (-2.0, 0.0)])];
        let r = compute_ap(&eps, 5.0, UnitExchange::MAP);
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.curve.points[1].precision, 0.5);
    }

    #[test]
    fn map_extremes() {
        let exact: Vec<_> = (0..4).map(|i| episode(&i.to_string(), &[(-0.5, 0.0)])).collect();
        assert_eq!(compute_map(&exact).map, 1.0);
        let far: Vec<_> = (0..4).map(|i| episode(&i.to_string(), &[(-0.5, 1000.0)])).collect();
        assert_eq!(compute_map(&far).map, 0.0);
    }

    #[test]
    fn spearman_monotone() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 1.0).collect();
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
        let z: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
        assert_eq!(spearman(&x, &z).unwrap(), -1.0);
    }

    #[test]
    fn spearman_degenerate() {
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn report_and_csv() {
        let eps = [
            episode("a", &[(-1.0, 100.0), (-2.0, 0.0)]),
            episode("b", &[(-0.5, 0.3)]),
        ];
        let rep = evaluate(&eps, &EvalOptions::default());
        assert_eq!(rep.per_threshold.len(), 7);
        assert_eq!(rep.num_predictions, 3);
        let csv = pr_csv(&rep);
        assert_eq!(csv.lines().count(), 1 + 7 * 3);
        assert!(csv.starts_with("threshold_cm,recall,precision,confidence_cut\n"));
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(
            pairs in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..50)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = spearman(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| (v / 50.0).exp()).collect();
                let y2: Vec<f64> = y.iter().map(|v| v * 3.0 - 7.0).collect();
                prop_assert!((spearman(&x2, &y2).unwrap() - r).abs() < 1e-12);
            }
        }

        #[test]
        fn traj_l1_pseudometric(
            a in (-0.5..0.5f64, -0.5..0.5f64, -90.0..90.0f64),
            b in (-0.5..0.5f64, -0.5..0.5f64, -90.0..90.0f64),
        ) {
            let mk = |p: (f64, f64, f64)| Trajectory::new(
                Pose6D::new(Vector3::new(p.0, p.1, 0.0), EulerXyz::new(0.0, p.2, 0.0).to_quaternion()),
                at(0.1, 0.1, 0.1),
            );
            let (ta, tb) = (mk(a), mk(b));
            let ab = traj_l1(&ta, &tb, UnitExchange::L1);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - traj_l1(&tb, &ta, UnitExchange::L1)).abs() < 1e-9);
            prop_assert!(traj_l1(&ta, &ta, UnitExchange::L1) < 1e-6);
        }

        #[test]
        fn reward_translation_invariant(
            c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            i in (0.5..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            s in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
        ) {
            let c = Vector3::new(c.0, c.1, c.2);
            let i = Vector3::new(i.0, i.1, i.2);
            let g = Vector3::zeros();
            let s = Vector3::new(s.0, s.1, s.2);
            let r1 = reward(&c, &i, &g).unwrap();
            let r2 = reward(&(c + s), &(i + s), &(g + s)).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn ap_bounded_and_monotone_in_threshold(
            eps in proptest::collection::vec(proptest::collection::vec((-5.0..0.0f64, 0.0..60.0f64), 0..4), 1..6)
        ) {
            let episodes: Vec<_> = eps.iter().enumerate().map(|(i, p)| episode(&i.to_string(), p)).collect();
            let mut last = 0.0;
            for t in MAP_THRESHOLDS_CM {
                let ap = compute_ap(&episodes, t, UnitExchange::MAP).ap;
                prop_assert!((0.0..=1.0).contains(&ap));
                prop_assert!(ap >= last - 1e-12);
                last = ap;
            }
        }

        #[test]
        fn low_confidence_false_positive_never_helps(
            eps in proptest::collection::vec(proptest::collection::vec((-5.0..0.0f64, 0.0..60.0f64), 1..4), 1..6),
            t in 0.5..50.0f64,
        ) {
            let episodes: Vec<_> = eps.iter().enumerate().map(|(i, p)| episode(&i.to_string(), p)).collect();
            let before = compute_ap(&episodes, t, UnitExchange::MAP);
            let mut more = episodes.clone();
            more[0].predictions.push(Prediction { trajectory: traj(10.0), confidence: -100.0 });
            let after = compute_ap(&more, t, UnitExchange::MAP);
            prop_assert!(after.ap <= before.ap + 1e-12);
            for (a, b) in before.curve.points.iter().zip(&after.curve.points) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
