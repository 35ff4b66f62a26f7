//! Precision/success metrics, attribute reports, the ablation harness and
//! CSV/SVG emission.
//!
//! Metric conventions (pinned here, asserted in tests):
//!
//! * Precision rate at threshold `tau`: fraction of frames whose predicted
//!   center lies strictly closer than `tau` pixels to the ground-truth
//!   center. The representative score uses 20 px, or 5 px for
//!   small-target datasets (GTOT mode).
//! * Success rate: fraction of frames with overlap strictly greater than
//!   the threshold, evaluated on the 21-point grid 0.00, 0.05, ..., 1.00;
//!   at the 1.0 endpoint an exact overlap of 1 counts as success
//!   (otherwise a perfect trace could never reach an AUC of 1). The
//!   summary score is the mean over the grid.
//! * Aggregation across sequences is frame-pooled: every frame weighs
//!   equally regardless of sequence length. A per-sequence mean is
//!   available behind a flag.

use crate::data::RgbtSequence;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tracker::{track_sequence, TrackRun, TrackerConfig};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

/// Published reference scores (PR, SR) kept as annotation metadata for
/// report context; desk-scale runs are not expected to reproduce them.
pub const REFERENCE_SCORES: [(&str, f64, f64); 6] = [
    ("rgbt234/full", 0.839, 0.593),
    ("rgbt234/no_resample", 0.820, 0.584),
    ("rgbt234/no_dmc", 0.809, 0.569),
    ("rgbt234/baseline", 0.802, 0.565),
    ("gtot/full", 0.909, 0.733),
    ("gtot/baseline", 0.866, 0.693),
];

/// Number of PR curve samples (1 px spacing, 0..=50).
pub const PR_THRESHOLDS: usize = 51;
/// Number of SR curve samples (0.05 spacing over [0, 1]).
pub const SR_THRESHOLDS: usize = 21;

/// One tracked sequence paired with its ground truth.
#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub name: String,
    pub pred: Vec<BoundingBox>,
    pub gt: Vec<BoundingBox>,
    pub attributes: std::collections::BTreeSet<String>,
}

impl SequenceResult {
    pub fn from_run(seq: &RgbtSequence, run: &TrackRun) -> Self {
        SequenceResult {
            name: seq.name.clone(),
            pred: run.boxes.clone(),
            gt: seq.gt_boxes(),
            attributes: seq.attributes.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// `(threshold_px, precision)` over 0..=50 px.
    pub pr_curve: Vec<(f64, f64)>,
    /// `(overlap_threshold, success)` over the 21-point grid.
    pub sr_curve: Vec<(f64, f64)>,
    /// Precision at the representative threshold.
    pub pr_at: f64,
    pub pr_threshold_px: f64,
    /// Area under the success curve (grid mean).
    pub sr_auc: f64,
    pub frames: usize,
    pub per_attribute: BTreeMap<String, (f64, f64)>,
}

/// Fraction of frames whose center error is strictly below `threshold_px`.
pub fn precision_rate(pred: &[BoundingBox], gt: &[BoundingBox], threshold_px: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "prediction/gt length mismatch");
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(gt.iter())
        .filter(|(p, g)| p.center_distance(g) < threshold_px)
        .count();
    hits as f64 / pred.len() as f64
}

fn success_at(overlaps: &[f64], tau: f64, last: bool) -> f64 {
    if overlaps.is_empty() {
        return 0.0;
    }
    let hits = overlaps
        .iter()
        .filter(|&&o| if last { o >= tau } else { o > tau })
        .count();
    hits as f64 / overlaps.len() as f64
}

/// Success curve over the 21-point grid and its mean (the AUC summary).
pub fn success_rate_auc(pred: &[BoundingBox], gt: &[BoundingBox]) -> (Vec<(f64, f64)>, f64) {
    assert_eq!(pred.len(), gt.len());
    let overlaps: Vec<f64> = pred.iter().zip(gt.iter()).map(|(p, g)| iou(p, g)).collect();
    let mut curve = Vec::with_capacity(SR_THRESHOLDS);
    let mut sum = 0.0;
    for i in 0..SR_THRESHOLDS {
        let tau = i as f64 / (SR_THRESHOLDS - 1) as f64;
        let s = success_at(&overlaps, tau, i == SR_THRESHOLDS - 1);
        curve.push((tau, s));
        sum += s;
    }
    (curve, sum / SR_THRESHOLDS as f64)
}

/// Representative PR threshold: 20 px, or 5 px in small-target (GTOT) mode.
pub fn representative_threshold(gtot_mode: bool) -> f64 {
    if gtot_mode {
        5.0
    } else {
        20.0
    }
}

fn pool_frames(results: &[SequenceResult]) -> (Vec<BoundingBox>, Vec<BoundingBox>) {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for r in results {
        assert_eq!(
            r.pred.len(),
            r.gt.len(),
            "sequence {}: {} predictions vs {} gt boxes",
            r.name,
            r.pred.len(),
            r.gt.len()
        );
        pred.extend_from_slice(&r.pred);
        gt.extend_from_slice(&r.gt);
    }
    (pred, gt)
}

fn metrics_for(pred: &[BoundingBox], gt: &[BoundingBox], pr_thr: f64) -> (f64, f64) {
    (
        precision_rate(pred, gt, pr_thr),
        success_rate_auc(pred, gt).1,
    )
}

/// Frame-pooled evaluation with per-attribute breakdown. Attributes with
/// no carrying sequence are omitted (with a warning on stderr), never
/// reported as zero.
pub fn evaluate(results: &[SequenceResult], gtot_mode: bool) -> EvalReport {
    let pr_thr = representative_threshold(gtot_mode);
    let (pred, gt) = pool_frames(results);
    let mut pr_curve = Vec::with_capacity(PR_THRESHOLDS);
    for i in 0..PR_THRESHOLDS {
        let tau = i as f64;
        pr_curve.push((tau, precision_rate(&pred, &gt, tau)));
    }
    let (sr_curve, sr_auc) = success_rate_auc(&pred, &gt);
    let mut per_attribute = BTreeMap::new();
    let mut tags: Vec<String> = results
        .iter()
        .flat_map(|r| r.attributes.iter().cloned())
        .collect();
    tags.sort();
    tags.dedup();
    for tag in tags {
        let subset: Vec<SequenceResult> = results
            .iter()
            .filter(|r| r.attributes.contains(&tag))
            .cloned()
            .collect();
        if subset.is_empty() {
            eprintln!("warning: attribute {tag} has no sequences; omitted");
            continue;
        }
        let (p, g) = pool_frames(&subset);
        per_attribute.insert(tag, metrics_for(&p, &g, pr_thr));
    }
    EvalReport {
        pr_at: precision_rate(&pred, &gt, pr_thr),
        pr_threshold_px: pr_thr,
        sr_auc,
        frames: pred.len(),
        pr_curve,
        sr_curve,
        per_attribute,
    }
}

/// Per-sequence mean variant of the aggregate scores.
pub fn evaluate_sequence_mean(results: &[SequenceResult], gtot_mode: bool) -> (f64, f64) {
    let pr_thr = representative_threshold(gtot_mode);
    let mut pr = 0.0;
    let mut sr = 0.0;
    for r in results {
        let (p, s) = metrics_for(&r.pred, &r.gt, pr_thr);
        pr += p;
        sr += s;
    }
    let n = results.len().max(1) as f64;
    (pr / n, sr / n)
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

/// Component wiring of one ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub dmc: bool,
    pub resample: bool,
}

/// The four standard variants: baseline, conditioning only, re-sampling
/// only, and the full tracker.
pub const VARIANTS: [Variant; 4] = [
    Variant { name: "v1", dmc: false, resample: false },
    Variant { name: "v2", dmc: true, resample: false },
    Variant { name: "v3", dmc: false, resample: true },
    Variant { name: "full", dmc: true, resample: true },
];

/// Track every sequence of `dataset` (in parallel; per-sequence seeds make
/// the outcome independent of scheduling) and evaluate.
pub fn run_tracker_on_dataset<S: Scalar>(
    net: &Network<S>,
    dataset: &[RgbtSequence],
    config: &TrackerConfig,
    gtot_mode: bool,
) -> Result<(EvalReport, Vec<SequenceResult>, Vec<TrackRun>)> {
    let runs: Vec<Result<TrackRun>> = dataset
        .par_iter()
        .map(|seq| track_sequence(net, seq, config))
        .collect();
    let mut results = Vec::with_capacity(dataset.len());
    let mut all_runs = Vec::with_capacity(dataset.len());
    for (seq, run) in dataset.iter().zip(runs) {
        let run = run?;
        results.push(SequenceResult::from_run(seq, &run));
        all_runs.push(run);
    }
    Ok((evaluate(&results, gtot_mode), results, all_runs))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub dmc: bool,
    pub resample: bool,
    pub pr: f64,
    pub sr: f64,
}

/// Run the four component variants. Variants with mutual conditioning use
/// `net_dmc`; the others use `net_plain` (trained without the blocks).
pub fn ablation_run<S: Scalar>(
    dataset: &[RgbtSequence],
    net_dmc: &Network<S>,
    net_plain: &Network<S>,
    base: &TrackerConfig,
    gtot_mode: bool,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for v in VARIANTS {
        let mut config = base.clone();
        config.use_dmc = v.dmc;
        config.use_resample = v.resample;
        let net = if v.dmc { net_dmc } else { net_plain };
        let (report, _, _) = run_tracker_on_dataset(net, dataset, &config, gtot_mode)?;
        rows.push(AblationRow {
            variant: v.name,
            dmc: v.dmc,
            resample: v.resample,
            pr: report.pr_at,
            sr: report.sr_auc,
        });
    }
    Ok(rows)
}

/// Threshold sweep of the re-sampling trigger (the published grid).
pub const U_SWEEP: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

pub fn u_sweep<S: Scalar>(
    dataset: &[RgbtSequence],
    net: &Network<S>,
    base: &TrackerConfig,
    values: &[f64],
    gtot_mode: bool,
) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::with_capacity(values.len());
    for &u in values {
        let mut config = base.clone();
        config.use_resample = true;
        config.u_threshold = u;
        let (report, _, _) = run_tracker_on_dataset(net, dataset, &config, gtot_mode)?;
        rows.push((u, report.pr_at, report.sr_auc));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV / SVG emission
// ---------------------------------------------------------------------------

pub fn write_curve_csv(path: &Path, header: &str, curve: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (x, y) in curve {
        out.push_str(&format!("{x:.4},{y:.6}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "metric,value\npr@{:.0}px,{:.6}\nsr_auc,{:.6}\nframes,{}\n",
        report.pr_threshold_px, report.pr_at, report.sr_auc, report.frames
    ));
    for (tag, (pr, sr)) in &report.per_attribute {
        out.push_str(&format!("attr_{tag}_pr,{pr:.6}\nattr_{tag}_sr,{sr:.6}\n"));
    }
    for (name, pr, sr) in REFERENCE_SCORES {
        out.push_str(&format!("reference_{name}_pr,{pr:.3}\nreference_{name}_sr,{sr:.3}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from("variant,dmc,resample,pr,sr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.variant, r.dmc, r.resample, r.pr, r.sr
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_u_sweep_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut out = String::from("u,pr,sr\n");
    for (u, pr, sr) in rows {
        out.push_str(&format!("{u:.1},{pr:.6},{sr:.6}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Minimal self-contained SVG line plot (one polyline per series).
pub fn write_svg_plot(
    path: &Path,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for (x, y) in pts {
            xs.push(*x);
            ys.push(*y);
        }
    }
    if xs.is_empty() {
        return Err(Error::InvalidArgument("plot with no points".into()));
    }
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (0.0f64, 1.0f64.max(ys.iter().cloned().fold(0.0, f64::max)));
    let sx = |x: f64| ml + (x - x0) / ((x1 - x0).max(1e-12)) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / ((y1 - y0).max(1e-12)) * (h - mt - mb);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>
"#,
        w / 2.0,
        h - mb,
        w - mr,
        h - mb,
        h - mb,
    );
    for i in 0..=5 {
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        svg.push_str(&format!(
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{fy:.2}</text>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{fx:.1}</text>
"#,
            ml - 6.0,
            sy(fy) + 4.0,
            sx(fx),
            h - mb + 16.0,
        ));
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path_d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, (x, y))| {
                format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(*x), sy(*y))
            })
            .collect();
        svg.push_str(&format!(
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>
<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>
"#,
            path_d.join(" "),
            w - mr - 150.0,
            mt + 16.0 * (i as f64 + 1.0),
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_with(pred: Vec<BoundingBox>, gt: Vec<BoundingBox>, tags: &[&str]) -> SequenceResult {
        SequenceResult {
            name: "s".into(),
            pred,
            gt,
            attributes: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn perfect_trace_scores_one_on_both_metrics() {
        let gt: Vec<BoundingBox> = (0..20)
            .map(|i| BoundingBox::new(10.0 + i as f64, 5.0, 30.0, 40.0))
            .collect();
        assert_eq!(precision_rate(&gt, &gt, 20.0), 1.0);
        let (_, auc) = success_rate_auc(&gt, &gt);
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn disjoint_trace_scores_zero_auc() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 5];
        let pred = vec![BoundingBox::new(500.0, 500.0, 10.0, 10.0); 5];
        let (_, auc) = success_rate_auc(&pred, &gt);
        assert_eq!(auc, 0.0);
    }

    #[test]
    fn offset_centers_fail_strict_threshold() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 4];
        let pred = vec![BoundingBox::new(25.0, 0.0, 10.0, 10.0); 4];
        assert_eq!(precision_rate(&pred, &gt, 20.0), 0.0);
        // Exactly at the threshold also misses (strict comparison).
        let pred20 = vec![BoundingBox::new(20.0, 0.0, 10.0, 10.0); 4];
        assert_eq!(precision_rate(&pred20, &gt, 20.0), 0.0);
    }

    #[test]
    fn precision_matches_hand_enumerated_oracle() {
        // Mixed trace: per-frame center errors 0, 3, 10, 19.999, 20, 35.
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 6];
        let offsets = [0.0, 3.0, 10.0, 19.999, 20.0, 35.0];
        let pred: Vec<BoundingBox> = offsets
            .iter()
            .map(|o| BoundingBox::new(*o, 0.0, 10.0, 10.0))
            .collect();
        // Oracle: count strictly below 20 by hand = 4.
        assert_eq!(precision_rate(&pred, &gt, 20.0), 4.0 / 6.0);
        assert_eq!(precision_rate(&pred, &gt, 5.0), 2.0 / 6.0);
    }

    #[test]
    fn constant_half_overlap_gives_ten_of_twentyone() {
        // IoU exactly 0.5: boxes [0,20)x[0,10) vs [5,25)x[0,10) have
        // intersection 15*10=150, union 250+... use a known 0.5 pair:
        // w=10,h=10 shifted so inter/union = 0.5 -> shift x by 10/3.
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 7];
        let dx = 10.0 / 3.0;
        let pred = vec![BoundingBox::new(dx, 0.0, 10.0, 10.0); 7];
        let v = iou(&pred[0], &gt[0]);
        assert!((v - 0.5).abs() < 1e-12, "iou {v}");
        let (_, auc) = success_rate_auc(&pred, &gt);
        assert!((auc - 10.0 / 21.0).abs() < 1e-12, "auc {auc}");
    }

    #[test]
    fn curves_are_monotone() {
        let mut rng = crate::rng::Rng::new(5);
        let gt: Vec<BoundingBox> = (0..100)
            .map(|_| {
                BoundingBox::new(
                    rng.range(0.0, 100.0),
                    rng.range(0.0, 100.0),
                    5.0 + rng.range(0.0, 30.0),
                    5.0 + rng.range(0.0, 30.0),
                )
            })
            .collect();
        let pred: Vec<BoundingBox> = gt
            .iter()
            .map(|b| {
                BoundingBox::new(
                    b.x + rng.normal() * 10.0,
                    b.y + rng.normal() * 10.0,
                    b.w * (1.0 + 0.2 * rng.normal()).max(0.2),
                    b.h * (1.0 + 0.2 * rng.normal()).max(0.2),
                )
            })
            .collect();
        let r = evaluate(
            &[result_with(pred, gt, &["CM"])],
            false,
        );
        for w in r.pr_curve.windows(2) {
            assert!(w[1].1 >= w[0].1, "PR curve not non-decreasing");
        }
        for w in r.sr_curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "SR curve not non-increasing");
        }
        assert!(r.pr_at >= 0.0 && r.pr_at <= 1.0);
        assert!(r.sr_auc >= 0.0 && r.sr_auc <= 1.0);
    }

    #[test]
    fn single_tag_attribute_equals_overall() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 5];
        let pred = vec![BoundingBox::new(1.0, 1.0, 10.0, 10.0); 5];
        let r = evaluate(&[result_with(pred, gt, &["CM"])], false);
        let (pr, sr) = r.per_attribute["CM"];
        assert_eq!(pr, r.pr_at);
        assert_eq!(sr, r.sr_auc);
        // Tags never carried by any sequence are absent, not zero.
        assert!(!r.per_attribute.contains_key("TC"));
    }

    #[test]
    fn evaluation_is_order_independent() {
        let a = result_with(
            vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 3],
            vec![BoundingBox::new(2.0, 0.0, 10.0, 10.0); 3],
            &[],
        );
        let b = result_with(
            vec![BoundingBox::new(0.0, 0.0, 8.0, 8.0); 7],
            vec![BoundingBox::new(30.0, 0.0, 8.0, 8.0); 7],
            &[],
        );
        let r1 = evaluate(&[a.clone(), b.clone()], false);
        let r2 = evaluate(&[b, a], false);
        assert_eq!(r1.pr_at, r2.pr_at);
        assert_eq!(r1.sr_auc, r2.sr_auc);
    }

    #[test]
    fn gtot_mode_uses_five_pixels() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 2];
        let pred = vec![BoundingBox::new(7.0, 0.0, 10.0, 10.0); 2];
        let r20 = evaluate(&[result_with(pred.clone(), gt.clone(), &[])], false);
        let r5 = evaluate(&[result_with(pred, gt, &[])], true);
        assert_eq!(r20.pr_threshold_px, 20.0);
        assert_eq!(r5.pr_threshold_px, 5.0);
        assert_eq!(r20.pr_at, 1.0);
        assert_eq!(r5.pr_at, 0.0);
    }

    #[test]
    fn svg_plot_is_written() {
        let dir = std::env::temp_dir().join("dmcnet_eval_svg");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.svg");
        write_svg_plot(
            &path,
            "PR",
            &[("full".to_string(), vec![(0.0, 0.0), (25.0, 0.8), (50.0, 0.95)])],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline") || text.contains("<path"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mean_over_sequences_differs_from_frame_pooling_when_lengths_differ() {
        let a = result_with(
            vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 2],
            vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 2],
            &[],
        ); // perfect, 2 frames
        let b = result_with(
            vec![BoundingBox::new(100.0, 0.0, 10.0, 10.0); 8],
            vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0); 8],
            &[],
        ); // hopeless, 8 frames
        let pooled = evaluate(&[a.clone(), b.clone()], false);
        let (mean_pr, _) = evaluate_sequence_mean(&[a, b], false);
        assert!((pooled.pr_at - 0.2).abs() < 1e-12);
        assert!((mean_pr - 0.5).abs() < 1e-12);
    }
}
