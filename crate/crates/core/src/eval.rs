//! Precision and success rates, their max-over-ground-truth variants, and
//! attribute breakdowns.
//!
//! - PR(τ): fraction of frames whose center error is `≤ τ` pixels, τ = 0..=50.
//! - SR(θ): fraction of frames whose IoU is `> θ`, θ = 0, 0.05, …, 1. The SR
//!   headline is the mean over those 21 thresholds.
//! - MPR/MSR: the same with the smaller center error and larger IoU over the
//!   RGB and thermal ground truths.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::synthdata::Attribute;

pub const PR_MAX_THRESHOLD: usize = 50;
pub const PR_HEADLINE: usize = 20;
pub const SR_STEPS: usize = 20;
pub const CSV_HEADER: &str = "method,variant,metric,threshold,value";

pub fn pr_thresholds() -> Vec<f64> {
    (0..=PR_MAX_THRESHOLD).map(|t| t as f64).collect()
}

pub fn sr_thresholds() -> Vec<f64> {
    (0..=SR_STEPS).map(|k| k as f64 / SR_STEPS as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScore {
    pub center_error: f64,
    pub iou: f64,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!(
            "{what}: {a} predicted frames but {b} ground-truth frames"
        )));
    }
    Ok(())
}

pub fn frame_scores(pred: &[BBox], gt: &[BBox]) -> Result<Vec<FrameScore>> {
    check_len(pred.len(), gt.len(), "frame count mismatch")?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| FrameScore {
            center_error: p.center_distance(g),
            iou: p.iou(g),
        })
        .collect())
}

/// Per frame, the nearer center and the better overlap of the two ground
/// truths.
pub fn dual_frame_scores(pred: &[BBox], gt_rgb: &[BBox], gt_tir: &[BBox]) -> Result<Vec<FrameScore>> {
    let a = frame_scores(pred, gt_rgb)?;
    let b = frame_scores(pred, gt_tir)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| FrameScore {
            center_error: x.center_error.min(y.center_error),
            iou: x.iou.max(y.iou),
        })
        .collect())
}

fn fraction(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

pub fn pr_curve(scores: &[FrameScore]) -> Vec<f64> {
    pr_thresholds()
        .into_iter()
        .map(|t| fraction(scores.iter().filter(|s| s.center_error <= t).count(), scores.len()))
        .collect()
}

pub fn sr_curve(scores: &[FrameScore]) -> Vec<f64> {
    sr_thresholds()
        .into_iter()
        .map(|t| fraction(scores.iter().filter(|s| s.iou > t).count(), scores.len()))
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// PR curve and its value at 20 px.
pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    let c = pr_curve(&frame_scores(pred, gt)?);
    let headline = c[PR_HEADLINE];
    Ok((c, headline))
}

/// SR curve and its mean.
pub fn success_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    let c = sr_curve(&frame_scores(pred, gt)?);
    let auc = mean(&c);
    Ok((c, auc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frames: usize,
    pub pr_curve: Vec<f64>,
    pub pr: f64,
    pub sr_curve: Vec<f64>,
    pub sr: f64,
    pub mpr_curve: Vec<f64>,
    pub mpr: f64,
    pub msr_curve: Vec<f64>,
    pub msr: f64,
}

impl MetricReport {
    /// PR/SR against the RGB ground truth; MPR/MSR against both.
    pub fn compute(pred: &[BBox], gt_rgb: &[BBox], gt_tir: &[BBox]) -> Result<Self> {
        let single = frame_scores(pred, gt_rgb)?;
        let dual = dual_frame_scores(pred, gt_rgb, gt_tir)?;
        Ok(Self::from_scores(&single, &dual))
    }

    pub fn from_scores(single: &[FrameScore], dual: &[FrameScore]) -> Self {
        let (pr, sr) = (pr_curve(single), sr_curve(single));
        let (mpr, msr) = (pr_curve(dual), sr_curve(dual));
        Self {
            frames: single.len(),
            pr: pr[PR_HEADLINE],
            sr: mean(&sr),
            mpr: mpr[PR_HEADLINE],
            msr: mean(&msr),
            pr_curve: pr,
            sr_curve: sr,
            mpr_curve: mpr,
            msr_curve: msr,
        }
    }
}

/// Tracking output of one sequence with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    pub name: String,
    pub attributes: Vec<Attribute>,
    pub pred: Vec<BBox>,
    pub gt_rgb: Vec<BBox>,
    pub gt_tir: Vec<BBox>,
}

impl SequenceResult {
    fn scores(&self) -> Result<(Vec<FrameScore>, Vec<FrameScore>)> {
        let ctx = |e: Error| Error::invalid(format!("sequence {}: {e}", self.name));
        let single = frame_scores(&self.pred, &self.gt_rgb).map_err(ctx)?;
        let dual = dual_frame_scores(&self.pred, &self.gt_rgb, &self.gt_tir).map_err(ctx)?;
        Ok((single, dual))
    }
}

/// Metrics over the union of frames of `results`.
pub fn overall_report(results: &[SequenceResult]) -> Result<MetricReport> {
    let refs: Vec<&SequenceResult> = results.iter().collect();
    pooled(&refs)
}

fn pooled(results: &[&SequenceResult]) -> Result<MetricReport> {
    let mut single = Vec::new();
    let mut dual = Vec::new();
    for r in results {
        let (s, d) = r.scores()?;
        single.extend(s);
        dual.extend(d);
    }
    Ok(MetricReport::from_scores(&single, &dual))
}

/// One report per attribute, pooled over the frames of every sequence
/// carrying it. Attributes carried by no sequence are left out. `filter`
/// restricts the table to the named attributes.
pub fn attribute_report(
    results: &[SequenceResult],
    filter: Option<&[String]>,
) -> Result<BTreeMap<Attribute, MetricReport>> {
    let wanted: Vec<Attribute> = match filter {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_>>()?,
        None => Attribute::ALL.to_vec(),
    };
    let mut out = BTreeMap::new();
    for a in wanted {
        let group: Vec<&SequenceResult> = results.iter().filter(|r| r.attributes.contains(&a)).collect();
        if !group.is_empty() {
            out.insert(a, pooled(&group)?);
        }
    }
    Ok(out)
}

fn push_row(csv: &mut String, method: &str, variant: &str, metric: &str, threshold: &str, value: f64) {
    writeln!(csv, "{method},{variant},{metric},{threshold},{value}").expect("writing to a String");
}

/// Headline rows: overall first, then per attribute (metric `PR/LI`, …).
pub fn report_csv(
    method: &str,
    variant: &str,
    overall: &MetricReport,
    by_attr: &BTreeMap<Attribute, MetricReport>,
) -> String {
    let mut csv = format!("{CSV_HEADER}\n");
    let mut rows = |suffix: String, r: &MetricReport| {
        let t20 = PR_HEADLINE.to_string();
        push_row(&mut csv, method, variant, &format!("PR{suffix}"), &t20, r.pr);
        push_row(&mut csv, method, variant, &format!("SR{suffix}"), "auc", r.sr);
        push_row(&mut csv, method, variant, &format!("MPR{suffix}"), &t20, r.mpr);
        push_row(&mut csv, method, variant, &format!("MSR{suffix}"), "auc", r.msr);
        push_row(
            &mut csv,
            method,
            variant,
            &format!("frames{suffix}"),
            "",
            r.frames as f64,
        );
    };
    rows(String::new(), overall);
    for (a, r) in by_attr {
        rows(format!("/{a}"), r);
    }
    csv
}

/// Every curve point of the overall report, same columns as the CSV.
pub fn plot_data(method: &str, variant: &str, r: &MetricReport) -> String {
    let mut csv = format!("{CSV_HEADER}\n");
    let curves: [(&str, &[f64], Vec<f64>); 4] = [
        ("pr_curve", &r.pr_curve, pr_thresholds()),
        ("sr_curve", &r.sr_curve, sr_thresholds()),
        ("mpr_curve", &r.mpr_curve, pr_thresholds()),
        ("msr_curve", &r.msr_curve, sr_thresholds()),
    ];
    for (name, values, thresholds) in curves {
        for (t, v) in thresholds.iter().zip(values) {
            push_row(&mut csv, method, variant, name, &t.to_string(), *v);
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn perfect_predictions() {
        let gt = vec![b(1.0, 2.0, 5.0, 5.0), b(10.0, 3.0, 4.0, 8.0)];
        let (pr, pr20) = precision_curve(&gt, &gt).unwrap();
        assert!(pr.iter().all(|&v| v == 1.0));
        assert_eq!(pr20, 1.0);
        let (sr, auc) = success_curve(&gt, &gt).unwrap();
        assert!(sr[..SR_STEPS].iter().all(|&v| v == 1.0));
        assert_eq!(sr[SR_STEPS], 0.0);
        assert_eq!(auc, 20.0 / 21.0);
    }

    #[test]
    fn ten_pixel_error() {
        let (pr, _) = precision_curve(&[b(10.0, 0.0, 2.0, 2.0)], &[b(0.0, 0.0, 2.0, 2.0)]).unwrap();
        assert_eq!(pr[5], 0.0);
        assert_eq!(pr[20], 1.0);
    }

    #[test]
    fn zero_overlap() {
        let (sr, _) = success_curve(&[b(10.0, 0.0, 2.0, 2.0)], &[b(0.0, 0.0, 2.0, 2.0)]).unwrap();
        assert_eq!(sr[0], 0.0);
        assert!(sr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(precision_curve(&[b(0.0, 0.0, 1.0, 1.0)], &[]).is_err());
        assert!(MetricReport::compute(&[], &[], &[b(0.0, 0.0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn min_distance_rule() {
        // distance 30 to the RGB box, 2 to the thermal box
        let pred = [b(30.0, 0.0, 2.0, 2.0)];
        let r = MetricReport::compute(&pred, &[b(0.0, 0.0, 2.0, 2.0)], &[b(28.0, 0.0, 2.0, 2.0)]).unwrap();
        assert_eq!(r.pr, 0.0);
        assert_eq!(r.mpr, 1.0);
    }

    #[test]
    fn attribute_table_policy() {
        let mk = |name: &str, a: Attribute, shift: f64| SequenceResult {
            name: name.into(),
            attributes: vec![a],
            pred: vec![b(shift, 0.0, 4.0, 4.0)],
            gt_rgb: vec![b(0.0, 0.0, 4.0, 4.0)],
            gt_tir: vec![b(0.0, 0.0, 4.0, 4.0)],
        };
        let all_li = vec![mk("a", Attribute::LI, 0.0), mk("b", Attribute::LI, 30.0)];
        let table = attribute_report(&all_li, None).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table[&Attribute::LI], overall_report(&all_li).unwrap());
        assert!(attribute_report(&all_li, Some(&["XYZ".to_string()])).is_err());
        let only_tc = attribute_report(&all_li, Some(&["TC".to_string()])).unwrap();
        assert!(only_tc.is_empty());
    }

    #[test]
    fn csv_has_documented_header() {
        let gt = vec![b(1.0, 2.0, 5.0, 5.0)];
        let r = MetricReport::compute(&gt, &gt, &gt).unwrap();
        let csv = report_csv("bat", "BAT", &r, &BTreeMap::new());
        assert!(csv.starts_with("method,variant,metric,threshold,value\n"));
        assert!(csv.contains("bat,BAT,PR,20,1\n"));
        let plot = plot_data("bat", "BAT", &r);
        assert_eq!(plot.lines().count(), 1 + 2 * 51 + 2 * 21);
    }
}
