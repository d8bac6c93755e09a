//! Confusion counts, DET curves, fixed-FNR threshold calibration, F-beta,
//! MAE, and grouped breakdown reports.
//!
//! Positive means underage. A sample is predicted underage when its
//! underage score is greater than or equal to the threshold.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bench::{self, Extreme, Stat};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::trainer::PredictionRow;

/// A rate that may be undefined (zero denominator). Serialized as a number
/// or the string `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Rate(pub Option<f64>);

impl Rate {
    pub const UNDEFINED: Rate = Rate(None);

    pub fn ratio(num: usize, den: usize) -> Rate {
        if den == 0 {
            Rate(None)
        } else {
            Rate(Some(num as f64 / den as f64))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rate(Some(v))),
            Raw::Text(t) if t == "undefined" => Ok(Rate(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad rate {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
        }
    }
}

/// `(underage_score, is_underage)` pairs.
pub type Scored = (f64, bool);

fn count(scores: &[Scored], threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for &(s, pos) in scores {
        match (s >= threshold, pos) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fn_ += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

pub fn confusion_at(scores: &[Scored], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    Ok(count(scores, threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fnr: Rate,
    pub fpr: Rate,
    pub precision: Rate,
    pub recall: Rate,
}

pub fn rates(cm: &ConfusionMatrix) -> Rates {
    Rates {
        fnr: Rate::ratio(cm.fn_, cm.tp + cm.fn_),
        fpr: Rate::ratio(cm.fp, cm.tn + cm.fp),
        precision: Rate::ratio(cm.tp, cm.tp + cm.fp),
        recall: Rate::ratio(cm.tp, cm.tp + cm.fn_),
    }
}

/// `(1 + β²) / (1/precision + β²/recall)`; undefined when both are zero.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    if precision == 0.0 && recall == 0.0 {
        return None;
    }
    if precision == 0.0 || recall == 0.0 {
        return Some(0.0);
    }
    let b2 = beta * beta;
    Some((1.0 + b2) / (1.0 / precision + b2 / recall))
}

fn fbeta_rate(precision: Rate, recall: Rate, beta: f64) -> Rate {
    match (precision.0, recall.0) {
        (Some(p), Some(r)) => Rate(fbeta(p, r, beta)),
        _ => Rate::UNDEFINED,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Points ordered by increasing threshold: a `-inf` sentinel, one point per
/// distinct score, and a `+inf` sentinel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,fnr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.fnr));
        }
        out
    }
}

fn class_counts(scores: &[Scored]) -> (usize, usize) {
    let pos = scores.iter().filter(|s| s.1).count();
    (pos, scores.len() - pos)
}

pub fn det_curve(scores: &[Scored]) -> Result<DetCurve> {
    let (n_pos, n_neg) = class_counts(scores);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(format!(
            "DET curve needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.0.is_nan()) {
        return Err(Error::NonFinite(format!("score {}", s.0)));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (p, n) = (n_pos as f64, n_neg as f64);
    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        fnr: 0.0,
    });
    // scores strictly below the current threshold
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(DetPoint {
            threshold: t,
            fpr: (n_neg - neg_below) as f64 / n,
            fnr: pos_below as f64 / p,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        fnr: 1.0,
    });
    Ok(DetCurve { points })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// The binary head's underage probability.
    #[default]
    Head,
    /// `T - age_estimate`, so the default working point is threshold 0.
    AgeEstimate,
}

impl ScoreSource {
    pub fn score(self, row: &PredictionRow, threshold: u32) -> Option<f64> {
        match self {
            ScoreSource::Head => row.score(threshold),
            ScoreSource::AgeEstimate => Some(threshold as f64 - row.age_estimate),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Head => "head",
            ScoreSource::AgeEstimate => "age",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub head: u32,
    #[serde(default)]
    pub source: ScoreSource,
    pub threshold: f64,
    pub achieved_fnr: f64,
    pub target_fnr: f64,
}

impl CalibratedThreshold {
    pub fn point(&self) -> OperatingPoint {
        OperatingPoint {
            head: self.head,
            source: self.source,
            threshold: self.threshold,
        }
    }
}

/// A score source and the threshold applied to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub head: u32,
    pub source: ScoreSource,
    pub threshold: f64,
}

impl OperatingPoint {
    /// Probability 0.5 on a head, or the estimate equal to the threshold age.
    pub fn default_for(head: u32, source: ScoreSource) -> Self {
        let threshold = match source {
            ScoreSource::Head => 0.5,
            ScoreSource::AgeEstimate => 0.0,
        };
        Self { head, source, threshold }
    }
}

/// `(score, is_underage)` of each row under `source` for threshold `head`;
/// rows lacking that head are skipped.
pub fn scores_for(rows: &[PredictionRow], head: u32, source: ScoreSource) -> Vec<Scored> {
    rows.iter()
        .filter_map(|r| source.score(r, head).map(|s| (s, r.age < head)))
        .collect()
}

/// FNR at `threshold`, or `None` without positives.
pub fn fnr_at(scores: &[Scored], threshold: f64) -> Option<f64> {
    rates(&count(scores, threshold)).fnr.0
}

/// Largest threshold whose FNR on `scores` does not exceed `target_fnr`.
///
/// With `P` positives and at most `m` misses allowed, this is the
/// `(m+1)`-th smallest positive score: every larger threshold misses at
/// least `m + 1` positives.
pub fn calibrate_threshold(head: u32, scores: &[Scored], target_fnr: f64) -> Result<CalibratedThreshold> {
    if !(0.0..1.0).contains(&target_fnr) {
        return Err(Error::Config(format!("target FNR {target_fnr} outside [0, 1)")));
    }
    let mut positives: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    if positives.is_empty() {
        return Err(Error::Undefined(format!("head {head}: no positives to calibrate on")));
    }
    if positives.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    positives.sort_by(f64::total_cmp);
    let p = positives.len();
    let mut misses = ((target_fnr * p as f64).floor() as usize).min(p - 1);
    while misses + 1 < p && (misses + 1) as f64 / p as f64 <= target_fnr {
        misses += 1;
    }
    while misses > 0 && misses as f64 / p as f64 > target_fnr {
        misses -= 1;
    }
    let threshold = positives[misses];
    let below = positives.partition_point(|&s| s < threshold);
    Ok(CalibratedThreshold {
        head,
        source: ScoreSource::Head,
        threshold,
        achieved_fnr: below as f64 / p as f64,
        target_fnr,
    })
}

/// Mean absolute error over `(estimate, label)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    Ok(pairs.iter().map(|(y, a)| (y - a).abs()).sum::<f64>() / pairs.len() as f64)
}

/// How evaluated samples are partitioned into report rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grouping {
    All,
    /// One row per source dataset.
    Source,
    /// Named list of sources pooled into one row.
    Sources { name: String, sources: Vec<String> },
    PoseAbove { degrees: f64 },
    ExpressionAbove { intensity: f64 },
    /// Samples at one extreme of a statistic, counted within the split.
    Percentile { stat: Stat, extreme: Extreme, pct: f64 },
}

impl Grouping {
    /// `(group name, member positions)` for each row this grouping emits.
    pub fn groups(&self, samples: &[&Sample]) -> Result<Vec<(String, Vec<usize>)>> {
        let all = || (0..samples.len()).collect::<Vec<_>>();
        Ok(match self {
            Grouping::All => vec![("all".into(), all())],
            Grouping::Source => {
                let mut sources: Vec<&str> = samples.iter().map(|s| s.source.as_str()).collect();
                sources.sort_unstable();
                sources.dedup();
                sources
                    .into_iter()
                    .map(|src| {
                        let members = all().into_iter().filter(|&i| samples[i].source == src).collect();
                        (format!("source={src}"), members)
                    })
                    .collect()
            }
            Grouping::Sources { name, sources } => vec![(
                name.clone(),
                all()
                    .into_iter()
                    .filter(|&i| sources.contains(&samples[i].source))
                    .collect(),
            )],
            Grouping::PoseAbove { degrees } => vec![(
                format!("pose>{degrees}"),
                all()
                    .into_iter()
                    .filter(|&i| Stat::PoseNorm.value(samples[i]).is_some_and(|v| v > *degrees))
                    .collect(),
            )],
            Grouping::ExpressionAbove { intensity } => vec![(
                format!("expression>{intensity}"),
                all()
                    .into_iter()
                    .filter(|&i| {
                        Stat::ExpressionIntensity
                            .value(samples[i])
                            .is_some_and(|v| v > *intensity)
                    })
                    .collect(),
            )],
            Grouping::Percentile { stat, extreme, pct } => {
                let values: Vec<Option<f64>> = samples.iter().map(|s| stat.value(s)).collect();
                let sel = bench::select_extreme(&values, *extreme, *pct)?;
                vec![(format!("{}-{}-{pct}%", extreme.as_str(), stat.as_str()), sel.selected)]
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub head: u32,
    pub source: ScoreSource,
    pub threshold: f64,
    pub n: usize,
    pub confusion: ConfusionMatrix,
    pub precision: Rate,
    pub f1: Rate,
    pub f2: Rate,
    pub recall: Rate,
    pub mae: Rate,
}

/// Metrics of one member set at a fixed threshold.
pub fn group_row(
    group: &str,
    rows: &[PredictionRow],
    members: &[usize],
    point: &OperatingPoint,
) -> GroupRow {
    let scored: Vec<Scored> = members
        .iter()
        .filter_map(|&i| {
            let row = &rows[i];
            point.source.score(row, point.head).map(|s| (s, row.age < point.head))
        })
        .collect();
    let confusion = count(&scored, point.threshold);
    let r = rates(&confusion);
    let pairs: Vec<(f64, f64)> = members
        .iter()
        .map(|&i| (rows[i].age_estimate, rows[i].age as f64))
        .collect();
    GroupRow {
        group: group.to_owned(),
        head: point.head,
        source: point.source,
        threshold: point.threshold,
        n: members.len(),
        confusion,
        precision: r.precision,
        f1: fbeta_rate(r.precision, r.recall, 1.0),
        f2: fbeta_rate(r.precision, r.recall, 2.0),
        recall: r.recall,
        mae: Rate(mae(&pairs).ok()),
    }
}

/// One row per (group, calibrated threshold). `rows` and `samples` are
/// aligned. Empty groups are kept with undefined metrics.
pub fn grouped_report(
    rows: &[PredictionRow],
    samples: &[&Sample],
    groupings: &[Grouping],
    points: &[OperatingPoint],
) -> Result<Vec<GroupRow>> {
    if rows.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            rows.len(),
            samples.len()
        )));
    }
    let mut out = Vec::new();
    for grouping in groupings {
        for (name, members) in grouping.groups(samples)? {
            for p in points {
                out.push(group_row(&name, rows, &members, p));
            }
        }
    }
    Ok(out)
}

/// Aligned-column text rendering of report rows.
pub fn render_table(rows: &[GroupRow]) -> String {
    let header = ["group", "T", "score", "thr", "n", "Pr", "F1", "F2", "Re", "MAE"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.group.clone(),
            r.head.to_string(),
            r.source.as_str().to_owned(),
            format!("{:.4}", r.threshold),
            r.n.to_string(),
            format!("{:.3}", r.precision),
            format!("{:.3}", r.f1),
            format!("{:.3}", r.f2),
            format!("{:.3}", r.recall),
            format!("{:.2}", r.mae),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
