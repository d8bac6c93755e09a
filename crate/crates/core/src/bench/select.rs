use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::{expression_intensity, pose_norm};
use crate::data::Sample;
use crate::error::{Error, Result};

/// A per-sample measurement usable for selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Brightness,
    Contrast,
    Saturation,
    Sharpness,
    PoseNorm,
    ExpressionIntensity,
}

impl Stat {
    pub fn value(self, s: &Sample) -> Option<f64> {
        let m = &s.meta;
        match self {
            Stat::Brightness => m.brightness,
            Stat::Contrast => m.contrast,
            Stat::Saturation => m.saturation,
            Stat::Sharpness => m.sharpness,
            Stat::PoseNorm => m.pose().map(|(p, y, r)| pose_norm(p, y, r)),
            Stat::ExpressionIntensity => m.affect().map(|(a, v)| expression_intensity(a, v)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Brightness => "brightness",
            Stat::Contrast => "contrast",
            Stat::Saturation => "saturation",
            Stat::Sharpness => "sharpness",
            Stat::PoseNorm => "pose",
            Stat::ExpressionIntensity => "expression",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extreme {
    Lowest,
    Highest,
}

impl Extreme {
    pub fn as_str(self) -> &'static str {
        match self {
            Extreme::Lowest => "low",
            Extreme::Highest => "high",
        }
    }
}

/// Positions chosen from a value list, in ascending position order, and the
/// positions skipped for lacking a value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<usize>,
    pub missing: Vec<usize>,
}

fn check_pct(pct: f64) -> Result<()> {
    if (0.0..=100.0).contains(&pct) {
        Ok(())
    } else {
        Err(Error::Config(format!("percentage {pct} outside [0, 100]")))
    }
}

/// `floor(pct/100 * n)`, tolerant of decimal percentages like 8.0 that are
/// not exact in binary.
pub fn percentile_count(pct: f64, n: usize) -> usize {
    (((pct * n as f64) / 100.0 + 1e-9).floor() as usize).min(n)
}

/// The `floor(pct/100 * N)` most extreme present values, `N` counting only
/// present values. Ties keep list order.
pub fn select_extreme(values: &[Option<f64>], extreme: Extreme, pct: f64) -> Result<Selection> {
    check_pct(pct)?;
    let mut present: Vec<(usize, f64)> = Vec::with_capacity(values.len());
    let mut missing = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) if !v.is_nan() => present.push((i, *v)),
            _ => missing.push(i),
        }
    }
    let k = percentile_count(pct, present.len());
    match extreme {
        Extreme::Lowest => present.sort_by(|a, b| a.1.total_cmp(&b.1)),
        Extreme::Highest => present.sort_by(|a, b| b.1.total_cmp(&a.1)),
    }
    let mut selected: Vec<usize> = present[..k].iter().map(|p| p.0).collect();
    selected.sort_unstable();
    Ok(Selection { selected, missing })
}

/// Id-level wrapper: `(selected ids, ids without the stat)`.
pub fn percentile_select(
    samples: &[&Sample],
    stat: Stat,
    extreme: Extreme,
    pct: f64,
) -> Result<(Vec<String>, Vec<String>)> {
    let values: Vec<Option<f64>> = samples.iter().map(|s| stat.value(s)).collect();
    let sel = select_extreme(&values, extreme, pct)?;
    let ids = |pos: &[usize]| pos.iter().map(|&i| samples[i].id.clone()).collect();
    Ok((ids(&sel.selected), ids(&sel.missing)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileRule {
    pub stat: Stat,
    pub extreme: Extreme,
    pub pct: f64,
}

impl PercentileRule {
    pub fn name(&self) -> String {
        format!("{}-{}", self.extreme.as_str(), self.stat.as_str())
    }
}

/// Categories whose threshold is lowered until `k` images are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionQuota {
    pub categories: Vec<String>,
    pub k: usize,
}

impl Default for ExpressionQuota {
    fn default() -> Self {
        let names = [
            "gloomy", "depressed", "bored", "droopy", "tired", "sleepy", "calm", "serene", "content",
            "satisfied",
        ];
        Self {
            categories: names.iter().map(|s| s.to_string()).collect(),
            k: 40,
        }
    }
}

/// A `None` threshold or percentage disables that criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionCriteria {
    pub pose_norm_min: Option<f64>,
    pub expression_intensity_min: Option<f64>,
    /// Per-expression-category thresholds replacing the default minimum.
    pub expression_overrides: BTreeMap<String, f64>,
    pub expression_quota: Option<ExpressionQuota>,
    pub contrast_pct_low: Option<f64>,
    pub sharpness_pct_low: Option<f64>,
    pub brightness_pct_low: Option<f64>,
    pub saturation_pct_low: Option<f64>,
    pub saturation_pct_high: Option<f64>,
    /// Sources pooled on their own for the percentile rules, with their
    /// percentages multiplied by the given factor.
    pub separate_sources: BTreeMap<String, f64>,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            pose_norm_min: Some(45.0),
            expression_intensity_min: Some(0.7),
            expression_overrides: BTreeMap::new(),
            expression_quota: Some(ExpressionQuota::default()),
            contrast_pct_low: Some(8.0),
            sharpness_pct_low: Some(8.0),
            brightness_pct_low: Some(4.0),
            saturation_pct_low: Some(4.0),
            saturation_pct_high: Some(4.0),
            separate_sources: [("AFAD".to_string(), 0.5), ("CFA".to_string(), 0.5)].into(),
        }
    }
}

impl SelectionCriteria {
    /// Everything off.
    pub fn disabled() -> Self {
        Self {
            pose_norm_min: None,
            expression_intensity_min: None,
            expression_overrides: BTreeMap::new(),
            expression_quota: None,
            contrast_pct_low: None,
            sharpness_pct_low: None,
            brightness_pct_low: None,
            saturation_pct_low: None,
            saturation_pct_high: None,
            separate_sources: BTreeMap::new(),
        }
    }

    pub fn percentile_rules(&self) -> Vec<PercentileRule> {
        [
            (Stat::Sharpness, Extreme::Lowest, self.sharpness_pct_low),
            (Stat::Contrast, Extreme::Lowest, self.contrast_pct_low),
            (Stat::Brightness, Extreme::Lowest, self.brightness_pct_low),
            (Stat::Saturation, Extreme::Lowest, self.saturation_pct_low),
            (Stat::Saturation, Extreme::Highest, self.saturation_pct_high),
        ]
        .into_iter()
        .filter_map(|(stat, extreme, pct)| pct.map(|pct| PercentileRule { stat, extreme, pct }))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.percentile_rules() {
            check_pct(r.pct)?;
        }
        for (src, f) in &self.separate_sources {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::Config(format!("source {src:?}: scale {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Criterion × source counts plus the union row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub sources: Vec<String>,
    /// `(criterion, count per source)`; the last row is `union`.
    pub rows: Vec<(String, Vec<usize>)>,
}

impl Breakdown {
    pub fn count(&self, criterion: &str, source: &str) -> Option<usize> {
        let col = self.sources.iter().position(|s| s == source)?;
        let row = self.rows.iter().find(|r| r.0 == criterion)?;
        Some(row.1[col])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("criterion,{},total\n", self.sources.join(","));
        for (name, counts) in &self.rows {
            let cells: Vec<String> = counts.iter().map(usize::to_string).collect();
            out.push_str(&format!("{name},{},{}\n", cells.join(","), counts.iter().sum::<usize>()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub selected: Vec<String>,
    /// Candidates without the measurement, so never eligible.
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    /// Union over criteria, in input order.
    pub selected: Vec<String>,
    pub criteria: Vec<CriterionResult>,
    pub breakdown: Breakdown,
}

fn threshold_criterion(samples: &[&Sample], stat: Stat, min: impl Fn(&Sample) -> f64) -> Selection {
    let mut sel = Selection::default();
    for (i, s) in samples.iter().enumerate() {
        match stat.value(s) {
            Some(v) if v > min(s) => sel.selected.push(i),
            Some(_) => {}
            None => sel.missing.push(i),
        }
    }
    sel
}

fn expression_criterion(samples: &[&Sample], c: &SelectionCriteria, min: f64) -> Selection {
    let mut sel = threshold_criterion(samples, Stat::ExpressionIntensity, |s| {
        s.meta
            .expression
            .as_ref()
            .and_then(|e| c.expression_overrides.get(e))
            .copied()
            .unwrap_or(min)
    });
    if let Some(quota) = &c.expression_quota {
        let mut chosen: BTreeSet<usize> = sel.selected.iter().copied().collect();
        for cat in &quota.categories {
            let mut members: Vec<(usize, f64)> = samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.meta.expression.as_deref() == Some(cat.as_str()))
                .filter_map(|(i, s)| Stat::ExpressionIntensity.value(s).map(|v| (i, v)))
                .collect();
            members.sort_by(|a, b| b.1.total_cmp(&a.1));
            chosen.extend(members.iter().take(quota.k).map(|m| m.0));
        }
        sel.selected = chosen.into_iter().collect();
    }
    sel
}

fn percentile_criterion(samples: &[&Sample], rule: PercentileRule, c: &SelectionCriteria) -> Result<Selection> {
    let mut pools: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = c.separate_sources.contains_key(&s.source).then_some(s.source.as_str());
        pools.entry(key).or_default().push(i);
    }
    let mut out = Selection::default();
    for (key, members) in pools {
        let pct = match key {
            Some(src) => rule.pct * c.separate_sources[src],
            None => rule.pct,
        };
        let values: Vec<Option<f64>> = members.iter().map(|&i| rule.stat.value(samples[i])).collect();
        let sel = select_extreme(&values, rule.extreme, pct)?;
        out.selected.extend(sel.selected.iter().map(|&j| members[j]));
        out.missing.extend(sel.missing.iter().map(|&j| members[j]));
    }
    out.selected.sort_unstable();
    out.missing.sort_unstable();
    Ok(out)
}

/// Applies every enabled criterion and assembles the union with its
/// criterion × source breakdown. Samples missing a measurement are not
/// eligible for that criterion.
pub fn compose_wild(samples: &[&Sample], criteria: &SelectionCriteria) -> Result<Composition> {
    criteria.validate()?;
    let mut named: Vec<(String, Selection)> = Vec::new();
    if let Some(min) = criteria.pose_norm_min {
        named.push(("pose".into(), threshold_criterion(samples, Stat::PoseNorm, |_| min)));
    }
    if let Some(min) = criteria.expression_intensity_min {
        named.push(("expression".into(), expression_criterion(samples, criteria, min)));
    }
    for rule in criteria.percentile_rules() {
        named.push((rule.name(), percentile_criterion(samples, rule, criteria)?));
    }

    let mut sources: Vec<String> = samples.iter().map(|s| s.source.clone()).collect();
    sources.sort_unstable();
    sources.dedup();
    let col = |i: usize| sources.binary_search(&samples[i].source).expect("source listed");
    let tally = |positions: &mut dyn Iterator<Item = usize>| {
        let mut counts = vec![0; sources.len()];
        for i in positions {
            counts[col(i)] += 1;
        }
        counts
    };

    let union: BTreeSet<usize> = named.iter().flat_map(|(_, s)| s.selected.iter().copied()).collect();
    let mut rows: Vec<(String, Vec<usize>)> = named
        .iter()
        .map(|(name, s)| (name.clone(), tally(&mut s.selected.iter().copied())))
        .collect();
    rows.push(("union".into(), tally(&mut union.iter().copied())));

    let criteria_out = named
        .iter()
        .map(|(name, s)| CriterionResult {
            name: name.clone(),
            selected: s.selected.iter().map(|&i| samples[i].id.clone()).collect(),
            missing: s.missing.len(),
        })
        .collect();
    let selected = union.iter().map(|&i| samples[i].id.clone()).collect();
    Ok(Composition {
        selected,
        criteria: criteria_out,
        breakdown: Breakdown { sources, rows },
    })
}
