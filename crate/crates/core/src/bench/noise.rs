use serde::{Deserialize, Serialize};

use super::select::percentile_count;
use crate::error::{Error, Result};

/// One preliminary-model prediction reviewed for label noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseInput {
    pub id: String,
    pub age: u32,
    pub age_estimate: f64,
    /// Probability of being at least 18.
    pub over18_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    /// Labeled adult, among the lowest over-18 scores.
    WorstAdult,
    /// Labeled minor, among the highest over-18 scores.
    WorstMinor,
    Underestimated,
    Overestimated,
}

impl NoiseCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCategory::WorstAdult => "worst_adult",
            NoiseCategory::WorstMinor => "worst_minor",
            NoiseCategory::Underestimated => "underestimated",
            NoiseCategory::Overestimated => "overestimated",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub adult_low_pct: f64,
    pub minor_high_pct: f64,
    /// Underestimation: error at or below this and estimate below `under_estimate_max`.
    pub under_error_max: f64,
    pub under_estimate_max: f64,
    /// Overestimation: error at or above this and label below 18.
    pub over_error_min: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            adult_low_pct: 0.5,
            minor_high_pct: 2.0,
            under_error_max: -16.0,
            under_estimate_max: 24.0,
            over_error_min: 9.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFlag {
    pub id: String,
    pub category: NoiseCategory,
    pub age: u32,
    pub age_estimate: f64,
    pub over18_score: f64,
}

const ADULT: u32 = 18;

fn quantile_set(inputs: &[NoiseInput], adults: bool, pct: f64) -> Vec<usize> {
    let mut group: Vec<usize> = (0..inputs.len()).filter(|&i| (inputs[i].age >= ADULT) == adults).collect();
    let k = percentile_count(pct, group.len());
    if adults {
        group.sort_by(|&a, &b| inputs[a].over18_score.total_cmp(&inputs[b].over18_score));
    } else {
        group.sort_by(|&a, &b| inputs[b].over18_score.total_cmp(&inputs[a].over18_score));
    }
    group.truncate(k);
    group
}

/// Review candidates, one entry per (sample, category) hit, grouped by
/// category and in input order within each. Error is `estimate - label`.
pub fn flag_label_noise(inputs: &[NoiseInput], cfg: &NoiseConfig) -> Result<Vec<NoiseFlag>> {
    for (name, pct) in [("adult_low_pct", cfg.adult_low_pct), ("minor_high_pct", cfg.minor_high_pct)] {
        if !(0.0..=100.0).contains(&pct) {
            return Err(Error::Config(format!("{name} = {pct} outside [0, 100]")));
        }
    }
    let mut hits: Vec<(NoiseCategory, usize)> = Vec::new();
    hits.extend(quantile_set(inputs, true, cfg.adult_low_pct).into_iter().map(|i| (NoiseCategory::WorstAdult, i)));
    hits.extend(quantile_set(inputs, false, cfg.minor_high_pct).into_iter().map(|i| (NoiseCategory::WorstMinor, i)));
    for (i, x) in inputs.iter().enumerate() {
        let err = x.age_estimate - x.age as f64;
        if err <= cfg.under_error_max && x.age_estimate < cfg.under_estimate_max {
            hits.push((NoiseCategory::Underestimated, i));
        }
        if err >= cfg.over_error_min && x.age < ADULT {
            hits.push((NoiseCategory::Overestimated, i));
        }
    }
    hits.sort_unstable();
    Ok(hits
        .into_iter()
        .map(|(category, i)| {
            let x = &inputs[i];
            NoiseFlag {
                id: x.id.clone(),
                category,
                age: x.age,
                age_estimate: x.age_estimate,
                over18_score: x.over18_score,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(id: &str, age: u32, est: f64, score: f64) -> NoiseInput {
        NoiseInput {
            id: id.into(),
            age,
            age_estimate: est,
            over18_score: score,
        }
    }

    fn categories(flags: &[NoiseFlag], id: &str) -> Vec<NoiseCategory> {
        flags.iter().filter(|f| f.id == id).map(|f| f.category).collect()
    }

    #[test]
    fn underestimated_adult() {
        let flags = flag_label_noise(&[input("a", 30, 10.0, 0.5)], &NoiseConfig::default()).unwrap();
        assert!(categories(&flags, "a").contains(&NoiseCategory::Underestimated));
    }

    #[test]
    fn overestimated_minor() {
        let flags = flag_label_noise(&[input("m", 10, 20.0, 0.5)], &NoiseConfig::default()).unwrap();
        assert!(categories(&flags, "m").contains(&NoiseCategory::Overestimated));
    }

    #[test]
    fn perfect_predictions_only_hit_quantile_sets() {
        let mut v = Vec::new();
        for i in 0..400 {
            let age = 18 + (i % 60) as u32;
            v.push(input(&format!("a{i}"), age, age as f64, 0.5 + i as f64 / 1000.0));
        }
        for i in 0..100 {
            let age = (i % 18) as u32;
            v.push(input(&format!("m{i}"), age, age as f64, i as f64 / 1000.0));
        }
        let flags = flag_label_noise(&v, &NoiseConfig::default()).unwrap();
        let worst_adult: Vec<&str> = flags
            .iter()
            .filter(|f| f.category == NoiseCategory::WorstAdult)
            .map(|f| f.id.as_str())
            .collect();
        let worst_minor: Vec<&str> = flags
            .iter()
            .filter(|f| f.category == NoiseCategory::WorstMinor)
            .map(|f| f.id.as_str())
            .collect();
        assert_eq!(worst_adult, vec!["a0", "a1"]);
        assert_eq!(worst_minor, vec!["m98", "m99"]);
        assert_eq!(flags.len(), 4);
    }
}
