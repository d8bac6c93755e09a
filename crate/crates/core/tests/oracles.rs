//! Library results checked against independent brute-force or closed-form
//! computations.

use std::collections::BTreeSet;

use multiage::bench::{compose_wild, SelectionCriteria};
use multiage::data::{load_embeddings, load_manifest, write_embeddings, write_manifest, AgeLabel, Sample, Split};
use multiage::metrics::{
    calibrate_threshold, det_curve, grouped_report, CalibratedThreshold, ConfusionMatrix, Grouping, ScoreSource,
};
use multiage::sampler::{AgeBalancedSampler, AgeBins, DEFAULT_BOUNDARIES};
use multiage::synth::{generate, SynthSpec};
use multiage::trainer::PredictionRow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_det(scores: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let p = scores.iter().filter(|s| s.1).count() as f64;
    let n = scores.len() as f64 - p;
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut all = vec![f64::NEG_INFINITY];
    all.extend(thresholds);
    all.push(f64::INFINITY);
    all.into_iter()
        .map(|t| {
            let fp = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64;
            let fneg = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64;
            (t, fp / n, fneg / p)
        })
        .collect()
}

#[test]
fn det_matches_exhaustive_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let mut s: Vec<(f64, bool)> = (0..n).map(|_| ((rng.random_range(0..12) as f64) / 11.0, rng.random())).collect();
        s[0].1 = true;
        s[1].1 = false;
        let got: Vec<(f64, f64, f64)> = det_curve(&s).unwrap().points.iter().map(|p| (p.threshold, p.fpr, p.fnr)).collect();
        assert_eq!(got, brute_det(&s));
    }
}

#[test]
fn calibration_matches_order_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s: Vec<(f64, bool)> = (0..100).map(|_| (rng.random::<f64>(), true)).collect();
    s.extend((0..300).map(|_| (rng.random::<f64>() * 0.5, false)));
    let c = calibrate_threshold(18, &s, 0.01).unwrap();
    let mut pos: Vec<f64> = s.iter().filter(|x| x.1).map(|x| x.0).collect();
    pos.sort_by(f64::total_cmp);
    // one miss allowed: the lowest positive falls below the threshold
    assert_eq!(c.threshold, pos[1]);
    assert_eq!(c.achieved_fnr, 0.01);
}

fn crafted_samples() -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sources = ["AgeDB", "MORPH", "AFAD", "CFA"];
    let expressions = ["happy", "tired", "angry", "sleepy"];
    (0..100)
        .map(|i| {
            let mut s = Sample::new(format!("img{i:03}"), i, AgeLabel::new(rng.random_range(0..80)).unwrap(), sources[i % 4], Split::Test);
            let m = &mut s.meta;
            m.brightness = Some(rng.random_range(0..256) as f64);
            m.contrast = Some(rng.random_range(0..100) as f64);
            m.saturation = Some(rng.random_range(0..50) as f64 / 50.0);
            m.sharpness = if i % 17 == 0 { None } else { Some(rng.random_range(0..1000) as f64) };
            if i % 5 != 0 {
                m.pitch = Some(rng.random_range(-40..40) as f64);
                m.yaw = Some(rng.random_range(-60..60) as f64);
                m.roll = Some(0.0);
            }
            m.arousal = Some(rng.random_range(-10..=10) as f64 / 10.0);
            m.valence = Some(rng.random_range(-10..=10) as f64 / 10.0);
            m.expression = Some(expressions[i % 4].into());
            s
        })
        .collect()
}

/// Straightforward re-derivation of each criterion's member set.
fn brute_compose(samples: &[Sample], c: &SelectionCriteria) -> Vec<(String, BTreeSet<usize>)> {
    let mut out = Vec::new();
    let pose: BTreeSet<usize> = (0..samples.len())
        .filter(|&i| samples[i].meta.pose().is_some_and(|(p, y, r)| (p * p + y * y + r * r).sqrt() > 45.0))
        .collect();
    out.push(("pose".to_string(), pose));
    let intensity = |s: &Sample| s.meta.affect().map(|(a, v)| (a * a + v * v).sqrt());
    let mut expr: BTreeSet<usize> = (0..samples.len()).filter(|&i| intensity(&samples[i]).is_some_and(|v| v > 0.7)).collect();
    let quota = c.expression_quota.as_ref().unwrap();
    for cat in &quota.categories {
        let mut members: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].meta.expression.as_deref() == Some(cat))
            .collect();
        // stable sort, most intense first
        members.sort_by(|&a, &b| intensity(&samples[b]).unwrap().partial_cmp(&intensity(&samples[a]).unwrap()).unwrap());
        expr.extend(members.into_iter().take(quota.k));
    }
    out.push(("expression".to_string(), expr));
    type Getter = fn(&Sample) -> Option<f64>;
    let rules: [(&str, Getter, bool, f64); 5] = [
        ("low-sharpness", |s| s.meta.sharpness, true, 8.0),
        ("low-contrast", |s| s.meta.contrast, true, 8.0),
        ("low-brightness", |s| s.meta.brightness, true, 4.0),
        ("low-saturation", |s| s.meta.saturation, true, 4.0),
        ("high-saturation", |s| s.meta.saturation, false, 4.0),
    ];
    for (name, get, low, pct) in rules {
        let mut set = BTreeSet::new();
        for pool in [vec!["AgeDB", "MORPH"], vec!["AFAD"], vec!["CFA"]] {
            let scale = if pool.len() == 1 { 0.5 } else { 1.0 };
            let mut members: Vec<(usize, f64)> = (0..samples.len())
                .filter(|&i| pool.contains(&samples[i].source.as_str()))
                .filter_map(|i| get(&samples[i]).map(|v| (i, v)))
                .collect();
            members.sort_by(|a, b| if low { a.1.partial_cmp(&b.1) } else { b.1.partial_cmp(&a.1) }.unwrap());
            let k = (pct * scale * members.len() as f64 / 100.0 + 1e-9).floor() as usize;
            set.extend(members.iter().take(k).map(|m| m.0));
        }
        out.push((name.to_string(), set));
    }
    out
}

#[test]
fn compose_matches_brute_force() {
    let samples = crafted_samples();
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut criteria = SelectionCriteria::default();
    criteria.expression_quota.as_mut().unwrap().k = 3;
    criteria.expression_quota.as_mut().unwrap().categories = vec!["tired".into(), "sleepy".into()];
    let got = compose_wild(&refs, &criteria).unwrap();
    let want = brute_compose(&samples, &criteria);
    let mut union = BTreeSet::new();
    for (name, set) in &want {
        let crit = got.criteria.iter().find(|c| &c.name == name).unwrap();
        let ids: Vec<String> = set.iter().map(|&i| samples[i].id.clone()).collect();
        assert_eq!(crit.selected, ids, "criterion {name}");
        for src in ["AgeDB", "MORPH", "AFAD", "CFA"] {
            let n = set.iter().filter(|&&i| samples[i].source == src).count();
            assert_eq!(got.breakdown.count(name, src), Some(n), "{name}/{src}");
        }
        union.extend(set.iter().copied());
    }
    let ids: Vec<String> = union.iter().map(|&i| samples[i].id.clone()).collect();
    assert_eq!(got.selected, ids);
    assert_eq!(got.criteria.iter().find(|c| c.name == "pose").unwrap().missing, 20);
    assert_eq!(got.criteria.iter().find(|c| c.name == "low-sharpness").unwrap().missing, 6);
}

fn row(id: &str, age: u32, est: f64, score: f64) -> PredictionRow {
    PredictionRow {
        id: id.into(),
        age,
        age_estimate: est,
        scores: vec![(18, score)],
    }
}

#[test]
fn grouped_report_hand_computed() {
    // 20 samples, sources A (first 10) and B; threshold 0.5 on the 18 head
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for i in 0..20u32 {
        let age = if i % 2 == 0 { 10 } else { 30 };
        let score = match (i < 10, age < 18) {
            (true, true) => 0.9,
            (true, false) => if i == 1 { 0.7 } else { 0.1 },
            (false, true) => if i == 10 { 0.2 } else { 0.8 },
            (false, false) => 0.3,
        };
        rows.push(row(&format!("s{i}"), age, age as f64 + 1.0, score));
        samples.push(Sample::new(format!("s{i}"), i as usize, AgeLabel::new(age).unwrap(), if i < 10 { "A" } else { "B" }, Split::Test));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let t = CalibratedThreshold { head: 18, source: ScoreSource::Head, threshold: 0.5, achieved_fnr: 0.0, target_fnr: 0.01 };
    let report = grouped_report(&rows, &refs, &[Grouping::All, Grouping::Source], &[t.point()]).unwrap();
    let a = report.iter().find(|r| r.group == "source=A").unwrap();
    let b = report.iter().find(|r| r.group == "source=B").unwrap();
    let all = report.iter().find(|r| r.group == "all").unwrap();
    assert_eq!(a.confusion, ConfusionMatrix { tp: 5, fn_: 0, fp: 1, tn: 4 });
    assert_eq!(b.confusion, ConfusionMatrix { tp: 4, fn_: 1, fp: 0, tn: 5 });
    assert_eq!(a.confusion + b.confusion, all.confusion);
    assert_eq!(a.precision.0, Some(5.0 / 6.0));
    assert_eq!(b.recall.0, Some(0.8));
    let (p, r) = (5.0 / 6.0, 1.0);
    assert!((a.f2.0.unwrap() - 5.0 * p * r / (4.0 * p + r)).abs() < 1e-12);
    assert_eq!(all.mae.0, Some(1.0));
    assert_eq!(all.n, 20);
}

#[test]
fn empty_group_kept_with_undefined_metrics() {
    let rows = vec![row("s0", 10, 10.0, 0.9)];
    let samples = [Sample::new("s0", 0, AgeLabel::new(10).unwrap(), "A", Split::Test)];
    let refs: Vec<&Sample> = samples.iter().collect();
    let t = CalibratedThreshold { head: 18, source: ScoreSource::Head, threshold: 0.5, achieved_fnr: 0.0, target_fnr: 0.01 };
    let report = grouped_report(&rows, &refs, &[Grouping::PoseAbove { degrees: 45.0 }], &[t.point()]).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].n, 0);
    assert_eq!(report[0].recall.0, None);
    assert_eq!(report[0].mae.0, None);
}

#[test]
fn sampler_bins_and_members_uniform() {
    let mut ages: Vec<AgeLabel> = Vec::new();
    for (age, n) in [(2u32, 3usize), (10, 30), (30, 300)] {
        ages.extend(std::iter::repeat_n(AgeLabel::new(age).unwrap(), n));
    }
    let bins = AgeBins::from_ages(&ages, &DEFAULT_BOUNDARIES).unwrap();
    let mut s = AgeBalancedSampler::new(bins, 5);
    let draws = s.next_batch(300_000);
    let mut per_member = [0usize; 3];
    let mut per_bin = [0usize; 3];
    for &i in &draws {
        let b = if i < 3 { 0 } else if i < 33 { 1 } else { 2 };
        per_bin[b] += 1;
        if i < 3 {
            per_member[i] += 1;
        }
    }
    for c in per_bin {
        assert!((c as f64 / 300_000.0 - 1.0 / 3.0).abs() < 0.005, "{per_bin:?}");
    }
    // chi-square with 2 dof, 0.999 quantile 13.8
    let expected = per_bin[0] as f64 / 3.0;
    let chi2: f64 = per_member.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 13.8, "chi2 = {chi2}");
}

#[test]
fn manifest_and_embeddings_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, store) = generate(&SynthSpec { samples: 50, dim: 8, seed: 4, ..SynthSpec::default() }).unwrap();
    let manifest = manifest.with_embeddings("emb.bin", 8);
    write_manifest(dir.path().join("m.jsonl"), &manifest).unwrap();
    write_embeddings(dir.path().join("emb.bin"), &store).unwrap();
    let back = load_manifest(dir.path().join("m.jsonl")).unwrap();
    assert_eq!(back, manifest);
    let first = std::fs::read(dir.path().join("m.jsonl")).unwrap();
    write_manifest(dir.path().join("m2.jsonl"), &back).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("m2.jsonl")).unwrap());
    let emb = load_embeddings(dir.path().join("emb.bin"), 8).unwrap();
    assert_eq!(emb.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), store.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

/// Solves the normal equations of `x w = y` with a tiny ridge; `x` rows
/// already carry a trailing 1 for the intercept.
fn least_squares(x: &[Vec<f64>], y: &[f64], ridge: f64) -> Vec<f64> {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += ridge;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

fn probe_fit(rows: &[Vec<f64>], ages: &[f64]) -> (f64, f64, Vec<f64>) {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let w = least_squares(&x, ages, 1e-9);
    let pred: Vec<f64> = x.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let n = ages.len() as f64;
    let mae = pred.iter().zip(ages).map(|(p, a)| (p - a).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(ages).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n;
    (mae, mse, w)
}

#[test]
fn linear_probe_recovers_age_within_noise_bound() {
    let base = SynthSpec { samples: 3000, dim: 32, bumps: 16, seed: 8, ..SynthSpec::default() };
    let clean_spec = SynthSpec { noise: 0.0, ..base.clone() };
    let (m0, e0) = generate(&clean_spec).unwrap();
    let ages0: Vec<f64> = m0.samples.iter().map(|s| s.age.years() as f64).collect();
    let phi: Vec<Vec<f64>> = m0.samples.iter().map(|s| clean_spec.encode_age(s.age.years())).collect();
    let (oracle_mae, oracle_mse, _) = probe_fit(&phi, &ages0);
    let z0: Vec<Vec<f64>> = (0..e0.count()).map(|i| e0.row(i).iter().map(|&v| v as f64).collect()).collect();
    let (clean_mae, _, w_clean) = probe_fit(&z0, &ages0);
    // the clean embedding is a full-rank image of the encoding
    assert!((clean_mae - oracle_mae).abs() < 0.05 * oracle_mae.max(0.1), "{clean_mae} vs {oracle_mae}");

    let sigma = 0.3;
    let (m1, e1) = generate(&SynthSpec { noise: sigma, ..base }).unwrap();
    let ages1: Vec<f64> = m1.samples.iter().map(|s| s.age.years() as f64).collect();
    let z1: Vec<Vec<f64>> = (0..e1.count()).map(|i| e1.row(i).iter().map(|&v| v as f64).collect()).collect();
    let (noisy_mae, _, _) = probe_fit(&z1, &ages1);
    // the clean-fit weights applied to noisy inputs add variance sigma^2 |w|^2
    let w_norm2: f64 = w_clean[..32].iter().map(|v| v * v).sum();
    let bound = 1.1 * (oracle_mse + sigma * sigma * w_norm2).sqrt();
    assert!(noisy_mae < bound, "{noisy_mae} >= {bound}");
    assert!(noisy_mae >= clean_mae);
}
