use std::fs;
use std::path::{Path, PathBuf};

use multiage::bench::{compose_wild, flag_label_noise, Composition, NoiseFlag, NoiseInput};
use multiage::checkpoint;
use multiage::data::{load_embeddings, load_manifest, write_embeddings, write_manifest};
use multiage::metrics::{
    calibrate_threshold, det_curve, grouped_report, render_table, scores_for, CalibratedThreshold, GroupRow,
    Grouping, OperatingPoint, ScoreSource,
};
use multiage::synth::{generate, SynthSpec};
use multiage::trainer::{evaluate_split, train, PredictionRow};
use multiage::{EmbeddingStore, Manifest, NetworkConfig, NetworkParams, Sample, Split, TrainReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::stats_input;

pub const CHECKPOINT_FILE: &str = "checkpoint.magp";
pub const THRESHOLDS_FILE: &str = "thresholds.json";

/// A JSON artifact tagged with the hash of the config that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::input(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::input(path, e))
}

/// Validated config with its run directory created and the resolved config
/// written into it.
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    pub fn open(config: ExperimentConfig) -> CliResult<Self> {
        config.validate()?;
        let hash = config.hash();
        let dir = config.run_dir();
        create_dir(&dir)?;
        write_json(&dir.join("config.json"), &config)?;
        Ok(Self { config, hash, dir })
    }

    fn stamp<T>(&self, body: T) -> Stamped<T> {
        Stamped {
            config_hash: self.hash.clone(),
            body,
        }
    }

    fn manifest(&self) -> CliResult<Manifest> {
        let path = &self.config.paths.manifest;
        if !path.is_file() {
            return Err(CliError::input(path, "manifest not found"));
        }
        Ok(load_manifest(path)?)
    }

    fn data(&self) -> CliResult<(Manifest, EmbeddingStore)> {
        let manifest = self.manifest()?;
        let path = match &self.config.paths.embeddings {
            Some(p) => p.clone(),
            None => manifest
                .resolve_embedding_file(&self.config.paths.manifest)
                .ok_or_else(|| CliError::Config("no embedding file in config or manifest header".into()))?,
        };
        if !path.is_file() {
            return Err(CliError::input(&path, "embedding file not found"));
        }
        let store = load_embeddings(&path, self.config.net.d)?;
        manifest.validate_against(&store)?;
        Ok((manifest, store))
    }

    fn checkpoint(&self, path: Option<&Path>) -> CliResult<(NetworkConfig, NetworkParams<f32>)> {
        let path = path.map(Path::to_path_buf).unwrap_or_else(|| self.dir.join(CHECKPOINT_FILE));
        if !path.is_file() {
            return Err(CliError::input(&path, "checkpoint not found (run `train` first)"));
        }
        let (net, params) = checkpoint::load(&path).map_err(|e| CliError::input(&path, e))?;
        if net != self.config.net {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with a different network config",
                path.display()
            )));
        }
        Ok((net, params))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub samples: usize,
    pub dim: usize,
}

/// Generates a synthetic manifest and embedding file at the configured
/// paths. Without a `synth` section, defaults sized to the network are used.
pub fn cmd_synth(config: &ExperimentConfig) -> CliResult<SynthOutput> {
    let run = Run::open(config.clone())?;
    let mut spec = config.synth.clone().unwrap_or_else(|| SynthSpec {
        dim: config.net.d,
        ..SynthSpec::default()
    });
    spec.seed = config.seed;
    let (manifest, store) = generate(&spec)?;
    let manifest_path = config.paths.manifest.clone();
    let emb_path = config
        .paths
        .embeddings
        .clone()
        .unwrap_or_else(|| manifest_path.with_extension("emb"));
    for p in [&manifest_path, &emb_path] {
        if let Some(parent) = p.parent() {
            create_dir(parent)?;
        }
    }
    let header_path = if emb_path.parent() == manifest_path.parent() {
        PathBuf::from(emb_path.file_name().expect("embedding file name"))
    } else {
        emb_path.clone()
    };
    let manifest = manifest.with_embeddings(header_path, spec.dim);
    write_manifest(&manifest_path, &manifest)?;
    write_embeddings(&emb_path, &store)?;
    let out = SynthOutput {
        manifest: manifest_path,
        embeddings: emb_path,
        samples: spec.samples,
        dim: spec.dim,
    };
    write_json(&run.dir.join("synth.json"), &run.stamp(&out))?;
    Ok(out)
}

pub fn cmd_train(config: &ExperimentConfig) -> CliResult<Stamped<TrainReport>> {
    let run = Run::open(config.clone())?;
    let (manifest, store) = run.data()?;
    let (params, mut report) = train::<f32>(&manifest, &store, &config.net, &config.train)?;
    checkpoint::save(run.dir.join(CHECKPOINT_FILE), &config.net, &params)?;
    report.checkpoint = Some(CHECKPOINT_FILE.into());
    let stamped = run.stamp(report);
    write_json(&run.dir.join("train_report.json"), &stamped)?;
    Ok(stamped)
}

fn predict<'a>(
    net: &NetworkConfig,
    params: &NetworkParams<f32>,
    manifest: &'a Manifest,
    store: &EmbeddingStore,
    split: Split,
) -> CliResult<(Vec<PredictionRow>, Vec<&'a Sample>)> {
    let samples = manifest.split_view(split);
    if samples.is_empty() {
        return Err(multiage::Error::Empty(format!("split {} has no samples", split.as_str())).into());
    }
    let rows = evaluate_split(params, net, &samples, store)?;
    Ok((rows, samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncalibratable {
    pub head: u32,
    pub source: ScoreSource,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub split: Split,
    pub target_fnr: f64,
    pub thresholds: Vec<CalibratedThreshold>,
    pub uncalibratable: Vec<Uncalibratable>,
}

/// Every (score source, threshold) pair the config asks to calibrate.
fn score_targets(config: &ExperimentConfig) -> Vec<(u32, ScoreSource)> {
    let mut out: Vec<(u32, ScoreSource)> = config.net.thresholds.iter().map(|&t| (t, ScoreSource::Head)).collect();
    out.extend(config.calibration.age_thresholds.iter().map(|&t| (t, ScoreSource::AgeEstimate)));
    out
}

pub fn cmd_calibrate(config: &ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<Stamped<ThresholdSet>> {
    let run = Run::open(config.clone())?;
    let (manifest, store) = run.data()?;
    let (net, params) = run.checkpoint(checkpoint)?;
    let split = config.calibration.split;
    let (rows, _) = predict(&net, &params, &manifest, &store, split)?;
    let target = config.calibration.target_fnr;
    let mut set = ThresholdSet {
        split,
        target_fnr: target,
        thresholds: Vec::new(),
        uncalibratable: Vec::new(),
    };
    for (head, source) in score_targets(config) {
        match calibrate_threshold(head, &scores_for(&rows, head, source), target) {
            Ok(mut t) => {
                t.source = source;
                set.thresholds.push(t);
            }
            Err(multiage::Error::Undefined(reason)) => set.uncalibratable.push(Uncalibratable { head, source, reason }),
            Err(e) => return Err(e.into()),
        }
    }
    let stamped = run.stamp(set);
    write_json(&run.dir.join(THRESHOLDS_FILE), &stamped)?;
    Ok(stamped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub calibration_split: Split,
    pub groupings: Vec<Grouping>,
    /// Rows at the calibrated thresholds.
    pub calibrated: Vec<GroupRow>,
    /// Rows at probability 0.5, or estimate equal to the threshold age.
    pub default_point: Vec<GroupRow>,
    pub det_curves: Vec<String>,
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    thresholds: Option<&Path>,
    split: Split,
    checkpoint: Option<&Path>,
) -> CliResult<Stamped<EvalReport>> {
    let run = Run::open(config.clone())?;
    let thresholds_path = thresholds.map(Path::to_path_buf).unwrap_or_else(|| run.dir.join(THRESHOLDS_FILE));
    if !thresholds_path.is_file() {
        return Err(CliError::input(&thresholds_path, "thresholds not found (run `calibrate` first)"));
    }
    let set: Stamped<ThresholdSet> = read_json(&thresholds_path)?;
    let (manifest, store) = run.data()?;
    let (net, params) = run.checkpoint(checkpoint)?;
    for t in &set.body.thresholds {
        if t.source == ScoreSource::Head && !net.thresholds.contains(&t.head) {
            return Err(CliError::Config(format!(
                "threshold for head {} but the network has heads {:?}",
                t.head, net.thresholds
            )));
        }
    }
    let (rows, samples) = predict(&net, &params, &manifest, &store, split)?;
    let groupings = &config.evaluation.groupings;
    let calibrated_points: Vec<OperatingPoint> = set.body.thresholds.iter().map(|t| t.point()).collect();
    let default_points: Vec<OperatingPoint> = set
        .body
        .thresholds
        .iter()
        .map(|t| OperatingPoint::default_for(t.head, t.source))
        .collect();
    let calibrated = grouped_report(&rows, &samples, groupings, &calibrated_points)?;
    let default_point = grouped_report(&rows, &samples, &[Grouping::All], &default_points)?;

    let mut det_curves = Vec::new();
    for p in &calibrated_points {
        let scores = scores_for(&rows, p.head, p.source);
        match det_curve(&scores) {
            Ok(curve) => {
                let name = format!("det_{}_{}_{}.csv", p.source.as_str(), p.head, split.as_str());
                fs::write(run.dir.join(&name), curve.to_csv()).map_err(|e| CliError::input(run.dir.join(&name), e))?;
                det_curves.push(name);
            }
            Err(multiage::Error::Undefined(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let report = run.stamp(EvalReport {
        split,
        calibration_split: set.body.split,
        groupings: groupings.clone(),
        calibrated,
        default_point,
        det_curves,
    });
    let stem = format!("eval_{}", split.as_str());
    write_json(&run.dir.join(format!("{stem}.json")), &report)?;
    let text = format!(
        "config {}\nsplit {} (thresholds from {})\n\ncalibrated\n{}\ndefault working point\n{}",
        run.hash,
        split.as_str(),
        set.body.split.as_str(),
        render_table(&report.body.calibrated),
        render_table(&report.body.default_point)
    );
    fs::write(run.dir.join(format!("{stem}.txt")), text).map_err(|e| CliError::input(&run.dir, e))?;
    Ok(report)
}

pub fn cmd_compose_wild(config: &ExperimentConfig) -> CliResult<Stamped<Composition>> {
    let run = Run::open(config.clone())?;
    let mut manifest = run.manifest()?;
    if let Some(dir) = &config.paths.images_dir {
        stats_input::apply_images(&mut manifest, dir)?;
    }
    if let Some(csv) = &config.paths.stats_csv {
        stats_input::apply_csv(&mut manifest, csv)?;
    }
    let candidates: Vec<&Sample> = match config.wild.split {
        Some(split) => manifest.split_view(split),
        None => manifest.samples.iter().collect(),
    };
    let comp = compose_wild(&candidates, &config.wild.criteria)?;
    let mut ids = comp.selected.join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    let wr = |name: &str, text: String| fs::write(run.dir.join(name), text).map_err(|e| CliError::input(run.dir.join(name), e));
    wr("wild_selection.txt", ids)?;
    wr("wild_breakdown.csv", comp.breakdown.to_csv())?;
    let stamped = run.stamp(comp);
    write_json(&run.dir.join("wild.json"), &stamped)?;
    Ok(stamped)
}

#[derive(Deserialize)]
struct PredictionCsvRow {
    id: String,
    age: u32,
    age_estimate: f64,
    over18_score: f64,
}

fn noise_inputs(run: &Run, checkpoint: Option<&Path>) -> CliResult<Vec<NoiseInput>> {
    if let Some(path) = &run.config.paths.predictions {
        let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
        return reader
            .deserialize::<PredictionCsvRow>()
            .map(|r| {
                let r = r.map_err(|e| CliError::input(path, e))?;
                Ok(NoiseInput {
                    id: r.id,
                    age: r.age,
                    age_estimate: r.age_estimate,
                    over18_score: r.over18_score,
                })
            })
            .collect();
    }
    let (manifest, store) = run.data()?;
    let (net, params) = run.checkpoint(checkpoint)?;
    if !net.thresholds.contains(&18) {
        return Err(CliError::Config("noise flagging needs an 18-year head or a predictions file".into()));
    }
    let mut out = Vec::new();
    for &split in &run.config.noise.splits {
        let samples = manifest.split_view(split);
        for r in evaluate_split(&params, &net, &samples, &store)? {
            let under = r.score(18).expect("head 18 present");
            out.push(NoiseInput {
                id: r.id,
                age: r.age,
                age_estimate: r.age_estimate,
                over18_score: 1.0 - under,
            });
        }
    }
    Ok(out)
}

pub fn cmd_flag_noise(config: &ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<Stamped<Vec<NoiseFlag>>> {
    let run = Run::open(config.clone())?;
    let inputs = noise_inputs(&run, checkpoint)?;
    let flags = flag_label_noise(&inputs, &config.noise.flags)?;
    let path = run.dir.join("noise_flags.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::input(&path, e))?;
    w.write_record(["id", "category", "age", "age_estimate", "over18_score"])
        .map_err(|e| CliError::input(&path, e))?;
    for f in &flags {
        w.write_record([
            f.id.clone(),
            f.category.as_str().to_string(),
            f.age.to_string(),
            f.age_estimate.to_string(),
            f.over18_score.to_string(),
        ])
        .map_err(|e| CliError::input(&path, e))?;
    }
    w.flush().map_err(|e| CliError::input(&path, e))?;
    Ok(run.stamp(flags))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<serde_json::Value>,
    pub evaluations: Vec<serde_json::Value>,
}

/// Collects the artifacts present in the run directory into one report.
pub fn cmd_report(config: &ExperimentConfig) -> CliResult<Stamped<RunSummary>> {
    let run = Run::open(config.clone())?;
    let read_opt = |name: &str| -> CliResult<Option<serde_json::Value>> {
        let p = run.dir.join(name);
        if p.is_file() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    let mut evaluations = Vec::new();
    for split in Split::ALL {
        if let Some(v) = read_opt(&format!("eval_{}.json", split.as_str()))? {
            evaluations.push(v);
        }
    }
    let summary = run.stamp(RunSummary {
        config: config.clone(),
        train: read_opt("train_report.json")?,
        thresholds: read_opt(THRESHOLDS_FILE)?,
        evaluations,
    });
    write_json(&run.dir.join("report.json"), &summary)?;
    let mut text = format!("config {}\n", run.hash);
    for split in Split::ALL {
        let p = run.dir.join(format!("eval_{}.txt", split.as_str()));
        if let Ok(t) = fs::read_to_string(&p) {
            text.push('\n');
            text.push_str(&t);
        }
    }
    fs::write(run.dir.join("report.txt"), text).map_err(|e| CliError::input(&run.dir, e))?;
    Ok(summary)
}
