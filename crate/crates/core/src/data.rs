//! Sample records, JSON-Lines manifests, and the binary embedding store.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Number of age classes: ages 0 through 101.
pub const AGE_CLASSES: usize = 102;
pub const MAX_AGE: u32 = 101;

/// Integer age in years, `0..=101`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct AgeLabel(u32);

impl AgeLabel {
    pub fn new(years: u32) -> Result<Self> {
        if years > MAX_AGE {
            return Err(Error::Config(format!(
                "age {years} outside 0..={MAX_AGE}"
            )));
        }
        Ok(Self(years))
    }

    pub fn years(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u64> for AgeLabel {
    type Error = String;

    fn try_from(v: u64) -> std::result::Result<Self, String> {
        if v > MAX_AGE as u64 {
            Err(format!("age {v} outside 0..={MAX_AGE}"))
        } else {
            Ok(Self(v as u32))
        }
    }
}

impl From<AgeLabel> for u64 {
    fn from(a: AgeLabel) -> u64 {
        a.0 as u64
    }
}

impl fmt::Display for AgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Per-sample measurements. Every field is optional: an absent value makes
/// the sample ineligible for criteria that need it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll: Option<f64>,
    /// Mean grayscale, `[0, 255]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness: Option<f64>,
    /// Grayscale standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<f64>,
    /// Mean HSV saturation, `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<f64>,
    /// Variance of the Laplacian response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    /// Expression category name, used for per-category selection overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
}

impl Metadata {
    pub fn pose(&self) -> Option<(f64, f64, f64)> {
        Some((self.pitch?, self.yaw?, self.roll?))
    }

    pub fn affect(&self) -> Option<(f64, f64)> {
        Some((self.arousal?, self.valence?))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        fn check(
            name: &str,
            v: Option<f64>,
            lo: f64,
            hi: f64,
        ) -> std::result::Result<(), String> {
            match v {
                Some(x) if !x.is_finite() => Err(format!("{name} is not finite")),
                Some(x) if x < lo || x > hi => {
                    Err(format!("{name} = {x} outside [{lo}, {hi}]"))
                }
                _ => Ok(()),
            }
        }
        let inf = f64::INFINITY;
        check("pitch", self.pitch, -inf, inf)?;
        check("yaw", self.yaw, -inf, inf)?;
        check("roll", self.roll, -inf, inf)?;
        check("brightness", self.brightness, 0.0, 255.0)?;
        check("contrast", self.contrast, 0.0, inf)?;
        check("saturation", self.saturation, 0.0, 1.0)?;
        check("sharpness", self.sharpness, 0.0, inf)?;
        check("arousal", self.arousal, -1.0, 1.0)?;
        check("valence", self.valence, -1.0, 1.0)?;
        Ok(())
    }
}

/// One face record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub embedding_index: usize,
    pub age: AgeLabel,
    pub source: String,
    pub split: Split,
    #[serde(flatten)]
    pub meta: Metadata,
    /// Fields this crate does not interpret, kept for round-tripping.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Sample {
    pub fn new(id: impl Into<String>, embedding_index: usize, age: AgeLabel, source: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            embedding_index,
            age,
            source: source.into(),
            split,
            meta: Metadata::default(),
            extra: BTreeMap::new(),
        }
    }
}

/// Optional first manifest line naming the embedding file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestHeader {
    embedding_file: PathBuf,
    dim: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub embedding_file: Option<PathBuf>,
    pub dim: Option<usize>,
}

impl Manifest {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let m = Self {
            samples,
            embedding_file: None,
            dim: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_embeddings(mut self, file: impl Into<PathBuf>, dim: usize) -> Self {
        self.embedding_file = Some(file.into());
        self.dim = Some(dim);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks id uniqueness, metadata ranges, and that no embedding row is
    /// used twice within one split.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.samples.len());
        let mut rows: HashMap<Split, HashSet<usize>> = HashMap::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            s.meta.validate().map_err(|message| Error::InvalidSample {
                id: s.id.clone(),
                message,
            })?;
            if !rows.entry(s.split).or_default().insert(s.embedding_index) {
                return Err(Error::InvalidSample {
                    id: s.id.clone(),
                    message: format!(
                        "embedding_index {} already used in split {}",
                        s.embedding_index, s.split
                    ),
                });
            }
        }
        Ok(())
    }

    /// Checks every embedding reference against a loaded store.
    pub fn validate_against(&self, store: &EmbeddingStore) -> Result<()> {
        if let Some(dim) = self.dim {
            if dim != store.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: store.dim(),
                });
            }
        }
        for s in &self.samples {
            if s.embedding_index >= store.count() {
                return Err(Error::InvalidSample {
                    id: s.id.clone(),
                    message: format!(
                        "embedding_index {} >= store row count {}",
                        s.embedding_index,
                        store.count()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn split_view(&self, split: Split) -> Vec<&Sample> {
        split_view(&self.samples, split)
    }

    /// Embedding path resolved relative to the manifest's directory.
    pub fn resolve_embedding_file(&self, manifest_path: &Path) -> Option<PathBuf> {
        let file = self.embedding_file.as_ref()?;
        if file.is_absolute() {
            Some(file.clone())
        } else {
            Some(
                manifest_path
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join(file),
            )
        }
    }
}

/// Samples of one split, in file order.
pub fn split_view(samples: &[Sample], split: Split) -> Vec<&Sample> {
    samples.iter().filter(|s| s.split == split).collect()
}

fn sample_from_value(value: Value, line: usize) -> Result<Sample> {
    let id = value
        .get("id")
        .and_then(Value::as_str)
        .map(str::to_owned);
    if let (Some(id), Some(age)) = (&id, value.get("age")) {
        match age.as_u64() {
            Some(_) => {}
            None => {
                return Err(Error::InvalidSample {
                    id: id.clone(),
                    message: format!("age must be a non-negative integer, got {age}"),
                })
            }
        }
    }
    serde_json::from_value::<Sample>(value).map_err(|e| match id {
        Some(id) => Error::InvalidSample {
            id,
            message: e.to_string(),
        },
        None => Error::Parse {
            line,
            message: e.to_string(),
        },
    })
}

/// Parses JSON-Lines manifest text. Blank lines are skipped; a first line
/// carrying `embedding_file` and no `id` is read as the header.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if first && value.get("id").is_none() && value.get("embedding_file").is_some() {
            let header: ManifestHeader =
                serde_json::from_value(value).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            manifest.embedding_file = Some(header.embedding_file);
            manifest.dim = Some(header.dim);
            first = false;
            continue;
        }
        first = false;
        manifest.samples.push(sample_from_value(value, line)?);
    }
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_manifest(&text)
}

/// Canonical serialization: sorted keys, one sample per line.
pub fn manifest_to_string(manifest: &Manifest) -> Result<String> {
    let mut out = String::new();
    if let (Some(file), Some(dim)) = (&manifest.embedding_file, manifest.dim) {
        let header = ManifestHeader {
            embedding_file: file.clone(),
            dim,
        };
        push_canonical(&mut out, &header)?;
    }
    for s in &manifest.samples {
        push_canonical(&mut out, s)?;
    }
    Ok(out)
}

fn push_canonical<T: Serialize>(out: &mut String, item: &T) -> Result<()> {
    // serde_json::Map is ordered by key, so going through Value sorts fields.
    let value = serde_json::to_value(item).map_err(|e| Error::Config(e.to_string()))?;
    out.push_str(&value.to_string());
    out.push('\n');
    Ok(())
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let text = manifest_to_string(manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MAGE";
pub const EMBEDDING_VERSION: u32 = 1;
pub const DEFAULT_DIM: usize = 512;

/// Row-major `count x dim` block of `f32` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_dim: usize) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Header(format!(
                "{} bytes is shorter than the 16-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != EMBEDDING_MAGIC {
            return Err(Error::Header(format!("bad magic {:?}", &bytes[0..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != EMBEDDING_VERSION {
            return Err(Error::Header(format!("unsupported version {version}")));
        }
        let dim = word(8) as usize;
        let count = word(12) as usize;
        if dim == 0 {
            return Err(Error::Header("dim is zero".into()));
        }
        if dim != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                found: dim,
            });
        }
        let payload = &bytes[16..];
        let expected = count * dim * 4;
        if payload.len() < expected || !payload.len().is_multiple_of(4 * dim) {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Header(format!(
                "payload holds {} rows but header says {count}",
                payload.len() / (4 * dim)
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim, data })
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: usize) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes, expected_dim)
}

pub fn write_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&store.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, idx: usize, age: u32, split: &str) -> String {
        format!(
            r#"{{"id":"{id}","embedding_index":{idx},"age":{age},"source":"s","split":"{split}"}}"#
        )
    }

    #[test]
    fn three_lines_parse() {
        let text = [
            line("a", 0, 10, "train"),
            line("b", 1, 20, "train"),
            line("c", 2, 30, "test"),
        ]
        .join("\n");
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.samples[2].age.years(), 30);
        assert_eq!(m.samples[2].split, Split::Test);
    }

    #[test]
    fn out_of_range_age_names_sample() {
        let text = line("kid", 0, 150, "train");
        let err = parse_manifest(&text).unwrap_err().to_string();
        assert!(err.contains("kid"), "{err}");
    }

    #[test]
    fn fractional_age_rejected() {
        let text = r#"{"id":"x","embedding_index":0,"age":17.5,"source":"s","split":"train"}"#;
        let err = parse_manifest(text).unwrap_err();
        assert!(matches!(err, Error::InvalidSample { ref id, .. } if id == "x"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = [line("a", 0, 10, "train"), line("a", 1, 11, "val")].join("\n");
        let err = parse_manifest(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn parse_error_reports_line() {
        let text = format!("{}\n{{not json", line("a", 0, 10, "train"));
        match parse_manifest(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn embedding_row_reuse_within_split_rejected() {
        let text = [line("a", 0, 10, "train"), line("b", 0, 11, "train")].join("\n");
        assert!(parse_manifest(&text).is_err());
        let ok = [line("a", 0, 10, "train"), line("b", 0, 11, "test")].join("\n");
        assert!(parse_manifest(&ok).is_ok());
    }

    #[test]
    fn metadata_range_checked() {
        let text = r#"{"id":"x","embedding_index":0,"age":5,"source":"s","split":"train","saturation":1.5}"#;
        assert!(parse_manifest(text).is_err());
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let text = r#"{"id":"x","embedding_index":0,"age":5,"source":"s","split":"train","zz_note":{"k":[1,2]},"yaw":12.5}"#;
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.samples[0].extra["zz_note"], serde_json::json!({"k": [1, 2]}));
        let out = manifest_to_string(&m).unwrap();
        let again = parse_manifest(&out).unwrap();
        assert_eq!(m, again);
        assert_eq!(out, manifest_to_string(&again).unwrap());
    }

    #[test]
    fn header_line_sets_embedding_file() {
        let text = format!(
            "{}\n{}",
            r#"{"embedding_file":"emb.bin","dim":16}"#,
            line("a", 0, 10, "train")
        );
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.dim, Some(16));
        assert_eq!(m.embedding_file.as_deref(), Some(Path::new("emb.bin")));
        assert_eq!(
            m.resolve_embedding_file(Path::new("/data/m.jsonl")).unwrap(),
            PathBuf::from("/data/emb.bin")
        );
    }

    #[test]
    fn split_views() {
        let text = [
            line("a", 0, 10, "train"),
            line("b", 1, 20, "train"),
            line("c", 2, 30, "test"),
        ]
        .join("\n");
        let m = parse_manifest(&text).unwrap();
        assert_eq!(m.split_view(Split::Test).len(), 1);
        assert!(m.split_view(Split::Val).is_empty());
        assert!(Manifest::default().split_view(Split::Train).is_empty());
        let ids: Vec<_> = m.split_view(Split::Train).iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    fn store_bytes(dim: u32, count: u32, floats: usize) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MAGE");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b.extend_from_slice(&count.to_le_bytes());
        for i in 0..floats {
            b.extend_from_slice(&(i as f32 * 0.5).to_le_bytes());
        }
        b
    }

    #[test]
    fn embeddings_two_rows() {
        let s = EmbeddingStore::from_bytes(&store_bytes(512, 2, 1024), 512).unwrap();
        assert_eq!(s.count(), 2);
        assert_eq!(s.row(1)[0], 256.0);
    }

    #[test]
    fn embeddings_dim_mismatch() {
        let err = EmbeddingStore::from_bytes(&store_bytes(512, 2, 1024), 256).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 256, found: 512 }));
    }

    #[test]
    fn embeddings_truncated() {
        // header promises 4 rows * 512 floats * 4 bytes; payload carries 2047 floats
        let err = EmbeddingStore::from_bytes(&store_bytes(512, 4, 2047), 512).unwrap_err();
        match err {
            Error::Truncated { expected, found } => {
                assert_eq!(expected, 4 * 512 * 4);
                assert_eq!(found, 2047 * 4);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn embeddings_bad_magic() {
        let mut b = store_bytes(4, 1, 4);
        b[0] = b'X';
        assert!(matches!(
            EmbeddingStore::from_bytes(&b, 4).unwrap_err(),
            Error::Header(_)
        ));
    }

    #[test]
    fn embeddings_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let store =
            EmbeddingStore::new(3, vec![f32::MIN_POSITIVE, -0.0, 1.5, f32::MAX, 7.25, -3.0]).unwrap();
        write_embeddings(&path, &store).unwrap();
        let back = load_embeddings(&path, 3).unwrap();
        let bits = |s: &EmbeddingStore| s.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&store), bits(&back));
    }
}
