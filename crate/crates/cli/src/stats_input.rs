//! Filling per-sample image statistics from decoded face patches or a CSV.

use std::collections::HashMap;
use std::path::Path;

use multiage::bench::{image_stats, ImageStats};
use multiage::Manifest;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn set(manifest: &mut Manifest, i: usize, s: ImageStats) {
    let m = &mut manifest.samples[i].meta;
    m.brightness = Some(s.brightness);
    m.contrast = Some(s.contrast);
    m.saturation = Some(s.saturation);
    m.sharpness = Some(s.sharpness);
}

/// Computes statistics for every sample with an `<id>.{png,jpg,jpeg}` file
/// in `dir`. Returns how many samples were updated.
pub fn apply_images(manifest: &mut Manifest, dir: &Path) -> CliResult<usize> {
    let mut updated = 0;
    for i in 0..manifest.samples.len() {
        let id = manifest.samples[i].id.clone();
        let Some(path) = EXTENSIONS
            .iter()
            .map(|ext| dir.join(format!("{id}.{ext}")))
            .find(|p| p.is_file())
        else {
            continue;
        };
        let img = image::open(&path).map_err(|e| CliError::input(&path, e))?.to_rgb8();
        let stats = image_stats(img.width() as usize, img.height() as usize, img.as_raw())
            .map_err(|e| CliError::input(&path, e))?;
        set(manifest, i, stats);
        updated += 1;
    }
    Ok(updated)
}

#[derive(Deserialize)]
struct StatsRow {
    id: String,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    sharpness: f64,
}

/// Reads `id,brightness,contrast,saturation,sharpness` rows; ids absent from
/// the manifest are an error.
pub fn apply_csv(manifest: &mut Manifest, path: &Path) -> CliResult<usize> {
    let index: HashMap<String, usize> = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i))
        .collect();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::input(path, e))?;
    let mut updated = 0;
    for row in reader.deserialize::<StatsRow>() {
        let row = row.map_err(|e| CliError::input(path, e))?;
        let &i = index
            .get(&row.id)
            .ok_or_else(|| CliError::input(path, format!("unknown sample id {:?}", row.id)))?;
        set(
            manifest,
            i,
            ImageStats {
                brightness: row.brightness,
                contrast: row.contrast,
                saturation: row.saturation,
                sharpness: row.sharpness,
            },
        );
        updated += 1;
    }
    Ok(updated)
}
