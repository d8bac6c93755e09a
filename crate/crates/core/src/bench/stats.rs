use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub sharpness: f64,
}

fn mean_and_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

/// Statistics of an interleaved 8-bit RGB image, `width * height * 3` bytes.
///
/// Gray uses BT.601 luma weights. Saturation is the HSV hexcone S channel.
/// Sharpness is the population variance of the 4-neighbour Laplacian over
/// the valid region (no padding).
pub fn image_stats(width: usize, height: usize, rgb: &[u8]) -> Result<ImageStats> {
    if width < 3 || height < 3 {
        return Err(Error::Shape(format!("image {width}x{height} is smaller than 3x3")));
    }
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let px = || rgb.chunks_exact(3);
    let gray: Vec<f64> = px()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let (brightness, gray_var) = mean_and_variance(gray.iter().copied());
    let saturation = px()
        .map(|p| {
            let max = p.iter().copied().max().unwrap_or(0);
            let min = p.iter().copied().min().unwrap_or(0);
            if max == 0 {
                0.0
            } else {
                (max - min) as f64 / max as f64
            }
        })
        .sum::<f64>()
        / (width * height) as f64;
    let at = |x: usize, y: usize| gray[y * width + x];
    let lap: Vec<f64> = (1..height - 1)
        .flat_map(|y| (1..width - 1).map(move |x| (x, y)))
        .map(|(x, y)| at(x, y - 1) + at(x - 1, y) + at(x + 1, y) + at(x, y + 1) - 4.0 * at(x, y))
        .collect();
    let (_, sharpness) = mean_and_variance(lap.iter().copied());
    Ok(ImageStats {
        brightness,
        contrast: gray_var.sqrt(),
        saturation,
        sharpness,
    })
}

pub fn pose_norm(pitch: f64, yaw: f64, roll: f64) -> f64 {
    (pitch * pitch + yaw * yaw + roll * roll).sqrt()
}

pub fn expression_intensity(arousal: f64, valence: f64) -> f64 {
    arousal.hypot(valence)
}
