//! Binary PGM (P5) output for feature-map inspection.

use std::fs;
use std::path::{Path, PathBuf};

use crate::features::FeatureMaps;
use crate::idx::GLYPH_SIDE;

/// Maps `[0, 1]` to `0..=255`, rounding half away from zero (0.5 → 128).
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// The three channel images of a descriptor, sign mapped via `(s + 1) / 2`.
pub fn channel_images(maps: &FeatureMaps) -> [(&'static str, Vec<u8>); 3] {
    [
        ("mag", maps.kappa_mag().iter().map(|&v| to_byte(v)).collect()),
        (
            "sign",
            maps.kappa_sign()
                .iter()
                .map(|&s| to_byte((s + 1.0) / 2.0))
                .collect(),
        ),
        ("theta", maps.theta().iter().map(|&v| to_byte(v)).collect()),
    ]
}

/// Writes `<stem>_mag.pgm`, `<stem>_sign.pgm` and `<stem>_theta.pgm`.
pub fn write_feature_pgms(maps: &FeatureMaps, stem: &Path) -> std::io::Result<Vec<PathBuf>> {
    let base = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut written = Vec::new();
    for (suffix, pixels) in channel_images(maps) {
        let path = stem.with_file_name(format!("{base}_{suffix}.pgm"));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, encode_pgm(GLYPH_SIDE, GLYPH_SIDE, &pixels))?;
        written.push(path);
    }
    Ok(written)
}
