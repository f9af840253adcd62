//! Synthetic glyphs for tests, visualization and sanity checks.
//!
//! Pixel `(row, col)` covers the unit square `[col, col+1) × [row, row+1)`,
//! so its center sits at `(col + 0.5, row + 0.5)`.

use rand::Rng;

use crate::idx::{GlyphImage, GLYPH_SIDE};
use crate::rng;

const SUPERSAMPLE: usize = 16;

/// Anti-aliased filled disc of intensity 1 on 0, by area coverage.
pub fn render_disc(radius: f64, cx: f64, cy: f64) -> GlyphImage {
    let r2 = radius * radius;
    GlyphImage::from_fn(0, |row, col| {
        let mut inside = 0usize;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let x = col as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64;
                let y = row as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64;
                if (x - cx).powi(2) + (y - cy).powi(2) <= r2 {
                    inside += 1;
                }
            }
        }
        (inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64) as f32
    })
}

/// Pixels whose center lies within `half_width` of the disc's rim.
pub fn disc_boundary_band(radius: f64, cx: f64, cy: f64, half_width: f64) -> Vec<usize> {
    let mut band = Vec::new();
    for row in 0..GLYPH_SIDE {
        for col in 0..GLYPH_SIDE {
            let rho = (col as f64 + 0.5 - cx).hypot(row as f64 + 0.5 - cy);
            if (rho - radius).abs() <= half_width {
                band.push(row * GLYPH_SIDE + col);
            }
        }
    }
    band
}

/// Sum of a few random Gaussian blobs, rescaled to span `[0, 1]`.
pub fn smooth_random_glyph(seed: u64) -> GlyphImage {
    let mut rng = rng::seeded(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(4.0..24.0),
                rng.random_range(4.0..24.0),
                rng.random_range(2.0..5.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let field = |r: usize, c: usize| -> f64 {
        blobs
            .iter()
            .map(|&(y, x, s, a)| {
                let d2 = (r as f64 - y).powi(2) + (c as f64 - x).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum()
    };
    let values: Vec<f64> = (0..GLYPH_SIDE * GLYPH_SIDE)
        .map(|i| field(i / GLYPH_SIDE, i % GLYPH_SIDE))
        .collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    GlyphImage::from_fn(seed as usize, |r, c| {
        ((values[r * GLYPH_SIDE + c] - lo) / span) as f32
    })
}

/// Uniform random pixels in `[0, 1]`, byte-quantized like real glyphs.
pub fn random_glyph(seed: u64) -> GlyphImage {
    let mut rng = rng::seeded(seed);
    let bytes: Vec<u8> = (0..GLYPH_SIDE * GLYPH_SIDE).map(|_| rng.random()).collect();
    GlyphImage::from_fn(seed as usize, |r, c| {
        f32::from(bytes[r * GLYPH_SIDE + c]) / 255.0
    })
}
