//! Per-pixel curvature and orientation descriptors.
//!
//! Derivatives come from the 3×3 Sobel family with reflect-101 borders
//! (`dcb|abcdefgh|gfe`). Curvature is the isophote form
//!
//! ```text
//! κ = (Ixx·Iy² − 2·Ix·Iy·Ixy + Iyy·Ix²) / ((Ix² + Iy²)^{3/2} + ε)
//! ```
//!
//! evaluated on the raw kernel responses and rescaled by the kernels' gain
//! ratio so that κ is in 1/pixel units.
//! With image axes x → right and y → down, κ equals the divergence of the unit
//! gradient field, so a bright blob on a dark background has κ < 0 along its
//! rim and inverting the intensities flips every sign.
//!
//! The descriptor stacks three 28×28 channels, each row-major:
//! `[|κ| / max|κ|, sign κ, (atan2(Iy, Ix) + π) / 2π]`, 2352 values in total.

use crate::idx::{GlyphImage, GLYPH_PIXELS, GLYPH_SIDE};

/// Flattened descriptor length: three 28×28 channels.
pub const FEATURE_DIM: usize = 3 * GLYPH_PIXELS;

/// Bumped whenever the extractor's output can change for the same input.
pub const EXTRACTOR_VERSION: &str = "sobel3-reflect101-isophote-v1";

pub const DEFAULT_EPS: f64 = 1e-8;

type Kernel = [[f64; 3]; 3];

pub const SOBEL_X: Kernel = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: Kernel = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const SOBEL_XX: Kernel = [[1.0, -2.0, 1.0], [2.0, -4.0, 2.0], [1.0, -2.0, 1.0]];
pub const SOBEL_YY: Kernel = [[1.0, 2.0, 1.0], [-2.0, -4.0, -2.0], [1.0, 2.0, 1.0]];
/// Outer product of the first-order difference kernels in y and x.
pub const SOBEL_XY: Kernel = [[1.0, 0.0, -1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 1.0]];

// Response of each kernel to the unit-slope (or unit-curvature) polynomial.
const FIRST_ORDER_GAIN: f64 = 8.0;
const SECOND_ORDER_GAIN: f64 = 4.0;

/// Reflect-101 index into `0..n`.
pub fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// 3×3 correlation of a 28×28 map with reflect-101 borders.
fn correlate(src: &[f64], kernel: &Kernel) -> Vec<f64> {
    let n = GLYPH_SIDE;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for (kr, row) in kernel.iter().enumerate() {
                let rr = reflect101(r as isize + kr as isize - 1, n);
                for (kc, &w) in row.iter().enumerate() {
                    let cc = reflect101(c as isize + kc as isize - 1, n);
                    acc += w * src[rr * n + cc];
                }
            }
            out[r * n + c] = acc;
        }
    }
    out
}

fn gaussian_blur(src: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let n = GLYPH_SIDE;
    let pass = |input: &[f64], horizontal: bool| {
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    let d = k as isize - radius;
                    let (rr, cc) = if horizontal {
                        (r, reflect101(c as isize + d, n))
                    } else {
                        (reflect101(r as isize + d, n), c)
                    };
                    acc += w * input[rr * n + cc];
                }
                out[r * n + c] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Raw Sobel responses of one glyph, row-major 28×28 each.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeStack {
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
    pub ixx: Vec<f64>,
    pub iyy: Vec<f64>,
    pub ixy: Vec<f64>,
}

impl DerivativeStack {
    pub fn zeros() -> Self {
        let z = vec![0.0; GLYPH_PIXELS];
        Self {
            ix: z.clone(),
            iy: z.clone(),
            ixx: z.clone(),
            iyy: z.clone(),
            ixy: z,
        }
    }
}

pub fn sobel_derivatives(img: &GlyphImage) -> DerivativeStack {
    let src: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p)).collect();
    derivatives_of(&src)
}

fn derivatives_of(src: &[f64]) -> DerivativeStack {
    DerivativeStack {
        ix: correlate(src, &SOBEL_X),
        iy: correlate(src, &SOBEL_Y),
        ixx: correlate(src, &SOBEL_XX),
        iyy: correlate(src, &SOBEL_YY),
        ixy: correlate(src, &SOBEL_XY),
    }
}

/// Signed isophote curvature per pixel, in 1/pixel units.
///
/// The formula runs on the raw Sobel responses with `eps` added to the raw
/// denominator. Raw first-order kernels have gain 8 and second-order ones
/// gain 4, which leaves the raw ratio at half the true curvature; the result
/// is doubled to undo that. The doubling is a global factor, so the
/// normalized descriptor is the same as with uncorrected raw kernels.
pub fn curvature_map(d: &DerivativeStack, eps: f64) -> Vec<f64> {
    const GAIN_CORRECTION: f64 =
        FIRST_ORDER_GAIN * FIRST_ORDER_GAIN * FIRST_ORDER_GAIN
            / (SECOND_ORDER_GAIN * FIRST_ORDER_GAIN * FIRST_ORDER_GAIN);
    (0..d.ix.len())
        .map(|i| {
            let (ix, iy) = (d.ix[i], d.iy[i]);
            let num = d.ixx[i] * iy * iy - 2.0 * ix * iy * d.ixy[i] + d.iyy[i] * ix * ix;
            let grad2 = ix * ix + iy * iy;
            GAIN_CORRECTION * num / (grad2 * grad2.sqrt() + eps)
        })
        .collect()
}

/// Gradient orientation mapped to `[0, 1]`; flat pixels map to 0.5.
pub fn orientation_map(d: &DerivativeStack) -> Vec<f64> {
    d.ix.iter()
        .zip(&d.iy)
        .map(|(&gx, &gy)| {
            let theta = if gx == 0.0 && gy == 0.0 {
                0.0
            } else {
                gy.atan2(gx)
            };
            (theta + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Denominator guard in the curvature formula.
    pub eps: f64,
    /// |κ| at or below this maps to sign 0.
    pub sign_floor: f64,
    /// Optional Gaussian pre-blur (σ in pixels) before differentiation.
    pub pre_blur_sigma: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            sign_floor: 0.0,
            pre_blur_sigma: None,
        }
    }
}

/// The three descriptor channels, stored flattened in channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    flat: Vec<f32>,
}

impl FeatureMaps {
    pub fn kappa_mag(&self) -> &[f32] {
        &self.flat[..GLYPH_PIXELS]
    }

    pub fn kappa_sign(&self) -> &[f32] {
        &self.flat[GLYPH_PIXELS..2 * GLYPH_PIXELS]
    }

    pub fn theta(&self) -> &[f32] {
        &self.flat[2 * GLYPH_PIXELS..]
    }

    pub fn flat(&self) -> &[f32] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.flat
    }
}

pub fn assemble_features(img: &GlyphImage) -> FeatureMaps {
    assemble_features_with(img, &FeatureConfig::default())
}

pub fn assemble_features_with(img: &GlyphImage, cfg: &FeatureConfig) -> FeatureMaps {
    let mut src: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p)).collect();
    if let Some(sigma) = cfg.pre_blur_sigma {
        src = gaussian_blur(&src, sigma);
    }
    let d = derivatives_of(&src);
    let kappa = curvature_map(&d, cfg.eps);
    let theta = orientation_map(&d);

    let max_abs = kappa.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let mut flat = Vec::with_capacity(FEATURE_DIM);
    flat.extend(kappa.iter().map(|k| {
        if max_abs > 0.0 {
            (k.abs() / max_abs) as f32
        } else {
            0.0
        }
    }));
    flat.extend(kappa.iter().map(|&k| {
        if k.abs() <= cfg.sign_floor {
            0.0
        } else {
            k.signum() as f32
        }
    }));
    flat.extend(theta.iter().map(|&t| t as f32));
    FeatureMaps { flat }
}

/// Samples of a planar curve at uniformly spaced parameters `t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricCurve {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CurveError {
    #[error("curve needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("x and y have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite sample at {0}")]
    NonFinite(usize),
    #[error("all samples coincide")]
    AllCoincident,
    #[error("tangent vanishes at sample {0}")]
    DegenerateTangent(usize),
    #[error("curve has zero length")]
    ZeroLength,
}

const TANGENT_TOL: f64 = 1e-12;

impl ParametricCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, CurveError> {
        if x.len() != y.len() {
            return Err(CurveError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 4 {
            return Err(CurveError::TooFewSamples(x.len()));
        }
        if let Some(i) = (0..x.len()).find(|&i| !x[i].is_finite() || !y[i].is_finite()) {
            return Err(CurveError::NonFinite(i));
        }
        if x.iter().zip(&y).all(|(&a, &b)| a == x[0] && b == y[0]) {
            return Err(CurveError::AllCoincident);
        }
        Ok(Self { x, y })
    }

    /// Samples `f(t)` at `n` uniformly spaced `t` in `[0, 1]`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<Self, CurveError> {
        let denom = (n.max(2) - 1) as f64;
        let (x, y) = (0..n).map(|i| f(i as f64 / denom)).unzip();
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn step(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    /// Applies `p ↦ s·R(angle)·p + (dx, dy)` to every sample.
    pub fn transformed(&self, scale: f64, angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (x, y) = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&a, &b)| (scale * (c * a - s * b) + dx, scale * (s * a + c * b) + dy))
            .unzip();
        Self { x, y }
    }

    fn speeds(&self) -> Vec<f64> {
        let n = self.len();
        let h = self.step();
        let d = |v: &[f64], i: usize| -> f64 {
            if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            }
        };
        (0..n).map(|i| d(&self.x, i).hypot(d(&self.y, i))).collect()
    }
}

/// Signed curvature `(x'y'' − y'x'') / (x'² + y'²)^{3/2}` at each interior
/// sample, by central differences. Counterclockwise turning is positive.
pub fn parametric_curvature(curve: &ParametricCurve) -> Result<Vec<f64>, CurveError> {
    let h = curve.step();
    let (x, y) = (&curve.x, &curve.y);
    (1..curve.len() - 1)
        .map(|i| {
            let dx = (x[i + 1] - x[i - 1]) / (2.0 * h);
            let dy = (y[i + 1] - y[i - 1]) / (2.0 * h);
            let ddx = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / (h * h);
            let ddy = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
            let speed2 = dx * dx + dy * dy;
            if speed2 < TANGENT_TOL {
                return Err(CurveError::DegenerateTangent(i));
            }
            Ok((dx * ddy - dy * ddx) / (speed2 * speed2.sqrt()))
        })
        .collect()
}

/// Arc length by trapezoidal accumulation of the sampled speed.
pub fn arc_length(curve: &ParametricCurve) -> f64 {
    let h = curve.step();
    curve
        .speeds()
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * h)
        .sum()
}

/// `k(s) = L·κ` resampled at `curve.len()` uniformly spaced arc-length
/// fractions `s ∈ [0, 1]` (linear interpolation between interior samples).
pub fn normalized_curvature(curve: &ParametricCurve) -> Result<Vec<f64>, CurveError> {
    let kappa = parametric_curvature(curve)?;
    let speeds = curve.speeds();
    let h = curve.step();
    let mut cumulative = Vec::with_capacity(speeds.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in speeds.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * h;
        cumulative.push(acc);
    }
    let length = acc;
    if length < TANGENT_TOL {
        return Err(CurveError::ZeroLength);
    }
    // Arc-length fraction of each interior sample.
    let positions: Vec<f64> = cumulative[1..cumulative.len() - 1]
        .iter()
        .map(|c| c / length)
        .collect();

    let m = curve.len();
    let mut out = Vec::with_capacity(m);
    let mut j = 0;
    for q in 0..m {
        let s = q as f64 / (m - 1) as f64;
        let k = if s <= positions[0] {
            kappa[0]
        } else if s >= positions[positions.len() - 1] {
            kappa[kappa.len() - 1]
        } else {
            while positions[j + 1] < s {
                j += 1;
            }
            let w = (s - positions[j]) / (positions[j + 1] - positions[j]);
            kappa[j] * (1.0 - w) + kappa[j + 1] * w
        };
        out.push(length * k);
    }
    Ok(out)
}
