use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{shuffle, GroupedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of digit-like template classes in [`make_bgdigits`].
pub const NUM_GLYPH_CLASSES: usize = 10;

/// Group sizes for `n` samples where `ratio` is the share of group 0.
fn group_sizes(n: usize, ratio: f64) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("group ratio {ratio} outside (0,1)")));
    }
    let n0 = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    Ok((n0, n - n0))
}

fn sensitive_layout(n0: usize, n1: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut s = vec![0u8; n0];
    s.extend(std::iter::repeat_n(1u8, n1));
    shuffle(&mut s, rng);
    s
}

/// Two isotropic Gaussians: group 0 around `(-separation, 0)` with std
/// `spreads[0]`, group 1 around `(+separation, 0)` with std `spreads[1]`.
/// Coordinates pass through `tanh`, which keeps them in `(-1, 1)` and
/// preserves the sign of the first coordinate.
pub fn make_gauss2d(n_samples: usize, group_ratio: f64, seed: u64, separation: f64, spreads: [f64; 2]) -> Result<GroupedDataset> {
    if spreads.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Config(format!("spreads must be positive, got {spreads:?}")));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Config(format!("separation must be non-negative, got {separation}")));
    }
    let (n0, n1) = group_sizes(n_samples, group_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensitive = sensitive_layout(n0, n1, &mut rng);
    let mut data = Vec::with_capacity(2 * n_samples);
    for &s in &sensitive {
        let (center, sd) = if s == 0 {
            (-separation, spreads[0])
        } else {
            (separation, spreads[1])
        };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        data.push((center + sd * a).tanh());
        data.push((sd * b).tanh());
    }
    GroupedDataset::new(Tensor::new(&[n_samples, 2], data)?, sensitive, None, None)
}

/// How group 1 differs from group 0 in [`make_bgdigits`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupStyle {
    /// Group 0: light glyph on a dark background; group 1: inverted.
    #[default]
    Invert,
    /// Group 0: dark glyph on a light background; group 1: the same image
    /// with intensities scaled by [`SHADE_FACTOR`].
    Shade,
}

/// Intensity multiplier for shaded images (on the `[0, 1]` scale).
pub const SHADE_FACTOR: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgDigitsOptions {
    pub side: usize,
    pub style: GroupStyle,
    /// Half-width of the uniform per-pixel noise on the `[0, 1]` scale.
    pub pixel_noise: f64,
}

impl Default for BgDigitsOptions {
    fn default() -> Self {
        Self {
            side: 8,
            style: GroupStyle::Invert,
            pixel_noise: 0.1,
        }
    }
}

// Seven-segment masks: a, b, c, d, e, f, g.
const SEGMENTS: [[bool; 7]; NUM_GLYPH_CLASSES] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// 5×3 boolean glyph for class `digit`, row-major.
pub fn glyph_template(digit: usize) -> [[bool; 3]; 5] {
    let seg = SEGMENTS[digit % NUM_GLYPH_CLASSES];
    let mut g = [[false; 3]; 5];
    let mut hline = |r: usize| g[r].iter_mut().for_each(|c| *c = true);
    if seg[0] {
        hline(0);
    }
    if seg[6] {
        hline(2);
    }
    if seg[3] {
        hline(4);
    }
    let vline = |g: &mut [[bool; 3]; 5], rows: std::ops::RangeInclusive<usize>, col: usize| {
        for r in rows {
            g[r][col] = true;
        }
    };
    if seg[1] {
        vline(&mut g, 0..=2, 2);
    }
    if seg[2] {
        vline(&mut g, 2..=4, 2);
    }
    if seg[4] {
        vline(&mut g, 2..=4, 0);
    }
    if seg[5] {
        vline(&mut g, 0..=2, 0);
    }
    g
}

/// Procedural `side×side` digit glyphs with jitter, two background groups
/// and uniformly drawn class labels. Pixel `(0, 0)` is always background.
pub fn make_bgdigits(n_samples: usize, group_ratio: f64, seed: u64, side: usize) -> Result<GroupedDataset> {
    make_bgdigits_with(
        n_samples,
        group_ratio,
        seed,
        BgDigitsOptions {
            side,
            ..BgDigitsOptions::default()
        },
    )
}

pub fn make_bgdigits_with(n_samples: usize, group_ratio: f64, seed: u64, opts: BgDigitsOptions) -> Result<GroupedDataset> {
    let side = opts.side;
    if side < 4 {
        return Err(Error::Config(format!("glyph side must be at least 4, got {side}")));
    }
    let (n0, n1) = group_sizes(n_samples, group_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensitive = sensitive_layout(n0, n1, &mut rng);
    let boxed = side - 3;
    let mut data = Vec::with_capacity(n_samples * side * side);
    let mut labels = Vec::with_capacity(n_samples);
    for &s in &sensitive {
        let class = rng.random_range(0..NUM_GLYPH_CLASSES);
        labels.push(class);
        let glyph = glyph_template(class);
        let (dr, dc) = (rng.random_range(0..=1usize), rng.random_range(0..=1usize));
        let mut img = vec![0.0f64; side * side];
        for br in 0..boxed {
            for bc in 0..boxed {
                if glyph[br * 5 / boxed][bc * 3 / boxed] {
                    img[(1 + dr + br) * side + 1 + dc + bc] = 1.0;
                }
            }
        }
        for px in img.iter_mut() {
            let jitter = opts.pixel_noise * (2.0 * rng.random::<f64>() - 1.0);
            *px = (*px + jitter).clamp(0.0, 1.0);
            *px = match (opts.style, s) {
                (GroupStyle::Invert, 0) => *px,
                (GroupStyle::Invert, _) => 1.0 - *px,
                (GroupStyle::Shade, 0) => 1.0 - *px,
                (GroupStyle::Shade, _) => SHADE_FACTOR * (1.0 - *px),
            };
            *px = 2.0 * *px - 1.0;
        }
        data.extend(img);
    }
    GroupedDataset::new(
        Tensor::new(&[n_samples, side * side], data)?,
        sensitive,
        Some(labels),
        Some(NUM_GLYPH_CLASSES),
    )
}
