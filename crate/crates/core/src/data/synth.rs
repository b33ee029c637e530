//! Anti-aliased bar renderer over a factor grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FactorDataset;
use crate::error::{Error, Result};
use crate::model::ImageShape;

/// Default cap on the bytes a generated dataset may occupy.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

/// Bar height as a fraction of its width.
const ASPECT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    /// Horizontal centre, as a fraction of the canvas width.
    X,
    /// Vertical centre, as a fraction of the canvas height.
    Y,
    /// Bar width, as a fraction of the canvas width.
    Scale,
    /// Peak brightness in `[0, 1]`.
    Intensity,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::X => "x",
            Factor::Y => "y",
            Factor::Scale => "scale",
            Factor::Intensity => "intensity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Factor::X),
            "y" => Ok(Factor::Y),
            "scale" => Ok(Factor::Scale),
            "intensity" => Ok(Factor::Intensity),
            _ => Err(Error::Config(format!("unknown factor {s:?}"))),
        }
    }

    pub fn default_range(self) -> (f64, f64) {
        match self {
            Factor::X | Factor::Y => (0.3, 0.7),
            Factor::Scale => (0.3, 0.6),
            Factor::Intensity => (0.3, 1.0),
        }
    }

    /// Value used when the factor is not part of the grid.
    fn fixed(self) -> f64 {
        match self {
            Factor::X | Factor::Y => 0.5,
            Factor::Scale => 0.45,
            Factor::Intensity => 1.0,
        }
    }
}

/// One grid axis: `size` evenly spaced values over `range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorSpec {
    pub factor: Factor,
    pub size: usize,
    pub range: (f64, f64),
}

impl FactorSpec {
    pub fn new(factor: Factor, size: usize) -> Self {
        Self { factor, size, range: factor.default_range() }
    }

    pub fn value(&self, class: usize) -> f64 {
        if self.size <= 1 {
            return self.range.0;
        }
        self.range.0 + (self.range.1 - self.range.0) * class as f64 / (self.size - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub factors: Vec<FactorSpec>,
    pub image_size: usize,
    /// Extra channels of i.i.d. uniform noise per image.
    pub noise_dims: usize,
    pub seed: u64,
    pub memory_budget: usize,
}

impl SynthConfig {
    pub fn new(factors: Vec<FactorSpec>, image_size: usize, noise_dims: usize, seed: u64) -> Self {
        Self { factors, image_size, noise_dims, seed, memory_budget: DEFAULT_MEMORY_BUDGET }
    }

    /// Bytes the dataset will occupy once generated.
    pub fn estimated_bytes(&self) -> usize {
        let n = self.factors.iter().fold(1usize, |acc, f| acc.saturating_mul(f.size));
        let per_image = (1 + self.noise_dims) * self.image_size * self.image_size;
        let per_row = per_image + self.factors.len() * 2 * std::mem::size_of::<f64>();
        n.saturating_mul(per_row)
    }
}

/// Fraction of the unit cell `[i, i+1)` covered by `[lo, hi)`.
fn coverage(i: usize, lo: f64, hi: f64) -> f64 {
    let a = i as f64;
    (hi.min(a + 1.0) - lo.max(a)).clamp(0.0, 1.0)
}

/// Renders one bar into `out` (`size²` bytes).
fn render(size: usize, x: f64, y: f64, scale: f64, intensity: f64, out: &mut [u8]) {
    let s = size as f64;
    let half_w = 0.5 * scale * s;
    let half_h = ASPECT * half_w;
    let (cx, cy) = (x * s, y * s);
    let cols: Vec<f64> = (0..size).map(|j| coverage(j, cx - half_w, cx + half_w)).collect();
    for i in 0..size {
        let row = coverage(i, cy - half_h, cy + half_h);
        for j in 0..size {
            let v = intensity * row * cols[j];
            out[i * size + j] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Generates the full grid of bar images. Rows enumerate the grid with the
/// last factor varying fastest.
pub fn synth_bars(config: &SynthConfig) -> Result<FactorDataset> {
    let k = config.factors.len();
    if !(2..=4).contains(&k) {
        return Err(Error::Config(format!("synth_bars takes 2 to 4 factors, got {k}")));
    }
    if config.image_size < 8 {
        return Err(Error::Config(format!("image_size must be at least 8, got {}", config.image_size)));
    }
    for (i, f) in config.factors.iter().enumerate() {
        if f.size < 2 {
            return Err(Error::Config(format!("factor {} needs at least 2 values", f.factor.name())));
        }
        if config.factors[..i].iter().any(|g| g.factor == f.factor) {
            return Err(Error::Config(format!("factor {} listed twice", f.factor.name())));
        }
    }
    let bytes = config.estimated_bytes();
    if bytes > config.memory_budget {
        return Err(Error::TooLarge { bytes, budget: config.memory_budget });
    }

    let size = config.image_size;
    let plane = size * size;
    let image = ImageShape::new(1 + config.noise_dims, size, size);
    let n: usize = config.factors.iter().map(|f| f.size).product();
    let mut pixels = vec![0u8; n * image.len()];
    let mut values = Vec::with_capacity(n * k);
    let mut classes = Vec::with_capacity(n * k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut cls = vec![0usize; k];
    for row in 0..n {
        let mut rem = row;
        for j in (0..k).rev() {
            cls[j] = rem % config.factors[j].size;
            rem /= config.factors[j].size;
        }
        let mut setting = [Factor::X.fixed(), Factor::Y.fixed(), Factor::Scale.fixed(), Factor::Intensity.fixed()];
        for (spec, &c) in config.factors.iter().zip(&cls) {
            let v = spec.value(c);
            setting[spec.factor as usize] = v;
            values.push(v);
            classes.push(c);
        }
        let out = &mut pixels[row * image.len()..(row + 1) * image.len()];
        render(size, setting[0], setting[1], setting[2], setting[3], &mut out[..plane]);
        rng.fill(&mut out[plane..]);
    }

    let names = config.factors.iter().map(|f| f.factor.name().to_string()).collect();
    let sizes = config.factors.iter().map(|f| f.size).collect();
    FactorDataset::new("synth_bars", image, pixels, 1.0 / 255.0, names, sizes, values, classes)
}
