//! Latent traversals: decode sweeps of one coordinate with the rest fixed.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::checkpoint::Checkpoint;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{encode, ImageShape, Model, PriorSpec};

/// Default sweep interval, in prior standard deviations.
pub const DEFAULT_RANGE: (f64, f64) = (-3.0, 3.0);
pub const DEFAULT_STEPS: usize = 8;

/// Decoded tiles indexed by anchor, latent dimension and sweep position.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalGrid {
    pub image: ImageShape,
    pub anchors: usize,
    pub dims: usize,
    pub steps: usize,
    /// Sweep values per dimension (latent units).
    pub values: Vec<Vec<f64>>,
    /// Posterior mean of each anchor.
    pub anchor_means: Vec<Vec<f64>>,
    tiles: Vec<Vec<f64>>,
}

impl TraversalGrid {
    pub fn tile(&self, anchor: usize, dim: usize, step: usize) -> &[f64] {
        &self.tiles[(anchor * self.dims + dim) * self.steps + step]
    }

    pub fn tiles_per_anchor(&self) -> usize {
        self.dims * self.steps
    }

    /// Mean over pixels of the range each pixel spans along one row.
    pub fn row_change(&self, anchor: usize, dim: usize) -> f64 {
        let p = self.image.len();
        let mut total = 0.0;
        for i in 0..p {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..self.steps {
                let v = self.tile(anchor, dim, s)[i];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            total += hi - lo;
        }
        total / p as f64
    }

    /// Writes an 8-bit grayscale PNG of the first image channel: one block
    /// per anchor, stacked vertically, each with a row per latent dimension
    /// and a column per sweep value. Blocks are separated by a blank line.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = (self.image.height, self.image.width);
        let width = self.steps * w;
        let block = self.dims * h;
        let height = self.anchors * block + self.anchors.saturating_sub(1);
        let mut buf = vec![0u8; width * height];
        for a in 0..self.anchors {
            for j in 0..self.dims {
                for s in 0..self.steps {
                    let tile = self.tile(a, j, s);
                    for r in 0..h {
                        let row = a * (block + 1) + j * h + r;
                        for c in 0..w {
                            buf[row * width + s * w + c] = (tile[r * w + c] * 255.0).round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
            }
        }
        let file = BufWriter::new(File::create(path.as_ref())?);
        let mut enc = png::Encoder::new(file, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
        enc.write_header().map_err(png_err)?.write_image_data(&buf).map_err(png_err)?;
        Ok(())
    }
}

/// Marginal standard deviation of each prior coordinate. Gamma hierarchies
/// use `E[1/α]` under `q(α)` when it exists and `1/E[α]` otherwise.
pub fn prior_scales(prior: &PriorSpec, dim: usize) -> Vec<f64> {
    match prior {
        PriorSpec::StdNormal => vec![1.0; dim],
        PriorSpec::Precision { alpha } => alpha.iter().map(|a| a.powf(-0.5)).collect(),
        PriorSpec::GammaHier { qalpha, .. } | PriorSpec::Relevance { qalpha, .. } => qalpha
            .shape()
            .iter()
            .zip(qalpha.rate())
            .map(|(a, b)| if *a > 1.0 { (b / (a - 1.0)).sqrt() } else { (b / a).sqrt() })
            .collect(),
        PriorSpec::Mog { weights, means, stds } => (0..dim)
            .map(|j| {
                let m: f64 = weights.iter().zip(means).map(|(w, m)| w * m[j]).sum();
                let s2: f64 = weights.iter().zip(means.iter().zip(stds)).map(|(w, (m, s))| w * (s[j] * s[j] + m[j] * m[j])).sum();
                (s2 - m * m).max(0.0).sqrt()
            })
            .collect(),
    }
}

/// Decoded pixel means for one anchor code with coordinate `dim` set to `value`.
pub fn decode_at(model: &Model, code: &[f64], dim: usize, value: f64) -> Vec<f64> {
    let mut z = code.to_vec();
    z[dim] = value;
    model.decode_probs(&Tensor::matrix(1, z.len(), z)).into_data()
}

/// Sweeps every latent coordinate of every anchor over `range` (in prior
/// standard deviations) at `steps` evenly spaced values, starting from the
/// anchor's posterior mean.
pub fn traverse(ckpt: &Checkpoint, anchors: &Tensor, range: (f64, f64), steps: usize) -> Result<TraversalGrid> {
    if steps == 0 || !(range.0 <= range.1) {
        return Err(Error::Config(format!("traversal needs steps > 0 and an ordered range, got {steps}, {range:?}")));
    }
    let model = &ckpt.model;
    let d = model.latent_dim();
    let scales = prior_scales(&model.prior_spec()?, d);
    let q = encode(model, anchors)?;
    let pos = |s: usize| if steps == 1 { 0.5 * (range.0 + range.1) } else { range.0 + (range.1 - range.0) * s as f64 / (steps - 1) as f64 };
    let values: Vec<Vec<f64>> = scales.iter().map(|sc| (0..steps).map(|s| pos(s) * sc).collect()).collect();
    let n = anchors.rows();
    let mut rows = Vec::with_capacity(n * d * steps * d);
    for a in 0..n {
        let m = q.mean.row(a);
        for (j, vals) in values.iter().enumerate() {
            for v in vals {
                let mut z = m.to_vec();
                z[j] = *v;
                rows.extend(z);
            }
        }
    }
    let probs = model.decode_probs(&Tensor::matrix(n * d * steps, d, rows));
    let tiles = (0..n * d * steps).map(|i| probs.row(i).to_vec()).collect();
    Ok(TraversalGrid {
        image: model.image(),
        anchors: n,
        dims: d,
        steps,
        values,
        anchor_means: (0..n).map(|a| q.mean.row(a).to_vec()).collect(),
        tiles,
    })
}
