//! Ground-truth factor datasets and factor-conditioned samplers.
//!
//! Every dataset is a complete grid: each combination of factor classes
//! appears exactly once. Pixels are stored as bytes with a fixed scale so
//! that saving and reloading is exact.

mod archive;
mod synth;

pub use archive::{load_grid_archive, save_grid_archive};
pub use synth::{synth_bars, Factor, FactorSpec, SynthConfig, DEFAULT_MEMORY_BUDGET};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ImageShape;

/// Observations paired with their generative factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDataset {
    pub name: String,
    image: ImageShape,
    /// `N × C·H·W` bytes, channel-major within a row.
    pixels: Vec<u8>,
    pixel_scale: f64,
    factor_names: Vec<String>,
    factor_sizes: Vec<usize>,
    /// `N × K`, row-major.
    factor_values: Vec<f64>,
    factor_classes: Vec<usize>,
    /// Row of the dataset holding each grid cell, in mixed-radix order.
    row_of_cell: Vec<usize>,
}

/// A batch drawn by one of the samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBatch {
    pub x: Tensor,
    pub indices: Vec<usize>,
    /// `B × K` factor classes.
    pub classes: Vec<Vec<usize>>,
    /// The request exceeded the number of distinct settings, so some were
    /// drawn more than once.
    pub with_replacement: bool,
}

impl FactorDataset {
    /// Builds a dataset and checks that the factor classes form a complete grid.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        image: ImageShape,
        pixels: Vec<u8>,
        pixel_scale: f64,
        factor_names: Vec<String>,
        factor_sizes: Vec<usize>,
        factor_values: Vec<f64>,
        factor_classes: Vec<usize>,
    ) -> Result<Self> {
        let k = factor_sizes.len();
        if k == 0 || factor_names.len() != k {
            return Err(Error::Dataset("need at least one named factor".into()));
        }
        let n: usize = factor_sizes.iter().product();
        if n == 0 {
            return Err(Error::Dataset("empty factor grid".into()));
        }
        if pixels.len() != n * image.len() {
            return Err(Error::Dataset(format!(
                "{} pixel bytes for {n} images of {} pixels",
                pixels.len(),
                image.len()
            )));
        }
        if factor_values.len() != n * k || factor_classes.len() != n * k {
            return Err(Error::Dataset(format!("factor tables must be {n} x {k}")));
        }
        if !(pixel_scale > 0.0) || pixels.iter().any(|p| *p as f64 * pixel_scale > 1.0 + 1e-12) {
            return Err(Error::Dataset("pixel values must scale into [0, 1]".into()));
        }
        let mut row_of_cell = vec![usize::MAX; n];
        for i in 0..n {
            let row = &factor_classes[i * k..(i + 1) * k];
            let mut cell = 0;
            for (c, s) in row.iter().zip(&factor_sizes) {
                if c >= s {
                    return Err(Error::Dataset(format!("row {i}: class {c} outside grid of size {s}")));
                }
                cell = cell * s + c;
            }
            if row_of_cell[cell] != usize::MAX {
                return Err(Error::Dataset(format!("rows {} and {i} repeat the factor setting {row:?}", row_of_cell[cell])));
            }
            row_of_cell[cell] = i;
        }
        Ok(Self {
            name: name.into(),
            image,
            pixels,
            pixel_scale,
            factor_names,
            factor_sizes,
            factor_values,
            factor_classes,
            row_of_cell,
        })
    }

    pub fn len(&self) -> usize {
        self.row_of_cell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self) -> ImageShape {
        self.image
    }

    pub fn num_factors(&self) -> usize {
        self.factor_sizes.len()
    }

    pub fn factor_sizes(&self) -> &[usize] {
        &self.factor_sizes
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn pixel_scale(&self) -> f64 {
        self.pixel_scale
    }

    pub fn raw_pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn factor_values(&self, i: usize) -> &[f64] {
        let k = self.num_factors();
        &self.factor_values[i * k..(i + 1) * k]
    }

    pub fn factor_classes(&self, i: usize) -> &[usize] {
        let k = self.num_factors();
        &self.factor_classes[i * k..(i + 1) * k]
    }

    /// Pixels of image `i` scaled into `[0,1]`.
    pub fn image_values(&self, i: usize) -> Vec<f64> {
        let p = self.image.len();
        self.pixels[i * p..(i + 1) * p].iter().map(|v| *v as f64 * self.pixel_scale).collect()
    }

    /// `B × pixels` batch of the given rows.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let p = self.image.len();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend(self.pixels[i * p..(i + 1) * p].iter().map(|v| *v as f64 * self.pixel_scale));
        }
        Tensor::matrix(indices.len(), p, data)
    }

    /// Row holding the given factor classes.
    pub fn index_of(&self, classes: &[usize]) -> Result<usize> {
        if classes.len() != self.num_factors() {
            return Err(Error::Dataset(format!("expected {} factor classes", self.num_factors())));
        }
        let mut cell = 0;
        for (c, s) in classes.iter().zip(&self.factor_sizes) {
            if c >= s {
                return Err(Error::Dataset(format!("class {c} outside grid of size {s}")));
            }
            cell = cell * s + c;
        }
        Ok(self.row_of_cell[cell])
    }

    /// Rows whose factor `k` has class `class`, with factor `k` removed.
    pub fn restrict(&self, k: usize, class: usize) -> Result<Self> {
        if k >= self.num_factors() || class >= self.factor_sizes[k] {
            return Err(Error::Dataset(format!("no class {class} for factor {k}")));
        }
        if self.num_factors() == 1 {
            return Err(Error::Dataset("cannot remove the only factor".into()));
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.factor_classes(i)[k] == class).collect();
        let p = self.image.len();
        let keep = |v: &[f64]| v.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| *x).collect::<Vec<_>>();
        let mut pixels = Vec::with_capacity(rows.len() * p);
        let mut values = Vec::new();
        let mut classes = Vec::new();
        for &i in &rows {
            pixels.extend_from_slice(&self.pixels[i * p..(i + 1) * p]);
            values.extend(keep(self.factor_values(i)));
            classes.extend(self.factor_classes(i).iter().enumerate().filter(|(j, _)| *j != k).map(|(_, c)| *c));
        }
        let drop = |v: &[String]| v.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| x.clone()).collect();
        let sizes = self.factor_sizes.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, s)| *s).collect();
        Self::new(
            format!("{}[{}={class}]", self.name, self.factor_names[k]),
            self.image,
            pixels,
            self.pixel_scale,
            drop(&self.factor_names),
            sizes,
            values,
            classes,
        )
    }

    fn check_factor(&self, k: usize) -> Result<()> {
        if k >= self.num_factors() {
            return Err(Error::Dataset(format!("factor index {k} out of range for {} factors", self.num_factors())));
        }
        Ok(())
    }

    fn make_batch(&self, classes: Vec<Vec<usize>>, with_replacement: bool) -> Result<FactorBatch> {
        let indices = classes.iter().map(|c| self.index_of(c)).collect::<Result<Vec<_>>>()?;
        Ok(FactorBatch { x: self.batch(&indices), indices, classes, with_replacement })
    }
}

/// `batch` rows sharing one uniformly drawn class of factor `k`, with every
/// other factor drawn i.i.d. uniformly over its grid.
pub fn sample_fixed_factor(ds: &FactorDataset, k: usize, batch: usize, seed: u64) -> Result<FactorBatch> {
    ds.check_factor(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = ds.factor_sizes();
    let fixed = rng.random_range(0..sizes[k]);
    let classes: Vec<Vec<usize>> = (0..batch)
        .map(|_| {
            sizes.iter().enumerate().map(|(j, &s)| if j == k { fixed } else { rng.random_range(0..s) }).collect()
        })
        .collect();
    let available: usize = sizes.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, s)| *s).product();
    ds.make_batch(classes, batch > available)
}

/// `batch` rows sharing one uniformly drawn setting of every factor but `k`;
/// factor `k` runs through its grid in shuffled passes, so it covers
/// `min(batch, size_k)` distinct classes.
pub fn sample_varied_factor(ds: &FactorDataset, k: usize, batch: usize, seed: u64) -> Result<FactorBatch> {
    ds.check_factor(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = ds.factor_sizes();
    let base: Vec<usize> = sizes.iter().map(|&s| rng.random_range(0..s)).collect();
    let mut varied = Vec::with_capacity(batch);
    let mut pass: Vec<usize> = (0..sizes[k]).collect();
    while varied.len() < batch {
        pass.shuffle(&mut rng);
        varied.extend(pass.iter().take(batch - varied.len()));
    }
    let classes = varied
        .into_iter()
        .map(|v| {
            let mut c = base.clone();
            c[k] = v;
            c
        })
        .collect();
    ds.make_batch(classes, batch > sizes[k])
}

/// `batch` uniformly drawn rows (with replacement).
pub fn sample_uniform(ds: &FactorDataset, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..ds.len())).collect()
}

#[cfg(test)]
mod tests;
