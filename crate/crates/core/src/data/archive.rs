//! Grid archives: zip files of `.npy` arrays in the public dSprites layout.
//!
//! | array            | dtype        | shape                         |
//! |------------------|--------------|-------------------------------|
//! | `imgs`           | `u8`         | `N × H × W` or `N × H × W × C` |
//! | `latents_values` | `f64`        | `N × K`                       |
//! | `latents_classes`| `i64`        | `N × K`                       |
//! | `pixel_scale`    | `f64`, opt.  | `()`                          |
//! | `factor_names`   | `u8`, opt.   | comma-separated UTF-8 bytes   |
//! | `name`           | `u8`, opt.   | UTF-8 bytes                   |
//!
//! Pixels are multiplied by `pixel_scale` on load. Without that array the
//! scale is 1 when every byte is 0 or 1 (as in dSprites) and 1/255
//! otherwise. Other arrays, such as dSprites' `metadata`, are ignored.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array0, Array2, ArrayD, IxDyn};
use ndarray_npy::{NpzReader, NpzWriter};

use super::FactorDataset;
use crate::error::{Error, Result};
use crate::model::ImageShape;

fn archive_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Archive { path: path.to_path_buf(), reason: reason.to_string() }
}

fn read_classes<R: std::io::Read + std::io::Seek>(npz: &mut NpzReader<R>, path: &Path) -> Result<ArrayD<i64>> {
    if let Ok(a) = npz.by_name::<ndarray::OwnedRepr<i64>, IxDyn>("latents_classes") {
        return Ok(a);
    }
    npz.by_name::<ndarray::OwnedRepr<i32>, IxDyn>("latents_classes")
        .map(|a| a.mapv(i64::from))
        .map_err(|e| archive_err(path, format!("latents_classes: {e}")))
}

/// Loads a grid archive, dropping constant factors with a warning.
pub fn load_grid_archive(path: impl AsRef<Path>) -> Result<FactorDataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut npz = NpzReader::new(file).map_err(|e| archive_err(path, e))?;
    let names = npz.names().map_err(|e| archive_err(path, e))?;
    for required in ["imgs", "latents_values", "latents_classes"] {
        if !names.iter().any(|n| n.trim_end_matches(".npy") == required) {
            return Err(archive_err(path, format!("missing array `{required}`")));
        }
    }
    let imgs: ArrayD<u8> = npz.by_name("imgs").map_err(|e| archive_err(path, format!("imgs: {e}")))?;
    let values: ArrayD<f64> =
        npz.by_name("latents_values").map_err(|e| archive_err(path, format!("latents_values: {e}")))?;
    let classes = read_classes(&mut npz, path)?;
    let scale = if names.iter().any(|n| n.trim_end_matches(".npy") == "pixel_scale") {
        let s: Array0<f64> = npz.by_name("pixel_scale").map_err(|e| archive_err(path, format!("pixel_scale: {e}")))?;
        s.into_scalar()
    } else if imgs.iter().all(|v| *v <= 1) {
        1.0
    } else {
        1.0 / 255.0
    };

    let shape = imgs.shape().to_vec();
    let (n, image) = match shape.as_slice() {
        [n, h, w] => (*n, ImageShape::new(1, *h, *w)),
        [n, h, w, c] => (*n, ImageShape::new(*c, *h, *w)),
        _ => return Err(archive_err(path, format!("imgs has shape {shape:?}, expected N x H x W [x C]"))),
    };
    if values.ndim() != 2 || classes.ndim() != 2 || values.shape() != classes.shape() || values.shape()[0] != n {
        return Err(archive_err(
            path,
            format!(
                "latents_values {:?} and latents_classes {:?} must both be {n} x K",
                values.shape(),
                classes.shape()
            ),
        ));
    }
    let k_all = values.shape()[1];

    // channel-last on disk, channel-major in memory
    let raw = imgs.as_standard_layout();
    let raw = raw.as_slice().expect("standard layout");
    let pixels = if image.channels == 1 {
        raw.to_vec()
    } else {
        let (c, hw) = (image.channels, image.height * image.width);
        let mut out = vec![0u8; raw.len()];
        for i in 0..n {
            for p in 0..hw {
                for ch in 0..c {
                    out[i * c * hw + ch * hw + p] = raw[(i * hw + p) * c + ch];
                }
            }
        }
        out
    };

    let mut keep = Vec::new();
    let mut sizes = Vec::new();
    for j in 0..k_all {
        let col = classes.slice(ndarray::s![.., j]);
        if let Some(bad) = col.iter().find(|c| **c < 0) {
            return Err(archive_err(path, format!("negative class {bad} in factor {j}")));
        }
        let size = col.iter().copied().max().map_or(0, |m| m as usize + 1);
        if size <= 1 {
            log::warn!("{}: dropping constant factor {j}", path.display());
            continue;
        }
        keep.push(j);
        sizes.push(size);
    }
    let k = keep.len();
    let mut fv = Vec::with_capacity(n * k);
    let mut fc = Vec::with_capacity(n * k);
    for i in 0..n {
        for &j in &keep {
            fv.push(values[[i, j]]);
            fc.push(classes[[i, j]] as usize);
        }
    }
    let grid: usize = sizes.iter().product();
    if grid != n {
        return Err(archive_err(path, format!("{n} rows do not form a complete grid of {sizes:?} ({grid} cells)")));
    }
    let mut text = |key: &str| -> Option<String> {
        if !names.iter().any(|n| n.trim_end_matches(".npy") == key) {
            return None;
        }
        let bytes: ndarray::Array1<u8> = npz.by_name(key).ok()?;
        String::from_utf8(bytes.to_vec()).ok()
    };
    let name = text("name").unwrap_or_else(|| {
        path.file_stem().map_or_else(|| "archive".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let stored: Option<Vec<String>> =
        text("factor_names").map(|t| t.split(',').map(str::to_string).collect()).filter(|v: &Vec<String>| v.len() == k_all);
    let factor_names = keep
        .iter()
        .map(|&j| stored.as_ref().map_or_else(|| format!("factor{j}"), |v| v[j].clone()))
        .collect();
    FactorDataset::new(name, image, pixels, scale, factor_names, sizes, fv, fc)
        .map_err(|e| archive_err(path, e))
}

/// Writes `ds` in the grid-archive layout.
pub fn save_grid_archive(ds: &FactorDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let image = ds.image();
    let (n, k) = (ds.len(), ds.num_factors());
    let raw = ds.raw_pixels();
    let imgs = if image.channels == 1 {
        ArrayD::from_shape_vec(IxDyn(&[n, image.height, image.width]), raw.to_vec())
    } else {
        let (c, hw) = (image.channels, image.height * image.width);
        let mut out = vec![0u8; raw.len()];
        for i in 0..n {
            for p in 0..hw {
                for ch in 0..c {
                    out[(i * hw + p) * c + ch] = raw[i * c * hw + ch * hw + p];
                }
            }
        }
        ArrayD::from_shape_vec(IxDyn(&[n, image.height, image.width, c]), out)
    }
    .expect("shape matches pixel count");
    let values = Array2::from_shape_fn((n, k), |(i, j)| ds.factor_values(i)[j]);
    let classes = Array2::from_shape_fn((n, k), |(i, j)| ds.factor_classes(i)[j] as i64);

    let file = BufWriter::new(File::create(path)?);
    let mut npz = NpzWriter::new_compressed(file);
    let w = |e: ndarray_npy::WriteNpzError| archive_err(path, e);
    npz.add_array("imgs", &imgs).map_err(w)?;
    npz.add_array("latents_values", &values).map_err(w)?;
    npz.add_array("latents_classes", &classes).map_err(w)?;
    npz.add_array("pixel_scale", &Array0::from_elem((), ds.pixel_scale())).map_err(w)?;
    let names = ndarray::Array1::from(ds.factor_names().join(",").into_bytes());
    npz.add_array("factor_names", &names).map_err(w)?;
    npz.add_array("name", &ndarray::Array1::from(ds.name.clone().into_bytes())).map_err(w)?;
    npz.finish().map_err(w)?;
    Ok(())
}
