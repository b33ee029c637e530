//! Checkpoint archives: network, prior and discriminator tensors together
//! with the run configuration that produced them.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array0, Array1, ArrayD, IxDyn};
use ndarray_npy::{NpzReader, NpzWriter};

use super::config::RunConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Discriminator, ImageShape, Model};

const FORMAT: &str = "bfvae-ckpt-v1";

/// A trained model, ready to evaluate or resume from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
    pub disc: Option<Discriminator>,
    /// Model updates applied so far.
    pub step: usize,
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Fresh networks for `config` on images of shape `image`.
pub(crate) fn build(config: &RunConfig, image: ImageShape) -> Result<(Model, Option<Discriminator>)> {
    let prior = config.initial_prior()?;
    let model = Model::new(image, config.latent_dim, config.architecture.clone(), &prior, config.seed)?;
    let disc = config.variant.uses_discriminator().then(|| {
        Discriminator::new(config.latent_dim, config.disc_width, config.disc_depth, config.seed.wrapping_add(1))
    });
    Ok((model, disc))
}

fn text_array(s: &str) -> Array1<u8> {
    Array1::from(s.as_bytes().to_vec())
}

fn add_store<W: std::io::Write + std::io::Seek>(npz: &mut NpzWriter<W>, prefix: &str, store: &ParamStore) -> Result<()> {
    for (name, t) in store.iter() {
        let a = ArrayD::from_shape_vec(IxDyn(t.shape()), t.data().to_vec()).map_err(ckpt_err)?;
        npz.add_array(format!("{prefix}{name}"), &a).map_err(ckpt_err)?;
    }
    Ok(())
}

fn read_store<R: std::io::Read + std::io::Seek>(
    npz: &mut NpzReader<R>,
    prefix: &str,
    store: &mut ParamStore,
) -> Result<()> {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let a: ArrayD<f64> =
            npz.by_name(&format!("{prefix}{name}")).map_err(|e| ckpt_err(format!("{prefix}{name}: {e}")))?;
        let t = Tensor::new(a.shape().to_vec(), a.iter().copied().collect());
        if !store.set(&name, t) {
            return Err(ckpt_err(format!("{prefix}{name} has the wrong size")));
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path.as_ref())?);
        let mut npz = NpzWriter::new(file);
        let img = self.model.image();
        npz.add_array("format", &text_array(FORMAT)).map_err(ckpt_err)?;
        npz.add_array("config", &text_array(&self.config.canonical())).map_err(ckpt_err)?;
        npz.add_array("config_hash", &text_array(&self.config.hash())).map_err(ckpt_err)?;
        npz.add_array("image_shape", &Array1::from(vec![img.channels as u64, img.height as u64, img.width as u64]))
            .map_err(ckpt_err)?;
        npz.add_array("step", &Array0::from_elem((), self.step as u64)).map_err(ckpt_err)?;
        add_store(&mut npz, "model/", &self.model.params)?;
        if let Some(d) = &self.disc {
            add_store(&mut npz, "disc/", &d.params)?;
        }
        npz.finish().map_err(ckpt_err)?;
        Ok(())
    }

    /// Loads a checkpoint, checking that the stored hash matches the stored
    /// configuration.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut npz = NpzReader::new(File::open(path)?).map_err(ckpt_err)?;
        let text = |npz: &mut NpzReader<File>, key: &str| -> Result<String> {
            let a: Array1<u8> = npz.by_name(key).map_err(|e| ckpt_err(format!("{key}: {e}")))?;
            String::from_utf8(a.to_vec()).map_err(ckpt_err)
        };
        let format = text(&mut npz, "format")?;
        if format != FORMAT {
            return Err(ckpt_err(format!("{}: unknown format {format:?}", path.display())));
        }
        let config = RunConfig::parse(&text(&mut npz, "config")?)?;
        let hash = text(&mut npz, "config_hash")?;
        if hash != config.hash() {
            return Err(ckpt_err(format!("{}: config hash mismatch", path.display())));
        }
        let shape: Array1<u64> = npz.by_name("image_shape").map_err(ckpt_err)?;
        if shape.len() != 3 {
            return Err(ckpt_err("image_shape must have three entries"));
        }
        let image = ImageShape::new(shape[0] as usize, shape[1] as usize, shape[2] as usize);
        let step: Array0<u64> = npz.by_name("step").map_err(ckpt_err)?;
        let (mut model, mut disc) = build(&config, image)?;
        read_store(&mut npz, "model/", &mut model.params)?;
        if let Some(d) = disc.as_mut() {
            read_store(&mut npz, "disc/", &mut d.params)?;
        }
        Ok(Self { config, model, disc, step: step.into_scalar() as usize })
    }
}
