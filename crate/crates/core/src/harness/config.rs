//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored; every other line is
//! `key = value`. Unknown keys are errors. Omitted keys take the defaults of
//! [`RunConfig::default`]. The canonical form lists every key except
//! `out_dir` in alphabetical order and is what the config hash covers.
//!
//! | key | meaning |
//! |-----|---------|
//! | `variant` | `vae`, `beta_vae`, `factor_vae`, `mog_fvae`, `bfvae0`, `bfvae1`, `bfvae2` |
//! | `latent_dim` | latent dimension d |
//! | `beta` | KL weight of `beta_vae` |
//! | `gamma` | TC weight |
//! | `eta` | weight of `Σ(1/α − 1)²` (`bfvae0`) |
//! | `eta_s`, `eta_h` | weights of `‖r‖₁` and `H(r)` (`bfvae2`) |
//! | `reg_scale` | `hyper`: `eta`, `eta_s`, `eta_h` are multiplied by the hyper-KL scale (1/N by default), like the hyper-KL itself; `datum`: used as given |
//! | `epsilon` | relevance offset ε |
//! | `hyper_kl_scale` | weight of `KL(q(α) ‖ p(α))`; `auto` is 1/N |
//! | `mog_k` | mixture components of `mog_fvae` |
//! | `alpha_init`, `a_init`, `qshape_init`, `qrate_init`, `r_init` | initial prior parameters |
//! | `lr`, `disc_lr`, `adam_beta1`, `adam_beta2` | optimizer settings |
//! | `batch_size` | examples per model step (the discriminator draws its own) |
//! | `steps`, `disc_steps` | model steps, discriminator steps per model step |
//! | `log_every` | history interval |
//! | `seed` | model initialization and batch order |
//! | `architecture` | `desk`, `full64`, `mlp:256,128`, `conv:16,32/64` |
//! | `disc_width`, `disc_depth` | discriminator layout |
//! | `dataset` | `synth` or `archive:<path>` |
//! | `synth_factors` | e.g. `x:8,y:8,scale:6` |
//! | `synth_size`, `synth_noise`, `synth_seed` | synthetic image side, noise channels, seed |
//! | `out_dir` | output directory (overridden by `BFVAE_OUT_DIR`) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::data::{load_grid_archive, synth_bars, Factor, FactorDataset, FactorSpec, SynthConfig};
use crate::dist::{GammaParams, RelevanceVector};
use crate::error::{Error, Result};
use crate::model::{Architecture, Objective, PriorSpec};

/// Environment variable that replaces `out_dir`.
pub const OUT_DIR_ENV: &str = "BFVAE_OUT_DIR";
/// Environment variable selecting the compute device; only `cpu` exists.
pub const DEVICE_ENV: &str = "BFVAE_DEVICE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vae,
    BetaVae,
    FactorVae,
    MogFactorVae,
    BfVae0,
    BfVae1,
    BfVae2,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Vae,
        Variant::BetaVae,
        Variant::FactorVae,
        Variant::MogFactorVae,
        Variant::BfVae0,
        Variant::BfVae1,
        Variant::BfVae2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::BetaVae => "beta_vae",
            Variant::FactorVae => "factor_vae",
            Variant::MogFactorVae => "mog_fvae",
            Variant::BfVae0 => "bfvae0",
            Variant::BfVae1 => "bfvae1",
            Variant::BfVae2 => "bfvae2",
        }
    }

    pub fn uses_discriminator(self) -> bool {
        !matches!(self, Variant::Vae | Variant::BetaVae)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegScale {
    Hyper,
    Datum,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synth { factors: Vec<FactorSpec>, image_size: usize, noise_dims: usize, seed: u64 },
    Archive(PathBuf),
}

impl DatasetSpec {
    pub fn load(&self) -> Result<FactorDataset> {
        match self {
            DatasetSpec::Synth { factors, image_size, noise_dims, seed } => {
                synth_bars(&SynthConfig::new(factors.clone(), *image_size, *noise_dims, *seed))
            }
            DatasetSpec::Archive(path) => load_grid_archive(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub latent_dim: usize,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub eta_s: f64,
    pub eta_h: f64,
    pub reg_scale: RegScale,
    pub epsilon: f64,
    /// `None` means 1/N.
    pub hyper_kl_scale: Option<f64>,
    pub mog_k: usize,
    pub alpha_init: f64,
    pub a_init: f64,
    pub qshape_init: f64,
    pub qrate_init: f64,
    pub r_init: f64,
    pub lr: f64,
    pub disc_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub disc_steps: usize,
    pub log_every: usize,
    pub seed: u64,
    pub architecture: Architecture,
    pub disc_width: usize,
    pub disc_depth: usize,
    pub dataset: DatasetSpec,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Tuned desk-scale defaults, not published values.
    fn default() -> Self {
        Self {
            variant: Variant::BfVae2,
            latent_dim: 10,
            beta: 1.0,
            gamma: 6.0,
            eta: 5.0,
            eta_s: 10.0,
            eta_h: 10.0,
            reg_scale: RegScale::Hyper,
            epsilon: 1e-3,
            hyper_kl_scale: None,
            mog_k: 5,
            alpha_init: 1.0,
            a_init: 2.0,
            qshape_init: 2.0,
            qrate_init: 2.0,
            r_init: 0.5,
            lr: 1e-4,
            disc_lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 64,
            steps: 30_000,
            disc_steps: 1,
            log_every: 100,
            seed: 0,
            architecture: Architecture::desk(),
            disc_width: 256,
            disc_depth: 4,
            dataset: DatasetSpec::Synth {
                factors: vec![FactorSpec::new(Factor::X, 8), FactorSpec::new(Factor::Y, 8), FactorSpec::new(Factor::Scale, 6)],
                image_size: 16,
                noise_dims: 1,
                seed: 0,
            },
            out_dir: None,
        }
    }
}

fn fmt_factors(f: &[FactorSpec]) -> String {
    f.iter().map(|s| format!("{}:{}", s.factor.name(), s.size)).collect::<Vec<_>>().join(",")
}

fn parse_factors(s: &str) -> Result<Vec<FactorSpec>> {
    s.split(',')
        .map(|item| {
            let (name, size) =
                item.trim().split_once(':').ok_or_else(|| Error::Config(format!("factor {item:?} is not name:size")))?;
            let size = size.trim().parse().map_err(|_| Error::Config(format!("bad factor size in {item:?}")))?;
            Ok(FactorSpec::new(Factor::parse(name.trim())?, size))
        })
        .collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Every key except `out_dir`, with its value in canonical form.
    fn pairs(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("variant", self.variant.name().to_string());
        m.insert("latent_dim", self.latent_dim.to_string());
        m.insert("beta", self.beta.to_string());
        m.insert("gamma", self.gamma.to_string());
        m.insert("eta", self.eta.to_string());
        m.insert("eta_s", self.eta_s.to_string());
        m.insert("eta_h", self.eta_h.to_string());
        m.insert("reg_scale", match self.reg_scale { RegScale::Hyper => "hyper", RegScale::Datum => "datum" }.to_string());
        m.insert("epsilon", self.epsilon.to_string());
        m.insert("hyper_kl_scale", self.hyper_kl_scale.map_or("auto".to_string(), |v| v.to_string()));
        m.insert("mog_k", self.mog_k.to_string());
        m.insert("alpha_init", self.alpha_init.to_string());
        m.insert("a_init", self.a_init.to_string());
        m.insert("qshape_init", self.qshape_init.to_string());
        m.insert("qrate_init", self.qrate_init.to_string());
        m.insert("r_init", self.r_init.to_string());
        m.insert("lr", self.lr.to_string());
        m.insert("disc_lr", self.disc_lr.to_string());
        m.insert("adam_beta1", self.adam_beta1.to_string());
        m.insert("adam_beta2", self.adam_beta2.to_string());
        m.insert("batch_size", self.batch_size.to_string());
        m.insert("steps", self.steps.to_string());
        m.insert("disc_steps", self.disc_steps.to_string());
        m.insert("log_every", self.log_every.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("architecture", self.architecture.to_string());
        m.insert("disc_width", self.disc_width.to_string());
        m.insert("disc_depth", self.disc_depth.to_string());
        match &self.dataset {
            DatasetSpec::Synth { factors, image_size, noise_dims, seed } => {
                m.insert("dataset", "synth".to_string());
                m.insert("synth_factors", fmt_factors(factors));
                m.insert("synth_size", image_size.to_string());
                m.insert("synth_noise", noise_dims.to_string());
                m.insert("synth_seed", seed.to_string());
            }
            DatasetSpec::Archive(p) => {
                m.insert("dataset", format!("archive:{}", p.display()));
            }
        }
        m
    }

    /// Sorted `key = value` lines without `out_dir`.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Canonical text plus `out_dir` when set.
    pub fn to_text(&self) -> String {
        let mut s = self.canonical();
        if let Some(d) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", d.display());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut synth = match &cfg.dataset {
            DatasetSpec::Synth { factors, image_size, noise_dims, seed } => {
                (factors.clone(), *image_size, *noise_dims, *seed)
            }
            DatasetSpec::Archive(_) => unreachable!("default dataset is synthetic"),
        };
        let mut archive: Option<PathBuf> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim(), &mut synth, &mut archive)?;
        }
        cfg.dataset = match archive {
            Some(p) => DatasetSpec::Archive(p),
            None => DatasetSpec::Synth { factors: synth.0, image_size: synth.1, noise_dims: synth.2, seed: synth.3 },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` setting, as from a config line or a CLI flag.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let mut text = self.to_text();
        let _ = writeln!(text, "{key} = {value}");
        *self = RunConfig::parse(&text)?;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn set(
        &mut self,
        k: &str,
        v: &str,
        synth: &mut (Vec<FactorSpec>, usize, usize, u64),
        archive: &mut Option<PathBuf>,
    ) -> Result<()> {
        match k {
            "variant" => self.variant = v.parse()?,
            "latent_dim" => self.latent_dim = num(k, v)?,
            "beta" => self.beta = num(k, v)?,
            "gamma" => self.gamma = num(k, v)?,
            "eta" => self.eta = num(k, v)?,
            "eta_s" => self.eta_s = num(k, v)?,
            "eta_h" => self.eta_h = num(k, v)?,
            "reg_scale" => {
                self.reg_scale = match v {
                    "hyper" => RegScale::Hyper,
                    "datum" => RegScale::Datum,
                    _ => return Err(Error::Config(format!("reg_scale must be hyper or datum, got {v:?}"))),
                }
            }
            "epsilon" => self.epsilon = num(k, v)?,
            "hyper_kl_scale" => self.hyper_kl_scale = if v == "auto" { None } else { Some(num(k, v)?) },
            "mog_k" => self.mog_k = num(k, v)?,
            "alpha_init" => self.alpha_init = num(k, v)?,
            "a_init" => self.a_init = num(k, v)?,
            "qshape_init" => self.qshape_init = num(k, v)?,
            "qrate_init" => self.qrate_init = num(k, v)?,
            "r_init" => self.r_init = num(k, v)?,
            "lr" => self.lr = num(k, v)?,
            "disc_lr" => self.disc_lr = num(k, v)?,
            "adam_beta1" => self.adam_beta1 = num(k, v)?,
            "adam_beta2" => self.adam_beta2 = num(k, v)?,
            "batch_size" => self.batch_size = num(k, v)?,
            "steps" => self.steps = num(k, v)?,
            "disc_steps" => self.disc_steps = num(k, v)?,
            "log_every" => self.log_every = num(k, v)?,
            "seed" => self.seed = num(k, v)?,
            "architecture" => self.architecture = v.parse()?,
            "disc_width" => self.disc_width = num(k, v)?,
            "disc_depth" => self.disc_depth = num(k, v)?,
            "dataset" => {
                if v == "synth" {
                    *archive = None;
                } else if let Some(p) = v.strip_prefix("archive:") {
                    *archive = Some(PathBuf::from(p));
                } else {
                    return Err(Error::Config(format!("dataset must be synth or archive:<path>, got {v:?}")));
                }
            }
            "synth_factors" => synth.0 = parse_factors(v)?,
            "synth_size" => synth.1 = num(k, v)?,
            "synth_noise" => synth.2 = num(k, v)?,
            "synth_seed" => synth.3 = num(k, v)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        let weights = [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("eta_s", self.eta_s),
            ("eta_h", self.eta_h),
            ("hyper_kl_scale", self.hyper_kl_scale.unwrap_or(0.0)),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number, got {w}"));
            }
        }
        let positive = [
            ("epsilon", self.epsilon),
            ("alpha_init", self.alpha_init),
            ("qshape_init", self.qshape_init),
            ("qrate_init", self.qrate_init),
            ("lr", self.lr),
            ("disc_lr", self.disc_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.a_init > 1.0) {
            return fail(format!("a_init must exceed 1, got {}", self.a_init));
        }
        if !(0.0..=1.0).contains(&self.r_init) {
            return fail(format!("r_init must lie in [0, 1], got {}", self.r_init));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("Adam decay rates must lie in [0, 1)".into());
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.mog_k == 0 || self.log_every == 0 || self.disc_steps == 0 {
            return fail("mog_k, log_every and disc_steps must be positive".into());
        }
        if let DatasetSpec::Synth { factors, .. } = &self.dataset {
            if self.latent_dim < factors.len() {
                return fail(format!("latent_dim {} is below the {} generative factors", self.latent_dim, factors.len()));
            }
        }
        if self.variant.uses_discriminator() && (self.disc_width == 0 || self.disc_depth == 0) {
            return fail("discriminator needs positive width and depth".into());
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn resolved_out_dir(&self) -> Option<PathBuf> {
        std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).or_else(|| self.out_dir.clone())
    }

    /// Replaces `out_dir` by the environment override, if set.
    pub fn with_env_overrides(mut self) -> Self {
        self.out_dir = self.resolved_out_dir();
        self
    }

    /// Prior at initialization.
    pub fn initial_prior(&self) -> Result<PriorSpec> {
        let d = self.latent_dim;
        let q = || GammaParams::new(vec![self.qshape_init; d], vec![self.qrate_init; d]);
        match self.variant {
            Variant::Vae | Variant::BetaVae | Variant::FactorVae => Ok(PriorSpec::StdNormal),
            Variant::MogFactorVae => {
                let k = self.mog_k;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d6f67);
                let means = (0..k).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
                PriorSpec::mog(vec![1.0 / k as f64; k], means, vec![vec![1.0; d]; k])
            }
            Variant::BfVae0 => PriorSpec::precision(vec![self.alpha_init; d]),
            Variant::BfVae1 => PriorSpec::gamma_hier(vec![self.a_init; d], q()?),
            Variant::BfVae2 => PriorSpec::relevance(RelevanceVector::new(vec![self.r_init; d], self.epsilon)?, q()?),
        }
    }

    /// Training objective for a dataset of `n` rows.
    pub fn objective(&self, n: usize) -> Objective {
        let hyper = self.hyper_kl_scale.unwrap_or(1.0 / n.max(1) as f64);
        let reg = match self.reg_scale {
            RegScale::Hyper => hyper,
            RegScale::Datum => 1.0,
        };
        match self.variant {
            Variant::Vae => Objective::Vae { beta: 1.0 },
            Variant::BetaVae => Objective::Vae { beta: self.beta },
            Variant::FactorVae | Variant::MogFactorVae => Objective::FactorVae { gamma: self.gamma },
            Variant::BfVae0 => Objective::BfVae0 { gamma: self.gamma, eta: reg * self.eta },
            Variant::BfVae1 => Objective::BfVae1 { gamma: self.gamma, hyper_kl_scale: hyper },
            Variant::BfVae2 => Objective::BfVae2 {
                gamma: self.gamma,
                eta_s: reg * self.eta_s,
                eta_h: reg * self.eta_h,
                hyper_kl_scale: hyper,
            },
        }
    }

    /// Errors unless the device override, if any, names the CPU.
    pub fn check_device() -> Result<()> {
        match std::env::var(DEVICE_ENV) {
            Ok(d) if d != "cpu" => Err(Error::Config(format!("{DEVICE_ENV}={d}: only the cpu device is available"))),
            _ => Ok(()),
        }
    }
}
