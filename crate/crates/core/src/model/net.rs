//! Encoder/decoder and discriminator networks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, ConvGeometry, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Log-std outputs of the encoder are clamped into this range.
pub const LOG_STD_RANGE: (f64, f64) = (-6.0, 4.0);

/// Slope of the discriminator's leaky rectifiers.
pub const DISC_LEAK: f64 = 0.2;

/// Observation layout: `channels × height × width`, flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer layout of the encoder; the decoder mirrors it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// Dense layers with the given hidden widths (possibly none).
    Mlp { hidden: Vec<usize> },
    /// Stride-2, 4×4 convolutions with the given channel counts, followed by
    /// one dense hidden layer.
    Conv { channels: Vec<usize>, hidden: usize },
}

impl Architecture {
    /// Two convolutions and two dense layers, for small images.
    pub fn desk() -> Self {
        Architecture::Conv { channels: vec![16, 32], hidden: 64 }
    }

    /// Layout for 64 × 64 inputs: four convolutions and a 128-wide dense layer.
    pub fn full64() -> Self {
        Architecture::Conv { channels: vec![32, 32, 64, 64], hidden: 128 }
    }
}

/// `mlp:256,128`, `mlp:` (no hidden layer) or `conv:16,32/64`
/// (channels, then the dense width).
impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Architecture::Mlp { hidden } => write!(f, "mlp:{}", join(hidden)),
            Architecture::Conv { channels, hidden } => write!(f, "conv:{}/{hidden}", join(channels)),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Also accepts the preset names `desk` and `full64`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse architecture {s:?}"));
        let list = |t: &str| -> Result<Vec<usize>> {
            t.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse().map_err(|_| bad())).collect()
        };
        match s.trim() {
            "desk" => return Ok(Architecture::desk()),
            "full64" => return Ok(Architecture::full64()),
            _ => {}
        }
        let (kind, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        match kind {
            "mlp" => Ok(Architecture::Mlp { hidden: list(rest)? }),
            "conv" => {
                let (ch, hidden) = rest.split_once('/').ok_or_else(bad)?;
                let channels = list(ch)?;
                if channels.is_empty() {
                    return Err(bad());
                }
                Ok(Architecture::Conv { channels, hidden: hidden.trim().parse().map_err(|_| bad())? })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(rng, vec![fan_in, fan_out], bound);
        let b = uniform(rng, vec![fan_out], bound);
        Self { w: store.add(format!("{name}.weight"), w), b: store.add(format!("{name}.bias"), b) }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        g.add_row(y, p[self.b])
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    geom: ConvGeometry,
    transpose: bool,
}

impl ConvLayer {
    /// Convolution reading `geom`'s image into `c_out` channels.
    fn conv(store: &mut ParamStore, name: &str, geom: ConvGeometry, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (geom.patch_len() as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, vec![c_out, geom.patch_len()], bound));
        let b = store.add(format!("{name}.bias"), uniform(rng, vec![c_out], bound));
        Self { w, b, geom, transpose: false }
    }

    /// Transposed convolution from `c_in` channels up to `geom`'s image.
    fn conv_t(store: &mut ParamStore, name: &str, geom: ConvGeometry, c_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((c_in * geom.kernel * geom.kernel) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, vec![c_in, geom.patch_len()], bound));
        let b = store.add(format!("{name}.bias"), uniform(rng, vec![geom.channels], bound));
        Self { w, b, geom, transpose: true }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        if self.transpose {
            g.conv_transpose2d(x, p[self.w], p[self.b], self.geom)
        } else {
            g.conv2d(x, p[self.w], p[self.b], self.geom)
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Dense(Dense),
    Conv(ConvLayer),
}

impl Layer {
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        match self {
            Layer::Dense(d) => d.forward(g, p, x),
            Layer::Conv(c) => c.forward(g, p, x),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

fn run(layers: &[Layer], g: &mut Graph, p: &Bound, mut x: Var) -> Var {
    for (i, layer) in layers.iter().enumerate() {
        x = layer.forward(g, p, x);
        if i + 1 < layers.len() {
            x = g.leaky_relu(x, 0.0);
        }
    }
    x
}

/// Gaussian encoder `x ↦ (m(x), s(x))` and Bernoulli decoder `z ↦ θ(z)`.
///
/// Layer ids refer to the [`ParamStore`] passed at construction.
#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    image: ImageShape,
    latent_dim: usize,
    architecture: Architecture,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

impl EncoderDecoder {
    pub fn new(
        store: &mut ParamStore,
        image: ImageShape,
        latent_dim: usize,
        architecture: Architecture,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 || image.is_empty() {
            return Err(Error::Config("latent_dim and image size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        match &architecture {
            Architecture::Mlp { hidden } => {
                let mut widths = vec![image.len()];
                widths.extend(hidden);
                for (i, w) in widths.windows(2).enumerate() {
                    encoder.push(Layer::Dense(Dense::new(store, &format!("enc.fc{i}"), w[0], w[1], &mut rng)));
                }
                let last = *widths.last().unwrap();
                encoder.push(Layer::Dense(Dense::new(store, "enc.head", last, 2 * latent_dim, &mut rng)));

                let mut widths = vec![latent_dim];
                widths.extend(hidden.iter().rev());
                widths.push(image.len());
                for (i, w) in widths.windows(2).enumerate() {
                    decoder.push(Layer::Dense(Dense::new(store, &format!("dec.fc{i}"), w[0], w[1], &mut rng)));
                }
            }
            Architecture::Conv { channels, hidden } => {
                let factor = 1usize << channels.len();
                if channels.is_empty() || image.height % factor != 0 || image.width % factor != 0 {
                    return Err(Error::Config(format!(
                        "conv architecture with {} layers needs image sides divisible by {factor}, got {}x{}",
                        channels.len(),
                        image.height,
                        image.width
                    )));
                }
                let mut geoms = Vec::new();
                let (mut c, mut h, mut w) = (image.channels, image.height, image.width);
                for (i, &c_out) in channels.iter().enumerate() {
                    let geom = ConvGeometry { channels: c, height: h, width: w, kernel: 4, stride: 2, padding: 1 };
                    encoder.push(Layer::Conv(ConvLayer::conv(store, &format!("enc.conv{i}"), geom, c_out, &mut rng)));
                    geoms.push(geom);
                    c = c_out;
                    h /= 2;
                    w /= 2;
                }
                let flat = c * h * w;
                encoder.push(Layer::Dense(Dense::new(store, "enc.fc0", flat, *hidden, &mut rng)));
                encoder.push(Layer::Dense(Dense::new(store, "enc.head", *hidden, 2 * latent_dim, &mut rng)));

                decoder.push(Layer::Dense(Dense::new(store, "dec.fc0", latent_dim, *hidden, &mut rng)));
                decoder.push(Layer::Dense(Dense::new(store, "dec.fc1", *hidden, flat, &mut rng)));
                for (i, geom) in geoms.iter().enumerate().rev() {
                    let c_in = channels[i];
                    decoder.push(Layer::Conv(ConvLayer::conv_t(store, &format!("dec.deconv{i}"), *geom, c_in, &mut rng)));
                }
            }
        }
        Ok(Self { image, latent_dim, architecture, encoder, decoder })
    }

    pub fn image(&self) -> ImageShape {
        self.image
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    /// Encoder pass: returns `(mean, log_std)` with the log-std clamped.
    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let h = run(&self.encoder, g, p, x);
        let d = self.latent_dim;
        let mean = g.slice_cols(h, 0, d);
        let raw = g.slice_cols(h, d, 2 * d);
        let log_std = g.clamp(raw, LOG_STD_RANGE.0, LOG_STD_RANGE.1);
        (mean, log_std)
    }

    /// Decoder pass: per-pixel Bernoulli logits, `B × image.len()`.
    pub fn decode(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let out = run(&self.decoder, g, p, z);
        let b = g.value(out).rows();
        g.reshape(out, vec![b, self.image.len()])
    }
}

/// Density-ratio discriminator: latent vector ↦ scalar logit of
/// "drawn from the joint" versus "drawn from the product of marginals".
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub params: ParamStore,
    layers: Vec<Dense>,
    input_dim: usize,
}

impl Discriminator {
    /// `depth` hidden layers of `width` units with leaky rectifiers.
    pub fn new(input_dim: usize, width: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(&mut params, &format!("disc.fc{i}"), w[0], w[1], &mut rng))
            .collect();
        Self { params, layers, input_dim }
    }

    /// Four hidden layers of width 256.
    pub fn standard(input_dim: usize, seed: u64) -> Self {
        Self::new(input_dim, 256, 4, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Logits, one per row of `z`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let mut x = z;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x);
            if i + 1 < self.layers.len() {
                x = g.leaky_relu(x, DISC_LEAK);
            }
        }
        let b = g.value(x).rows();
        g.reshape(x, vec![b])
    }

    /// Logits for a batch without recording gradients.
    pub fn logits(&self, z: &Tensor) -> Vec<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &p, zv);
        g.value(out).data().to_vec()
    }
}
