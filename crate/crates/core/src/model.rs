//! 1-D convolutional autoencoder for residual frames.
//!
//! Encoder: channel change, bottleneck stages, strided downsampling, more
//! bottleneck stages, channel change to a single code channel. The decoder
//! mirrors it, upsampling with a convolution followed by a sub-pixel
//! shuffle (halving the channels). With two downsampling stages the extra
//! decoder stage uses a nearest-neighbour repeat instead, so the decoder
//! still ends with the halved channel count.

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId, ParamId, ParamStore, Tensor};
use crate::config::CodecConfig;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid stage count {0}")]
    StageCount(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

/// Residual block `x + conv(act(conv(act(conv(x)))))` through a narrow bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub convs: [ConvLayer; 3],
}

#[derive(Debug, Clone, PartialEq)]
enum Upsample {
    SubPixel,
    Repeat,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    /// Convolution followed by the hidden activation.
    Conv(ConvLayer),
    /// Convolution without activation (code and output layers).
    Linear(ConvLayer),
    Block(Bottleneck),
    Up(ConvLayer, Upsample),
}

/// Parameter handles of one autoencoder; values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub prefix: String,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    slope: f64,
}

/// Output shape of every named layer for a zero input.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

struct Builder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    kernel: usize,
    gain: f64,
    prefix: String,
}

impl<R: Rng> Builder<'_, R> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> ConvLayer {
        let fan_in = (self.kernel * cin) as f64;
        let bound = (self.gain / fan_in).sqrt();
        let w: Vec<f64> = (0..self.kernel * cin * cout).map(|_| self.rng.random_range(-bound..bound)).collect();
        let full = format!("{}.{name}", self.prefix);
        let w = self
            .store
            .insert(format!("{full}.w"), Tensor::new(vec![self.kernel, cin, cout], w).expect("sized"));
        let b = self.store.insert(format!("{full}.b"), Tensor::zeros(vec![cout]));
        ConvLayer { name: full, w, b, stride }
    }

    fn block(&mut self, name: &str, c: usize, bottleneck: usize) -> Bottleneck {
        Bottleneck {
            convs: [
                self.conv(&format!("{name}.0"), c, bottleneck, 1),
                self.conv(&format!("{name}.1"), bottleneck, bottleneck, 1),
                self.conv(&format!("{name}.2"), bottleneck, c, 1),
            ],
        }
    }
}

impl Autoencoder {
    /// Registers fresh parameters under `prefix` (fan-in scaled uniform
    /// weights, zero biases).
    pub fn build<R: Rng>(
        cfg: &CodecConfig,
        store: &mut ParamStore,
        prefix: &str,
        init_gain: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if !(1..=2).contains(&cfg.n_downsample_stages) {
            return Err(ModelError::StageCount(cfg.n_downsample_stages));
        }
        let (c, bn) = (cfg.channels, cfg.bottleneck_channels);
        let half = c / 2;
        let mut b =
            Builder { store, rng, kernel: cfg.kernel_width, gain: init_gain, prefix: prefix.to_string() };
        let stage = |b: &mut Builder<R>, name: &str, ch: usize| -> Vec<Layer> {
            (0..cfg.blocks_per_stage).map(|k| Layer::Block(b.block(&format!("{name}.{k}"), ch, bn))).collect()
        };

        let mut encoder = vec![Layer::Conv(b.conv("enc.in", 1, c, 1))];
        encoder.extend(stage(&mut b, "enc.stage0", c));
        encoder.push(Layer::Conv(b.conv("enc.down0", c, c, 2)));
        if cfg.n_downsample_stages == 2 {
            encoder.push(Layer::Conv(b.conv("enc.down1", c, c, 2)));
        }
        encoder.extend(stage(&mut b, "enc.stage1", c));
        encoder.push(Layer::Linear(b.conv("enc.code", c, 1, 1)));

        let mut decoder = vec![Layer::Conv(b.conv("dec.in", 1, c, 1))];
        decoder.extend(stage(&mut b, "dec.stage0", c));
        if cfg.n_downsample_stages == 2 {
            decoder.push(Layer::Up(b.conv("dec.up1", c, c, 1), Upsample::Repeat));
        }
        decoder.push(Layer::Up(b.conv("dec.up0", c, c, 1), Upsample::SubPixel));
        decoder.extend(stage(&mut b, "dec.stage1", half));
        decoder.push(Layer::Linear(b.conv("dec.out", half, 1, 1)));

        Ok(Self { prefix: prefix.to_string(), encoder, decoder, slope: cfg.leaky_slope })
    }

    /// Re-binds to parameters already present in `store` (e.g. after loading).
    pub fn attach(cfg: &CodecConfig, store: &ParamStore, prefix: &str) -> Result<Self, ModelError> {
        // Build against a scratch store to learn the layout, then look names up.
        let mut scratch = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let layout = Self::build(cfg, &mut scratch, prefix, 1.0, &mut rng)?;
        let remap = |id: ParamId| -> Result<ParamId, ModelError> {
            let name = scratch.name(id);
            let found = store
                .find(name)
                .ok_or_else(|| GraphError::Shape(format!("missing parameter {name}")))?;
            if store.get(found).shape() != scratch.get(id).shape() {
                return Err(GraphError::Shape(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    store.get(found).shape(),
                    scratch.get(id).shape()
                ))
                .into());
            }
            Ok(found)
        };
        let fix = |l: &ConvLayer| -> Result<ConvLayer, ModelError> {
            Ok(ConvLayer { name: l.name.clone(), w: remap(l.w)?, b: remap(l.b)?, stride: l.stride })
        };
        let fix_layer = |l: &Layer| -> Result<Layer, ModelError> {
            Ok(match l {
                Layer::Conv(c) => Layer::Conv(fix(c)?),
                Layer::Linear(c) => Layer::Linear(fix(c)?),
                Layer::Block(bk) => Layer::Block(Bottleneck {
                    convs: [fix(&bk.convs[0])?, fix(&bk.convs[1])?, fix(&bk.convs[2])?],
                }),
                Layer::Up(c, u) => Layer::Up(fix(c)?, u.clone()),
            })
        };
        Ok(Self {
            prefix: layout.prefix.clone(),
            encoder: layout.encoder.iter().map(fix_layer).collect::<Result<_, _>>()?,
            decoder: layout.decoder.iter().map(fix_layer).collect::<Result<_, _>>()?,
            slope: layout.slope,
        })
    }

    /// All parameter handles of this autoencoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            match layer {
                Layer::Conv(c) | Layer::Linear(c) | Layer::Up(c, _) => out.extend([c.w, c.b]),
                Layer::Block(b) => b.convs.iter().for_each(|c| out.extend([c.w, c.b])),
            }
        }
        out
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).len()).sum()
    }

    fn conv(g: &mut Graph, c: &ConvLayer, x: NodeId) -> Result<NodeId, GraphError> {
        let (w, b) = (g.param(c.w), g.param(c.b));
        g.conv1d(x, w, b, c.stride)
    }

    fn run(&self, g: &mut Graph, layers: &[Layer], mut x: NodeId, trace: &mut Option<ShapeTrace>) -> Result<NodeId, GraphError> {
        for layer in layers {
            let name;
            x = match layer {
                Layer::Conv(c) => {
                    name = c.name.clone();
                    let y = Self::conv(g, c, x)?;
                    g.leaky_relu(y, self.slope)
                }
                Layer::Linear(c) => {
                    name = c.name.clone();
                    Self::conv(g, c, x)?
                }
                Layer::Block(b) => {
                    name = b.convs[0].name.trim_end_matches(".0").to_string();
                    let h = Self::conv(g, &b.convs[0], x)?;
                    let h = g.leaky_relu(h, self.slope);
                    let h = Self::conv(g, &b.convs[1], h)?;
                    let h = g.leaky_relu(h, self.slope);
                    let h = Self::conv(g, &b.convs[2], h)?;
                    g.add(x, h)?
                }
                Layer::Up(c, kind) => {
                    name = c.name.clone();
                    let y = Self::conv(g, c, x)?;
                    let y = match kind {
                        Upsample::SubPixel => g.subpixel_upsample(y)?,
                        Upsample::Repeat => g.repeat_upsample(y)?,
                    };
                    g.leaky_relu(y, self.slope)
                }
            };
            if let Some(t) = trace.as_mut() {
                t.push((name, g.value(x).shape().to_vec()));
            }
        }
        Ok(x)
    }

    /// `(512, 1)` waveform to `(code_width, 1)` code.
    pub fn encode(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, GraphError> {
        self.run(g, &self.encoder, x, &mut None)
    }

    /// `(code_width, 1)` code back to a `(512, 1)` waveform.
    pub fn decode(&self, g: &mut Graph, code: NodeId) -> Result<NodeId, GraphError> {
        self.run(g, &self.decoder, code, &mut None)
    }

    /// Layer-by-layer output shapes for a zero frame of `width` samples.
    pub fn trace_shapes(&self, store: &ParamStore, width: usize) -> Result<(ShapeTrace, ShapeTrace), GraphError> {
        let mut g = Graph::new(store);
        let x = g.input(Tensor::zeros(vec![width, 1]));
        let mut enc = Some(Vec::new());
        let code = self.run(&mut g, &self.encoder, x, &mut enc)?;
        let mut dec = Some(Vec::new());
        self.run(&mut g, &self.decoder, code, &mut dec)?;
        Ok((enc.unwrap_or_default(), dec.unwrap_or_default()))
    }
}
