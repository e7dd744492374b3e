use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::nn::layer::{ConvGeometry, LayerSpec};
use crate::nn::network::{check_chain, Network, Trace};
use crate::rng::{stream, Prng};
use crate::tensor::{f32s_to_le_bytes, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Encoder => "encoder",
            Side::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderConfig {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

/// Shape of the standard conv/dense autoencoder.
///
/// Each conv stage is a 4x4 kernel with stride 2 and padding 1, halving the
/// spatial size. The encoder is `conv stages -> Dense(hidden) -> Dense(bottleneck)`
/// and the decoder mirrors it, ending in a sigmoid so outputs stay in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub image_channels: usize,
    pub image_size: usize,
    pub conv_channels: Vec<usize>,
    pub hidden: usize,
    pub bottleneck: usize,
}

impl Topology {
    /// 16x16x3 images, two conv + two dense layers per side (~104k params).
    pub fn desk() -> Self {
        Self {
            image_channels: 3,
            image_size: 16,
            conv_channels: vec![8, 16],
            hidden: 128,
            bottleneck: 128,
        }
    }

    pub fn config(&self) -> Result<AutoencoderConfig> {
        let stages = self.conv_channels.len();
        if self.image_size == 0 || self.image_size % (1 << stages) != 0 || self.image_size >> stages == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {} is not divisible by 2^{stages}",
                self.image_size
            )));
        }
        if self.image_channels == 0 || self.hidden == 0 || self.bottleneck == 0 || self.conv_channels.contains(&0) {
            return Err(Error::InvalidArgument("topology widths must be positive".into()));
        }
        let mut encoder = Vec::new();
        let mut channels = self.image_channels;
        let mut size = self.image_size;
        for &c in &self.conv_channels {
            encoder.push(LayerSpec::conv(ConvGeometry::new(channels, c, 4, 2, 1, size, size)));
            encoder.push(LayerSpec::ReLU);
            channels = c;
            size /= 2;
        }
        let flat = channels * size * size;
        encoder.push(LayerSpec::dense(flat, self.hidden));
        encoder.push(LayerSpec::ReLU);
        encoder.push(LayerSpec::dense(self.hidden, self.bottleneck));

        let mut decoder = vec![
            LayerSpec::dense(self.bottleneck, self.hidden),
            LayerSpec::ReLU,
            LayerSpec::dense(self.hidden, flat),
            LayerSpec::ReLU,
        ];
        let outs: Vec<usize> = self
            .conv_channels
            .iter()
            .rev()
            .skip(1)
            .copied()
            .chain(std::iter::once(self.image_channels))
            .collect();
        for (i, &c) in outs.iter().enumerate() {
            decoder.push(LayerSpec::conv_transpose(ConvGeometry::new(channels, c, 4, 2, 1, size, size)));
            decoder.push(if i + 1 == outs.len() { LayerSpec::Sigmoid } else { LayerSpec::ReLU });
            channels = c;
            size *= 2;
        }
        if stages == 0 {
            decoder.pop();
            decoder.push(LayerSpec::Sigmoid);
        }
        Ok(AutoencoderConfig { encoder, decoder })
    }
}

/// Location of one parameterized layer in the canonical parameter order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSlot {
    /// Index in the concatenated encoder+decoder layer list.
    pub layer_id: usize,
    pub side: Side,
    pub spec: LayerSpec,
    /// Offset of this layer's first parameter in the canonical stream.
    pub offset: usize,
}

/// Encoder `f_theta` and decoder `g_phi` with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    encoder: Network,
    decoder: Network,
}

/// Output of a full encode/decode pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub semantics: Tensor,
    pub outcome: Tensor,
}

/// Gradients aligned with [`ModelParams`], plus those of the input and the
/// semantics.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
    pub semantics: Tensor,
    pub input: Tensor,
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.iter().chain(&self.decoder)
    }
}

pub fn build_autoencoder(config: &AutoencoderConfig, seed: u64) -> Result<ModelParams> {
    check_composition(&config.encoder, &config.decoder)?;
    let enc_in = config.encoder.iter().find_map(|l| l.input_shape()).unwrap();
    let dec_out = config.decoder.iter().rev().find_map(|l| l.output_shape()).unwrap();
    if enc_in.iter().product::<usize>() != dec_out.iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "decoder output {dec_out:?} does not match encoder input {enc_in:?}"
        )));
    }
    let mut rng = Prng::derive(seed, stream::INIT);
    let encoder = Network::init(config.encoder.clone(), &mut rng)?;
    let decoder = Network::init(config.decoder.clone(), &mut rng)?;
    ModelParams::new(encoder, decoder)
}

fn check_composition(encoder: &[LayerSpec], decoder: &[LayerSpec]) -> Result<()> {
    check_chain(encoder, 0)?;
    check_chain(decoder, encoder.len())?;
    let joined: Vec<LayerSpec> = encoder.iter().chain(decoder).copied().collect();
    check_chain(&joined, 0)
}

impl ModelParams {
    /// Any composable pair; only [`build_autoencoder`] insists that the
    /// decoder reproduces the input shape.
    pub fn new(encoder: Network, decoder: Network) -> Result<Self> {
        check_composition(encoder.layers(), decoder.layers())?;
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut Network {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Network {
        &mut self.decoder
    }

    pub fn into_parts(self) -> (Network, Network) {
        (self.encoder, self.decoder)
    }

    pub fn config(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            encoder: self.encoder.layers().to_vec(),
            decoder: self.decoder.layers().to_vec(),
        }
    }

    /// `N_E`
    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    /// `N_D`
    pub fn decoder_param_count(&self) -> usize {
        self.decoder.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_param_count()
    }

    /// Semantic width over raw input width.
    pub fn bandwidth_ratio(&self) -> f64 {
        self.encoder.output_len() as f64 / self.encoder.input_len() as f64
    }

    /// All layers, encoder first, with their global ids.
    pub fn layers(&self) -> impl Iterator<Item = (usize, Side, &LayerSpec)> {
        let enc = self.encoder.layers().iter().map(|l| (Side::Encoder, l));
        let dec = self.decoder.layers().iter().map(|l| (Side::Decoder, l));
        enc.chain(dec).enumerate().map(|(i, (s, l))| (i, s, l))
    }

    pub fn layer_count(&self) -> usize {
        self.encoder.layers().len() + self.decoder.layers().len()
    }

    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut offset = 0;
        self.layers()
            .filter(|(_, _, l)| l.has_params())
            .map(|(layer_id, side, spec)| {
                let slot = ParamSlot {
                    layer_id,
                    side,
                    spec: *spec,
                    offset,
                };
                offset += spec.param_count();
                slot
            })
            .collect()
    }

    /// Parameter tensors in canonical order (encoder, then decoder).
    pub fn param_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.params().iter().chain(self.decoder.params())
    }

    pub fn param_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder.params_mut().iter_mut().chain(self.decoder.params_mut().iter_mut())
    }

    /// Parameter tensor of the `slot`-th parameterized layer.
    pub fn slot_tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        let ne = self.encoder.params().len();
        if slot < ne {
            &mut self.encoder.params_mut()[slot]
        } else {
            &mut self.decoder.params_mut()[slot - ne]
        }
    }

    /// Little-endian `f32` stream of every parameter, layer order, row-major.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 4);
        for t in self.param_tensors() {
            out.extend_from_slice(&f32s_to_le_bytes(t.data()));
        }
        out
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.encoder.layers() == other.encoder.layers() && self.decoder.layers() == other.decoder.layers()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        let semantics = self.encoder.forward(x)?;
        let outcome = self.decoder.forward(&semantics)?;
        Ok(Forward { semantics, outcome })
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, semantics: &Tensor) -> Result<Tensor> {
        self.decoder.forward(semantics)
    }

    pub fn is_autoencoder(&self) -> bool {
        self.encoder.input_len() == self.decoder.output_len()
    }

    /// Outcome reshaped like the input.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)?.outcome.reshape(x.shape().to_vec())
    }
}

/// Records one forward pass so that a later [`Graph::backward`] can
/// differentiate it.
#[derive(Debug, Default)]
pub struct Graph {
    recorded: Option<(Trace, Trace, Vec<usize>)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, model: &ModelParams, x: &Tensor) -> Result<Forward> {
        let enc = model.encoder.forward_traced(x)?;
        let dec = model.decoder.forward_traced(enc.output())?;
        let fwd = Forward {
            semantics: enc.output().clone(),
            outcome: dec.output().clone(),
        };
        self.recorded = Some((enc, dec, x.shape().to_vec()));
        Ok(fwd)
    }

    /// Consumes the recorded pass; a second call without a new forward fails.
    pub fn backward(&mut self, model: &ModelParams, grad_outcome: &Tensor) -> Result<Gradients> {
        let (enc, dec, in_shape) = self.recorded.take().ok_or(Error::NoForward)?;
        let grad_outcome = grad_outcome.clone().reshape(dec.output().shape().to_vec())?;
        let dg = model.decoder.backward(&dec, &grad_outcome)?;
        let eg = model.encoder.backward(&enc, &dg.input)?;
        Ok(Gradients {
            encoder: eg.params,
            decoder: dg.params,
            semantics: dg.input,
            input: eg.input.reshape(in_shape)?,
        })
    }
}
