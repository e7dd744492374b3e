//! `.zfm` model checkpoints.
//!
//! ```text
//! magic "ZFDM" | version u16 = 1 | layer-count u32
//! per layer: kind u8 | dim-count u8 | dims u32[] | param-count u64 | params f32[]
//! ```
//!
//! Encoder layers come first. Decoder layers carry [`DECODER_FLAG`] in their
//! kind byte. Conv dims are `[in_c, out_c, kh, kw, stride, pad, in_h, in_w, bias]`,
//! dense dims `[in, out, bias]`, activations have none. All integers are
//! little-endian and the concatenated param bytes equal
//! [`ModelParams::canonical_bytes`].

use std::path::Path;

use crate::bytes::ByteReader;
use crate::error::{Error, Result};
use crate::nn::layer::{LayerKind, LayerSpec};
use crate::nn::model::ModelParams;
use crate::nn::network::Network;
use crate::tensor::{f32s_to_le_bytes, Tensor};

pub const MAGIC: &[u8; 4] = b"ZFDM";
pub const VERSION: u16 = 1;
pub const DECODER_FLAG: u8 = 0x80;

pub fn to_bytes(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layer_count() as u32).to_le_bytes());
    let mut params = model.param_tensors();
    for (_, side, spec) in model.layers() {
        let mut code = spec.kind().code();
        if side == crate::nn::Side::Decoder {
            code |= DECODER_FLAG;
        }
        let dims = spec.dims();
        out.push(code);
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(spec.param_count() as u64).to_le_bytes());
        if spec.has_params() {
            let t = params.next().expect("one tensor per parameterized layer");
            out.extend_from_slice(&f32s_to_le_bytes(t.data()));
        }
    }
    out
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    const KIND: &str = "checkpoint";
    let mut r = ByteReader::new(buf, KIND);
    if r.take(4)? != MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut sides: [(Vec<LayerSpec>, Vec<Tensor>); 2] = Default::default();
    let mut in_decoder = false;
    for i in 0..count {
        let code = r.u8()?;
        let decoder = code & DECODER_FLAG != 0;
        if in_decoder && !decoder {
            return Err(Error::format(KIND, format!("encoder layer {i} after decoder layers")));
        }
        in_decoder |= decoder;
        let kind = LayerKind::from_code(code & !DECODER_FLAG)
            .ok_or_else(|| Error::format(KIND, format!("unknown kind code {code:#04x} at layer {i}")))?;
        let ndims = r.u8()? as usize;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let spec = LayerSpec::from_dims(kind, &dims)?;
        let pcount = r.u64()?;
        if pcount != spec.param_count() as u64 {
            return Err(Error::format(
                KIND,
                format!("layer {i} ({spec}) declares {pcount} params, expected {}", spec.param_count()),
            ));
        }
        let side = &mut sides[decoder as usize];
        side.0.push(spec);
        if pcount > 0 {
            let values = r.f32s(pcount)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(KIND, format!("non-finite parameter in layer {i}")));
            }
            side.1.push(Tensor::from_vec(values)?);
        }
    }
    r.finish()?;
    let [(enc_layers, enc_params), (dec_layers, dec_params)] = sides;
    if enc_layers.is_empty() || dec_layers.is_empty() {
        return Err(Error::format(KIND, "encoder and decoder must both be present"));
    }
    let wrap = |e: Error| Error::format(KIND, e.to_string());
    let encoder = Network::new(enc_layers, enc_params).map_err(wrap)?;
    let decoder = Network::new(dec_layers, dec_params).map_err(wrap)?;
    ModelParams::new(encoder, decoder).map_err(wrap)
}

pub fn write_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
