//! Layer specifications and their batched forward/backward kernels.
//!
//! Parameters of a layer live in one flat tensor: weights first, then the
//! bias (if any).
//!
//! | kind              | weight layout                |
//! |-------------------|------------------------------|
//! | `Dense`           | `[out, in]`                  |
//! | `Conv2D`          | `[out_c, in_c, kh, kw]`      |
//! | `ConvTranspose2D` | `[in_c, out_c, kh, kw]`      |
//!
//! `ConvTranspose2D` is the input-gradient of the `Conv2D` that maps its
//! output back to its input, so both share the same im2col machinery.

use std::fmt;

use crate::error::{Error, Result};

/// Geometry of a (transposed) convolution. `in_h`/`in_w` are the spatial
/// dimensions of the layer's *input*.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    /// Square kernel helper.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            in_h,
            in_w,
        }
    }

    fn validate(&self, transposed: bool) -> Result<()> {
        let g = self;
        if g.in_channels == 0
            || g.out_channels == 0
            || g.kernel_h == 0
            || g.kernel_w == 0
            || g.stride == 0
            || g.in_h == 0
            || g.in_w == 0
        {
            return Err(Error::InvalidArgument(format!(
                "convolution dimensions must be positive: {g:?}"
            )));
        }
        if transposed {
            let h = (g.in_h - 1) * g.stride + g.kernel_h;
            let w = (g.in_w - 1) * g.stride + g.kernel_w;
            if h <= 2 * g.padding || w <= 2 * g.padding {
                return Err(Error::InvalidArgument(format!(
                    "transposed convolution output would be empty: {g:?}"
                )));
            }
        } else if g.in_h + 2 * g.padding < g.kernel_h || g.in_w + 2 * g.padding < g.kernel_w {
            return Err(Error::InvalidArgument(format!(
                "kernel larger than padded input: {g:?}"
            )));
        }
        Ok(())
    }

    fn conv_out(&self) -> (usize, usize) {
        (
            (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1,
            (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1,
        )
    }

    fn transposed_out(&self) -> (usize, usize) {
        (
            (self.in_h - 1) * self.stride + self.kernel_h - 2 * self.padding,
            (self.in_w - 1) * self.stride + self.kernel_w - 2 * self.padding,
        )
    }

    /// The forward convolution whose input-gradient this transposed
    /// convolution computes.
    fn dual(&self) -> Im2Col {
        let (oh, ow) = self.transposed_out();
        Im2Col {
            channels: self.out_channels,
            h: oh,
            w: ow,
            kh: self.kernel_h,
            kw: self.kernel_w,
            stride: self.stride,
            pad: self.padding,
            oh: self.in_h,
            ow: self.in_w,
        }
    }

    fn forward_cols(&self) -> Im2Col {
        let (oh, ow) = self.conv_out();
        Im2Col {
            channels: self.in_channels,
            h: self.in_h,
            w: self.in_w,
            kh: self.kernel_h,
            kw: self.kernel_w,
            stride: self.stride,
            pad: self.padding,
            oh,
            ow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2D,
    ConvTranspose2D,
    ReLU,
    Sigmoid,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Dense => 1,
            LayerKind::Conv2D => 2,
            LayerKind::ConvTranspose2D => 3,
            LayerKind::ReLU => 4,
            LayerKind::Sigmoid => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Dense,
            2 => LayerKind::Conv2D,
            3 => LayerKind::ConvTranspose2D,
            4 => LayerKind::ReLU,
            5 => LayerKind::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2D {
        geometry: ConvGeometry,
        bias: bool,
    },
    ConvTranspose2D {
        geometry: ConvGeometry,
        bias: bool,
    },
    ReLU,
    Sigmoid,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { inputs, outputs, .. } => write!(f, "Dense({inputs}->{outputs})"),
            LayerSpec::Conv2D { geometry: g, .. } => write!(
                f,
                "Conv2D({}->{}, k{}x{}, s{}, p{}, in {}x{})",
                g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding, g.in_h, g.in_w
            ),
            LayerSpec::ConvTranspose2D { geometry: g, .. } => write!(
                f,
                "ConvTranspose2D({}->{}, k{}x{}, s{}, p{}, in {}x{})",
                g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding, g.in_h, g.in_w
            ),
            LayerSpec::ReLU => write!(f, "ReLU"),
            LayerSpec::Sigmoid => write!(f, "Sigmoid"),
        }
    }
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense {
            inputs,
            outputs,
            bias: true,
        }
    }

    pub fn conv(geometry: ConvGeometry) -> Self {
        LayerSpec::Conv2D {
            geometry,
            bias: true,
        }
    }

    pub fn conv_transpose(geometry: ConvGeometry) -> Self {
        LayerSpec::ConvTranspose2D {
            geometry,
            bias: true,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Conv2D { .. } => LayerKind::Conv2D,
            LayerSpec::ConvTranspose2D { .. } => LayerKind::ConvTranspose2D,
            LayerSpec::ReLU => LayerKind::ReLU,
            LayerSpec::Sigmoid => LayerKind::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Dense { inputs, outputs, .. } if *inputs == 0 || *outputs == 0 => Err(
                Error::InvalidArgument(format!("dense layer needs positive widths: {self}")),
            ),
            LayerSpec::Conv2D { geometry, .. } => geometry.validate(false),
            LayerSpec::ConvTranspose2D { geometry, .. } => geometry.validate(true),
            _ => Ok(()),
        }
    }

    pub fn has_params(&self) -> bool {
        self.param_count() > 0
    }

    pub fn weight_count(&self) -> usize {
        match self {
            LayerSpec::Dense { inputs, outputs, .. } => inputs * outputs,
            LayerSpec::Conv2D { geometry: g, .. } | LayerSpec::ConvTranspose2D { geometry: g, .. } => {
                g.in_channels * g.out_channels * g.kernel_h * g.kernel_w
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match self {
            LayerSpec::Dense {
                outputs, bias: true, ..
            } => *outputs,
            LayerSpec::Conv2D {
                geometry: g,
                bias: true,
            }
            | LayerSpec::ConvTranspose2D {
                geometry: g,
                bias: true,
            } => g.out_channels,
            _ => 0,
        }
    }

    /// `p_k`: weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// `(d_in, d_out)` used for sparsity allocation. Convolutions count the
    /// receptive field on the input side; biases are excluded.
    pub fn fan_dims(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Dense { inputs, outputs, .. } => Some((*inputs, *outputs)),
            LayerSpec::Conv2D { geometry: g, .. } | LayerSpec::ConvTranspose2D { geometry: g, .. } => {
                Some((g.in_channels * g.kernel_h * g.kernel_w, g.out_channels))
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid => None,
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        self.fan_dims().map(|(d, _)| d).unwrap_or(1)
    }

    /// Flattened per-item input length; `None` for shape-preserving layers.
    pub fn input_len(&self) -> Option<usize> {
        self.input_shape().map(|s| s.iter().product())
    }

    pub fn input_shape(&self) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, .. } => Some(vec![*inputs]),
            LayerSpec::Conv2D { geometry: g, .. } | LayerSpec::ConvTranspose2D { geometry: g, .. } => {
                Some(vec![g.in_channels, g.in_h, g.in_w])
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid => None,
        }
    }

    /// Per-item output shape; `None` for shape-preserving layers.
    pub fn output_shape(&self) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Dense { outputs, .. } => Some(vec![*outputs]),
            LayerSpec::Conv2D { geometry: g, .. } => {
                let (h, w) = g.conv_out();
                Some(vec![g.out_channels, h, w])
            }
            LayerSpec::ConvTranspose2D { geometry: g, .. } => {
                let (h, w) = g.transposed_out();
                Some(vec![g.out_channels, h, w])
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid => None,
        }
    }

    /// Dimension list stored in checkpoints.
    pub fn dims(&self) -> Vec<u32> {
        let d = |v: usize| v as u32;
        match self {
            LayerSpec::Dense {
                inputs,
                outputs,
                bias,
            } => vec![d(*inputs), d(*outputs), *bias as u32],
            LayerSpec::Conv2D { geometry: g, bias } | LayerSpec::ConvTranspose2D { geometry: g, bias } => vec![
                d(g.in_channels),
                d(g.out_channels),
                d(g.kernel_h),
                d(g.kernel_w),
                d(g.stride),
                d(g.padding),
                d(g.in_h),
                d(g.in_w),
                *bias as u32,
            ],
            LayerSpec::ReLU | LayerSpec::Sigmoid => Vec::new(),
        }
    }

    pub fn from_dims(kind: LayerKind, dims: &[u32]) -> Result<Self> {
        let bad = || Error::format("layer", format!("{kind:?} with dims {dims:?}"));
        let flag = |v: u32| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(bad()),
        };
        let spec = match kind {
            LayerKind::Dense => match dims {
                [i, o, b] => LayerSpec::Dense {
                    inputs: *i as usize,
                    outputs: *o as usize,
                    bias: flag(*b)?,
                },
                _ => return Err(bad()),
            },
            LayerKind::Conv2D | LayerKind::ConvTranspose2D => match dims {
                [ic, oc, kh, kw, s, p, h, w, b] => {
                    let geometry = ConvGeometry {
                        in_channels: *ic as usize,
                        out_channels: *oc as usize,
                        kernel_h: *kh as usize,
                        kernel_w: *kw as usize,
                        stride: *s as usize,
                        padding: *p as usize,
                        in_h: *h as usize,
                        in_w: *w as usize,
                    };
                    let bias = flag(*b)?;
                    if kind == LayerKind::Conv2D {
                        LayerSpec::Conv2D { geometry, bias }
                    } else {
                        LayerSpec::ConvTranspose2D { geometry, bias }
                    }
                }
                _ => return Err(bad()),
            },
            LayerKind::ReLU if dims.is_empty() => LayerSpec::ReLU,
            LayerKind::Sigmoid if dims.is_empty() => LayerSpec::Sigmoid,
            _ => return Err(bad()),
        };
        spec.validate().map_err(|e| Error::format("layer", e.to_string()))?;
        Ok(spec)
    }

    /// Forward pass over `batch` items stored contiguously in `x`.
    pub(crate) fn forward(&self, params: &[f32], x: &[f32], batch: usize) -> Vec<f32> {
        match self {
            LayerSpec::Dense { inputs, outputs, bias } => {
                let (w, b) = params.split_at(inputs * outputs);
                let mut y = vec![0.0f32; batch * outputs];
                for n in 0..batch {
                    let xn = &x[n * inputs..(n + 1) * inputs];
                    let yn = &mut y[n * outputs..(n + 1) * outputs];
                    for (o, yo) in yn.iter_mut().enumerate() {
                        let mut acc = dot(&w[o * inputs..(o + 1) * inputs], xn);
                        if *bias {
                            acc += b[o];
                        }
                        *yo = acc;
                    }
                }
                y
            }
            LayerSpec::Conv2D { geometry: g, bias } => {
                let cols = g.forward_cols();
                let (in_len, out_spatial, row) = (cols.input_len(), cols.oh * cols.ow, cols.row_len());
                let (w, b) = params.split_at(self.weight_count());
                let out_len = g.out_channels * out_spatial;
                let mut y = vec![0.0f32; batch * out_len];
                let mut col = vec![0.0f32; out_spatial * row];
                for n in 0..batch {
                    cols.im2col(&x[n * in_len..(n + 1) * in_len], &mut col);
                    let yn = &mut y[n * out_len..(n + 1) * out_len];
                    for o in 0..g.out_channels {
                        let wo = &w[o * row..(o + 1) * row];
                        let bo = if *bias { b[o] } else { 0.0 };
                        for pos in 0..out_spatial {
                            let mut acc = dot(wo, &col[pos * row..(pos + 1) * row]);
                            if *bias {
                                acc += bo;
                            }
                            yn[o * out_spatial + pos] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::ConvTranspose2D { geometry: g, bias } => {
                let cols = g.dual();
                let in_spatial = g.in_h * g.in_w;
                let in_len = g.in_channels * in_spatial;
                let out_len = cols.input_len();
                let out_spatial = cols.h * cols.w;
                let row = cols.row_len();
                let (w, b) = params.split_at(self.weight_count());
                let mut y = vec![0.0f32; batch * out_len];
                let mut col = vec![0.0f32; in_spatial * row];
                for n in 0..batch {
                    let xn = &x[n * in_len..(n + 1) * in_len];
                    col.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..g.in_channels {
                        let wc = &w[c * row..(c + 1) * row];
                        for pos in 0..in_spatial {
                            axpy(xn[c * in_spatial + pos], wc, &mut col[pos * row..(pos + 1) * row]);
                        }
                    }
                    let yn = &mut y[n * out_len..(n + 1) * out_len];
                    cols.col2im_add(&col, yn);
                    if *bias {
                        for (c, plane) in yn.chunks_exact_mut(out_spatial).enumerate() {
                            plane.iter_mut().for_each(|v| *v += b[c]);
                        }
                    }
                }
                y
            }
            LayerSpec::ReLU => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    /// Backward pass: returns `(grad_input, grad_params)` given the layer's
    /// input `x`, its output `y` and the upstream gradient `gy`.
    pub(crate) fn backward(
        &self,
        params: &[f32],
        x: &[f32],
        y: &[f32],
        gy: &[f32],
        batch: usize,
    ) -> (Vec<f32>, Vec<f32>) {
        match self {
            LayerSpec::Dense { inputs, outputs, bias } => {
                let (w, _) = params.split_at(inputs * outputs);
                let mut gx = vec![0.0f32; batch * inputs];
                let mut gp = vec![0.0f32; params.len()];
                let (gw, gb) = gp.split_at_mut(inputs * outputs);
                for n in 0..batch {
                    let xn = &x[n * inputs..(n + 1) * inputs];
                    let gxn = &mut gx[n * inputs..(n + 1) * inputs];
                    for o in 0..*outputs {
                        let g = gy[n * outputs + o];
                        if g == 0.0 {
                            continue;
                        }
                        axpy(g, &w[o * inputs..(o + 1) * inputs], gxn);
                        axpy(g, xn, &mut gw[o * inputs..(o + 1) * inputs]);
                        if *bias {
                            gb[o] += g;
                        }
                    }
                }
                (gx, gp)
            }
            LayerSpec::Conv2D { geometry: g, bias } => {
                let cols = g.forward_cols();
                let (in_len, out_spatial, row) = (cols.input_len(), cols.oh * cols.ow, cols.row_len());
                let out_len = g.out_channels * out_spatial;
                let (w, _) = params.split_at(self.weight_count());
                let mut gx = vec![0.0f32; batch * in_len];
                let mut gp = vec![0.0f32; params.len()];
                let (gw, gb) = gp.split_at_mut(self.weight_count());
                let mut col = vec![0.0f32; out_spatial * row];
                let mut gcol = vec![0.0f32; out_spatial * row];
                for n in 0..batch {
                    cols.im2col(&x[n * in_len..(n + 1) * in_len], &mut col);
                    gcol.iter_mut().for_each(|v| *v = 0.0);
                    let gyn = &gy[n * out_len..(n + 1) * out_len];
                    for o in 0..g.out_channels {
                        let wo = &w[o * row..(o + 1) * row];
                        for pos in 0..out_spatial {
                            let gv = gyn[o * out_spatial + pos];
                            if gv == 0.0 {
                                continue;
                            }
                            axpy(gv, &col[pos * row..(pos + 1) * row], &mut gw[o * row..(o + 1) * row]);
                            axpy(gv, wo, &mut gcol[pos * row..(pos + 1) * row]);
                            if *bias {
                                gb[o] += gv;
                            }
                        }
                    }
                    cols.col2im_add(&gcol, &mut gx[n * in_len..(n + 1) * in_len]);
                }
                (gx, gp)
            }
            LayerSpec::ConvTranspose2D { geometry: g, bias } => {
                let cols = g.dual();
                let in_spatial = g.in_h * g.in_w;
                let in_len = g.in_channels * in_spatial;
                let out_len = cols.input_len();
                let out_spatial = cols.h * cols.w;
                let row = cols.row_len();
                let (w, _) = params.split_at(self.weight_count());
                let mut gx = vec![0.0f32; batch * in_len];
                let mut gp = vec![0.0f32; params.len()];
                let (gw, gb) = gp.split_at_mut(self.weight_count());
                let mut gcol = vec![0.0f32; in_spatial * row];
                for n in 0..batch {
                    let gyn = &gy[n * out_len..(n + 1) * out_len];
                    cols.im2col(gyn, &mut gcol);
                    let xn = &x[n * in_len..(n + 1) * in_len];
                    let gxn = &mut gx[n * in_len..(n + 1) * in_len];
                    for c in 0..g.in_channels {
                        let wc = &w[c * row..(c + 1) * row];
                        for pos in 0..in_spatial {
                            let grow = &gcol[pos * row..(pos + 1) * row];
                            gxn[c * in_spatial + pos] = dot(wc, grow);
                            let xv = xn[c * in_spatial + pos];
                            if xv != 0.0 {
                                axpy(xv, grow, &mut gw[c * row..(c + 1) * row]);
                            }
                        }
                    }
                    if *bias {
                        for (c, plane) in gyn.chunks_exact(out_spatial).enumerate() {
                            gb[c] += plane.iter().sum::<f32>();
                        }
                    }
                }
                (gx, gp)
            }
            LayerSpec::ReLU => {
                let gx = x
                    .iter()
                    .zip(gy)
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                (gx, Vec::new())
            }
            LayerSpec::Sigmoid => {
                let gx = y.iter().zip(gy).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                (gx, Vec::new())
            }
        }
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Unrolled 8-lane dot product; lane order is fixed so results are
/// reproducible.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Patch extraction for a plain convolution over one item, laid out as
/// `[out_pos, channel * kh * kw]` so each output position is a contiguous row.
#[derive(Debug, Clone, Copy)]
struct Im2Col {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Im2Col {
    fn input_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    fn row_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some(iy as usize * self.w + ix as usize)
        }
    }

    fn im2col(&self, x: &[f32], col: &mut [f32]) {
        let row = self.row_len();
        let plane = self.h * self.w;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let r = &mut col[(oy * self.ow + ox) * row..][..row];
                let mut k = 0;
                for c in 0..self.channels {
                    let xc = &x[c * plane..(c + 1) * plane];
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            r[k] = match self.source(oy, ox, ky, kx) {
                                Some(i) => xc[i],
                                None => 0.0,
                            };
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f32], x: &mut [f32]) {
        let row = self.row_len();
        let plane = self.h * self.w;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let r = &col[(oy * self.ow + ox) * row..][..row];
                let mut k = 0;
                for c in 0..self.channels {
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            if let Some(i) = self.source(oy, ox, ky, kx) {
                                x[c * plane + i] += r[k];
                            }
                            k += 1;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_sigmoid_definitions() {
        assert_eq!(LayerSpec::ReLU.forward(&[], &[-1.0, 2.0], 1), vec![0.0, 2.0]);
        assert_eq!(LayerSpec::Sigmoid.forward(&[], &[0.0], 1), vec![0.5]);
    }

    #[test]
    fn identity_dense_is_exact() {
        let spec = LayerSpec::dense(3, 3);
        let mut params = vec![0.0f32; 12];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let x = [0.1f32, -7.25, 3.3e-5];
        assert_eq!(spec.forward(&params, &x, 1), x.to_vec());
    }

    #[test]
    fn param_counts() {
        let d = LayerSpec::Dense {
            inputs: 4,
            outputs: 4,
            bias: false,
        };
        assert_eq!(d.param_count(), 16);
        let c = LayerSpec::conv(ConvGeometry::new(3, 8, 4, 2, 1, 16, 16));
        assert_eq!(c.param_count(), 3 * 8 * 16 + 8);
        assert_eq!(c.output_shape(), Some(vec![8, 8, 8]));
        let t = LayerSpec::conv_transpose(ConvGeometry::new(16, 8, 4, 2, 1, 4, 4));
        assert_eq!(t.output_shape(), Some(vec![8, 8, 8]));
        assert_eq!(LayerSpec::ReLU.param_count(), 0);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 3,
            kernel_h: 3,
            kernel_w: 2,
            stride: 2,
            padding: 1,
            in_h: 5,
            in_w: 4,
        };
        let spec = LayerSpec::conv(g);
        let params: Vec<f32> = (0..spec.param_count()).map(|i| ((i * 7 % 11) as f32 - 5.0) / 8.0).collect();
        let x: Vec<f32> = (0..2 * 5 * 4).map(|i| ((i * 5 % 13) as f32) / 13.0).collect();
        let y = spec.forward(&params, &x, 1);
        let [c, oh, ow]: [usize; 3] = spec.output_shape().unwrap().try_into().unwrap();
        assert_eq!(y.len(), c * oh * ow);
        for o in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = params[spec.weight_count() + o] as f64;
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..2 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                    continue;
                                }
                                let wv = params[((o * 2 + ci) * 3 + ky) * 2 + kx] as f64;
                                acc += wv * x[ci * 20 + iy as usize * 4 + ix as usize] as f64;
                            }
                        }
                    }
                    let got = y[(o * oh + oy) * ow + ox] as f64;
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn dims_round_trip() {
        let specs = [
            LayerSpec::dense(5, 7),
            LayerSpec::conv(ConvGeometry::new(3, 8, 4, 2, 1, 16, 16)),
            LayerSpec::conv_transpose(ConvGeometry::new(16, 8, 4, 2, 1, 4, 4)),
            LayerSpec::ReLU,
            LayerSpec::Sigmoid,
        ];
        for s in specs {
            assert_eq!(LayerSpec::from_dims(s.kind(), &s.dims()).unwrap(), s);
        }
        assert!(LayerSpec::from_dims(LayerKind::Dense, &[1, 2]).is_err());
        assert!(LayerSpec::from_dims(LayerKind::Dense, &[1, 2, 7]).is_err());
        assert!(LayerSpec::from_dims(LayerKind::ReLU, &[1]).is_err());
    }
}
