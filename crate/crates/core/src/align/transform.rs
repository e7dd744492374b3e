use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Domain shift applied to every image of a domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    None,
    /// Rotation about the image centre, in degrees.
    Angle(f64),
    /// Two top corners pulled inward by this fraction of the width.
    Perspective(f64),
    /// `x' = 0.5 + c * (x - 0.5)`
    Contrast(f64),
    /// Hue rotation about the grey axis, in degrees.
    Hue(f64),
}

impl Transform {
    pub const DEFAULT_ANGLE: f64 = 30.0;
    pub const DEFAULT_PERSPECTIVE: f64 = 0.2;
    pub const DEFAULT_CONTRAST: f64 = 1.8;
    pub const DEFAULT_HUE: f64 = 60.0;

    /// The four domain shifts at their default strengths.
    pub fn defaults() -> [Transform; 4] {
        [
            Transform::Angle(Self::DEFAULT_ANGLE),
            Transform::Perspective(Self::DEFAULT_PERSPECTIVE),
            Transform::Contrast(Self::DEFAULT_CONTRAST),
            Transform::Hue(Self::DEFAULT_HUE),
        ]
    }

    /// Short name used in reports: `none`, `va`, `vp`, `vc`, `vh`.
    pub fn tag(&self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Angle(_) => "va",
            Transform::Perspective(_) => "vp",
            Transform::Contrast(_) => "vc",
            Transform::Hue(_) => "vh",
        }
    }

    fn parameter(&self) -> Option<f64> {
        match *self {
            Transform::None => None,
            Transform::Angle(a) | Transform::Perspective(a) | Transform::Contrast(a) | Transform::Hue(a) => Some(a),
        }
    }

    pub fn is_identity(&self) -> bool {
        match *self {
            Transform::None => true,
            Transform::Angle(a) | Transform::Hue(a) => a == 0.0,
            Transform::Perspective(f) => f == 0.0,
            Transform::Contrast(c) => c == 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.parameter() {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite {} parameter", self.tag())));
            }
        }
        if let Transform::Perspective(f) = *self {
            if !(0.0..0.5).contains(&f) {
                return Err(Error::InvalidArgument(format!("perspective shift {f} outside [0, 0.5)")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parameter() {
            None => f.write_str("none"),
            Some(p) => write!(f, "{}:{p}", self.tag()),
        }
    }
}

/// Parses `none`, `va:30`, `vp:0.2`, `vc:1.8`, `vh:60`; a bare tag uses the
/// default strength.
impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, value) = match s.split_once(':') {
            Some((t, v)) => (
                t.trim(),
                Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad transform parameter in {s:?}")))?,
                ),
            ),
            None => (s.trim(), None),
        };
        let t = match tag.to_ascii_lowercase().as_str() {
            "none" if value.is_none() => Transform::None,
            "va" => Transform::Angle(value.unwrap_or(Self::DEFAULT_ANGLE)),
            "vp" => Transform::Perspective(value.unwrap_or(Self::DEFAULT_PERSPECTIVE)),
            "vc" => Transform::Contrast(value.unwrap_or(Self::DEFAULT_CONTRAST)),
            "vh" => Transform::Hue(value.unwrap_or(Self::DEFAULT_HUE)),
            _ => return Err(Error::InvalidArgument(format!("unknown transform {s:?}"))),
        };
        t.validate()?;
        Ok(t)
    }
}

/// Applies `t` to one `[C, H, W]` image.
pub fn apply_transform(image: &[f32], shape: [usize; 3], t: Transform) -> Result<Vec<f32>> {
    t.validate()?;
    let [c, h, w] = shape;
    if image.len() != c * h * w {
        return Err(Error::Shape(format!("{} values for image {c}x{h}x{w}", image.len())));
    }
    if t.is_identity() {
        return Ok(image.to_vec());
    }
    Ok(match t {
        Transform::None => unreachable!(),
        Transform::Angle(deg) => {
            let (s, co) = deg.to_radians().sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            warp(image, c, h, w, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                (-s * dx + co * dy + cy, co * dx + s * dy + cx)
            })
        }
        Transform::Perspective(f) => {
            let inv = perspective_inverse(f, h, w)?;
            warp(image, c, h, w, |y, x| {
                let p = inv * SVector::<f64, 3>::new(x, y, 1.0);
                (p[1] / p[2], p[0] / p[2])
            })
        }
        Transform::Contrast(k) => image
            .iter()
            .map(|&x| (0.5 + k * (x as f64 - 0.5)).clamp(0.0, 1.0) as f32)
            .collect(),
        Transform::Hue(deg) => {
            if c != 3 {
                return Err(Error::Shape(format!("hue rotation needs 3 channels, got {c}")));
            }
            let m = hue_matrix(deg);
            let plane = h * w;
            let mut out = vec![0.0f32; image.len()];
            for i in 0..plane {
                let rgb = [image[i] as f64, image[plane + i] as f64, image[2 * plane + i] as f64];
                for (ch, row) in m.iter().enumerate() {
                    let v = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
                    out[ch * plane + i] = v.clamp(0.0, 1.0) as f32;
                }
            }
            out
        }
    })
}

/// Applies `t` to every image of a `[N, C, H, W]` batch.
pub fn transform_batch(images: &Tensor, t: Transform) -> Result<Tensor> {
    let shape: [usize; 4] = images
        .shape()
        .try_into()
        .map_err(|_| Error::Shape(format!("expected [N, C, H, W], got {:?}", images.shape())))?;
    let item = [shape[1], shape[2], shape[3]];
    let mut out = Vec::with_capacity(images.len());
    for i in 0..shape[0] {
        out.extend(apply_transform(images.item(i), item, t)?);
    }
    Tensor::new(images.shape().to_vec(), out)
}

/// Inverse mapping sampler: each output pixel `(y, x)` reads the source at
/// `src(y, x)` with bilinear interpolation; samples outside the image are 0.
fn warp(image: &[f32], c: usize, h: usize, w: usize, src: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0f32; image.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f64, x as f64);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1.0, (1.0 - fy) * fx),
                (y0 + 1.0, x0, fy * (1.0 - fx)),
                (y0 + 1.0, x0 + 1.0, fy * fx),
            ];
            for ch in 0..c {
                let src_plane = &image[ch * plane..(ch + 1) * plane];
                let mut acc = 0.0f64;
                for &(ty, tx, wt) in &taps {
                    if ty >= 0.0 && tx >= 0.0 && ty < h as f64 && tx < w as f64 {
                        acc += wt * src_plane[ty as usize * w + tx as usize] as f64;
                    }
                }
                out[ch * plane + y * w + x] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Homography taking output pixel coordinates `(x, y, 1)` back to the source.
/// The forward map moves the top-left and top-right corners inward by
/// `f * (w - 1)` and keeps the bottom corners.
fn perspective_inverse(f: f64, h: usize, w: usize) -> Result<SMatrix<f64, 3, 3>> {
    let (xm, ym) = ((w as f64 - 1.0).max(1.0), (h as f64 - 1.0).max(1.0));
    let src = [(0.0, 0.0), (xm, 0.0), (xm, ym), (0.0, ym)];
    let dst = [(f * xm, 0.0), ((1.0 - f) * xm, 0.0), (xm, ym), (0.0, ym)];
    homography(&dst, &src)
}

/// Solves for `H` with `H * (a, 1) ~ (b, 1)` for four point pairs.
fn homography(a: &[(f64, f64); 4], b: &[(f64, f64); 4]) -> Result<SMatrix<f64, 3, 3>> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    let mut r = SVector::<f64, 8>::zeros();
    for (i, (&(x, y), &(u, v))) in a.iter().zip(b).enumerate() {
        let row = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        let row2 = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        for j in 0..8 {
            m[(2 * i, j)] = row[j];
            m[(2 * i + 1, j)] = row2[j];
        }
        r[2 * i] = u;
        r[2 * i + 1] = v;
    }
    let sol = m
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::InvalidArgument("degenerate perspective corners".into()))?;
    Ok(SMatrix::<f64, 3, 3>::new(
        sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0,
    ))
}

fn hue_matrix(deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    let third = (1.0 - c) / 3.0;
    let r = (1.0f64 / 3.0).sqrt() * s;
    [
        [c + third, third - r, third + r],
        [third + r, c + third, third - r],
        [third - r, third + r, c + third],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    fn image() -> (Vec<f32>, [usize; 3]) {
        let d = gen_synthetic(1, 3, 8, 8, 4).unwrap();
        (d.images.item(0).to_vec(), [3, 8, 8])
    }

    #[test]
    fn identity_parameters_are_exact() {
        let (img, s) = image();
        for t in [
            Transform::None,
            Transform::Angle(0.0),
            Transform::Perspective(0.0),
            Transform::Contrast(1.0),
            Transform::Hue(0.0),
        ] {
            assert_eq!(apply_transform(&img, s, t).unwrap(), img, "{t}");
        }
    }

    #[test]
    fn contrast_fixed_point() {
        let img = vec![0.5f32; 12];
        assert_eq!(apply_transform(&img, [3, 2, 2], Transform::Contrast(2.0)).unwrap(), img);
    }

    #[test]
    fn right_angle_matches_index_rotation() {
        let (img, s) = image();
        let out = apply_transform(&img, s, Transform::Angle(90.0)).unwrap();
        let n = 8;
        for ch in 0..3 {
            for y in 0..n {
                for x in 0..n {
                    let expect = img[ch * 64 + (n - 1 - x) * n + y];
                    assert!((out[ch * 64 + y * n + x] - expect).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn perspective_keeps_bottom_and_zero_fills_top_corners() {
        let img = vec![1.0f32; 3 * 16 * 16];
        let out = apply_transform(&img, [3, 16, 16], Transform::Perspective(0.2)).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[15], 0.0);
        assert!((out[15 * 16 + 8] - 1.0).abs() < 1e-6);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hue_preserves_grey_and_stays_in_range() {
        let grey = vec![0.3f32; 3 * 4];
        let out = apply_transform(&grey, [3, 2, 2], Transform::Hue(60.0)).unwrap();
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-6));
        let (img, s) = image();
        let out = apply_transform(&img, s, Transform::Hue(120.0)).unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(out, img);
    }

    #[test]
    fn rejects_non_finite_and_parses() {
        let (img, s) = image();
        assert!(apply_transform(&img, s, Transform::Angle(f64::NAN)).is_err());
        assert_eq!("va:45".parse::<Transform>().unwrap(), Transform::Angle(45.0));
        assert_eq!("vc".parse::<Transform>().unwrap(), Transform::Contrast(1.8));
        assert!("vx:1".parse::<Transform>().is_err());
        assert_eq!(Transform::Hue(60.0).to_string().parse::<Transform>().unwrap(), Transform::Hue(60.0));
    }
}
