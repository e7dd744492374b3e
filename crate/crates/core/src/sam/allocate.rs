//! Layer-wise sparsity allocation.
//!
//! The linear scheme gives layer `k` a budget proportional to
//! `d_in,k + d_out,k` rather than to `p_k`:
//!
//! ```text
//! gamma_k = gamma * (d_in,k + d_out,k) / sum_j (d_in,j + d_out,j) * N / p_k
//! ```
//!
//! Ratios above 1 are clamped and the excess budget is spread over the
//! remaining layers, again in proportion to `d_in + d_out`, until no layer
//! exceeds 1.

use crate::error::{Error, Result};
use crate::nn::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocation {
    /// Budget proportional to `d_in + d_out`.
    #[default]
    Linear,
    /// Every layer gets `gamma_k = gamma`.
    Uniform,
}

impl Allocation {
    pub fn as_str(self) -> &'static str {
        match self {
            Allocation::Linear => "linear",
            Allocation::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for Allocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Allocation::Linear),
            "uniform" => Ok(Allocation::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown allocation {s:?}"))),
        }
    }
}

pub(crate) fn check_ratio(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sparsity ratio {gamma} outside (0, 1]")))
    }
}

/// Per-layer ratios for the parameterized layers of `layers`, in order.
pub fn allocate_sparsity(layers: &[LayerSpec], gamma: f64, scheme: Allocation) -> Result<Vec<f64>> {
    check_ratio(gamma)?;
    let fans: Vec<(f64, f64)> = layers
        .iter()
        .filter(|l| l.has_params())
        .map(|l| {
            let (din, dout) = l.fan_dims().expect("parameterized layers have fan dims");
            ((din + dout) as f64, l.param_count() as f64)
        })
        .collect();
    if fans.is_empty() {
        return Err(Error::InvalidArgument("model has no parameters".into()));
    }
    if scheme == Allocation::Uniform {
        return Ok(vec![gamma; fans.len()]);
    }
    let total: f64 = fans.iter().map(|(_, p)| p).sum();
    let mut ratios = vec![0.0; fans.len()];
    let mut clamped = vec![false; fans.len()];
    loop {
        let spent: f64 = fans.iter().zip(&clamped).filter(|(_, &c)| c).map(|((_, p), _)| p).sum();
        let budget = gamma * total - spent;
        let dsum: f64 = fans.iter().zip(&clamped).filter(|(_, &c)| !c).map(|((d, _), _)| d).sum();
        let mut changed = false;
        for (k, &(d, p)) in fans.iter().enumerate() {
            if clamped[k] {
                ratios[k] = 1.0;
                continue;
            }
            ratios[k] = budget * (d / dsum) / p;
            if ratios[k] > 1.0 {
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for k in 0..fans.len() {
            if !clamped[k] && ratios[k] > 1.0 {
                clamped[k] = true;
                ratios[k] = 1.0;
            }
        }
        if clamped.iter().all(|&c| c) {
            break;
        }
    }
    Ok(ratios)
}

/// `floor(gamma_k * p_k)` per layer, trimmed if rounding noise lets the sum
/// exceed `gamma * N`.
pub fn keep_counts(ratios: &[f64], sizes: &[usize], gamma: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = ratios
        .iter()
        .zip(sizes)
        .map(|(&r, &p)| ((r * p as f64).floor() as usize).min(p))
        .collect();
    let cap = (gamma * sizes.iter().sum::<usize>() as f64).floor() as usize;
    while keep.iter().sum::<usize>() > cap {
        let k = (0..keep.len()).max_by_key(|&k| keep[k]).unwrap();
        keep[k] -= 1;
    }
    keep
}
