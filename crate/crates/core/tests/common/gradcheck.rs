//! Analytic gradients against central finite differences of an independent
//! `f64` forward pass.

use zfda_core::nn::{ConvGeometry, LayerKind, LayerSpec, Network};
use zfda_core::{Prng, Tensor};

pub const TOLERANCE: f64 = 1e-4;
const PROBES_PER_NET: usize = 40;
const STEP: f64 = 1e-6;

struct Case {
    name: &'static str,
    layers: Vec<LayerSpec>,
    input: Vec<usize>,
}

fn cases() -> Vec<Case> {
    let conv = ConvGeometry::new(2, 3, 3, 1, 1, 5, 5);
    let strided = ConvGeometry::new(3, 4, 3, 2, 1, 6, 6);
    let up = ConvGeometry::new(3, 2, 3, 2, 1, 3, 3);
    let up_wide = ConvGeometry::new(2, 2, 4, 2, 1, 4, 4);
    vec![
        Case {
            name: "dense",
            layers: vec![LayerSpec::dense(7, 5)],
            input: vec![7],
        },
        Case {
            name: "dense without bias",
            layers: vec![LayerSpec::Dense {
                inputs: 6,
                outputs: 4,
                bias: false,
            }],
            input: vec![6],
        },
        Case {
            name: "dense relu dense",
            layers: vec![LayerSpec::dense(6, 8), LayerSpec::ReLU, LayerSpec::dense(8, 3)],
            input: vec![6],
        },
        Case {
            name: "dense sigmoid",
            layers: vec![LayerSpec::dense(5, 4), LayerSpec::Sigmoid],
            input: vec![5],
        },
        Case {
            name: "conv",
            layers: vec![LayerSpec::conv(conv)],
            input: vec![2, 5, 5],
        },
        Case {
            name: "strided conv relu",
            layers: vec![LayerSpec::conv(strided), LayerSpec::ReLU],
            input: vec![3, 6, 6],
        },
        Case {
            name: "conv transpose sigmoid",
            layers: vec![LayerSpec::conv_transpose(up), LayerSpec::Sigmoid],
            input: vec![3, 3, 3],
        },
        Case {
            name: "conv transpose without bias",
            layers: vec![LayerSpec::ConvTranspose2D {
                geometry: up_wide,
                bias: false,
            }],
            input: vec![2, 4, 4],
        },
        Case {
            name: "conv relu dense sigmoid",
            layers: vec![
                LayerSpec::conv(ConvGeometry::new(1, 2, 3, 2, 1, 4, 4)),
                LayerSpec::ReLU,
                LayerSpec::dense(8, 3),
                LayerSpec::Sigmoid,
            ],
            input: vec![1, 4, 4],
        },
    ]
}

fn random_tensor(shape: Vec<usize>, rng: &mut Prng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-scale, scale) as f32).collect()).unwrap()
}

/// Straightforward `f64` forward pass over one item, written from the layer
/// definitions: dense weights `[out, in]`, convolution weights
/// `[out, in, kh, kw]`, transposed-convolution weights `[in, out, kh, kw]`,
/// biases last.
fn reference_forward(layers: &[LayerSpec], params: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    let mut slot = 0;
    for l in layers {
        cur = match *l {
            LayerSpec::Dense { inputs, outputs, bias } => {
                let p = &params[slot];
                (0..outputs)
                    .map(|o| {
                        let b = if bias { p[inputs * outputs + o] } else { 0.0 };
                        b + (0..inputs).map(|i| p[o * inputs + i] * cur[i]).sum::<f64>()
                    })
                    .collect()
            }
            LayerSpec::Conv2D { geometry: g, bias } => {
                let p = &params[slot];
                let oh = (g.in_h + 2 * g.padding - g.kernel_h) / g.stride + 1;
                let ow = (g.in_w + 2 * g.padding - g.kernel_w) / g.stride + 1;
                let wlen = g.out_channels * g.in_channels * g.kernel_h * g.kernel_w;
                let mut y = vec![0.0; g.out_channels * oh * ow];
                for o in 0..g.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = if bias { p[wlen + o] } else { 0.0 };
                            for c in 0..g.in_channels {
                                for ky in 0..g.kernel_h {
                                    for kx in 0..g.kernel_w {
                                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                        if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                            continue;
                                        }
                                        let w = p[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                                        acc += w * cur[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                                    }
                                }
                            }
                            y[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::ConvTranspose2D { geometry: g, bias } => {
                let p = &params[slot];
                let oh = (g.in_h - 1) * g.stride + g.kernel_h - 2 * g.padding;
                let ow = (g.in_w - 1) * g.stride + g.kernel_w - 2 * g.padding;
                let wlen = g.out_channels * g.in_channels * g.kernel_h * g.kernel_w;
                let mut y = vec![0.0; g.out_channels * oh * ow];
                for o in 0..g.out_channels {
                    if bias {
                        y[o * oh * ow..(o + 1) * oh * ow].iter_mut().for_each(|v| *v = p[wlen + o]);
                    }
                }
                for c in 0..g.in_channels {
                    for iy in 0..g.in_h {
                        for ix in 0..g.in_w {
                            let xv = cur[(c * g.in_h + iy) * g.in_w + ix];
                            for o in 0..g.out_channels {
                                for ky in 0..g.kernel_h {
                                    for kx in 0..g.kernel_w {
                                        let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                                        let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                        if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                            continue;
                                        }
                                        let w = p[((c * g.out_channels + o) * g.kernel_h + ky) * g.kernel_w + kx];
                                        y[(o * oh + oy as usize) * ow + ox as usize] += w * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                y
            }
            LayerSpec::ReLU => cur.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::Sigmoid => cur.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        if l.has_params() {
            slot += 1;
        }
    }
    cur
}

fn widen(t: &[f32]) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

/// Central difference of the reference forward pass.
fn numeric(eval: &mut dyn FnMut(f64) -> f64, at: f64) -> f64 {
    (eval(at + STEP) - eval(at - STEP)) / (2.0 * STEP)
}

/// A random index with a nonzero gradient when there is one; all-zero
/// gradients are still probed, and must match exactly.
fn pick_nonzero(g: &[f32], rng: &mut Prng) -> usize {
    let nonzero: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
    if nonzero.is_empty() {
        rng.below(g.len())
    } else {
        nonzero[rng.below(nonzero.len())]
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == numeric {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

pub struct GradReport {
    pub probes: usize,
    pub worst: f64,
    pub worst_at: String,
    pub kinds: Vec<LayerKind>,
}

/// Probes every case; also asserts the library forward pass agrees with the
/// reference to 1e-5.
pub fn gradient_check() -> GradReport {
    const BATCH: usize = 2;
    let mut rng = Prng::new(2024);
    let mut probes = 0;
    let mut worst = (0.0f64, String::new());
    let mut kinds_seen = std::collections::BTreeSet::new();
    for case in cases() {
        let mut init_rng = Prng::new(rng.next_u64());
        let net = Network::init(case.layers.clone(), &mut init_rng).unwrap();
        let params: Vec<Tensor> = net
            .params()
            .iter()
            .map(|p| random_tensor(p.shape().to_vec(), &mut rng, 0.8))
            .collect();
        let net = Network::new(case.layers.clone(), params.clone()).unwrap();
        let x = random_tensor(std::iter::once(BATCH).chain(case.input.clone()).collect(), &mut rng, 1.0);
        let trace = net.forward_traced(&x).unwrap();
        let y = trace.output().clone();
        let (in_len, out_len) = (x.item_len(), y.item_len());
        let wide: Vec<Vec<f64>> = params.iter().map(|p| widen(p.data())).collect();
        for n in 0..BATCH {
            let reference = reference_forward(&case.layers, &wide, &widen(x.item(n)));
            for (r, &v) in reference.iter().zip(y.item(n)) {
                assert!((r - v as f64).abs() < 1e-5, "{}: forward {v} vs reference {r}", case.name);
            }
        }
        kinds_seen.extend(case.layers.iter().map(|l| l.kind().code()));

        for _ in 0..PROBES_PER_NET {
            let item = rng.below(BATCH);
            let out = rng.below(out_len);
            let mut seed = vec![0.0f32; y.len()];
            seed[item * out_len + out] = 1.0;
            let grads = net.backward(&trace, &Tensor::new(y.shape().to_vec(), seed).unwrap()).unwrap();
            let x_item = widen(x.item(item));
            // Parameter probes, plus one input probe in four.
            let (what, analytic, numeric) = if rng.below(4) == 0 {
                let g = &grads.input.data()[item * in_len..(item + 1) * in_len];
                let i = pick_nonzero(g, &mut rng);
                let mut eval = |v: f64| {
                    let mut xp = x_item.clone();
                    xp[i] = v;
                    reference_forward(&case.layers, &wide, &xp)[out]
                };
                ("input", g[i] as f64, numeric(&mut eval, x_item[i]))
            } else {
                let slot = rng.below(params.len());
                let i = pick_nonzero(grads.params[slot].data(), &mut rng);
                let mut eval = |v: f64| {
                    let mut p = wide.clone();
                    p[slot][i] = v;
                    reference_forward(&case.layers, &p, &x_item)[out]
                };
                ("param", grads.params[slot].data()[i] as f64, numeric(&mut eval, wide[slot][i]))
            };
            let err = rel_error(analytic, numeric);
            if err > worst.0 {
                worst = (err, format!("{} {what}: analytic {analytic} numeric {numeric}", case.name));
            }
            probes += 1;
        }
    }
    let kinds = [
        LayerKind::Dense,
        LayerKind::Conv2D,
        LayerKind::ConvTranspose2D,
        LayerKind::ReLU,
        LayerKind::Sigmoid,
    ]
    .into_iter()
    .filter(|k| kinds_seen.contains(&k.code()))
    .collect();
    GradReport {
        probes,
        worst: worst.0,
        worst_at: worst.1,
        kinds,
    }
}
