//! Brute-force and sort-based references for the SAM optimizer.

use zfda_core::nn::{LayerSpec, ModelParams, Network};
use zfda_core::sam::{
    effective_params, init_sam, optimize_sam, predicted_loss_delta, sam_gradients, sam_step, topk_mask, Allocation,
    SamHyper, SamSchedule, Supervision, VGradMode,
};
use zfda_core::{Prng, Tensor};

pub fn sort_oracle(scores: &[f32], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut mask = vec![false; scores.len()];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

/// `count` random score vectors of length 1..=512, half of them drawn from
/// eight levels so ties are frequent. Returns the number of disagreements.
pub fn topk_check(count: usize, seed: u64) -> usize {
    let mut rng = Prng::new(seed);
    let mut mismatches = 0;
    for v in 0..count {
        let n = 1 + rng.below(512);
        let scores: Vec<f32> = (0..n)
            .map(|_| {
                if v % 2 == 0 {
                    (rng.below(8) as f32 - 4.0) * 0.5
                } else {
                    rng.uniform(-1e3, 1e3) as f32
                }
            })
            .collect();
        let k = rng.below(n + 1);
        if topk_mask(&scores, k).unwrap() != sort_oracle(&scores, k) {
            mismatches += 1;
        }
    }
    mismatches
}

pub fn toy_model(seed: u64) -> ModelParams {
    let mut rng = Prng::new(seed);
    let enc = Network::init(vec![LayerSpec::dense(6, 3)], &mut rng).unwrap();
    let dec = Network::init(vec![LayerSpec::dense(3, 6)], &mut rng).unwrap();
    ModelParams::new(enc, dec).unwrap()
}

fn uniform_tensor(shape: Vec<usize>, rng: &mut Prng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

pub struct DescentReport {
    pub steps: usize,
    /// Layer-steps whose mask changed.
    pub swaps: usize,
    pub violations: Vec<String>,
    pub values_changed: bool,
}

/// Score-only updates with `v` held fixed on one batch. Every swap must have
/// `max_I g < min_J g` and a negative first-order loss change.
pub fn fixed_value_descent(steps: usize) -> DescentReport {
    let model = toy_model(3);
    let mut rng = Prng::new(11);
    let x = uniform_tensor(vec![16, 6], &mut rng);
    let hyper = SamHyper {
        gamma: 0.3,
        alpha_s: 2.0,
        alpha_v: 0.0,
        v_grad_mode: VGradMode::Dense,
        allocation: Allocation::Uniform,
    };
    let mut state = init_sam(&model, &hyper, 5).unwrap();
    for l in &mut state.layers {
        l.values.iter_mut().for_each(|v| *v = (rng.normal() * 0.5) as f32);
    }
    let values_before: Vec<Vec<f32>> = state.layers.iter().map(|l| l.values.clone()).collect();
    let mut report = DescentReport {
        steps: 0,
        swaps: 0,
        violations: Vec::new(),
        values_changed: false,
    };
    for step in 0..steps {
        let grads = sam_gradients(&model, &state, &x, &x, true).unwrap();
        assert!(grads.values.is_none());
        let swaps = sam_step(&mut state, &grads).unwrap();
        report.steps += 1;
        for swap in swaps.iter().filter(|s| !s.is_empty()) {
            report.swaps += 1;
            let est = predicted_loss_delta(swap);
            let (i, j) = (est.g_entering_max.unwrap(), est.g_leaving_min.unwrap());
            if !(i < j && est.delta < 0.0) {
                report.violations.push(format!(
                    "step {step} layer {}: max entering {i}, min leaving {j}, change {}",
                    swap.layer_id, est.delta
                ));
            }
        }
    }
    let values_after: Vec<Vec<f32>> = state.layers.iter().map(|l| l.values.clone()).collect();
    report.values_changed = values_before != values_after;
    report
}

/// Loss of the best pair of coordinates, each pair given its least-squares
/// optimal values; `residual` is target minus the unmodified prediction.
pub fn best_pair_loss(x: &[[f64; 8]], residual: &[f64]) -> (f64, (usize, usize)) {
    let n = x.len() as f64;
    let mut best = (f64::INFINITY, (0, 0));
    for a in 0..8 {
        for b in a + 1..8 {
            let (mut saa, mut sab, mut sbb, mut ra, mut rb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (row, &r) in x.iter().zip(residual) {
                saa += row[a] * row[a];
                sab += row[a] * row[b];
                sbb += row[b] * row[b];
                ra += row[a] * r;
                rb += row[b] * r;
            }
            let det = saa * sbb - sab * sab;
            let da = (sbb * ra - sab * rb) / det;
            let db = (saa * rb - sab * ra) / det;
            let loss = x
                .iter()
                .zip(residual)
                .map(|(row, &r)| (r - row[a] * da - row[b] * db).powi(2))
                .sum::<f64>()
                / n;
            if loss < best.0 {
                best = (loss, (a, b));
            }
        }
    }
    best
}

pub struct SubsetReport {
    pub sam_loss: f64,
    pub sam_pair: Vec<usize>,
    pub oracle_loss: f64,
    pub oracle_pair: (usize, usize),
    pub kept: usize,
}

/// Linear regression `y = w . x` through a frozen `1 -> 1` identity decoder;
/// the uniform ratio 0.25 leaves two of the eight weights free.
pub fn subset_selection(seed: u64) -> SubsetReport {
    let mut rng = Prng::new(seed);
    let weights: Vec<f32> = (0..8).map(|_| rng.uniform(-0.5, 0.5) as f32).collect();
    let no_bias = |inputs, outputs| LayerSpec::Dense {
        inputs,
        outputs,
        bias: false,
    };
    let enc = Network::new(vec![no_bias(8, 1)], vec![Tensor::from_vec(weights.clone()).unwrap()]).unwrap();
    let dec = Network::new(vec![no_bias(1, 1)], vec![Tensor::from_vec(vec![1.0]).unwrap()]).unwrap();
    let model = ModelParams::new(enc, dec).unwrap();

    let mut shift = [0.0f64; 8];
    for s in shift.iter_mut() {
        *s = rng.uniform(-0.1, 0.1);
    }
    shift[2] += 1.5;
    shift[5] -= 1.0;
    let n = 64;
    let rows: Vec<[f64; 8]> = (0..n)
        .map(|_| {
            let mut r = [0.0; 8];
            r.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0) as f32 as f64);
            r
        })
        .collect();
    let targets: Vec<f32> = rows
        .iter()
        .map(|r| (0..8).map(|i| r[i] * (weights[i] as f64 + shift[i])).sum::<f64>() as f32)
        .collect();
    let residual: Vec<f64> = rows
        .iter()
        .zip(&targets)
        .map(|(r, &t)| t as f64 - (0..8).map(|i| r[i] * weights[i] as f64).sum::<f64>())
        .collect();
    let (oracle_loss, oracle_pair) = best_pair_loss(&rows, &residual);

    let x = Tensor::new(vec![n, 8], rows.iter().flatten().map(|&v| v as f32).collect()).unwrap();
    let y = Tensor::new(vec![n, 1], targets).unwrap();
    let hyper = SamHyper {
        gamma: 0.25,
        alpha_s: 1.0,
        alpha_v: 0.2,
        v_grad_mode: VGradMode::Dense,
        allocation: Allocation::Uniform,
    };
    let schedule = SamSchedule {
        epochs: 2000,
        batch_size: n,
    };
    let run = optimize_sam(&model, Supervision::regress(&x, &y), &hyper, &schedule, 1).unwrap();
    let eff = effective_params(&model, &run.state).unwrap();
    let pred = eff.forward(&x).unwrap().outcome;
    let sam_loss = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum::<f64>()
        / n as f64;
    let sam_pair = run.state.layers[0]
        .mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    SubsetReport {
        sam_loss,
        sam_pair,
        oracle_loss,
        oracle_pair,
        kept: run.state.kept(),
    }
}
