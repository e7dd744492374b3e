//! Mutated `.zfm`, `.zft` and `.zfp` files. Every mutation breaks a header
//! field, truncates, appends bytes, plants a non-finite value or moves a
//! patch index out of range, so every mutant must be rejected.

use std::path::Path;

use zfda_core::data::{read_tensor_file, tensor_to_bytes};
use zfda_core::delta::{apply_patch, load_patch, DeltaPatch};
use zfda_core::nn::checkpoint::{read_checkpoint, to_bytes};
use zfda_core::nn::{build_autoencoder, ModelParams, Topology};
use zfda_core::sam::{extract_delta, init_sam, SamHyper};
use zfda_core::{Prng, Tensor};

pub fn small_model(seed: u64) -> ModelParams {
    let topology = Topology {
        image_channels: 2,
        image_size: 8,
        conv_channels: vec![3],
        hidden: 10,
        bottleneck: 6,
    };
    build_autoencoder(&topology.config().unwrap(), seed).unwrap()
}

/// A patch touching about 10% of `model`, with random modifications.
pub fn small_patch(model: &ModelParams, seed: u64) -> DeltaPatch {
    let mut rng = Prng::new(seed);
    let mut state = init_sam(model, &SamHyper::reference(0.1), seed).unwrap();
    for l in &mut state.layers {
        l.values.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0) as f32);
    }
    let delta = extract_delta(&state, model).unwrap();
    DeltaPatch::from_delta(&delta, model).unwrap()
}

fn put_u16(buf: &mut [u8], at: usize, v: u16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

fn get_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

/// A u32 different from `old`: a near miss or an arbitrary value.
fn other_u32(rng: &mut Prng, old: u32) -> u32 {
    loop {
        let v = match rng.below(3) {
            0 => old.wrapping_add(1 + rng.below(3) as u32),
            1 => old.wrapping_sub(1 + rng.below(3) as u32),
            _ => rng.next_u64() as u32,
        };
        if v != old {
            return v;
        }
    }
}

fn non_finite(rng: &mut Prng) -> f32 {
    [f32::NAN, f32::INFINITY, f32::NEG_INFINITY][rng.below(3)]
}

fn truncate(rng: &mut Prng, buf: &[u8]) -> Vec<u8> {
    buf[..rng.below(buf.len())].to_vec()
}

fn append(rng: &mut Prng, buf: &[u8]) -> Vec<u8> {
    let mut out = buf.to_vec();
    out.extend((0..1 + rng.below(16)).map(|_| rng.next_u64() as u8));
    out
}

fn corrupt_magic(rng: &mut Prng, buf: &[u8]) -> Vec<u8> {
    let mut out = buf.to_vec();
    let i = rng.below(4);
    out[i] ^= 1 + rng.below(255) as u8;
    out
}

/// Offsets of one `.zfm` layer record.
struct ZfmLayer {
    kind: usize,
    dims: Vec<usize>,
    pcount: usize,
    params: usize,
    n_params: usize,
}

fn zfm_layout(buf: &[u8]) -> Vec<ZfmLayer> {
    let count = get_u32(buf, 6) as usize;
    let mut at = 10;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = at;
        let ndims = buf[at + 1] as usize;
        let dims = (0..ndims).map(|j| at + 2 + 4 * j).collect();
        let pcount = at + 2 + 4 * ndims;
        let n_params = get_u64(buf, pcount) as usize;
        let params = pcount + 8;
        at = params + 4 * n_params;
        layers.push(ZfmLayer {
            kind,
            dims,
            pcount,
            params,
            n_params,
        });
    }
    assert_eq!(at, buf.len());
    layers
}

fn zfm_mutant(rng: &mut Prng, buf: &[u8], class: usize) -> (&'static str, Vec<u8>) {
    let layers = zfm_layout(buf);
    let mut out = buf.to_vec();
    let with_params: Vec<&ZfmLayer> = layers.iter().filter(|l| l.n_params > 0).collect();
    let name = match class {
        0 => return ("magic", corrupt_magic(rng, buf)),
        1 => {
            put_u16(&mut out, 4, loop {
                let v = rng.next_u64() as u16;
                if v != 1 {
                    break v;
                }
            });
            "version"
        }
        2 => {
            let v = other_u32(rng, layers.len() as u32);
            put_u32(&mut out, 6, v);
            "layer count"
        }
        3 => {
            let l = &layers[rng.below(layers.len())];
            let code = loop {
                let c = rng.next_u64() as u8;
                if !(1..=5).contains(&(c & 0x7f)) {
                    break c;
                }
            };
            out[l.kind] = code;
            "kind code"
        }
        4 => {
            let l = &layers[rng.below(layers.len())];
            let n = out[l.kind + 1];
            out[l.kind + 1] = loop {
                let v = rng.next_u64() as u8;
                if v != n {
                    break v;
                }
            };
            "dim count"
        }
        5 => {
            // A dimension that determines the parameter count (dense in/out,
            // conv channels and kernel) or the bias flag.
            let l = with_params[rng.below(with_params.len())];
            let shaping: Vec<usize> = if l.dims.len() == 3 {
                vec![0, 1, 2]
            } else {
                vec![0, 1, 2, 3, 8]
            };
            let j = shaping[rng.below(shaping.len())];
            let at = l.dims[j];
            let old = get_u32(&out, at);
            let v = if j + 1 == l.dims.len() {
                2 + rng.below(1000) as u32
            } else {
                other_u32(rng, old)
            };
            put_u32(&mut out, at, v);
            "dimension"
        }
        6 => {
            let l = &layers[rng.below(layers.len())];
            let old = get_u64(&out, l.pcount);
            let v = loop {
                let v = match rng.below(2) {
                    0 => old.wrapping_add(1 + rng.below(4) as u64),
                    _ => rng.next_u64(),
                };
                if v != old {
                    break v;
                }
            };
            out[l.pcount..l.pcount + 8].copy_from_slice(&v.to_le_bytes());
            "param count"
        }
        7 => {
            let l = with_params[rng.below(with_params.len())];
            let at = l.params + 4 * rng.below(l.n_params);
            out[at..at + 4].copy_from_slice(&non_finite(rng).to_le_bytes());
            "non-finite param"
        }
        8 => return ("truncation", truncate(rng, buf)),
        _ => return ("trailing bytes", append(rng, buf)),
    };
    (name, out)
}

fn zft_mutant(rng: &mut Prng, buf: &[u8], ndim: usize, class: usize) -> (&'static str, Vec<u8>) {
    let mut out = buf.to_vec();
    let name = match class {
        0 => return ("magic", corrupt_magic(rng, buf)),
        1 => {
            out[4] = 1 + rng.below(255) as u8;
            "dtype"
        }
        2 => {
            out[5] = loop {
                let v = rng.next_u64() as u8;
                if v as usize != ndim {
                    break v;
                }
            };
            "ndim"
        }
        3 => {
            out[6 + rng.below(2)] = 1 + rng.below(255) as u8;
            "padding"
        }
        4 => {
            let at = 8 + 4 * rng.below(ndim);
            let v = if rng.below(4) == 0 { 0 } else { other_u32(rng, get_u32(&out, at)) };
            put_u32(&mut out, at, v);
            "dimension"
        }
        5 => {
            let values = (buf.len() - 8 - 4 * ndim) / 4;
            let at = 8 + 4 * ndim + 4 * rng.below(values);
            out[at..at + 4].copy_from_slice(&non_finite(rng).to_le_bytes());
            "non-finite value"
        }
        6 => return ("truncation", truncate(rng, buf)),
        _ => return ("trailing bytes", append(rng, buf)),
    };
    (name, out)
}

/// Offsets of one `.zfp` layer record.
struct ZfpLayer {
    id: usize,
    count: usize,
    entries: usize,
    n: usize,
}

fn zfp_layout(buf: &[u8]) -> Vec<ZfpLayer> {
    let count = get_u32(buf, 48) as usize;
    let mut at = 52;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let n = get_u64(buf, at + 4) as usize;
        layers.push(ZfpLayer {
            id: at,
            count: at + 4,
            entries: at + 12,
            n,
        });
        at += 12 + 12 * n;
    }
    assert_eq!(at, buf.len());
    layers
}

fn zfp_mutant(rng: &mut Prng, buf: &[u8], model: &ModelParams, class: usize) -> (&'static str, Vec<u8>) {
    let layers = zfp_layout(buf);
    let slots = model.param_slots();
    let mut out = buf.to_vec();
    let populated: Vec<(usize, &ZfpLayer)> = layers.iter().enumerate().filter(|(_, l)| l.n > 0).collect();
    let name = match class {
        0 => return ("magic", corrupt_magic(rng, buf)),
        1 => {
            put_u16(&mut out, 4, 2 + rng.below(65534) as u16);
            "version"
        }
        2 => {
            put_u16(&mut out, 6, 1 + rng.below(65535) as u16);
            "flags"
        }
        3 => {
            let bad = [0.0, -0.5, 1.5, f64::NAN, f64::INFINITY, -1e-9, 1.0 + 1e-9][rng.below(7)];
            out[40..48].copy_from_slice(&bad.to_le_bytes());
            "ratio"
        }
        4 => {
            let v = other_u32(rng, layers.len() as u32);
            put_u32(&mut out, 48, v);
            "layer count"
        }
        5 => {
            let l = &layers[rng.below(layers.len())];
            let v = other_u32(rng, get_u32(&out, l.id));
            put_u32(&mut out, l.id, v);
            "layer id"
        }
        6 => {
            let l = &layers[rng.below(layers.len())];
            let v = loop {
                let v = match rng.below(2) {
                    0 => (l.n as u64).wrapping_add(1 + rng.below(3) as u64),
                    _ => rng.next_u64(),
                };
                if v != l.n as u64 {
                    break v;
                }
            };
            out[l.count..l.count + 8].copy_from_slice(&v.to_le_bytes());
            "entry count"
        }
        7 => {
            // Out of range for the layer it belongs to; placed last so the
            // ascending order still holds.
            let (k, l) = populated[rng.below(populated.len())];
            let p = slots[k].spec.param_count() as u32;
            let last = l.entries + 12 * (l.n - 1);
            let floor = p.max(get_u32(&out, last));
            put_u32(&mut out, last, floor + rng.below(1 << 20) as u32);
            "out-of-range index"
        }
        8 => {
            let (_, l) = populated[rng.below(populated.len())];
            let i = rng.below(l.n);
            let at = l.entries + 12 * i;
            // Equal to or below the previous index, or the first index pushed
            // past the second.
            let v = if i > 0 {
                get_u32(&out, at - 12) - rng.below(2) as u32
            } else if l.n > 1 {
                get_u32(&out, at + 12) + rng.below(3) as u32
            } else {
                u32::MAX
            };
            put_u32(&mut out, at, v);
            "unordered index"
        }
        9 => {
            let (_, l) = populated[rng.below(populated.len())];
            let at = l.entries + 12 * rng.below(l.n) + 4 + 4 * rng.below(2);
            out[at..at + 4].copy_from_slice(&non_finite(rng).to_le_bytes());
            "non-finite value"
        }
        10 => return ("truncation", truncate(rng, buf)),
        _ => return ("trailing bytes", append(rng, buf)),
    };
    (name, out)
}

pub struct FuzzReport {
    pub mutants: usize,
    pub by_format: Vec<(&'static str, usize)>,
    pub silent: Vec<String>,
}

/// Writes each mutant to `dir` and reads it back through the file API.
/// Patches must also fail validation or application against their model.
pub fn fuzz_suite(dir: &Path, per_class: usize, seed: u64) -> FuzzReport {
    let mut rng = Prng::new(seed);
    let model = small_model(seed);
    let zfm = to_bytes(&model);
    let tensor = Tensor::new(vec![3, 2, 4], (0..24).map(|i| i as f32 * 0.25 - 2.0).collect()).unwrap();
    let zft = tensor_to_bytes(&tensor).unwrap();
    let patch = small_patch(&model, seed);
    let zfp = patch.to_bytes();
    assert!(read_back(dir, "ok.zfm", &zfm, &|p| read_checkpoint(p).is_ok()));
    assert!(read_back(dir, "ok.zft", &zft, &|p| read_tensor_file(p).is_ok()));
    assert!(read_back(dir, "ok.zfp", &zfp, &|p| accepts_patch(p, &model)));

    let mut report = FuzzReport {
        mutants: 0,
        by_format: Vec::new(),
        silent: Vec::new(),
    };
    let mut run = |format: &'static str, classes: usize, make: &mut dyn FnMut(&mut Prng, usize) -> (&'static str, Vec<u8>), accept: &dyn Fn(&Path) -> bool| {
        let mut n = 0;
        for class in 0..classes {
            for i in 0..per_class {
                let (what, bytes) = make(&mut rng, class);
                let file = format!("m{class}_{i}.{format}");
                if read_back(dir, &file, &bytes, accept) {
                    report.silent.push(format!(".{format} {what} mutant {i}"));
                }
                n += 1;
            }
        }
        report.mutants += n;
        report.by_format.push((format, n));
    };
    run("zfm", 10, &mut |rng, c| zfm_mutant(rng, &zfm, c), &|p| read_checkpoint(p).is_ok());
    run("zft", 8, &mut |rng, c| zft_mutant(rng, &zft, 3, c), &|p| read_tensor_file(p).is_ok());
    run("zfp", 12, &mut |rng, c| zfp_mutant(rng, &zfp, &model, c), &|p| accepts_patch(p, &model));
    report
}

fn accepts_patch(path: &Path, model: &ModelParams) -> bool {
    match load_patch(path) {
        Ok(patch) => patch.validate_against(model).is_ok() && apply_patch(model, &patch).is_ok(),
        Err(_) => false,
    }
}

fn read_back(dir: &Path, name: &str, bytes: &[u8], accept: &dyn Fn(&Path) -> bool) -> bool {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    accept(&path)
}
