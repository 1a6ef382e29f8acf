//! Independent oracles for the integration suites: plain-loop
//! reimplementations of fusion, the convolutions and the full forward
//! pass, plus brute-force metric enumeration. Nothing here calls into
//! the tape; agreement between these and the library is the point of
//! the tests that use them.

#![allow(dead_code)]

use opfusion_core::{Model, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha20Rng) -> Tensor {
    Tensor {
        shape: shape.to_vec(),
        data: (0..shape.iter().product())
            .map(|_| rng.random_range(lo..hi))
            .collect(),
    }
}

/// Five nested loops, straight from the definition: the fused entry at
/// (u, v, t, i*M + j) is x[u,v,i] * z[t,j].
pub fn naive_fuse(x: &Tensor, z: &Tensor) -> Tensor {
    let (u, v, n) = (x.shape[0], x.shape[1], x.shape[2]);
    let (t, m) = (z.shape[0], z.shape[1]);
    let mut out = Tensor::zeros(&[u, v, t, n * m]);
    for a in 0..u {
        for b in 0..v {
            for c in 0..t {
                for i in 0..n {
                    for j in 0..m {
                        out.data[((a * v + b) * t + c) * (n * m) + i * m + j] =
                            x.data[(a * v + b) * n + i] * z.data[c * m + j];
                    }
                }
            }
        }
    }
    out
}

/// Orderless pooling by its definition: the sum of fused-tensor slices
/// over every (u, v, t).
pub fn naive_orderless(x: &Tensor, z: &Tensor) -> Tensor {
    let fused = naive_fuse(x, z);
    let nm = *fused.shape.last().unwrap();
    let slices = fused.numel() / nm;
    let mut out = Tensor::zeros(&[nm]);
    for s in 0..slices {
        for k in 0..nm {
            out.data[k] += fused.data[s * nm + k];
        }
    }
    out
}

/// Brute-force PR enumeration: every distinct score as a threshold with
/// the >= rule, counts taken by a fresh scan per threshold, then for
/// each recall level keep the highest precision (larger threshold on
/// ties).
pub fn brute_force_pr(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for &t in &ts {
        let mut tp = 0usize;
        let mut pp = 0usize;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                pp += 1;
                if l == 1 {
                    tp += 1;
                }
            }
        }
        let p = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
        let r = if total_pos == 0 {
            0.0
        } else {
            tp as f64 / total_pos as f64
        };
        match out.last_mut() {
            Some(last) if last.2 == r => {
                if p >= last.1 {
                    *last = (t, p, r);
                }
            }
            _ => out.push((t, p, r)),
        }
    }
    out
}

fn pad_amounts(in_dim: usize, k: usize, stride: usize, same: bool) -> (usize, usize) {
    if !same {
        return (0, (in_dim - k) / stride + 1);
    }
    let out = in_dim.div_ceil(stride);
    let covered = (out - 1) * stride + k;
    let needed = covered.max(in_dim) - in_dim;
    (needed / 2, out)
}

pub fn naive_conv1d(x: &Tensor, k: &Tensor, stride: usize, same: bool) -> Tensor {
    let (l, c) = (x.shape[0], x.shape[1]);
    let (kl, kc, f) = (k.shape[0], k.shape[1], k.shape[2]);
    assert_eq!(c, kc);
    let (pad, ol) = pad_amounts(l, kl, stride, same);
    let mut out = Tensor::zeros(&[ol, f]);
    for o in 0..ol {
        for fi in 0..f {
            let mut acc = 0.0;
            for t in 0..kl {
                let i = o as isize * stride as isize + t as isize - pad as isize;
                if i < 0 || i >= l as isize {
                    continue;
                }
                for ci in 0..c {
                    acc += x.data[i as usize * c + ci] * k.data[(t * c + ci) * f + fi];
                }
            }
            out.data[o * f + fi] = acc;
        }
    }
    out
}

pub fn naive_conv2d(x: &Tensor, k: &Tensor, stride: usize, same: bool) -> Tensor {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, kc, f) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
    assert_eq!(c, kc);
    let (pad_h, oh) = pad_amounts(h, kh, stride, same);
    let (pad_w, ow) = pad_amounts(w, kw, stride, same);
    let mut out = Tensor::zeros(&[oh, ow, f]);
    for oy in 0..oh {
        for ox in 0..ow {
            for fi in 0..f {
                let mut acc = 0.0;
                for ty in 0..kh {
                    let y = oy as isize * stride as isize + ty as isize - pad_h as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for tx in 0..kw {
                        let xx = ox as isize * stride as isize + tx as isize - pad_w as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += x.data[(y as usize * w + xx as usize) * c + ci]
                                * k.data[((ty * kw + tx) * c + ci) * f + fi];
                        }
                    }
                }
                out.data[(oy * ow + ox) * f + fi] = acc;
            }
        }
    }
    out
}

pub fn naive_conv3d(x: &Tensor, k: &Tensor, stride: usize, same: bool) -> Tensor {
    let (u, v, t, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (ku, kv, kt, kc, f) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3], k.shape[4]);
    assert_eq!(c, kc);
    let (pad_u, ou) = pad_amounts(u, ku, stride, same);
    let (pad_v, ov) = pad_amounts(v, kv, stride, same);
    let (pad_t, ot) = pad_amounts(t, kt, stride, same);
    let mut out = Tensor::zeros(&[ou, ov, ot, f]);
    for a in 0..ou {
        for b in 0..ov {
            for d in 0..ot {
                for fi in 0..f {
                    let mut acc = 0.0;
                    for ta in 0..ku {
                        let ia = a as isize * stride as isize + ta as isize - pad_u as isize;
                        if ia < 0 || ia >= u as isize {
                            continue;
                        }
                        for tb in 0..kv {
                            let ib = b as isize * stride as isize + tb as isize - pad_v as isize;
                            if ib < 0 || ib >= v as isize {
                                continue;
                            }
                            for td in 0..kt {
                                let id = d as isize * stride as isize + td as isize - pad_t as isize;
                                if id < 0 || id >= t as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    acc += x.data
                                        [(((ia as usize * v) + ib as usize) * t + id as usize) * c + ci]
                                        * k.data[(((ta * kv + tb) * kt + td) * c + ci) * f + fi];
                                }
                            }
                        }
                    }
                    out.data[(((a * ov) + b) * ot + d) * f + fi] = acc;
                }
            }
        }
    }
    out
}

pub fn naive_bias(x: &Tensor, b: &Tensor) -> Tensor {
    let c = b.shape[0];
    let mut out = x.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v += b.data[i % c];
    }
    out
}

pub fn naive_relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = v.max(0.0);
    }
    out
}

pub fn naive_index_linear(x: &Tensor, w: &Tensor) -> Tensor {
    let (n_out, d) = (w.shape[0], w.shape[1]);
    let lead = x.numel() / d;
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = n_out;
    let mut out = Tensor::zeros(&shape);
    for g in 0..lead {
        for i in 0..n_out {
            let mut acc = 0.0;
            for kd in 0..d {
                acc += w.data[i * d + kd] * x.data[g * d + kd];
            }
            out.data[g * n_out + i] = acc;
        }
    }
    out
}

pub fn naive_dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (w.shape[0], w.shape[1]);
    let mut out = Tensor::zeros(&[m]);
    for i in 0..m {
        let mut acc = b.data[i];
        for j in 0..n {
            acc += w.data[i * n + j] * x.data[j];
        }
        out.data[i] = acc;
    }
    out
}

pub fn naive_gap(x: &Tensor) -> Tensor {
    let c = *x.shape.last().unwrap();
    let lead = x.numel() / c;
    let mut out = Tensor::zeros(&[c]);
    for g in 0..lead {
        for ci in 0..c {
            out.data[ci] += x.data[g * c + ci];
        }
    }
    for v in out.data.iter_mut() {
        *v /= lead as f64;
    }
    out
}

pub fn naive_concat(x: &Tensor, z: &Tensor) -> Tensor {
    let (u, v, n) = (x.shape[0], x.shape[1], x.shape[2]);
    let (t, m) = (z.shape[0], z.shape[1]);
    let mut out = Tensor::zeros(&[u, v, t, n + m]);
    for a in 0..u {
        for b in 0..v {
            for c in 0..t {
                for i in 0..n {
                    out.data[((a * v + b) * t + c) * (n + m) + i] = x.data[(a * v + b) * n + i];
                }
                for j in 0..m {
                    out.data[((a * v + b) * t + c) * (n + m) + n + j] = z.data[c * m + j];
                }
            }
        }
    }
    out
}

fn flatten(x: Tensor) -> Tensor {
    let n = x.numel();
    Tensor {
        shape: vec![n],
        data: x.data,
    }
}

/// Straight-line forward pass to logits, spec-driven, with no tape
/// involved anywhere.
pub fn naive_logits(model: &Model, visual: &Tensor, seismic: &Tensor) -> Tensor {
    use opfusion_core::model::Variant;
    let spec = &model.spec;
    let get = |name: &str| -> &Tensor {
        &model.params[model
            .param_index(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
        .value
    };

    let grid = spec.variant.uses_visual().then(|| {
        let mut x = visual.clone();
        for (i, layer) in spec.visual.layers.iter().enumerate() {
            x = naive_conv2d(&x, get(&format!("visual.conv{}.kernel", i + 1)), layer.stride, true);
            x = naive_relu(&naive_bias(&x, get(&format!("visual.conv{}.bias", i + 1))));
        }
        naive_relu(&naive_index_linear(&x, get("visual.reduce.weight")))
    });
    let seq = spec.variant.uses_seismic().then(|| {
        let mut x = seismic.clone();
        for (i, layer) in spec.seismic.layers.iter().enumerate() {
            x = naive_conv1d(&x, get(&format!("seismic.conv{}.kernel", i + 1)), layer.stride, true);
            x = naive_relu(&naive_bias(&x, get(&format!("seismic.conv{}.bias", i + 1))));
        }
        naive_relu(&naive_index_linear(&x, get("seismic.reduce.weight")))
    });

    let conv_head = |fused: &Tensor| -> Tensor {
        let mut x = naive_conv3d(fused, get("head.conv1.kernel"), 1, false);
        x = naive_relu(&naive_bias(&x, get("head.conv1.bias")));
        x = naive_conv3d(&x, get("head.conv2.kernel"), 2, false);
        x = naive_relu(&naive_bias(&x, get("head.conv2.bias")));
        naive_dense(&naive_gap(&x), get("head.out.weight"), get("head.out.bias"))
    };
    let fc_head = |flat: &Tensor| -> Tensor {
        let h = naive_relu(&naive_dense(flat, get("head.fc1.weight"), get("head.fc1.bias")));
        naive_dense(&h, get("head.out.weight"), get("head.out.bias"))
    };

    match spec.variant {
        Variant::VisualOnly => fc_head(&flatten(grid.unwrap())),
        Variant::SeismicOnly => fc_head(&flatten(seq.unwrap())),
        Variant::OpBilinear => conv_head(&naive_fuse(&grid.unwrap(), &seq.unwrap())),
        Variant::OpConcat => conv_head(&naive_concat(&grid.unwrap(), &seq.unwrap())),
        Variant::BilinearFc => fc_head(&flatten(naive_fuse(&grid.unwrap(), &seq.unwrap()))),
        Variant::ConcatFc => fc_head(&flatten(naive_concat(&grid.unwrap(), &seq.unwrap()))),
        Variant::OrderlessBilinear => fc_head(&naive_orderless(&grid.unwrap(), &seq.unwrap())),
    }
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape, b.shape, "oracle shape mismatch");
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
