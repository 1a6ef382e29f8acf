//! The fusion operators, as pure functions over tensors.
//!
//! A feature grid is a rank-3 tensor [U, V, N] (one length-N vector per
//! spatial index); a feature sequence is rank-2 [T, M]. The tape ops in
//! `tape.rs` delegate to the functions here so the autodiff primitive and
//! the standalone operators are one implementation.
//!
//! Vectorization of an outer product x z^T is x-major: the fused slice
//! lists x1*z1 .. x1*zM, then x2*z1 .. x2*zM, and so on, so entry
//! (u, v, t, i*M + j) equals x[u,v,i] * z[t,j].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn check_pair(
    op: &'static str,
    x: &Tensor,
    z: &Tensor,
) -> Result<(usize, usize, usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::shape(
            op,
            format!("grid input must be [U,V,N], got {:?}", x.shape),
        ));
    }
    if z.rank() != 2 {
        return Err(Error::shape(
            op,
            format!("sequence input must be [T,M], got {:?}", z.shape),
        ));
    }
    Ok((x.shape[0], x.shape[1], x.shape[2], z.shape[0], z.shape[1]))
}

/// Per-index linear map plus ReLU: out[..., i] = max(0, sum_k W[i,k] in[..., k]).
/// The weight has no bias term. Input may have any number of leading axes.
pub fn sparse_reduce(features: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if weights.rank() != 2 {
        return Err(Error::shape(
            "sparse_reduce",
            format!("weights must be [out, in], got {:?}", weights.shape),
        ));
    }
    let (n_out, d) = (weights.shape[0], weights.shape[1]);
    if features.rank() < 1 || *features.shape.last().unwrap() != d {
        return Err(Error::shape(
            "sparse_reduce",
            format!(
                "depth axis: features {:?} vs weight in-dim {}",
                features.shape, d
            ),
        ));
    }
    let blocks = features.numel() / d;
    let mut out = vec![0.0; blocks * n_out];
    for b in 0..blocks {
        let xs = &features.data[b * d..(b + 1) * d];
        let os = &mut out[b * n_out..(b + 1) * n_out];
        for i in 0..n_out {
            let mut acc = 0.0;
            for (w, v) in weights.data[i * d..(i + 1) * d].iter().zip(xs) {
                acc += w * v;
            }
            os[i] = acc.max(0.0);
        }
    }
    let mut shape = features.shape.clone();
    *shape.last_mut().unwrap() = n_out;
    Tensor::new(shape, out)
}

/// lambda * sum |w|.
pub fn l1_penalty(weights: &Tensor, lambda: f64) -> f64 {
    lambda * weights.data.iter().map(|v| v.abs()).sum::<f64>()
}

/// Subgradient of the L1 penalty: lambda * sign(w), 0 at w = 0.
pub fn l1_subgradient(weights: &Tensor, lambda: f64) -> Tensor {
    Tensor {
        shape: weights.shape.clone(),
        data: weights
            .data
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    lambda
                } else if v < 0.0 {
                    -lambda
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Order-preserving bilinear fusion: x [U,V,N] with z [T,M] gives
/// [U,V,T,N*M]; the slice at (u,v,t) is the x-major vectorization of the
/// outer product of x_{u,v} and z_t.
pub fn op_bilinear_fuse(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (u, v, n, t, m) = check_pair("op_bilinear_fuse", x, z)?;
    let nm = n * m;
    let mut out = vec![0.0; u * v * t * nm];
    for uv in 0..u * v {
        let xs = &x.data[uv * n..(uv + 1) * n];
        for ti in 0..t {
            let zs = &z.data[ti * m..(ti + 1) * m];
            let os = &mut out[(uv * t + ti) * nm..(uv * t + ti + 1) * nm];
            for i in 0..n {
                let xi = xs[i];
                let row = &mut os[i * m..(i + 1) * m];
                for j in 0..m {
                    row[j] = xi * zs[j];
                }
            }
        }
    }
    Tensor::new(vec![u, v, t, nm], out)
}

/// Analytic backward of `op_bilinear_fuse`. Because entry (u,v,t,i*M+j)
/// is x[u,v,i] * z[t,j], its derivative with respect to x[u,v,i] is
/// z[t,j] and with respect to z[t,j] is x[u,v,i]; everything else is
/// zero. Summing over every fused entry that reuses the same feature:
///
///   dL/dx[u,v,i] = sum_t sum_j  up[u,v,t,i*M+j] * z[t,j]
///   dL/dz[t,j]   = sum_{u,v} sum_i up[u,v,t,i*M+j] * x[u,v,i]
pub fn op_bilinear_backward(x: &Tensor, z: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let (u, v, n, t, m) = check_pair("op_bilinear_backward", x, z)?;
    let nm = n * m;
    if upstream.shape != [u, v, t, nm] {
        return Err(Error::shape(
            "op_bilinear_backward",
            format!(
                "upstream {:?} does not match fused shape [{u}, {v}, {t}, {nm}]",
                upstream.shape
            ),
        ));
    }
    let mut dx = vec![0.0; u * v * n];
    let mut dz = vec![0.0; t * m];
    for uv in 0..u * v {
        let xs = &x.data[uv * n..(uv + 1) * n];
        let dxs = &mut dx[uv * n..(uv + 1) * n];
        for ti in 0..t {
            let zs = &z.data[ti * m..(ti + 1) * m];
            let dzs = &mut dz[ti * m..(ti + 1) * m];
            let gs = &upstream.data[(uv * t + ti) * nm..(uv * t + ti + 1) * nm];
            for i in 0..n {
                let row = &gs[i * m..(i + 1) * m];
                let xi = xs[i];
                let mut acc = 0.0;
                for j in 0..m {
                    let g = row[j];
                    acc += g * zs[j];
                    dzs[j] += g * xi;
                }
                dxs[i] += acc;
            }
        }
    }
    Ok((
        Tensor::new(vec![u, v, n], dx)?,
        Tensor::new(vec![t, m], dz)?,
    ))
}

/// Sum of the outer products over every (u,v,t) index, vectorized to
/// length N*M. The sum factorizes into (sum of x vectors) outer
/// (sum of z vectors); the test suite verifies this against summing
/// fused slices directly.
pub fn orderless_bilinear_pool(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (u, v, n, t, m) = check_pair("orderless_bilinear_pool", x, z)?;
    let (sx, sz) = index_sums(&x.data, u * v, n, &z.data, t, m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = sx[i] * sz[j];
        }
    }
    Tensor::new(vec![n * m], out)
}

pub(crate) fn orderless_pool_backward(
    x: &Tensor,
    z: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (u, v, n, t, m) = check_pair("orderless_bilinear_pool", x, z)?;
    let (sx, sz) = index_sums(&x.data, u * v, n, &z.data, t, m);
    // the gradient is the same at every grid index: d/dx[u,v,i] =
    // sum_j up[i,j] sz[j], and likewise for z with sx
    let mut gx = vec![0.0; n];
    let mut gz = vec![0.0; m];
    for i in 0..n {
        let row = &upstream.data[i * m..(i + 1) * m];
        for j in 0..m {
            gx[i] += row[j] * sz[j];
            gz[j] += row[j] * sx[i];
        }
    }
    let mut dx = vec![0.0; u * v * n];
    for uv in 0..u * v {
        dx[uv * n..(uv + 1) * n].copy_from_slice(&gx);
    }
    let mut dz = vec![0.0; t * m];
    for ti in 0..t {
        dz[ti * m..(ti + 1) * m].copy_from_slice(&gz);
    }
    Ok((
        Tensor::new(vec![u, v, n], dx)?,
        Tensor::new(vec![t, m], dz)?,
    ))
}

fn index_sums(
    xd: &[f64],
    grid: usize,
    n: usize,
    zd: &[f64],
    t: usize,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut sx = vec![0.0; n];
    for uv in 0..grid {
        for (s, v) in sx.iter_mut().zip(&xd[uv * n..(uv + 1) * n]) {
            *s += v;
        }
    }
    let mut sz = vec![0.0; m];
    for ti in 0..t {
        for (s, v) in sz.iter_mut().zip(&zd[ti * m..(ti + 1) * m]) {
            *s += v;
        }
    }
    (sx, sz)
}

/// Index-wise stacking: the slice at (u,v,t) is [x_{u,v}; z_t], giving
/// [U,V,T,N+M].
pub fn op_concatenate(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let (u, v, n, t, m) = check_pair("op_concatenate", x, z)?;
    let depth = n + m;
    let mut out = vec![0.0; u * v * t * depth];
    for uv in 0..u * v {
        let xs = &x.data[uv * n..(uv + 1) * n];
        for ti in 0..t {
            let zs = &z.data[ti * m..(ti + 1) * m];
            let os = &mut out[(uv * t + ti) * depth..(uv * t + ti + 1) * depth];
            os[..n].copy_from_slice(xs);
            os[n..].copy_from_slice(zs);
        }
    }
    Tensor::new(vec![u, v, t, depth], out)
}

pub(crate) fn op_concatenate_backward(
    x: &Tensor,
    z: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (u, v, n, t, m) = check_pair("op_concatenate", x, z)?;
    let depth = n + m;
    let mut dx = vec![0.0; u * v * n];
    let mut dz = vec![0.0; t * m];
    for uv in 0..u * v {
        let dxs = &mut dx[uv * n..(uv + 1) * n];
        for ti in 0..t {
            let gs = &upstream.data[(uv * t + ti) * depth..(uv * t + ti + 1) * depth];
            for i in 0..n {
                dxs[i] += gs[i];
            }
            let dzs = &mut dz[ti * m..(ti + 1) * m];
            for j in 0..m {
                dzs[j] += gs[n + j];
            }
        }
    }
    Ok((
        Tensor::new(vec![u, v, n], dx)?,
        Tensor::new(vec![t, m], dz)?,
    ))
}

/// Every per-index stacked descriptor laid out in (u,v,t) lexicographic
/// order as one flat vector of length U*V*T*(N+M); the order-discarding
/// input to a fully connected classifier.
pub fn flat_concatenate(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let stacked = op_concatenate(x, z)?;
    let n = stacked.numel();
    stacked.reshaped(vec![n])
}

/// Verifies that the pairwise products of reduced features are the same
/// linear combination of raw-feature products that expanding the
/// reduction weights predicts:
///
///   x_i z_j == sum_k sum_l (wx[i,k] * wz[j,l]) * x'[k] * z'[l]
///
/// which holds when every pre-activation is strictly positive so the
/// ReLU in the reduction acts as identity. Returns the largest absolute
/// deviation over all (i, j); inputs violating the positivity
/// precondition are rejected rather than checked.
pub fn factorization_identity_check(
    x_raw: &Tensor,
    z_raw: &Tensor,
    wx: &Tensor,
    wz: &Tensor,
) -> Result<f64> {
    if x_raw.rank() != 1 || z_raw.rank() != 1 || wx.rank() != 2 || wz.rank() != 2 {
        return Err(Error::shape(
            "factorization_identity_check",
            format!(
                "expected vectors and matrices, got x' {:?}, z' {:?}, wx {:?}, wz {:?}",
                x_raw.shape, z_raw.shape, wx.shape, wz.shape
            ),
        ));
    }
    let (n, np) = (wx.shape[0], wx.shape[1]);
    let (m, mp) = (wz.shape[0], wz.shape[1]);
    if x_raw.numel() != np || z_raw.numel() != mp {
        return Err(Error::shape(
            "factorization_identity_check",
            format!(
                "depth axis: x' has {}, wx expects {}; z' has {}, wz expects {}",
                x_raw.numel(),
                np,
                z_raw.numel(),
                mp
            ),
        ));
    }
    let pre = |w: &Tensor, raw: &Tensor, rows: usize, cols: usize, i: usize| -> f64 {
        let mut acc = 0.0;
        let _ = rows;
        for k in 0..cols {
            acc += w.data[i * cols + k] * raw.data[k];
        }
        acc
    };
    let mut xr = vec![0.0; n];
    for (i, slot) in xr.iter_mut().enumerate() {
        let a = pre(wx, x_raw, n, np, i);
        if a <= 0.0 {
            return Err(Error::precondition(
                "factorization_identity_check",
                format!("pre-activation not strictly positive: visual row {i} gives {a}"),
            ));
        }
        *slot = a;
    }
    let mut zr = vec![0.0; m];
    for (j, slot) in zr.iter_mut().enumerate() {
        let a = pre(wz, z_raw, m, mp, j);
        if a <= 0.0 {
            return Err(Error::precondition(
                "factorization_identity_check",
                format!("pre-activation not strictly positive: seismic row {j} gives {a}"),
            ));
        }
        *slot = a;
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            let lhs = xr[i] * zr[j];
            // expand the product of the two linear combinations over the
            // raw features
            let mut rhs = 0.0;
            for k in 0..np {
                let wxik = wx.data[i * np + k];
                if wxik == 0.0 {
                    continue;
                }
                let xk = x_raw.data[k];
                for l in 0..mp {
                    rhs += wxik * wz.data[j * mp + l] * xk * z_raw.data[l];
                }
            }
            let dev = (lhs - rhs).abs();
            if dev > worst {
                worst = dev;
            }
        }
    }
    Ok(worst)
}
