//! Gated pre-norm residual block around the selective scan.

use super::params::BlockParams;
use super::scan::ChannelScan;
use crate::error::{Error, Result};
use crate::linalg::{
    add_column_sums, matmul, matmul_into, matmul_nt_into, matmul_tn_into, sigmoid, silu, silu_grad, softplus, transpose,
};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Forward values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    len: usize,
    inv_rms: Vec<f64>,
    normed: Vec<f64>,
    v: Vec<f64>,
    xp: Vec<f64>,
    xc: Vec<f64>,
    x: Vec<f64>,
    dt_pre: Vec<f64>,
    dt: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    gated: Vec<f64>,
}

/// RMS normalization of each row. Returns `(normed, inv_rms)`.
pub(crate) fn rms_rows(u: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut normed = vec![0.0; u.len()];
    let mut inv = Vec::with_capacity(u.len() / d);
    for (row, out) in u.chunks_exact(d).zip(normed.chunks_exact_mut(d)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (ms + NORM_EPS).sqrt();
        for (o, v) in out.iter_mut().zip(row) {
            *o = v * r;
        }
        inv.push(r);
    }
    (normed, inv)
}

/// Backward of `v = normed ⊙ g`: accumulates `dg` and returns `du`.
pub(crate) fn rms_rows_backward(dv: &[f64], normed: &[f64], inv: &[f64], g: &[f64], dg: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let mut du = vec![0.0; dv.len()];
    for (t, out) in du.chunks_exact_mut(d).enumerate() {
        let dvr = &dv[t * d..(t + 1) * d];
        let nr = &normed[t * d..(t + 1) * d];
        let mut dot = 0.0;
        for j in 0..d {
            dg[j] += dvr[j] * nr[j];
            dot += dvr[j] * g[j] * nr[j];
        }
        let mean = dot / d as f64;
        for j in 0..d {
            out[j] = inv[t] * (dvr[j] * g[j] - nr[j] * mean);
        }
    }
    du
}

fn check_shapes(u: &[f64], len: usize, p: &BlockParams) -> Result<()> {
    if len == 0 || u.len() != len * p.width() {
        return Err(Error::Shape(format!(
            "block input has {} values, expected {len}×{}",
            u.len(),
            p.width()
        )));
    }
    Ok(())
}

fn directions(p: &BlockParams) -> &'static [bool] {
    if p.bidirectional {
        &[false, true]
    } else {
        &[false]
    }
}

/// Applies one block to `u` (len × width).
pub fn block_forward(u: &[f64], len: usize, p: &BlockParams) -> Result<Vec<f64>> {
    check_shapes(u, len, p)?;
    Ok(forward_impl(u, len, p, false).0)
}

pub(crate) fn block_forward_cached(u: &[f64], len: usize, p: &BlockParams) -> Result<(Vec<f64>, BlockCache)> {
    check_shapes(u, len, p)?;
    let (out, cache) = forward_impl(u, len, p, true);
    Ok((out, cache.expect("cache requested")))
}

fn forward_impl(u: &[f64], len: usize, p: &BlockParams, keep: bool) -> (Vec<f64>, Option<BlockCache>) {
    let (d, di, n, k) = (p.width(), p.d_inner(), p.d_state(), p.conv_width());
    let (normed, inv_rms) = rms_rows(u, d);
    let g = p.norm.data();
    let v: Vec<f64> = normed.iter().enumerate().map(|(i, &x)| x * g[i % d]).collect();
    let xp = matmul(&v, p.in_x.data(), len, d, di);
    let z = matmul(&v, p.in_z.data(), len, d, di);

    // Causal depthwise conv: weight k-1 multiplies the current frame.
    let cw = p.conv_w.data();
    let cb = p.conv_b.data();
    let mut xc = vec![0.0; len * di];
    for t in 0..len {
        let row = &mut xc[t * di..(t + 1) * di];
        row.copy_from_slice(cb);
        for j in 0..k {
            let Some(src) = (t + j + 1).checked_sub(k) else {
                continue;
            };
            let xs = &xp[src * di..(src + 1) * di];
            for c in 0..di {
                row[c] += cw[c * k + j] * xs[c];
            }
        }
    }
    let x: Vec<f64> = xc.iter().map(|&v| silu(v)).collect();

    let mut dt_pre = matmul(&x, p.scan.w_dt.data(), len, di, di);
    for row in dt_pre.chunks_exact_mut(di) {
        for (v, b) in row.iter_mut().zip(p.scan.b_dt.data()) {
            *v += b;
        }
    }
    let dt: Vec<f64> = dt_pre.iter().map(|&v| softplus(v)).collect();
    let b = matmul(&x, p.scan.w_b.data(), len, di, n);
    let c = matmul(&x, p.scan.w_c.data(), len, di, n);
    let a: Vec<f64> = p.scan.a_log.data().iter().map(|v| -v.exp()).collect();

    let x_cm = transpose(&x, len, di);
    let dt_cm = transpose(&dt, len, di);
    let scan = ChannelScan {
        x: &x_cm,
        dt: &dt_cm,
        a: &a,
        b: &b,
        c: &c,
        len,
        channels: di,
        state: n,
    };
    let mut y = transpose(&scan.forward(directions(p)), di, len);
    let dskip = p.scan.d.data();
    for (yr, xr) in y.chunks_exact_mut(di).zip(x.chunks_exact(di)) {
        for c in 0..di {
            yr[c] += dskip[c] * xr[c];
        }
    }
    let gated: Vec<f64> = y.iter().zip(&z).map(|(&yv, &zv)| yv * silu(zv)).collect();
    let mut out = u.to_vec();
    matmul_into(&gated, p.out.data(), len, di, d, &mut out, true);

    let cache = keep.then(|| BlockCache {
        len,
        inv_rms,
        normed,
        v,
        xp,
        xc,
        x,
        dt_pre,
        dt,
        b,
        c,
        z,
        y,
        gated,
    });
    (out, cache)
}

/// Reverse-mode pass. Accumulates parameter gradients into `grads` and
/// returns the gradient with respect to the block input.
pub(crate) fn block_backward(dout: &[f64], cache: &BlockCache, p: &BlockParams, grads: &mut BlockParams) -> Vec<f64> {
    let len = cache.len;
    let (d, di, n, k) = (p.width(), p.d_inner(), p.d_state(), p.conv_width());

    matmul_tn_into(&cache.gated, dout, len, di, d, grads.out.data_mut(), true);
    let mut dgated = vec![0.0; len * di];
    matmul_nt_into(dout, p.out.data(), len, d, di, &mut dgated, false);

    let mut dy = vec![0.0; len * di];
    let mut dz = vec![0.0; len * di];
    for i in 0..len * di {
        let zv = cache.z[i];
        dy[i] = dgated[i] * silu(zv);
        dz[i] = dgated[i] * cache.y[i] * silu_grad(zv);
    }

    let dskip = p.scan.d.data();
    let mut dx = vec![0.0; len * di];
    {
        let gd = grads.scan.d.data_mut();
        for t in 0..len {
            for c in 0..di {
                let i = t * di + c;
                gd[c] += dy[i] * cache.x[i];
                dx[i] = dskip[c] * dy[i];
            }
        }
    }

    let a: Vec<f64> = p.scan.a_log.data().iter().map(|v| -v.exp()).collect();
    let x_cm = transpose(&cache.x, len, di);
    let dt_cm = transpose(&cache.dt, len, di);
    let scan = ChannelScan {
        x: &x_cm,
        dt: &dt_cm,
        a: &a,
        b: &cache.b,
        c: &cache.c,
        len,
        channels: di,
        state: n,
    };
    let sg = scan.backward(&transpose(&dy, len, di), directions(p));
    for (o, v) in dx.iter_mut().zip(transpose(&sg.dx, di, len)) {
        *o += v;
    }
    for ((o, da), av) in grads.scan.a_log.data_mut().iter_mut().zip(&sg.da).zip(&a) {
        *o += da * av;
    }

    matmul_tn_into(&cache.x, &sg.db, len, di, n, grads.scan.w_b.data_mut(), true);
    matmul_nt_into(&sg.db, p.scan.w_b.data(), len, n, di, &mut dx, true);
    matmul_tn_into(&cache.x, &sg.dc, len, di, n, grads.scan.w_c.data_mut(), true);
    matmul_nt_into(&sg.dc, p.scan.w_c.data(), len, n, di, &mut dx, true);

    let mut ddt_pre = transpose(&sg.ddt, di, len);
    for (g, &pre) in ddt_pre.iter_mut().zip(&cache.dt_pre) {
        *g *= sigmoid(pre);
    }
    matmul_tn_into(&cache.x, &ddt_pre, len, di, di, grads.scan.w_dt.data_mut(), true);
    add_column_sums(&ddt_pre, di, grads.scan.b_dt.data_mut());
    matmul_nt_into(&ddt_pre, p.scan.w_dt.data(), len, di, di, &mut dx, true);

    let dxc: Vec<f64> = dx.iter().zip(&cache.xc).map(|(&g, &pre)| g * silu_grad(pre)).collect();
    add_column_sums(&dxc, di, grads.conv_b.data_mut());
    let cw = p.conv_w.data();
    let mut dxp = vec![0.0; len * di];
    {
        let gcw = grads.conv_w.data_mut();
        for t in 0..len {
            let gr = &dxc[t * di..(t + 1) * di];
            for j in 0..k {
                let Some(src) = (t + j + 1).checked_sub(k) else {
                    continue;
                };
                for c in 0..di {
                    gcw[c * k + j] += gr[c] * cache.xp[src * di + c];
                    dxp[src * di + c] += gr[c] * cw[c * k + j];
                }
            }
        }
    }

    matmul_tn_into(&cache.v, &dxp, len, d, di, grads.in_x.data_mut(), true);
    matmul_tn_into(&cache.v, &dz, len, d, di, grads.in_z.data_mut(), true);
    let mut dv = vec![0.0; len * d];
    matmul_nt_into(&dxp, p.in_x.data(), len, di, d, &mut dv, false);
    matmul_nt_into(&dz, p.in_z.data(), len, di, d, &mut dv, true);

    let mut du = rms_rows_backward(&dv, &cache.normed, &cache.inv_rms, p.norm.data(), grads.norm.data_mut());
    for (o, g) in du.iter_mut().zip(dout) {
        *o += g;
    }
    du
}
