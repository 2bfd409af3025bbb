//! Selective scan: the data-dependent linear recurrence
//!
//! ```text
//! Ā_t = exp(Δ_t,c · A_c)        (elementwise over the state)
//! h_t = Ā_t ⊙ h_{t-1} + Δ_t,c · B_t · x_t,c,   h_0 = 0
//! y_t,c = ⟨C_t, h_t⟩ + D_c · x_t,c
//! ```
//!
//! [`selective_scan`] is the time-major streaming kernel: one pass over time
//! holding only the `channels × state` recurrent state. The block uses the
//! channel-major kernels below, which give every channel its own contiguous
//! rows so channels run in parallel, and which provide the reverse-mode pass.

use crate::error::{Error, Result};
use crate::par;

/// Inputs to a scan in time-major layout.
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs<'a> {
    /// len × channels
    pub x: &'a [f64],
    /// len × channels, non-negative
    pub dt: &'a [f64],
    /// channels × state
    pub a: &'a [f64],
    /// len × state
    pub b: &'a [f64],
    /// len × state
    pub c: &'a [f64],
    /// channels
    pub d: &'a [f64],
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanInputs<'_> {
    pub fn validate(&self) -> Result<()> {
        let (l, ch, n) = (self.len, self.channels, self.state);
        if l == 0 || ch == 0 || n == 0 {
            return Err(Error::Shape("scan needs len, channels, state >= 1".into()));
        }
        for (name, got, want) in [
            ("x", self.x.len(), l * ch),
            ("dt", self.dt.len(), l * ch),
            ("a", self.a.len(), ch * n),
            ("b", self.b.len(), l * n),
            ("c", self.c.len(), l * n),
            ("d", self.d.len(), ch),
        ] {
            if got != want {
                return Err(Error::Shape(format!("scan {name}: expected {want}, got {got}")));
            }
        }
        let all_finite = [self.x, self.dt, self.a, self.b, self.c, self.d]
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::NonFinite("scan inputs"));
        }
        if self.dt.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("scan step sizes must be non-negative".into()));
        }
        Ok(())
    }
}

/// Runs the recurrence and returns `y` (len × channels).
pub fn selective_scan(inp: &ScanInputs) -> Result<Vec<f64>> {
    let mut y = vec![0.0; inp.len * inp.channels];
    selective_scan_into(inp, &mut y)?;
    Ok(y)
}

/// [`selective_scan`] into a caller-provided buffer. The only allocation is
/// the `channels × state` recurrent state.
pub fn selective_scan_into(inp: &ScanInputs, y: &mut [f64]) -> Result<()> {
    inp.validate()?;
    if y.len() != inp.len * inp.channels {
        return Err(Error::Shape("scan output buffer".into()));
    }
    let (ch, n) = (inp.channels, inp.state);
    let mut h = vec![0.0; ch * n];
    for t in 0..inp.len {
        let bt = &inp.b[t * n..(t + 1) * n];
        let ct = &inp.c[t * n..(t + 1) * n];
        for c in 0..ch {
            let dtv = inp.dt[t * ch + c];
            let xv = inp.x[t * ch + c];
            let ac = &inp.a[c * n..(c + 1) * n];
            let hc = &mut h[c * n..(c + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                hc[j] = (dtv * ac[j]).exp() * hc[j] + dtv * bt[j] * xv;
                acc += ct[j] * hc[j];
            }
            y[t * ch + c] = acc + inp.d[c] * xv;
        }
    }
    Ok(())
}

/// Channel-major scan operands: `x` and `dt` are channels × len.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChannelScan<'a> {
    pub x: &'a [f64],
    pub dt: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

/// Gradients of a channel-major scan (without the `D` skip term).
pub(crate) struct ChannelScanGrads {
    /// channels × len
    pub dx: Vec<f64>,
    /// channels × len
    pub ddt: Vec<f64>,
    /// channels × state
    pub da: Vec<f64>,
    /// len × state
    pub db: Vec<f64>,
    /// len × state
    pub dc: Vec<f64>,
}

const CHANNEL_GROUP: usize = 8;

impl ChannelScan<'_> {
    #[inline]
    fn order(&self, step: usize, reverse: bool) -> usize {
        if reverse {
            self.len - 1 - step
        } else {
            step
        }
    }

    /// Adds the scan output (without `D`) of one channel to `y` (len).
    fn forward_channel(&self, ch: usize, reverse: bool, y: &mut [f64], h: &mut [f64]) {
        let n = self.state;
        let a = &self.a[ch * n..(ch + 1) * n];
        let xs = &self.x[ch * self.len..(ch + 1) * self.len];
        let dts = &self.dt[ch * self.len..(ch + 1) * self.len];
        h.iter_mut().for_each(|v| *v = 0.0);
        for step in 0..self.len {
            let t = self.order(step, reverse);
            let (dtv, xv) = (dts[t], xs[t]);
            let bt = &self.b[t * n..(t + 1) * n];
            let ct = &self.c[t * n..(t + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                h[j] = (dtv * a[j]).exp() * h[j] + dtv * bt[j] * xv;
                acc += ct[j] * h[j];
            }
            y[t] += acc;
        }
    }

    /// Scan output (channels × len, no `D` term) for the requested directions.
    pub fn forward(&self, directions: &[bool]) -> Vec<f64> {
        let mut y = vec![0.0; self.channels * self.len];
        par::for_each_chunk_mut(&mut y, CHANNEL_GROUP * self.len, |g, block| {
            let mut h = vec![0.0; self.state];
            for (i, yc) in block.chunks_exact_mut(self.len).enumerate() {
                for &rev in directions {
                    self.forward_channel(g * CHANNEL_GROUP + i, rev, yc, &mut h);
                }
            }
        });
        y
    }

    /// Reverse-mode pass for one channel and direction. Recomputes the state
    /// history into `hist` (len × state) and `decay` (len × state), then walks
    /// time backwards.
    #[allow(clippy::too_many_arguments)]
    fn backward_channel(
        &self,
        ch: usize,
        reverse: bool,
        dy: &[f64],
        hist: &mut [f64],
        decay: &mut [f64],
        dx: &mut [f64],
        ddt: &mut [f64],
        da: &mut [f64],
        db: &mut [f64],
        dc: &mut [f64],
    ) {
        let n = self.state;
        let a = &self.a[ch * n..(ch + 1) * n];
        let xs = &self.x[ch * self.len..(ch + 1) * self.len];
        let dts = &self.dt[ch * self.len..(ch + 1) * self.len];

        let mut prev = 0usize;
        for step in 0..self.len {
            let t = self.order(step, reverse);
            let (dtv, xv) = (dts[t], xs[t]);
            for j in 0..n {
                let e = (dtv * a[j]).exp();
                let hp = if step == 0 { 0.0 } else { hist[prev * n + j] };
                decay[t * n + j] = e;
                hist[t * n + j] = e * hp + dtv * self.b[t * n + j] * xv;
            }
            prev = t;
        }

        let mut g = vec![0.0; n];
        for step in (0..self.len).rev() {
            let t = self.order(step, reverse);
            let prev_t = (step > 0).then(|| self.order(step - 1, reverse));
            let (dtv, xv, dyv) = (dts[t], xs[t], dy[t]);
            let mut ddt_acc = 0.0;
            let mut dx_acc = 0.0;
            for j in 0..n {
                let idx = t * n + j;
                g[j] += dyv * self.c[idx];
                dc[idx] += dyv * hist[idx];
                let e = decay[idx];
                let hp = prev_t.map_or(0.0, |p| hist[p * n + j]);
                let d_decay = g[j] * hp;
                let bj = self.b[idx];
                ddt_acc += d_decay * e * a[j] + g[j] * bj * xv;
                da[j] += d_decay * e * dtv;
                db[idx] += g[j] * dtv * xv;
                dx_acc += g[j] * dtv * bj;
                g[j] *= e;
            }
            dx[t] += dx_acc;
            ddt[t] += ddt_acc;
        }
    }

    /// Gradients given `dy` (channels × len) shared by all `directions`.
    pub fn backward(&self, dy: &[f64], directions: &[bool]) -> ChannelScanGrads {
        let (l, n, chs) = (self.len, self.state, self.channels);
        let groups: Vec<usize> = (0..chs.div_ceil(CHANNEL_GROUP)).collect();
        let parts = par::map(&groups, |&g| {
            let lo = g * CHANNEL_GROUP;
            let hi = (lo + CHANNEL_GROUP).min(chs);
            let mut dx = vec![0.0; (hi - lo) * l];
            let mut ddt = vec![0.0; (hi - lo) * l];
            let mut da = vec![0.0; (hi - lo) * n];
            let mut db = vec![0.0; l * n];
            let mut dc = vec![0.0; l * n];
            let mut hist = vec![0.0; l * n];
            let mut decay = vec![0.0; l * n];
            for ch in lo..hi {
                let i = ch - lo;
                for &rev in directions {
                    self.backward_channel(
                        ch,
                        rev,
                        &dy[ch * l..(ch + 1) * l],
                        &mut hist,
                        &mut decay,
                        &mut dx[i * l..(i + 1) * l],
                        &mut ddt[i * l..(i + 1) * l],
                        &mut da[i * n..(i + 1) * n],
                        &mut db,
                        &mut dc,
                    );
                }
            }
            (dx, ddt, da, db, dc)
        });
        let mut out = ChannelScanGrads {
            dx: Vec::with_capacity(chs * l),
            ddt: Vec::with_capacity(chs * l),
            da: Vec::with_capacity(chs * n),
            db: vec![0.0; l * n],
            dc: vec![0.0; l * n],
        };
        for (dx, ddt, da, db, dc) in parts {
            out.dx.extend(dx);
            out.ddt.extend(ddt);
            out.da.extend(da);
            for (o, v) in out.db.iter_mut().zip(&db) {
                *o += v;
            }
            for (o, v) in out.dc.iter_mut().zip(&dc) {
                *o += v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_reduces_to_skip() {
        let x = [1.0, -2.0, 3.0, 0.5];
        let inp = ScanInputs {
            x: &x,
            dt: &[0.0; 4],
            a: &[-1.0, -2.0, -0.5, -3.0],
            b: &[1.0, 2.0, 3.0, 4.0],
            c: &[1.0, 1.0, 1.0, 1.0],
            d: &[2.0, -1.0],
            len: 2,
            channels: 2,
            state: 2,
        };
        let y = selective_scan(&inp).unwrap();
        assert_eq!(y, vec![2.0, 2.0, 6.0, -0.5]);
    }

    #[test]
    fn integrator_case_is_a_cumulative_sum() {
        let inp = ScanInputs {
            x: &[1.0, 1.0, 1.0],
            dt: &[1.0, 1.0, 1.0],
            a: &[0.0],
            b: &[1.0, 1.0, 1.0],
            c: &[1.0, 1.0, 1.0],
            d: &[0.0],
            len: 3,
            channels: 1,
            state: 1,
        };
        assert_eq!(selective_scan(&inp).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn channel_major_kernel_matches_time_major_scan() {
        use crate::linalg::transpose;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (l, ch, n) = (37, 11, 4);
        let mut draw = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.random_range(lo..hi)).collect() };
        let x = draw(l * ch, -1.0, 1.0);
        let dt = draw(l * ch, 0.0, 0.5);
        let a = draw(ch * n, -2.0, -0.1);
        let b = draw(l * n, -1.0, 1.0);
        let c = draw(l * n, -1.0, 1.0);
        let zeros = vec![0.0; ch];
        let time_major = |x: &[f64], dt: &[f64], b: &[f64], c: &[f64]| {
            selective_scan(&ScanInputs {
                x,
                dt,
                a: &a,
                b,
                c,
                d: &zeros,
                len: l,
                channels: ch,
                state: n,
            })
            .unwrap()
        };
        let rev_rows = |v: &[f64], w: usize| -> Vec<f64> { v.chunks(w).rev().flatten().copied().collect() };
        let fwd = time_major(&x, &dt, &b, &c);
        let bwd = rev_rows(
            &time_major(
                &rev_rows(&x, ch),
                &rev_rows(&dt, ch),
                &rev_rows(&b, n),
                &rev_rows(&c, n),
            ),
            ch,
        );

        let (xc, dtc) = (transpose(&x, l, ch), transpose(&dt, l, ch));
        let k = ChannelScan {
            x: &xc,
            dt: &dtc,
            a: &a,
            b: &b,
            c: &c,
            len: l,
            channels: ch,
            state: n,
        };
        let only_fwd = transpose(&k.forward(&[false]), ch, l);
        let both = transpose(&k.forward(&[false, true]), ch, l);
        for i in 0..l * ch {
            assert!((only_fwd[i] - fwd[i]).abs() < 1e-12);
            assert!((both[i] - fwd[i] - bwd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut inp = ScanInputs {
            x: &[1.0],
            dt: &[-0.1],
            a: &[-1.0],
            b: &[1.0],
            c: &[1.0],
            d: &[0.0],
            len: 1,
            channels: 1,
            state: 1,
        };
        assert!(matches!(selective_scan(&inp), Err(Error::InvalidInput(_))));
        inp.dt = &[f64::NAN];
        assert!(matches!(selective_scan(&inp), Err(Error::NonFinite(_))));
        inp.dt = &[0.1, 0.2];
        assert!(matches!(selective_scan(&inp), Err(Error::Shape(_))));
    }
}
