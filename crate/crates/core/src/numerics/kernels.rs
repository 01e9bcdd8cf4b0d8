//! Forward and vector-Jacobian kernels shared by the eager and recording
//! backends. Channel tensors use the `[batch, channels, time]` layout.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::numerics::gemm::{gemm, strided};
use crate::numerics::{NumericsError, Tensor};

pub const BN_EPS: f64 = 1e-5;

fn bct(x: &Tensor) -> Result<(usize, usize, usize), NumericsError> {
    match *x.shape() {
        [b, c, t] => Ok((b, c, t)),
        _ => Err(NumericsError::Rank {
            expected: 3,
            found: x.rank(),
        }),
    }
}

fn mismatch(expected: &[usize], found: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Pointwise channel mixing: y[b] = W x[b] + bias

pub fn linear_ch(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    let (nb, ci, t) = bct(x)?;
    let co = w.dim(0);
    if w.shape() != [co, ci] || bias.shape() != [co] {
        return Err(mismatch(&[co, ci], w.shape()));
    }
    let mut y = vec![0.0; nb * co * t];
    for b in 0..nb {
        let out = &mut y[b * co * t..(b + 1) * co * t];
        for (o, row) in out.chunks_mut(t).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(co, ci, t, 1.0, w.data(), false, &x.data()[b * ci * t..], false, 1.0, out);
    }
    Ok(Tensor::from_parts(vec![nb, co, t], y))
}

/// Returns `(dx, dw, dbias)`; entries are skipped when not requested.
pub fn linear_ch_vjp(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let (nb, ci, t) = (x.dim(0), x.dim(1), x.dim(2));
    let co = w.dim(0);
    let dx = need_x.then(|| {
        let mut dx = vec![0.0; nb * ci * t];
        for b in 0..nb {
            gemm(
                ci,
                co,
                t,
                1.0,
                w.data(),
                true,
                &dy.data()[b * co * t..],
                false,
                0.0,
                &mut dx[b * ci * t..(b + 1) * ci * t],
            );
        }
        Tensor::from_parts(vec![nb, ci, t], dx)
    });
    let dw = need_w.then(|| {
        let mut dw = vec![0.0; co * ci];
        for b in 0..nb {
            gemm(
                co,
                t,
                ci,
                1.0,
                &dy.data()[b * co * t..],
                false,
                &x.data()[b * ci * t..],
                true,
                1.0,
                &mut dw,
            );
        }
        Tensor::from_parts(vec![co, ci], dw)
    });
    let mut db = vec![0.0; co];
    for b in 0..nb {
        for (o, row) in dy.data()[b * co * t..(b + 1) * co * t].chunks(t).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    (dx, dw, Tensor::from_parts(vec![co], db))
}

// ---------------------------------------------------------------------------
// Dense layer on feature rows: y = x Wᵀ + bias, x: [batch, in]

pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    let (nb, fin) = match *x.shape() {
        [b, f] => (b, f),
        _ => {
            return Err(NumericsError::Rank {
                expected: 2,
                found: x.rank(),
            })
        }
    };
    let fout = w.dim(0);
    if w.shape() != [fout, fin] || bias.shape() != [fout] {
        return Err(mismatch(&[fout, fin], w.shape()));
    }
    let mut y = Vec::with_capacity(nb * fout);
    for _ in 0..nb {
        y.extend_from_slice(bias.data());
    }
    gemm(nb, fin, fout, 1.0, x.data(), false, w.data(), true, 1.0, &mut y);
    Ok(Tensor::from_parts(vec![nb, fout], y))
}

pub fn linear_vjp(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let (nb, fin) = (x.dim(0), x.dim(1));
    let fout = w.dim(0);
    let dx = need_x.then(|| {
        let mut dx = vec![0.0; nb * fin];
        gemm(nb, fout, fin, 1.0, dy.data(), false, w.data(), false, 0.0, &mut dx);
        Tensor::from_parts(vec![nb, fin], dx)
    });
    let dw = need_w.then(|| {
        let mut dw = vec![0.0; fout * fin];
        gemm(fout, nb, fin, 1.0, dy.data(), true, x.data(), false, 0.0, &mut dw);
        Tensor::from_parts(vec![fout, fin], dw)
    });
    let mut db = vec![0.0; fout];
    for row in dy.data().chunks(fout) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    (dx, dw, Tensor::from_parts(vec![fout], db))
}

// ---------------------------------------------------------------------------
// Truncated spectral convolution along time

/// Real DFT basis restricted to the lowest `modes` bins.
///
/// `forward` is `[t, 2·modes]` with columns `cos | −sin`, so that
/// `x · forward` yields `(Re X_k | Im X_k)`. `inverse` is `[2·modes, t]` and
/// applies the irfft weights (`1/n` for DC and Nyquist, `2/n` otherwise).
pub struct DftBasis {
    pub forward: Vec<f64>,
    pub inverse: Vec<f64>,
}

impl DftBasis {
    fn build(t: usize, modes: usize) -> Self {
        let mut forward = vec![0.0; t * 2 * modes];
        let mut inverse = vec![0.0; 2 * modes * t];
        for k in 0..modes {
            let weight = if k == 0 || (t % 2 == 0 && k == t / 2) {
                1.0 / t as f64
            } else {
                2.0 / t as f64
            };
            for s in 0..t {
                // reduce k·s mod t before scaling to keep the angle exact
                let phase = 2.0 * PI * ((k * s) % t) as f64 / t as f64;
                let (sin, cos) = phase.sin_cos();
                forward[s * 2 * modes + k] = cos;
                forward[s * 2 * modes + modes + k] = -sin;
                inverse[k * t + s] = weight * cos;
                inverse[(modes + k) * t + s] = -weight * sin;
            }
        }
        Self { forward, inverse }
    }

    pub fn cached(t: usize, modes: usize) -> Rc<DftBasis> {
        thread_local! {
            static CACHE: RefCell<HashMap<(usize, usize), Rc<DftBasis>>> = RefCell::new(HashMap::new());
        }
        CACHE.with(|c| {
            c.borrow_mut()
                .entry((t, modes))
                .or_insert_with(|| Rc::new(DftBasis::build(t, modes)))
                .clone()
        })
    }
}

/// Per-mode complex channel mixing `Y_k = R_k X_k` for spectra stored as
/// `[batch, ch, 2·modes]` (real parts then imaginary parts).
fn mix_modes(
    xs: &[f64],
    nb: usize,
    ci: usize,
    co: usize,
    modes: usize,
    wre: &Tensor,
    wim: &Tensor,
) -> Vec<f64> {
    let two_m = 2 * modes;
    let mut ys = vec![0.0; nb * co * two_m];
    let (xrs, xcs) = ((ci * two_m) as isize, two_m as isize);
    let (yrs, ycs) = ((co * two_m) as isize, two_m as isize);
    // W_kᵀ viewed as [ci, co]: element (i, o) lives at o·ci·m + i·m + k
    let (wrs, wcs) = (modes as isize, (ci * modes) as isize);
    for k in 0..modes {
        // SAFETY: all views index within the allocations sized above.
        unsafe {
            let xre = xs.as_ptr().add(k);
            let xim = xs.as_ptr().add(modes + k);
            let yre = ys.as_mut_ptr().add(k);
            let yim = ys.as_mut_ptr().add(modes + k);
            let wr = wre.data().as_ptr().add(k);
            let wi = wim.data().as_ptr().add(k);
            strided(nb, ci, co, 1.0, xre, xrs, xcs, wr, wrs, wcs, 0.0, yre, yrs, ycs);
            strided(nb, ci, co, -1.0, xim, xrs, xcs, wi, wrs, wcs, 1.0, yre, yrs, ycs);
            strided(nb, ci, co, 1.0, xim, xrs, xcs, wr, wrs, wcs, 0.0, yim, yrs, ycs);
            strided(nb, ci, co, 1.0, xre, xrs, xcs, wi, wrs, wcs, 1.0, yim, yrs, ycs);
        }
    }
    ys
}

/// Returns the output together with the truncated input spectrum, which the
/// backward pass needs.
pub fn spectral_conv(
    x: &Tensor,
    wre: &Tensor,
    wim: &Tensor,
    modes: usize,
) -> Result<(Tensor, Vec<f64>), NumericsError> {
    let (nb, ci, t) = bct(x)?;
    if modes == 0 || modes > t / 2 + 1 {
        return Err(NumericsError::ModesOutOfRange {
            modes,
            max: t / 2 + 1,
        });
    }
    let co = wre.dim(0);
    if wre.shape() != [co, ci, modes] || wim.shape() != wre.shape() {
        return Err(mismatch(&[co, ci, modes], wre.shape()));
    }
    let basis = DftBasis::cached(t, modes);
    let two_m = 2 * modes;
    let mut xs = vec![0.0; nb * ci * two_m];
    gemm(nb * ci, t, two_m, 1.0, x.data(), false, &basis.forward, false, 0.0, &mut xs);
    let ys = mix_modes(&xs, nb, ci, co, modes, wre, wim);
    let mut y = vec![0.0; nb * co * t];
    gemm(nb * co, two_m, t, 1.0, &ys, false, &basis.inverse, false, 0.0, &mut y);
    Ok((Tensor::from_parts(vec![nb, co, t], y), xs))
}

/// Returns `(dx, dwre, dwim)`.
#[allow(clippy::too_many_arguments)]
pub fn spectral_conv_vjp(
    xs: &[f64],
    x_shape: &[usize],
    wre: &Tensor,
    wim: &Tensor,
    modes: usize,
    dy: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<(Tensor, Tensor)>) {
    let (nb, ci, t) = (x_shape[0], x_shape[1], x_shape[2]);
    let co = wre.dim(0);
    let two_m = 2 * modes;
    let basis = DftBasis::cached(t, modes);
    let mut dys = vec![0.0; nb * co * two_m];
    gemm(nb * co, t, two_m, 1.0, dy.data(), false, &basis.inverse, true, 0.0, &mut dys);

    let (xrs, xcs) = ((ci * two_m) as isize, two_m as isize);
    let (yrs, ycs) = ((co * two_m) as isize, two_m as isize);
    let dx = need_x.then(|| {
        // dXre = dYre W_re + dYim W_im ; dXim = −dYre W_im + dYim W_re
        let mut dxs = vec![0.0; nb * ci * two_m];
        let (wrs, wcs) = ((ci * modes) as isize, modes as isize); // W_k as [co, ci]
        for k in 0..modes {
            // SAFETY: views stay within the buffers allocated above.
            unsafe {
                let dyre = dys.as_ptr().add(k);
                let dyim = dys.as_ptr().add(modes + k);
                let dxre = dxs.as_mut_ptr().add(k);
                let dxim = dxs.as_mut_ptr().add(modes + k);
                let wr = wre.data().as_ptr().add(k);
                let wi = wim.data().as_ptr().add(k);
                strided(nb, co, ci, 1.0, dyre, yrs, ycs, wr, wrs, wcs, 0.0, dxre, xrs, xcs);
                strided(nb, co, ci, 1.0, dyim, yrs, ycs, wi, wrs, wcs, 1.0, dxre, xrs, xcs);
                strided(nb, co, ci, -1.0, dyre, yrs, ycs, wi, wrs, wcs, 0.0, dxim, xrs, xcs);
                strided(nb, co, ci, 1.0, dyim, yrs, ycs, wr, wrs, wcs, 1.0, dxim, xrs, xcs);
            }
        }
        let mut dx = vec![0.0; nb * ci * t];
        gemm(nb * ci, two_m, t, 1.0, &dxs, false, &basis.forward, true, 0.0, &mut dx);
        Tensor::from_parts(vec![nb, ci, t], dx)
    });
    let dw = need_w.then(|| {
        // dWre_k = dYre_kᵀ Xre_k + dYim_kᵀ Xim_k ; dWim_k = −dYre_kᵀ Xim_k + dYim_kᵀ Xre_k
        let mut dwre = vec![0.0; co * ci * modes];
        let mut dwim = vec![0.0; co * ci * modes];
        let (wrs, wcs) = ((ci * modes) as isize, modes as isize);
        // dY_kᵀ viewed as [co, nb]
        let (trs, tcs) = (ycs, yrs);
        for k in 0..modes {
            // SAFETY: views stay within the buffers allocated above.
            unsafe {
                let dyre = dys.as_ptr().add(k);
                let dyim = dys.as_ptr().add(modes + k);
                let xre = xs.as_ptr().add(k);
                let xim = xs.as_ptr().add(modes + k);
                let gr = dwre.as_mut_ptr().add(k);
                let gi = dwim.as_mut_ptr().add(k);
                strided(co, nb, ci, 1.0, dyre, trs, tcs, xre, xrs, xcs, 0.0, gr, wrs, wcs);
                strided(co, nb, ci, 1.0, dyim, trs, tcs, xim, xrs, xcs, 1.0, gr, wrs, wcs);
                strided(co, nb, ci, -1.0, dyre, trs, tcs, xim, xrs, xcs, 0.0, gi, wrs, wcs);
                strided(co, nb, ci, 1.0, dyim, trs, tcs, xre, xrs, xcs, 1.0, gi, wrs, wcs);
            }
        }
        (
            Tensor::from_parts(vec![co, ci, modes], dwre),
            Tensor::from_parts(vec![co, ci, modes], dwim),
        )
    });
    (dx, dw)
}

// ---------------------------------------------------------------------------
// Batch normalization over the batch axis, one statistic per (channel, time)

pub struct BatchNormOut {
    pub y: Tensor,
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<BatchNormOut, NumericsError> {
    let (nb, c, t) = bct(x)?;
    let f = c * t;
    if gamma.shape() != [c, t] || beta.shape() != [c, t] {
        return Err(mismatch(&[c, t], gamma.shape()));
    }
    let mut mean = vec![0.0; f];
    for row in x.data().chunks(f) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nb as f64);
    let mut var = vec![0.0; f];
    for row in x.data().chunks(f) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= nb as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks(f) {
        for i in 0..f {
            let h = (row[i] - mean[i]) * inv_std[i];
            x_hat.push(h);
            y.push(gamma.data()[i] * h + beta.data()[i]);
        }
    }
    Ok(BatchNormOut {
        y: Tensor::from_parts(vec![nb, c, t], y),
        x_hat: Tensor::from_parts(vec![nb, c, t], x_hat),
        inv_std,
        mean,
        var,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_train_vjp(
    x_hat: &Tensor,
    inv_std: &[f64],
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let nb = x_hat.dim(0);
    let f = x_hat.len() / nb;
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for (hr, dr) in x_hat.data().chunks(f).zip(dy.data().chunks(f)) {
        for i in 0..f {
            dgamma[i] += dr[i] * hr[i];
            dbeta[i] += dr[i];
        }
    }
    let n = nb as f64;
    let mut dx = Vec::with_capacity(x_hat.len());
    for (hr, dr) in x_hat.data().chunks(f).zip(dy.data().chunks(f)) {
        for i in 0..f {
            let g = gamma.data()[i];
            // dx = γ·inv_std/B · (B·dy − Σdy − x̂·Σ(dy·x̂))
            dx.push(g * inv_std[i] / n * (n * dr[i] - dbeta[i] - hr[i] * dgamma[i]));
        }
    }
    let shape = x_hat.shape().to_vec();
    (
        Tensor::from_parts(shape, dx),
        Tensor::from_parts(gamma.shape().to_vec(), dgamma),
        Tensor::from_parts(gamma.shape().to_vec(), dbeta),
    )
}

/// Inference-mode normalization with frozen statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
) -> Result<(Tensor, Tensor), NumericsError> {
    let (_, c, t) = bct(x)?;
    let f = c * t;
    for p in [gamma, beta, mean, var] {
        if p.shape() != [c, t] {
            return Err(mismatch(&[c, t], p.shape()));
        }
    }
    let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks(f) {
        for i in 0..f {
            let h = (row[i] - mean.data()[i]) * inv_std[i];
            x_hat.push(h);
            y.push(gamma.data()[i] * h + beta.data()[i]);
        }
    }
    let shape = x.shape().to_vec();
    Ok((Tensor::from_parts(shape.clone(), y), Tensor::from_parts(shape, x_hat)))
}

/// Returns `(dx, dgamma, dbeta)` for the frozen-statistics normalization.
pub fn batch_norm_eval_vjp(x_hat: &Tensor, inv_std: &[f64], gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let f = inv_std.len();
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    let mut dx = Vec::with_capacity(dy.len());
    for (hr, dr) in x_hat.data().chunks(f).zip(dy.data().chunks(f)) {
        for i in 0..f {
            dgamma[i] += dr[i] * hr[i];
            dbeta[i] += dr[i];
            dx.push(dr[i] * gamma.data()[i] * inv_std[i]);
        }
    }
    (
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(gamma.shape().to_vec(), dgamma),
        Tensor::from_parts(gamma.shape().to_vec(), dbeta),
    )
}

// ---------------------------------------------------------------------------
// Feature-wise affine modulation: y = x·(1 + α) + β, α/β broadcast past axis 1

pub fn film(x: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor, NumericsError> {
    if x.rank() < 2 {
        return Err(NumericsError::Rank {
            expected: 2,
            found: x.rank(),
        });
    }
    let lead = [x.dim(0), x.dim(1)];
    if alpha.shape() != lead || beta.shape() != lead {
        return Err(mismatch(&lead, alpha.shape()));
    }
    let inner = x.len() / (lead[0] * lead[1]);
    let mut y = Vec::with_capacity(x.len());
    for (j, chunk) in x.data().chunks(inner).enumerate() {
        let s = 1.0 + alpha.data()[j];
        let o = beta.data()[j];
        y.extend(chunk.iter().map(|v| v * s + o));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), y))
}

/// Returns `(dx, dalpha, dbeta)`.
pub fn film_vjp(x: &Tensor, alpha: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let rows = alpha.len();
    let inner = x.len() / rows;
    let mut dx = Vec::with_capacity(x.len());
    let mut da = vec![0.0; rows];
    let mut db = vec![0.0; rows];
    for j in 0..rows {
        let s = 1.0 + alpha.data()[j];
        let xs = &x.data()[j * inner..(j + 1) * inner];
        let ds = &dy.data()[j * inner..(j + 1) * inner];
        for (xv, dv) in xs.iter().zip(ds) {
            dx.push(dv * s);
            da[j] += dv * xv;
            db[j] += dv;
        }
    }
    let ashape = alpha.shape().to_vec();
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(ashape.clone(), da),
        Tensor::from_parts(ashape, db),
    )
}

// ---------------------------------------------------------------------------
// Batched matmul: out[b] = op(a[b]) · op(b[b])

fn bmm_dims(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<(usize, usize, usize, usize), NumericsError> {
    if a.rank() != 3 || b.rank() != 3 {
        return Err(NumericsError::Rank {
            expected: 3,
            found: a.rank().min(b.rank()),
        });
    }
    let nb = a.dim(0);
    let (m, k) = if ta { (a.dim(2), a.dim(1)) } else { (a.dim(1), a.dim(2)) };
    let (k2, n) = if tb { (b.dim(2), b.dim(1)) } else { (b.dim(1), b.dim(2)) };
    if b.dim(0) != nb || k != k2 {
        return Err(mismatch(a.shape(), b.shape()));
    }
    Ok((nb, m, k, n))
}

pub fn bmm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor, NumericsError> {
    let (nb, m, k, n) = bmm_dims(a, ta, b, tb)?;
    let mut out = vec![0.0; nb * m * n];
    for i in 0..nb {
        gemm(
            m,
            k,
            n,
            1.0,
            &a.data()[i * m * k..],
            ta,
            &b.data()[i * k * n..],
            tb,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(Tensor::from_parts(vec![nb, m, n], out))
}

pub fn bmm_vjp(
    a: &Tensor,
    ta: bool,
    b: &Tensor,
    tb: bool,
    dc: &Tensor,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (nb, m, k, n) = bmm_dims(a, ta, b, tb).expect("shapes validated in forward");
    let da = need_a.then(|| {
        let mut da = vec![0.0; a.len()];
        for i in 0..nb {
            let dci = &dc.data()[i * m * n..];
            let bi = &b.data()[i * k * n..];
            let out = &mut da[i * m * k..(i + 1) * m * k];
            if ta {
                gemm(k, n, m, 1.0, bi, tb, dci, true, 0.0, out);
            } else {
                gemm(m, n, k, 1.0, dci, false, bi, !tb, 0.0, out);
            }
        }
        Tensor::from_parts(a.shape().to_vec(), da)
    });
    let db = need_b.then(|| {
        let mut db = vec![0.0; b.len()];
        for i in 0..nb {
            let dci = &dc.data()[i * m * n..];
            let ai = &a.data()[i * m * k..];
            let out = &mut db[i * k * n..(i + 1) * k * n];
            if tb {
                gemm(n, m, k, 1.0, dci, true, ai, ta, 0.0, out);
            } else {
                gemm(k, m, n, 1.0, ai, !ta, dci, false, 0.0, out);
            }
        }
        Tensor::from_parts(b.shape().to_vec(), db)
    });
    (da, db)
}

// ---------------------------------------------------------------------------
// Softmax over the last axis

pub fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("rank >= 1");
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = y.len();
        let mut total = 0.0;
        for v in row {
            let e = (v - max).exp();
            total += e;
            y.push(e);
        }
        y[start..].iter_mut().for_each(|e| *e /= total);
    }
    Tensor::from_parts(x.shape().to_vec(), y)
}

pub fn softmax_last_vjp(y: &Tensor, dy: &Tensor) -> Tensor {
    let n = *y.shape().last().expect("rank >= 1");
    let mut dx = Vec::with_capacity(y.len());
    for (yr, dr) in y.data().chunks(n).zip(dy.data().chunks(n)) {
        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(dr).map(|(yv, dv)| yv * (dv - dot)));
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Weighted pooling over time: y[b, c] = Σ_t x[b, c, t]·w[b, t]

pub fn time_pool(x: &Tensor, w: &Tensor) -> Result<Tensor, NumericsError> {
    let (nb, c, t) = bct(x)?;
    if w.shape() != [nb, t] {
        return Err(mismatch(&[nb, t], w.shape()));
    }
    let mut y = Vec::with_capacity(nb * c);
    for b in 0..nb {
        let wb = &w.data()[b * t..(b + 1) * t];
        for row in x.data()[b * c * t..(b + 1) * c * t].chunks(t) {
            y.push(row.iter().zip(wb).map(|(a, b)| a * b).sum());
        }
    }
    Ok(Tensor::from_parts(vec![nb, c], y))
}

pub fn time_pool_vjp(x_shape: &[usize], w: &Tensor, dy: &Tensor) -> Tensor {
    let (nb, c, t) = (x_shape[0], x_shape[1], x_shape[2]);
    let mut dx = Vec::with_capacity(nb * c * t);
    for b in 0..nb {
        let wb = &w.data()[b * t..(b + 1) * t];
        for ch in 0..c {
            let g = dy.data()[b * c + ch];
            dx.extend(wb.iter().map(|wv| g * wv));
        }
    }
    Tensor::from_parts(x_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Feature concatenation for `[batch, features]` tensors

pub fn concat_features(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let nb = parts.first().ok_or(NumericsError::EmptyAxis)?.dim(0);
    let mut width = 0;
    for p in parts {
        if p.rank() != 2 || p.dim(0) != nb {
            return Err(mismatch(&[nb, 0], p.shape()));
        }
        width += p.dim(1);
    }
    let mut y = Vec::with_capacity(nb * width);
    for b in 0..nb {
        for p in parts {
            let f = p.dim(1);
            y.extend_from_slice(&p.data()[b * f..(b + 1) * f]);
        }
    }
    Ok(Tensor::from_parts(vec![nb, width], y))
}

pub fn concat_features_vjp(widths: &[usize], dy: &Tensor) -> Vec<Tensor> {
    let nb = dy.dim(0);
    let total: usize = widths.iter().sum();
    let mut offset = 0;
    widths
        .iter()
        .map(|&f| {
            let mut g = Vec::with_capacity(nb * f);
            for b in 0..nb {
                g.extend_from_slice(&dy.data()[b * total + offset..b * total + offset + f]);
            }
            offset += f;
            Tensor::from_parts(vec![nb, f], g)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Weighted L1: Σ |pred − target|·w / norm

pub fn weighted_l1(pred: &Tensor, target: &Tensor, weight: Option<&Tensor>, norm: f64) -> Result<f64, NumericsError> {
    if pred.shape() != target.shape() {
        return Err(mismatch(pred.shape(), target.shape()));
    }
    let total: f64 = match weight {
        Some(w) => {
            if w.shape() != pred.shape() {
                return Err(mismatch(pred.shape(), w.shape()));
            }
            pred.data()
                .iter()
                .zip(target.data())
                .zip(w.data())
                .map(|((p, t), w)| (p - t).abs() * w)
                .sum()
        }
        None => pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum(),
    };
    Ok(total / norm)
}

pub fn weighted_l1_vjp(pred: &Tensor, target: &Tensor, weight: Option<&Tensor>, norm: f64, dy: f64) -> Tensor {
    let s = dy / norm;
    let data = match weight {
        Some(w) => pred
            .data()
            .iter()
            .zip(target.data())
            .zip(w.data())
            .map(|((p, t), w)| sign(p - t) * w * s)
            .collect(),
        None => pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| sign(p - t) * s)
            .collect(),
    };
    Tensor::from_parts(pred.shape().to_vec(), data)
}

/// Sign with `sign(0) = 0`, the L1 subgradient used throughout.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
