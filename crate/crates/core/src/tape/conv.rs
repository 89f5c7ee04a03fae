//! Convolution and pooling kernels.
//!
//! Convolutions lower to im2col followed by a matrix multiply, per sample.
//! The column buffer is laid out (Cin·prod(kernel), out_positions) so the
//! forward pass is one mm_nn per sample and both backward products reuse the
//! same buffer. Backward rebuilds the columns instead of keeping them alive
//! on the tape; im2col is cheap next to the matmuls it feeds.

use super::linalg::{mm_nn, mm_nt, mm_tn};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Output length of a 1-d convolution along one axis, or None when the
/// kernel does not fit.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil.checked_mul(k.checked_sub(1)?)?.checked_add(1)?;
    let padded = len.checked_add(2 * pad)?;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

fn bad_geometry(op: &'static str, xs: &[usize], ws: &[usize]) -> Error {
    Error::shape(op, format!("kernel {ws:?} does not fit input {xs:?} with the given stride/padding"))
}

// ---------------------------------------------------------------------------
// conv1d: x (B, Cin, L), w (Cout, Cin, K)

fn im2col_1d<E: Element>(
    x: &[E],
    col: &mut [E],
    cin: usize,
    l: usize,
    k: usize,
    lout: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) {
    for ci in 0..cin {
        let x_row = &x[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let row = ci * k + kk;
            let dst = &mut col[row * lout..(row + 1) * lout];
            for lo in 0..lout {
                let pos = lo * stride + kk * dil;
                dst[lo] = if pos >= pad && pos - pad < l { x_row[pos - pad] } else { E::ZERO };
            }
        }
    }
}

fn col2im_1d<E: Element>(
    dcol: &[E],
    dx: &mut [E],
    cin: usize,
    l: usize,
    k: usize,
    lout: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) {
    for ci in 0..cin {
        let dx_row = &mut dx[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let row = ci * k + kk;
            let src = &dcol[row * lout..(row + 1) * lout];
            for lo in 0..lout {
                let pos = lo * stride + kk * dil;
                if pos >= pad && pos - pad < l {
                    dx_row[pos - pad] = dx_row[pos - pad].add(src[lo]);
                }
            }
        }
    }
}

pub fn conv1d_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Result<Tensor<E>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
        return Err(Error::shape("conv1d", format!("input {xs:?} weight {ws:?}")));
    }
    let (b, cin, l) = (xs[0], xs[1], xs[2]);
    let (cout, k) = (ws[0], ws[2]);
    let lout = conv_out_len(l, k, stride, pad, dil).ok_or_else(|| bad_geometry("conv1d", xs, ws))?;

    let mut out = Tensor::zeros(vec![b, cout, lout]);
    let mut col = vec![E::ZERO; cin * k * lout];
    let x_stride = cin * l;
    let o_stride = cout * lout;
    for s in 0..b {
        im2col_1d(&x.data()[s * x_stride..(s + 1) * x_stride], &mut col, cin, l, k, lout, stride, pad, dil);
        mm_nn(w.data(), &col, &mut out.data_mut()[s * o_stride..(s + 1) * o_stride], cout, cin * k, lout);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    g: &Tensor<E>,
    stride: usize,
    pad: usize,
    dil: usize,
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, cin, l) = (xs[0], xs[1], xs[2]);
    let (cout, k) = (ws[0], ws[2]);
    let lout = g.shape()[2];

    let mut dx = need_dx.then(|| Tensor::zeros(xs.to_vec()));
    let mut dw = need_dw.then(|| Tensor::zeros(ws.to_vec()));
    let mut col = vec![E::ZERO; cin * k * lout];
    let mut dcol = vec![E::ZERO; cin * k * lout];
    let x_stride = cin * l;
    let o_stride = cout * lout;
    for s in 0..b {
        let g_s = &g.data()[s * o_stride..(s + 1) * o_stride];
        if need_dw {
            im2col_1d(&x.data()[s * x_stride..(s + 1) * x_stride], &mut col, cin, l, k, lout, stride, pad, dil);
            // dW += g_s @ colᵀ
            mm_nt(g_s, &col, dw.as_mut().unwrap().data_mut(), cout, lout, cin * k);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = wᵀ @ g_s
            dcol.iter_mut().for_each(|v| *v = E::ZERO);
            mm_tn(w.data(), g_s, &mut dcol, cin * k, cout, lout);
            col2im_1d(&dcol, &mut dx.data_mut()[s * x_stride..(s + 1) * x_stride], cin, l, k, lout, stride, pad, dil);
        }
    }
    Ok((dx, dw))
}

// ---------------------------------------------------------------------------
// conv2d: x (B, Cin, H, W), w (Cout, Cin, Kh, Kw)

#[allow(clippy::too_many_arguments)]
fn im2col_2d<E: Element>(
    x: &[E],
    col: &mut [E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    hout: usize,
    wout: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) {
    let npos = hout * wout;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for ho in 0..hout {
                    let hi = ho * stride.0 + ki;
                    let dst_row = &mut dst[ho * wout..(ho + 1) * wout];
                    if hi < pad.0 || hi - pad.0 >= h {
                        dst_row.iter_mut().for_each(|v| *v = E::ZERO);
                        continue;
                    }
                    let src_row = &plane[(hi - pad.0) * w..(hi - pad.0 + 1) * w];
                    for wo in 0..wout {
                        let wi = wo * stride.1 + kj;
                        dst_row[wo] =
                            if wi >= pad.1 && wi - pad.1 < w { src_row[wi - pad.1] } else { E::ZERO };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_2d<E: Element>(
    dcol: &[E],
    dx: &mut [E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    hout: usize,
    wout: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) {
    let npos = hout * wout;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &dcol[row * npos..(row + 1) * npos];
                for ho in 0..hout {
                    let hi = ho * stride.0 + ki;
                    if hi < pad.0 || hi - pad.0 >= h {
                        continue;
                    }
                    let plane_row = &mut plane[(hi - pad.0) * w..(hi - pad.0 + 1) * w];
                    let src_row = &src[ho * wout..(ho + 1) * wout];
                    for wo in 0..wout {
                        let wi = wo * stride.1 + kj;
                        if wi >= pad.1 && wi - pad.1 < w {
                            plane_row[wi - pad.1] = plane_row[wi - pad.1].add(src_row[wo]);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor<E>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
        return Err(Error::shape("conv2d", format!("input {xs:?} weight {ws:?}")));
    }
    let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let hout = conv_out_len(h, kh, stride.0, pad.0, 1).ok_or_else(|| bad_geometry("conv2d", xs, ws))?;
    let wout = conv_out_len(wd, kw, stride.1, pad.1, 1).ok_or_else(|| bad_geometry("conv2d", xs, ws))?;

    let mut out = Tensor::zeros(vec![b, cout, hout, wout]);
    let rows = cin * kh * kw;
    let npos = hout * wout;
    let mut col = vec![E::ZERO; rows * npos];
    let x_stride = cin * h * wd;
    let o_stride = cout * npos;
    for s in 0..b {
        im2col_2d(&x.data()[s * x_stride..(s + 1) * x_stride], &mut col, cin, h, wd, kh, kw, hout, wout, stride, pad);
        mm_nn(w.data(), &col, &mut out.data_mut()[s * o_stride..(s + 1) * o_stride], cout, rows, npos);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    g: &Tensor<E>,
    stride: (usize, usize),
    pad: (usize, usize),
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let (hout, wout) = (g.shape()[2], g.shape()[3]);

    let mut dx = need_dx.then(|| Tensor::zeros(xs.to_vec()));
    let mut dw = need_dw.then(|| Tensor::zeros(ws.to_vec()));
    let rows = cin * kh * kw;
    let npos = hout * wout;
    let mut col = vec![E::ZERO; rows * npos];
    let mut dcol = vec![E::ZERO; rows * npos];
    let x_stride = cin * h * wd;
    let o_stride = cout * npos;
    for s in 0..b {
        let g_s = &g.data()[s * o_stride..(s + 1) * o_stride];
        if need_dw {
            im2col_2d(&x.data()[s * x_stride..(s + 1) * x_stride], &mut col, cin, h, wd, kh, kw, hout, wout, stride, pad);
            mm_nt(g_s, &col, dw.as_mut().unwrap().data_mut(), cout, npos, rows);
        }
        if let Some(dx) = dx.as_mut() {
            dcol.iter_mut().for_each(|v| *v = E::ZERO);
            mm_tn(w.data(), g_s, &mut dcol, rows, cout, npos);
            col2im_2d(&dcol, &mut dx.data_mut()[s * x_stride..(s + 1) * x_stride], cin, h, wd, kh, kw, hout, wout, stride, pad);
        }
    }
    Ok((dx, dw))
}

// ---------------------------------------------------------------------------
// conv3d: x (B, Cin, T, H, W), w (Cout, Cin, Kt, Kh, Kw)

#[allow(clippy::too_many_arguments)]
fn im2col_3d<E: Element>(
    x: &[E],
    col: &mut [E],
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    kd: (usize, usize, usize),
    outd: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) {
    let (kt, kh, kw) = kd;
    let (tout, hout, wout) = outd;
    let npos = tout * hout * wout;
    for ci in 0..cin {
        let vol = &x[ci * t * h * w..(ci + 1) * t * h * w];
        for kti in 0..kt {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((ci * kt + kti) * kh + ki) * kw + kj;
                    let dst = &mut col[row * npos..(row + 1) * npos];
                    for to in 0..tout {
                        let ti = to * stride.0 + kti;
                        let dst_t = &mut dst[to * hout * wout..(to + 1) * hout * wout];
                        if ti < pad.0 || ti - pad.0 >= t {
                            dst_t.iter_mut().for_each(|v| *v = E::ZERO);
                            continue;
                        }
                        let plane = &vol[(ti - pad.0) * h * w..(ti - pad.0 + 1) * h * w];
                        for ho in 0..hout {
                            let hi = ho * stride.1 + ki;
                            let dst_row = &mut dst_t[ho * wout..(ho + 1) * wout];
                            if hi < pad.1 || hi - pad.1 >= h {
                                dst_row.iter_mut().for_each(|v| *v = E::ZERO);
                                continue;
                            }
                            let src_row = &plane[(hi - pad.1) * w..(hi - pad.1 + 1) * w];
                            for wo in 0..wout {
                                let wi = wo * stride.2 + kj;
                                dst_row[wo] = if wi >= pad.2 && wi - pad.2 < w {
                                    src_row[wi - pad.2]
                                } else {
                                    E::ZERO
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_3d<E: Element>(
    dcol: &[E],
    dx: &mut [E],
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    kd: (usize, usize, usize),
    outd: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) {
    let (kt, kh, kw) = kd;
    let (tout, hout, wout) = outd;
    let npos = tout * hout * wout;
    for ci in 0..cin {
        let vol = &mut dx[ci * t * h * w..(ci + 1) * t * h * w];
        for kti in 0..kt {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = ((ci * kt + kti) * kh + ki) * kw + kj;
                    let src = &dcol[row * npos..(row + 1) * npos];
                    for to in 0..tout {
                        let ti = to * stride.0 + kti;
                        if ti < pad.0 || ti - pad.0 >= t {
                            continue;
                        }
                        let src_t = &src[to * hout * wout..(to + 1) * hout * wout];
                        for ho in 0..hout {
                            let hi = ho * stride.1 + ki;
                            if hi < pad.1 || hi - pad.1 >= h {
                                continue;
                            }
                            let base = (ti - pad.0) * h * w + (hi - pad.1) * w;
                            let src_row = &src_t[ho * wout..(ho + 1) * wout];
                            for wo in 0..wout {
                                let wi = wo * stride.2 + kj;
                                if wi >= pad.2 && wi - pad.2 < w {
                                    vol[base + wi - pad.2] = vol[base + wi - pad.2].add(src_row[wo]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
) -> Result<Tensor<E>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
        return Err(Error::shape("conv3d", format!("input {xs:?} weight {ws:?}")));
    }
    let (b, cin, t, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (cout, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let tout = conv_out_len(t, kt, stride.0, pad.0, 1).ok_or_else(|| bad_geometry("conv3d", xs, ws))?;
    let hout = conv_out_len(h, kh, stride.1, pad.1, 1).ok_or_else(|| bad_geometry("conv3d", xs, ws))?;
    let wout = conv_out_len(wd, kw, stride.2, pad.2, 1).ok_or_else(|| bad_geometry("conv3d", xs, ws))?;

    let mut out = Tensor::zeros(vec![b, cout, tout, hout, wout]);
    let rows = cin * kt * kh * kw;
    let npos = tout * hout * wout;
    let mut col = vec![E::ZERO; rows * npos];
    let x_stride = cin * t * h * wd;
    let o_stride = cout * npos;
    for s in 0..b {
        im2col_3d(
            &x.data()[s * x_stride..(s + 1) * x_stride],
            &mut col,
            cin,
            t,
            h,
            wd,
            (kt, kh, kw),
            (tout, hout, wout),
            stride,
            pad,
        );
        mm_nn(w.data(), &col, &mut out.data_mut()[s * o_stride..(s + 1) * o_stride], cout, rows, npos);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    g: &Tensor<E>,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    need_dx: bool,
    need_dw: bool,
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, cin, t, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (cout, kt, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let (tout, hout, wout) = (g.shape()[2], g.shape()[3], g.shape()[4]);

    let mut dx = need_dx.then(|| Tensor::zeros(xs.to_vec()));
    let mut dw = need_dw.then(|| Tensor::zeros(ws.to_vec()));
    let rows = cin * kt * kh * kw;
    let npos = tout * hout * wout;
    let mut col = vec![E::ZERO; rows * npos];
    let mut dcol = vec![E::ZERO; rows * npos];
    let x_stride = cin * t * h * wd;
    let o_stride = cout * npos;
    for s in 0..b {
        let g_s = &g.data()[s * o_stride..(s + 1) * o_stride];
        if need_dw {
            im2col_3d(
                &x.data()[s * x_stride..(s + 1) * x_stride],
                &mut col,
                cin,
                t,
                h,
                wd,
                (kt, kh, kw),
                (tout, hout, wout),
                stride,
                pad,
            );
            mm_nt(g_s, &col, dw.as_mut().unwrap().data_mut(), cout, npos, rows);
        }
        if let Some(dx) = dx.as_mut() {
            dcol.iter_mut().for_each(|v| *v = E::ZERO);
            mm_tn(w.data(), g_s, &mut dcol, rows, cout, npos);
            col2im_3d(
                &dcol,
                &mut dx.data_mut()[s * x_stride..(s + 1) * x_stride],
                cin,
                t,
                h,
                wd,
                (kt, kh, kw),
                (tout, hout, wout),
                stride,
                pad,
            );
        }
    }
    Ok((dx, dw))
}

// ---------------------------------------------------------------------------
// maxpool2d: x (B, C, H, W)

/// Forward max pool. Padded positions never win; the argmax vector stores,
/// per output element, the flat index of the winner inside its (H, W) plane.
pub fn maxpool2d_forward<E: Element>(
    x: &Tensor<E>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<(Tensor<E>, Vec<u32>)> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("maxpool2d", format!("expected rank-4 input, got {xs:?}")));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hout = conv_out_len(h, kernel.0, stride.0, pad.0, 1)
        .ok_or_else(|| bad_geometry("maxpool2d", xs, &[kernel.0, kernel.1]))?;
    let wout = conv_out_len(w, kernel.1, stride.1, pad.1, 1)
        .ok_or_else(|| bad_geometry("maxpool2d", xs, &[kernel.0, kernel.1]))?;
    if h * w > u32::MAX as usize {
        return Err(Error::invalid("maxpool2d", "plane too large for argmax index"));
    }

    let mut out = Tensor::zeros(vec![b, c, hout, wout]);
    let mut argmax = vec![0u32; b * c * hout * wout];
    let out_data = out.data_mut();
    let mut oi = 0;
    for bc in 0..b * c {
        let plane = &x.data()[bc * h * w..(bc + 1) * h * w];
        for ho in 0..hout {
            for wo in 0..wout {
                let mut best = E::ZERO;
                let mut best_idx = usize::MAX;
                for ki in 0..kernel.0 {
                    let hi = ho * stride.0 + ki;
                    if hi < pad.0 || hi - pad.0 >= h {
                        continue;
                    }
                    for kj in 0..kernel.1 {
                        let wi = wo * stride.1 + kj;
                        if wi < pad.1 || wi - pad.1 >= w {
                            continue;
                        }
                        let idx = (hi - pad.0) * w + (wi - pad.1);
                        let v = plane[idx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                // Geometry guarantees at least one in-bounds position when pad < kernel.
                if best_idx == usize::MAX {
                    return Err(Error::invalid("maxpool2d", "window fully outside input"));
                }
                out_data[oi] = best;
                argmax[oi] = best_idx as u32;
                oi += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<E: Element>(
    x_shape: &[usize],
    g: &Tensor<E>,
    argmax: &[u32],
) -> Tensor<E> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let mut dx: Tensor<E> = Tensor::zeros(x_shape.to_vec());
    let npos = g.shape()[2] * g.shape()[3];
    let dx_data = dx.data_mut();
    for bc in 0..x_shape[0] * x_shape[1] {
        let base = bc * h * w;
        let g_plane = &g.data()[bc * npos..(bc + 1) * npos];
        let am = &argmax[bc * npos..(bc + 1) * npos];
        for (gi, &idx) in g_plane.iter().zip(am.iter()) {
            let at = base + idx as usize;
            dx_data[at] = dx_data[at].add(*gi);
        }
    }
    dx
}
