//! Pure forward and backward kernels shared by the tape and by tests.
//!
//! All loops use a fixed iteration order so results are bit-identical across
//! runs and platforms. Pointwise convolutions are written as row-wise
//! multiply-accumulate over contiguous spatial planes; that inner loop carries
//! almost all of the training cost.

use super::{Tensor, TensorError, TensorResult};

/// Space-to-depth: CxHxW -> (C*f^2)x(H/f)x(W/f).
///
/// Block ordering: output channel `c*f^2 + dy*f + dx` holds input pixel
/// `(y*f+dy, x*f+dx)` of channel `c`.
pub fn pixel_unshuffle(t: &Tensor, factor: usize) -> TensorResult<Tensor> {
    let (c, h, w) = t.dims3("pixel_unshuffle")?;
    if factor == 0 || h % factor != 0 {
        return Err(TensorError::NotDivisible {
            axis: "height",
            extent: h,
            factor,
        });
    }
    if w % factor != 0 {
        return Err(TensorError::NotDivisible {
            axis: "width",
            extent: w,
            factor,
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let src = t.data();
    let mut dst = vec![0.0f32; src.len()];
    for ci in 0..c {
        for dy in 0..factor {
            for dx in 0..factor {
                let co = ci * factor * factor + dy * factor + dx;
                for y in 0..oh {
                    let in_row = ci * h * w + (y * factor + dy) * w + dx;
                    let out_row = co * oh * ow + y * ow;
                    for x in 0..ow {
                        dst[out_row + x] = src[in_row + x * factor];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * factor * factor, oh, ow], dst)
}

/// Depth-to-space: exact inverse of `pixel_unshuffle` under the same ordering.
pub fn pixel_shuffle(t: &Tensor, factor: usize) -> TensorResult<Tensor> {
    let (c, h, w) = t.dims3("pixel_shuffle")?;
    if factor == 0 || c % (factor * factor) != 0 {
        return Err(TensorError::NotDivisible {
            axis: "channels",
            extent: c,
            factor: factor * factor,
        });
    }
    let oc = c / (factor * factor);
    let (oh, ow) = (h * factor, w * factor);
    let src = t.data();
    let mut dst = vec![0.0f32; src.len()];
    for co in 0..oc {
        for dy in 0..factor {
            for dx in 0..factor {
                let ci = co * factor * factor + dy * factor + dx;
                for y in 0..h {
                    let in_row = ci * h * w + y * w;
                    let out_row = co * oh * ow + (y * factor + dy) * ow + dx;
                    for x in 0..w {
                        dst[out_row + x * factor] = src[in_row + x];
                    }
                }
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], dst)
}

/// Per-channel kxk convolution, stride 1, zero same-padding.
pub fn conv_depthwise(t: &Tensor, kernels: &Tensor, bias: &Tensor) -> TensorResult<Tensor> {
    let (c, h, w) = t.dims3("conv_depthwise")?;
    let (kc, kh, kw) = kernels.dims3("conv_depthwise kernels")?;
    if kh != kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv_depthwise",
            left: kernels.shape().to_vec(),
            right: vec![kc, kh, kh],
        });
    }
    if kh % 2 == 0 {
        return Err(TensorError::EvenKernel { size: kh });
    }
    if kc != c || bias.numel() != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv_depthwise",
            left: t.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; c * h * w];
    depthwise_forward(
        t.data(),
        kernels.data(),
        bias.data(),
        c,
        h,
        w,
        kh,
        &mut out,
    );
    Tensor::new(vec![c, h, w], out)
}

pub(super) fn depthwise_forward(
    x: &[f32],
    kern: &[f32],
    bias: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    out: &mut [f32],
) {
    let pad = (k / 2) as isize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        let kplane = &kern[ci * k * k..(ci + 1) * k * k];
        let oplane = &mut out[ci * h * w..(ci + 1) * h * w];
        oplane.fill(bias[ci]);
        for (ki, &kv) in kplane.iter().enumerate() {
            if kv == 0.0 {
                continue;
            }
            let di = (ki / k) as isize - pad;
            let dj = (ki % k) as isize - pad;
            for y in 0..h as isize {
                let sy = y + di;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let (x0, x1) = clamp_span(dj, w);
                let orow = y as usize * w;
                let srow = sy as usize * w + (x0 as isize + dj) as usize;
                for i in 0..(x1 - x0) {
                    oplane[orow + x0 + i] += kv * plane[srow + i];
                }
            }
        }
    }
}

/// Valid output-x span [x0, x1) for a kernel column offset `dj`.
fn clamp_span(dj: isize, w: usize) -> (usize, usize) {
    let x0 = if dj < 0 { (-dj) as usize } else { 0 };
    let x1 = if dj > 0 { w - dj as usize } else { w };
    (x0.min(w), x1.min(w))
}

pub(super) fn depthwise_backward(
    x: &[f32],
    kern: &[f32],
    grad: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dx: Option<&mut [f32]>,
    dk: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    let pad = (k / 2) as isize;
    if let Some(dx) = dx {
        // d/dx is a correlation of grad with the flipped kernel.
        for ci in 0..c {
            let gplane = &grad[ci * h * w..(ci + 1) * h * w];
            let kplane = &kern[ci * k * k..(ci + 1) * k * k];
            let dplane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for (ki, &kv) in kplane.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                let di = (ki / k) as isize - pad;
                let dj = (ki % k) as isize - pad;
                // out[y, x] consumed in[y+di, x+dj]; so din[u, v] sums
                // kv * g[u-di, v-dj].
                for u in 0..h as isize {
                    let gy = u - di;
                    if gy < 0 || gy >= h as isize {
                        continue;
                    }
                    let (v0, v1) = clamp_span(-dj, w);
                    let drow = u as usize * w;
                    let grow = gy as usize * w + (v0 as isize - dj) as usize;
                    for i in 0..(v1 - v0) {
                        dplane[drow + v0 + i] += kv * gplane[grow + i];
                    }
                }
            }
        }
    }
    if let Some(dk) = dk {
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            let gplane = &grad[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k * k {
                let di = (ki / k) as isize - pad;
                let dj = (ki % k) as isize - pad;
                let mut acc = 0.0f32;
                for y in 0..h as isize {
                    let sy = y + di;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let (x0, x1) = clamp_span(dj, w);
                    let grow = y as usize * w;
                    let srow = sy as usize * w + (x0 as isize + dj) as usize;
                    for i in 0..(x1 - x0) {
                        acc += gplane[grow + x0 + i] * plane[srow + i];
                    }
                }
                dk[ci * k * k + ki] += acc;
            }
        }
    }
    if let Some(db) = db {
        for ci in 0..c {
            let gplane = &grad[ci * h * w..(ci + 1) * h * w];
            db[ci] += sum_slice(gplane);
        }
    }
}

/// 1x1 convolution: per-pixel affine map across channels.
pub fn conv_pointwise(t: &Tensor, weight: &Tensor, bias: &Tensor) -> TensorResult<Tensor> {
    let (c, h, w) = t.dims3("conv_pointwise")?;
    let (c_out, c_in) = match weight.shape() {
        &[o, i] => (o, i),
        _ => {
            return Err(TensorError::Rank {
                op: "conv_pointwise weight",
                expected: 2,
                got: weight.shape().to_vec(),
            })
        }
    };
    if c_in != c || bias.numel() != c_out {
        return Err(TensorError::ShapeMismatch {
            op: "conv_pointwise",
            left: t.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f32; c_out * h * w];
    pointwise_forward(t.data(), weight.data(), bias.data(), c_in, c_out, h * w, &mut out);
    Tensor::new(vec![c_out, h, w], out)
}

pub(super) fn pointwise_forward(
    x: &[f32],
    weight: &[f32],
    bias: &[f32],
    c_in: usize,
    c_out: usize,
    hw: usize,
    out: &mut [f32],
) {
    for o in 0..c_out {
        let orow = &mut out[o * hw..(o + 1) * hw];
        orow.fill(bias[o]);
        let wrow = &weight[o * c_in..(o + 1) * c_in];
        for (i, &wv) in wrow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let xrow = &x[i * hw..(i + 1) * hw];
            for p in 0..hw {
                orow[p] += wv * xrow[p];
            }
        }
    }
}

pub(super) fn pointwise_backward(
    x: &[f32],
    weight: &[f32],
    grad: &[f32],
    c_in: usize,
    c_out: usize,
    hw: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(dx) = dx {
        for o in 0..c_out {
            let grow = &grad[o * hw..(o + 1) * hw];
            let wrow = &weight[o * c_in..(o + 1) * c_in];
            for (i, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let drow = &mut dx[i * hw..(i + 1) * hw];
                for p in 0..hw {
                    drow[p] += wv * grow[p];
                }
            }
        }
    }
    if let Some(dw) = dw {
        for o in 0..c_out {
            let grow = &grad[o * hw..(o + 1) * hw];
            for i in 0..c_in {
                let xrow = &x[i * hw..(i + 1) * hw];
                dw[o * c_in + i] += dot(grow, xrow);
            }
        }
    }
    if let Some(db) = db {
        for o in 0..c_out {
            db[o] += sum_slice(&grad[o * hw..(o + 1) * hw]);
        }
    }
}

/// Four-lane dot product; the lane split keeps the reduction order fixed
/// while letting the compiler vectorize it.
pub(super) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0f32;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(super) fn sum_slice(a: &[f32]) -> f32 {
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i];
        acc[1] += a[i + 1];
        acc[2] += a[i + 2];
        acc[3] += a[i + 3];
    }
    let mut tail = 0.0f32;
    for i in chunks * 4..a.len() {
        tail += a[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
