//! Raw kernels over `[C, H, W]` planes stored row-major.
//!
//! Convolutions go through a patch matrix (one row of taps per output pixel)
//! so the inner loops are contiguous dot products and `axpy`s.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Patch matrix with one row per output pixel and one column per
/// `(ic, ky, kx)` tap, zero where the tap falls in the padding.
fn im2row(g: &ConvGeom, input: &[f32]) -> Vec<f32> {
    let (ih, iw, k) = (g.in_h, g.in_w, g.kernel);
    let taps = g.in_channels * k * k;
    let mut rows = vec![0.0f32; g.out_h * g.out_w * taps];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut rows[(oy * g.out_w + ox) * taps..][..taps];
            for ic in 0..g.in_channels {
                let src = &input[ic * ih * iw..(ic + 1) * ih * iw];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let dst = &mut row[(ic * k + ky) * k..][..k];
                    for (kx, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < iw as isize {
                            *d = src[iy as usize * iw + ix as usize];
                        }
                    }
                }
            }
        }
    }
    rows
}

/// Scatter-adds a patch-matrix gradient back onto the input planes.
fn row2im(g: &ConvGeom, rows: &[f32], grad_in: &mut [f32]) {
    let (ih, iw, k) = (g.in_h, g.in_w, g.kernel);
    let taps = g.in_channels * k * k;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &rows[(oy * g.out_w + ox) * taps..][..taps];
            for ic in 0..g.in_channels {
                let dst = &mut grad_in[ic * ih * iw..(ic + 1) * ih * iw];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let src = &row[(ic * k + ky) * k..][..k];
                    for (kx, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < iw as isize {
                            dst[iy as usize * iw + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += alpha * s;
    }
}

pub fn conv_forward(g: &ConvGeom, input: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    let taps = g.in_channels * g.kernel * g.kernel;
    let pixels = g.out_h * g.out_w;
    let rows = im2row(g, input);
    for oc in 0..g.out_channels {
        let w = &weight[oc * taps..(oc + 1) * taps];
        let plane = &mut out[oc * pixels..(oc + 1) * pixels];
        for (p, o) in plane.iter_mut().enumerate() {
            *o = bias[oc] + dot(w, &rows[p * taps..(p + 1) * taps]);
        }
    }
}

pub fn conv_backward_input(g: &ConvGeom, grad_out: &[f32], weight: &[f32], grad_in: &mut [f32]) {
    let taps = g.in_channels * g.kernel * g.kernel;
    let pixels = g.out_h * g.out_w;
    let mut rows = vec![0.0f32; pixels * taps];
    for (p, row) in rows.chunks_exact_mut(taps).enumerate() {
        for oc in 0..g.out_channels {
            let gv = grad_out[oc * pixels + p];
            if gv != 0.0 {
                axpy(gv, &weight[oc * taps..(oc + 1) * taps], row);
            }
        }
    }
    row2im(g, &rows, grad_in);
}

/// Accumulates weight and bias gradients into `grad_w` / `grad_b`.
pub fn conv_backward_weights(
    g: &ConvGeom,
    input: &[f32],
    grad_out: &[f32],
    grad_w: &mut [f32],
    grad_b: &mut [f32],
) {
    let taps = g.in_channels * g.kernel * g.kernel;
    let pixels = g.out_h * g.out_w;
    let rows = im2row(g, input);
    for oc in 0..g.out_channels {
        let gplane = &grad_out[oc * pixels..(oc + 1) * pixels];
        grad_b[oc] += gplane.iter().sum::<f32>();
        let gw = &mut grad_w[oc * taps..(oc + 1) * taps];
        for (p, &gv) in gplane.iter().enumerate() {
            if gv != 0.0 {
                axpy(gv, &rows[p * taps..(p + 1) * taps], gw);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub size: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Max pooling; records the flat input index of each selected element.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool_forward(g: &PoolGeom, input: &[f32], out: &mut [f32], argmax: &mut [u32]) {
    for c in 0..g.channels {
        let base = c * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..g.size {
                    let iy = oy * g.stride + ky;
                    for kx in 0..g.size {
                        let idx = base + iy * g.in_w + ox * g.stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * g.out_h + oy) * g.out_w + ox;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub fn maxpool_backward(grad_out: &[f32], argmax: &[u32], grad_in: &mut [f32]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] += g;
    }
}

pub fn avgpool_forward(g: &PoolGeom, input: &[f32], out: &mut [f32]) {
    let inv = 1.0 / (g.size * g.size) as f32;
    for c in 0..g.channels {
        let base = c * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = 0.0f32;
                for ky in 0..g.size {
                    let row = base + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                    acc += input[row..row + g.size].iter().sum::<f32>();
                }
                out[(c * g.out_h + oy) * g.out_w + ox] = acc * inv;
            }
        }
    }
}

pub fn avgpool_backward(g: &PoolGeom, grad_out: &[f32], grad_in: &mut [f32]) {
    let inv = 1.0 / (g.size * g.size) as f32;
    for c in 0..g.channels {
        let base = c * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let v = grad_out[(c * g.out_h + oy) * g.out_w + ox] * inv;
                for ky in 0..g.size {
                    let row = base + (oy * g.stride + ky) * g.in_w + ox * g.stride;
                    grad_in[row..row + g.size].iter_mut().for_each(|d| *d += v);
                }
            }
        }
    }
}

pub fn dense_forward(inputs: usize, outputs: usize, x: &[f32], w: &[f32], b: &[f32], out: &mut [f32]) {
    for o in 0..outputs {
        let row = &w[o * inputs..(o + 1) * inputs];
        out[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
    }
}

pub fn dense_backward_input(inputs: usize, grad_out: &[f32], w: &[f32], grad_in: &mut [f32]) {
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[o * inputs..(o + 1) * inputs];
        for (d, &wv) in grad_in.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

pub fn dense_backward_weights(
    inputs: usize,
    x: &[f32],
    grad_out: &[f32],
    grad_w: &mut [f32],
    grad_b: &mut [f32],
) {
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        let row = &mut grad_w[o * inputs..(o + 1) * inputs];
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

pub fn upsample_nearest_forward(channels: usize, h: usize, w: usize, f: usize, x: &[f32], out: &mut [f32]) {
    let (oh, ow) = (h * f, w * f);
    for c in 0..channels {
        for oy in 0..oh {
            let src = &x[(c * h + oy / f) * w..(c * h + oy / f) * w + w];
            let dst = &mut out[(c * oh + oy) * ow..(c * oh + oy) * ow + ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / f];
            }
        }
    }
}

pub fn upsample_nearest_backward(channels: usize, h: usize, w: usize, f: usize, g: &[f32], grad_in: &mut [f32]) {
    let (oh, ow) = (h * f, w * f);
    for c in 0..channels {
        for oy in 0..oh {
            let src = &g[(c * oh + oy) * ow..(c * oh + oy) * ow + ow];
            let dst = &mut grad_in[(c * h + oy / f) * w..(c * h + oy / f) * w + w];
            for (ox, &v) in src.iter().enumerate() {
                dst[ox / f] += v;
            }
        }
    }
}
