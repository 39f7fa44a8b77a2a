//! Differentiable tensor operations.
//!
//! Elementwise binary ops require exactly equal shapes; the only broadcasting
//! is against a plain scalar via [`scalar_mul`] / [`scalar_add`]. Convolutions
//! use the cross-correlation convention with weight layout
//! `[out_ch, in_ch, kh, kw]`; transposed convolutions use `[in_ch, out_ch,
//! kh, kw]` and no padding, so the output spatial size is
//! `(in - 1) * stride + kernel`.

use super::{check_same_shape, Result, Tensor, TensorError};

/// Train/eval switch for batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance for batch normalization.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> RunningStats {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

// ── Elementwise binary ───────────────────────────────────────────────

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        &[a, b],
        move |g| {
            pa.accumulate_grad(g);
            pb.accumulate_grad(g);
        },
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        &[a, b],
        move |g| {
            pa.accumulate_grad(g);
            let neg: Vec<f32> = g.iter().map(|v| -v).collect();
            pb.accumulate_grad(&neg);
        },
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x * y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        &[a, b],
        move |g| {
            let da: Vec<f32> = g.iter().zip(pb.data().iter()).map(|(g, y)| g * y).collect();
            pa.accumulate_grad(&da);
            let db: Vec<f32> = g.iter().zip(pa.data().iter()).map(|(g, x)| g * x).collect();
            pb.accumulate_grad(&db);
        },
    ))
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("div", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x / y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        &[a, b],
        move |g| {
            let bd = pb.data();
            let da: Vec<f32> = g.iter().zip(bd.iter()).map(|(g, y)| g / y).collect();
            let db: Vec<f32> = g
                .iter()
                .zip(pa.data().iter().zip(bd.iter()))
                .map(|(g, (x, y))| -g * x / (y * y))
                .collect();
            drop(bd);
            pa.accumulate_grad(&da);
            pb.accumulate_grad(&db);
        },
    ))
}

// ── Scalar ops ───────────────────────────────────────────────────────

pub fn scalar_mul(a: &Tensor, c: f32) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), data, &[a], move |g| {
        let da: Vec<f32> = g.iter().map(|g| g * c).collect();
        pa.accumulate_grad(&da);
    })
}

pub fn scalar_add(a: &Tensor, c: f32) -> Tensor {
    let data = a.data().iter().map(|x| x + c).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), data, &[a], move |g| {
        pa.accumulate_grad(g);
    })
}

/// `1 - x`, a common subexpression in the losses.
pub fn one_minus(a: &Tensor) -> Tensor {
    scalar_add(&scalar_mul(a, -1.0), 1.0)
}

// ── Elementwise unary ────────────────────────────────────────────────

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.max(0.0)).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), data, &[a], move |g| {
        let da: Vec<f32> = g
            .iter()
            .zip(pa.data().iter())
            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
            .collect();
        pa.accumulate_grad(&da);
    })
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let out: Vec<f32> = a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
    let y = out.clone();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), out, &[a], move |g| {
        let da: Vec<f32> = g
            .iter()
            .zip(y.iter())
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        pa.accumulate_grad(&da);
    })
}

pub fn exp(a: &Tensor) -> Tensor {
    let out: Vec<f32> = a.data().iter().map(|x| x.exp()).collect();
    let y = out.clone();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), out, &[a], move |g| {
        let da: Vec<f32> = g.iter().zip(y.iter()).map(|(g, y)| g * y).collect();
        pa.accumulate_grad(&da);
    })
}

/// Natural log. Inputs must be strictly positive; clamp first.
pub fn log(a: &Tensor) -> Result<Tensor> {
    if let Some(&bad) = a.data().iter().find(|v| **v <= 0.0) {
        return Err(TensorError::NonPositiveLog { value: bad });
    }
    let data = a.data().iter().map(|x| x.ln()).collect();
    let pa = a.clone();
    Ok(Tensor::from_op(a.shape().to_vec(), data, &[a], move |g| {
        let da: Vec<f32> = g.iter().zip(pa.data().iter()).map(|(g, x)| g / x).collect();
        pa.accumulate_grad(&da);
    }))
}

/// Clamp to `[lo, hi]`; subgradient 1 where `lo <= x <= hi`, 0 outside.
pub fn clamp(a: &Tensor, lo: f32, hi: f32) -> Tensor {
    let data = a.data().iter().map(|x| x.clamp(lo, hi)).collect();
    let pa = a.clone();
    Tensor::from_op(a.shape().to_vec(), data, &[a], move |g| {
        let da: Vec<f32> = g
            .iter()
            .zip(pa.data().iter())
            .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
            .collect();
        pa.accumulate_grad(&da);
    })
}

// ── Reductions (scalar output) ───────────────────────────────────────

// Reductions accumulate in f64 so that, in central finite differences, the
// contributions of unperturbed elements cancel exactly.

pub fn reduce_sum(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().map(|v| *v as f64).sum();
    let n = a.numel();
    let pa = a.clone();
    Tensor::from_op(Vec::new(), vec![s as f32], &[a], move |g| {
        pa.accumulate_grad(&vec![g[0]; n]);
    })
}

pub fn reduce_mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let s: f64 = a.data().iter().map(|v| *v as f64).sum();
    let pa = a.clone();
    Tensor::from_op(Vec::new(), vec![(s / n as f64) as f32], &[a], move |g| {
        pa.accumulate_grad(&vec![g[0] / n as f32; n]);
    })
}

// ── Convolution ──────────────────────────────────────────────────────

fn expect_rank4(op: &'static str, t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 4 {
        return Err(TensorError::BadArgument {
            op,
            expected: format!("rank-4 {what}"),
            actual: format!("shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// Valid output-index range `[lo, hi)` so that `o * stride + k - pad` stays
/// inside `[0, limit)`.
fn conv_range(k: usize, pad: usize, stride: usize, limit: usize, out_len: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let max_i = limit as isize - 1 - k as isize + pad as isize;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = ((max_i as usize) / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

/// 2-D cross-correlation. `input` is `[B, Cin, H, W]`, `weight` is
/// `[Cout, Cin, KH, KW]`, `bias` (optional) is `[Cout]`. Output spatial size
/// is `(dim + 2*padding - kernel) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    expect_rank4("conv2d", input, "input")?;
    expect_rank4("conv2d", weight, "weight")?;
    assert!(stride >= 1, "conv2d: stride must be >= 1");
    let (bsz, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, wcin, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if wcin != cin {
        return Err(TensorError::ChannelMismatch {
            op: "conv2d",
            detail: format!("input has {cin} channels, weight expects {wcin}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ChannelMismatch {
                op: "conv2d",
                detail: format!("bias shape {:?}, expected [{cout}]", b.shape()),
            });
        }
    }
    let oh = (h + 2 * padding).checked_sub(kh).map(|v| v / stride + 1);
    let ow = (w + 2 * padding).checked_sub(kw).map(|v| v / stride + 1);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(TensorError::OutputTooSmall {
                op: "conv2d",
                input: input.shape().to_vec(),
            })
        }
    };

    let mut out = vec![0.0f32; bsz * cout * oh * ow];
    {
        let ind = input.data();
        let wd = weight.data();
        if let Some(b) = bias {
            let bd = b.data();
            for bi in 0..bsz {
                for co in 0..cout {
                    let base = (bi * cout + co) * oh * ow;
                    out[base..base + oh * ow].fill(bd[co]);
                }
            }
        }
        for bi in 0..bsz {
            for co in 0..cout {
                let out_base = (bi * cout + co) * oh * ow;
                for ci in 0..cin {
                    let in_base = (bi * cin + ci) * h * w;
                    for ky in 0..kh {
                        let (oh_lo, oh_hi) = conv_range(ky, padding, stride, h, oh);
                        for kx in 0..kw {
                            let wgt = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            if wgt == 0.0 {
                                continue;
                            }
                            let (ow_lo, ow_hi) = conv_range(kx, padding, stride, w, ow);
                            for oy in oh_lo..oh_hi {
                                let iy = oy * stride + ky - padding;
                                let in_row = in_base + iy * w;
                                let out_row = out_base + oy * ow;
                                for ox in ow_lo..ow_hi {
                                    let ix = ox * stride + kx - padding;
                                    out[out_row + ox] += wgt * ind[in_row + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let (pin, pw) = (input.clone(), weight.clone());
    let pb = bias.cloned();
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(
        vec![bsz, cout, oh, ow],
        out,
        &parents,
        move |g| {
            let ind = pin.data();
            let wd = pw.data();
            let mut din = vec![0.0f32; ind.len()];
            let mut dw = vec![0.0f32; wd.len()];
            let want_din = pin.grad_enabled();
            let want_dw = pw.grad_enabled();
            for bi in 0..bsz {
                for co in 0..cout {
                    let out_base = (bi * cout + co) * oh * ow;
                    for ci in 0..cin {
                        let in_base = (bi * cin + ci) * h * w;
                        for ky in 0..kh {
                            let (oh_lo, oh_hi) = conv_range(ky, padding, stride, h, oh);
                            for kx in 0..kw {
                                let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                                let wgt = wd[widx];
                                let (ow_lo, ow_hi) = conv_range(kx, padding, stride, w, ow);
                                let mut wsum = 0.0f32;
                                for oy in oh_lo..oh_hi {
                                    let iy = oy * stride + ky - padding;
                                    let in_row = in_base + iy * w;
                                    let out_row = out_base + oy * ow;
                                    for ox in ow_lo..ow_hi {
                                        let ix = ox * stride + kx - padding;
                                        let go = g[out_row + ox];
                                        if want_din {
                                            din[in_row + ix] += go * wgt;
                                        }
                                        wsum += go * ind[in_row + ix];
                                    }
                                }
                                if want_dw {
                                    dw[widx] += wsum;
                                }
                            }
                        }
                    }
                }
            }
            drop(ind);
            drop(wd);
            pin.accumulate_grad(&din);
            pw.accumulate_grad(&dw);
            if let Some(b) = &pb {
                let mut db = vec![0.0f32; cout];
                for bi in 0..bsz {
                    for co in 0..cout {
                        let base = (bi * cout + co) * oh * ow;
                        db[co] += g[base..base + oh * ow].iter().sum::<f32>();
                    }
                }
                b.accumulate_grad(&db);
            }
        },
    ))
}

/// Transposed 2-D convolution (the adjoint of [`conv2d`] with zero padding).
/// `input` is `[B, Cin, H, W]`, `weight` is `[Cin, Cout, KH, KW]`. Output
/// spatial size is `(dim - 1) * stride + kernel`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor> {
    expect_rank4("conv_transpose2d", input, "input")?;
    expect_rank4("conv_transpose2d", weight, "weight")?;
    assert!(stride >= 1, "conv_transpose2d: stride must be >= 1");
    let (bsz, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (wcin, cout, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if wcin != cin {
        return Err(TensorError::ChannelMismatch {
            op: "conv_transpose2d",
            detail: format!("input has {cin} channels, weight expects {wcin}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ChannelMismatch {
                op: "conv_transpose2d",
                detail: format!("bias shape {:?}, expected [{cout}]", b.shape()),
            });
        }
    }
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;

    let mut out = vec![0.0f32; bsz * cout * oh * ow];
    {
        let ind = input.data();
        let wd = weight.data();
        if let Some(b) = bias {
            let bd = b.data();
            for bi in 0..bsz {
                for co in 0..cout {
                    let base = (bi * cout + co) * oh * ow;
                    out[base..base + oh * ow].fill(bd[co]);
                }
            }
        }
        for bi in 0..bsz {
            for ci in 0..cin {
                let in_base = (bi * cin + ci) * h * w;
                for co in 0..cout {
                    let out_base = (bi * cout + co) * oh * ow;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wgt = wd[((ci * cout + co) * kh + ky) * kw + kx];
                            if wgt == 0.0 {
                                continue;
                            }
                            for iy in 0..h {
                                let oy = iy * stride + ky;
                                let in_row = in_base + iy * w;
                                let out_row = out_base + oy * ow;
                                for ix in 0..w {
                                    out[out_row + ix * stride + kx] += wgt * ind[in_row + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let (pin, pw) = (input.clone(), weight.clone());
    let pb = bias.cloned();
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(
        vec![bsz, cout, oh, ow],
        out,
        &parents,
        move |g| {
            let ind = pin.data();
            let wd = pw.data();
            let mut din = vec![0.0f32; ind.len()];
            let mut dw = vec![0.0f32; wd.len()];
            for bi in 0..bsz {
                for ci in 0..cin {
                    let in_base = (bi * cin + ci) * h * w;
                    for co in 0..cout {
                        let out_base = (bi * cout + co) * oh * ow;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((ci * cout + co) * kh + ky) * kw + kx;
                                let wgt = wd[widx];
                                let mut wsum = 0.0f32;
                                for iy in 0..h {
                                    let oy = iy * stride + ky;
                                    let in_row = in_base + iy * w;
                                    let out_row = out_base + oy * ow;
                                    for ix in 0..w {
                                        let go = g[out_row + ix * stride + kx];
                                        din[in_row + ix] += go * wgt;
                                        wsum += go * ind[in_row + ix];
                                    }
                                }
                                dw[widx] += wsum;
                            }
                        }
                    }
                }
            }
            drop(ind);
            drop(wd);
            pin.accumulate_grad(&din);
            pw.accumulate_grad(&dw);
            if let Some(b) = &pb {
                let mut db = vec![0.0f32; cout];
                for bi in 0..bsz {
                    for co in 0..cout {
                        let base = (bi * cout + co) * oh * ow;
                        db[co] += g[base..base + oh * ow].iter().sum::<f32>();
                    }
                }
                b.accumulate_grad(&db);
            }
        },
    ))
}

// ── Pooling ──────────────────────────────────────────────────────────

fn pool_geometry(
    op: &'static str,
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    expect_rank4(op, input, "input")?;
    let (bsz, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if window > h || window > w {
        return Err(TensorError::BadArgument {
            op,
            expected: format!("window <= spatial dims ({h}x{w})"),
            actual: format!("window {window}"),
        });
    }
    if (h - window) % stride != 0 || (w - window) % stride != 0 {
        return Err(TensorError::BadArgument {
            op,
            expected: "spatial dims divisible by stride (after window)".into(),
            actual: format!("{h}x{w} with window {window}, stride {stride}"),
        });
    }
    Ok((
        bsz,
        c,
        h,
        w,
        (h - window) / stride + 1,
        (w - window) / stride + 1,
    ))
}

/// Max pooling. Backward routes the gradient only to the argmax position
/// of each window; ties break toward the first (row-major) maximum.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (bsz, c, h, w, oh, ow) = pool_geometry("maxpool2d", input, window, stride)?;
    let n_out = bsz * c * oh * ow;
    let mut out = vec![0.0f32; n_out];
    let mut argmax = vec![0usize; n_out];
    {
        let ind = input.data();
        for bc in 0..bsz * c {
            let in_base = bc * h * w;
            let out_base = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..window {
                        let row = in_base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..window {
                            let v = ind[row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    out[out_base + oy * ow + ox] = best;
                    argmax[out_base + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    let pin = input.clone();
    let n_in = input.numel();
    Ok(Tensor::from_op(
        vec![bsz, c, oh, ow],
        out,
        &[input],
        move |g| {
            let mut din = vec![0.0f32; n_in];
            for (gi, &idx) in g.iter().zip(argmax.iter()) {
                din[idx] += gi;
            }
            pin.accumulate_grad(&din);
        },
    ))
}

/// Average pooling.
pub fn avgpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (bsz, c, h, w, oh, ow) = pool_geometry("avgpool2d", input, window, stride)?;
    let inv = 1.0 / (window * window) as f32;
    let mut out = vec![0.0f32; bsz * c * oh * ow];
    {
        let ind = input.data();
        for bc in 0..bsz * c {
            let in_base = bc * h * w;
            let out_base = bc * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0f32;
                    for ky in 0..window {
                        let row = in_base + (oy * stride + ky) * w + ox * stride;
                        s += ind[row..row + window].iter().sum::<f32>();
                    }
                    out[out_base + oy * ow + ox] = s * inv;
                }
            }
        }
    }
    let pin = input.clone();
    let n_in = input.numel();
    Ok(Tensor::from_op(
        vec![bsz, c, oh, ow],
        out,
        &[input],
        move |g| {
            let mut din = vec![0.0f32; n_in];
            for bc in 0..bsz * c {
                let in_base = bc * h * w;
                let out_base = bc * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g[out_base + oy * ow + ox] * inv;
                        for ky in 0..window {
                            let row = in_base + (oy * stride + ky) * w + ox * stride;
                            for kx in 0..window {
                                din[row + kx] += go;
                            }
                        }
                    }
                }
            }
            pin.accumulate_grad(&din);
        },
    ))
}

// ── Batch normalization ──────────────────────────────────────────────

/// 2-D batch normalization over `[B, C, H, W]` with per-channel `gamma` and
/// `beta`.
///
/// Train mode normalizes with batch statistics (biased variance) and updates
/// `stats` in place with the given momentum; eval mode normalizes with the
/// running statistics. `eps` doubles as the eval-mode variance floor.
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    momentum: f32,
    eps: f32,
    mode: Mode,
) -> Result<Tensor> {
    expect_rank4("batchnorm2d", input, "input")?;
    let (bsz, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c {
        return Err(TensorError::ChannelMismatch {
            op: "batchnorm2d",
            detail: format!(
                "input has {c} channels; gamma {:?}, beta {:?}, stats {}",
                gamma.shape(),
                beta.shape(),
                stats.mean.len()
            ),
        });
    }
    let plane = h * w;
    let n_per_ch = bsz * plane;
    let n = input.numel();

    let channel_indices = |ch: usize| {
        (0..bsz).flat_map(move |bi| {
            let base = (bi * c + ch) * plane;
            base..base + plane
        })
    };

    match mode {
        Mode::Train => {
            let ind = input.data();
            let gd = gamma.data();
            let bd = beta.data();
            let mut out = vec![0.0f32; n];
            let mut xhat = vec![0.0f32; n];
            let mut inv_std = vec![0.0f32; c];
            for ch in 0..c {
                let mut mean = 0.0f64;
                for i in channel_indices(ch) {
                    mean += ind[i] as f64;
                }
                mean /= n_per_ch as f64;
                let mut var = 0.0f64;
                for i in channel_indices(ch) {
                    let d = ind[i] as f64 - mean;
                    var += d * d;
                }
                var /= n_per_ch as f64;
                let inv = 1.0 / (var + eps as f64).sqrt();
                inv_std[ch] = inv as f32;
                let (m32, g32, b32) = (mean as f32, gd[ch], bd[ch]);
                for i in channel_indices(ch) {
                    let xh = (ind[i] - m32) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g32 * xh + b32;
                }
                stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * m32;
                stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * var as f32;
            }
            drop(ind);
            drop(gd);
            drop(bd);

            let (pin, pg, pb) = (input.clone(), gamma.clone(), beta.clone());
            Ok(Tensor::from_op(
                input.shape().to_vec(),
                out,
                &[input, gamma, beta],
                move |g| {
                    let gd = pg.data();
                    let mut din = vec![0.0f32; n];
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    for ch in 0..c {
                        let mut sum_g = 0.0f64;
                        let mut sum_gx = 0.0f64;
                        for bi in 0..bsz {
                            let base = (bi * c + ch) * plane;
                            for i in base..base + plane {
                                sum_g += g[i] as f64;
                                sum_gx += (g[i] * xhat[i]) as f64;
                            }
                        }
                        dbeta[ch] = sum_g as f32;
                        dgamma[ch] = sum_gx as f32;
                        let mean_g = (sum_g / n_per_ch as f64) as f32;
                        let mean_gx = (sum_gx / n_per_ch as f64) as f32;
                        let scale = gd[ch] * inv_std[ch];
                        for bi in 0..bsz {
                            let base = (bi * c + ch) * plane;
                            for i in base..base + plane {
                                din[i] = scale * (g[i] - mean_g - xhat[i] * mean_gx);
                            }
                        }
                    }
                    drop(gd);
                    pin.accumulate_grad(&din);
                    pg.accumulate_grad(&dgamma);
                    pb.accumulate_grad(&dbeta);
                },
            ))
        }
        Mode::Eval => {
            let ind = input.data();
            let gd = gamma.data();
            let bd = beta.data();
            let mut out = vec![0.0f32; n];
            let mut inv_std = vec![0.0f32; c];
            let rm = stats.mean.clone();
            for ch in 0..c {
                inv_std[ch] = 1.0 / (stats.var[ch] + eps).sqrt();
                let (g32, b32) = (gd[ch], bd[ch]);
                for i in channel_indices(ch) {
                    out[i] = g32 * (ind[i] - rm[ch]) * inv_std[ch] + b32;
                }
            }
            drop(ind);
            drop(gd);
            drop(bd);

            let (pin, pg, pb) = (input.clone(), gamma.clone(), beta.clone());
            Ok(Tensor::from_op(
                input.shape().to_vec(),
                out,
                &[input, gamma, beta],
                move |g| {
                    let gd = pg.data();
                    let ind = pin.data();
                    let mut din = vec![0.0f32; n];
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        for bi in 0..bsz {
                            let base = (bi * c + ch) * plane;
                            for i in base..base + plane {
                                din[i] = g[i] * scale;
                                dgamma[ch] += g[i] * (ind[i] - rm[ch]) * inv_std[ch];
                                dbeta[ch] += g[i];
                            }
                        }
                    }
                    drop(gd);
                    drop(ind);
                    pin.accumulate_grad(&din);
                    pg.accumulate_grad(&dgamma);
                    pb.accumulate_grad(&dbeta);
                },
            ))
        }
    }
}
