//! Building blocks for the two networks: same-padding convolution via
//! im2col + GEMM, 2x2 average pooling, 2x2 stride-2 transpose convolution,
//! ReLU, reflect padding, and channel concat/split. Each op has a matching
//! backward pass; gradients accumulate into caller-provided buffers so batch
//! reduction stays in a fixed order.

use ndarray::{s, Array1, Array2, Array3, Array4};

use crate::filter::reflect_index;

/// Unfold `x` into patch columns for a `k x k` same convolution with zero
/// padding. Output is `(c*k*k, h*w)`.
pub fn im2col(x: &Array3<f32>, k: usize) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let r = (k / 2) as isize;
    let mut cols = Array2::<f32>::zeros((c * k * k, h * w));
    let xs = x.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    let mut row = 0usize;
    for ci in 0..c {
        for dy in -r..=r {
            for dx in -r..=r {
                let base = row * h * w;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src = ci * h * w + sy as usize * w;
                    let dst = base + y * w;
                    let (sx0, sx1) = ((x_lo as isize + dx) as usize, (x_hi as isize + dx) as usize);
                    cs[dst + x_lo..dst + x_hi].copy_from_slice(&xs[src + sx0..src + sx1]);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-add patch columns back onto an image; adjoint of [`im2col`].
fn col2im_add(cols: &Array2<f32>, c: usize, h: usize, w: usize, k: usize, out: &mut Array3<f32>) {
    let r = (k / 2) as isize;
    let cs = cols.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    let mut row = 0usize;
    for ci in 0..c {
        for dy in -r..=r {
            for dx in -r..=r {
                let base = row * h * w;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((w as isize - dx).min(w as isize)) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let dst = ci * h * w + sy as usize * w;
                    let src = base + y * w;
                    for xx in x_lo..x_hi {
                        os[dst + (xx as isize + dx) as usize] += cs[src + xx];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Same convolution: `w` is `(c_out, c_in, k, k)` with odd `k`, zero padding
/// `k/2`, stride 1.
pub fn conv2d(x: &Array3<f32>, w: &Array4<f32>, b: &Array1<f32>) -> Array3<f32> {
    let (c, h, wd) = x.dim();
    let (cout, cin, k, k2) = w.dim();
    debug_assert_eq!(c, cin);
    debug_assert_eq!(k, k2);
    debug_assert_eq!(k % 2, 1);
    let cols = im2col(x, k);
    let w_mat = w
        .view()
        .into_shape_with_order((cout, cin * k * k))
        .expect("weights are standard layout");
    let mut y = w_mat.dot(&cols);
    for (mut row, &bias) in y.outer_iter_mut().zip(b.iter()) {
        row += bias;
    }
    y.into_shape_with_order((cout, h, wd)).unwrap()
}

/// Backward pass of [`conv2d`]. Returns the input gradient and accumulates
/// weight/bias gradients into `gw`/`gb`.
pub fn conv2d_backward(
    x: &Array3<f32>,
    w: &Array4<f32>,
    gy: &Array3<f32>,
    gw: &mut Array4<f32>,
    gb: &mut Array1<f32>,
) -> Array3<f32> {
    let (c, h, wd) = x.dim();
    let (cout, cin, k, _) = w.dim();
    debug_assert_eq!(c, cin);
    let cols = im2col(x, k);
    let g_mat = gy
        .view()
        .into_shape_with_order((cout, h * wd))
        .expect("gradient is standard layout");

    let gw_mat = g_mat.dot(&cols.t());
    let mut gw_view = gw
        .view_mut()
        .into_shape_with_order((cout, cin * k * k))
        .unwrap();
    gw_view += &gw_mat;
    for (co, &g) in g_mat
        .sum_axis(ndarray::Axis(1))
        .iter()
        .enumerate()
        .map(|(i, g)| (i, g))
    {
        gb[co] += g;
    }

    let w_mat = w
        .view()
        .into_shape_with_order((cout, cin * k * k))
        .unwrap();
    let g_cols = w_mat.t().dot(&g_mat);
    let mut gx = Array3::<f32>::zeros((c, h, wd));
    col2im_add(&g_cols, c, h, wd, k, &mut gx);
    gx
}

/// 2x2 stride-2 transpose convolution ("up-convolution"); `w` is
/// `(c_in, c_out, 2, 2)`, output doubles both spatial dims.
pub fn conv_transpose2(x: &Array3<f32>, w: &Array4<f32>, b: &Array1<f32>) -> Array3<f32> {
    let (cin, h, wd) = x.dim();
    let (cin2, cout, _, _) = w.dim();
    debug_assert_eq!(cin, cin2);
    let x_mat = x.view().into_shape_with_order((cin, h * wd)).unwrap();
    let mut out = Array3::<f32>::zeros((cout, 2 * h, 2 * wd));
    for a in 0..2usize {
        for bb in 0..2usize {
            let w_ab = w.slice(s![.., .., a, bb]).to_owned();
            let o = w_ab.t().dot(&x_mat); // (cout, h*wd)
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        out[(co, 2 * y + a, 2 * xx + bb)] = o[(co, y * wd + xx)];
                    }
                }
            }
        }
    }
    for (mut plane, &bias) in out.outer_iter_mut().zip(b.iter()) {
        plane += bias;
    }
    out
}

/// Backward pass of [`conv_transpose2`].
pub fn conv_transpose2_backward(
    x: &Array3<f32>,
    w: &Array4<f32>,
    gy: &Array3<f32>,
    gw: &mut Array4<f32>,
    gb: &mut Array1<f32>,
) -> Array3<f32> {
    let (cin, h, wd) = x.dim();
    let (_, cout, _, _) = w.dim();
    let x_mat = x.view().into_shape_with_order((cin, h * wd)).unwrap();
    let mut gx_mat = Array2::<f32>::zeros((cin, h * wd));
    for a in 0..2usize {
        for bb in 0..2usize {
            let mut g_ab = Array2::<f32>::zeros((cout, h * wd));
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        g_ab[(co, y * wd + xx)] = gy[(co, 2 * y + a, 2 * xx + bb)];
                    }
                }
            }
            let w_ab = w.slice(s![.., .., a, bb]).to_owned();
            gx_mat += &w_ab.dot(&g_ab);
            let gw_ab = x_mat.dot(&g_ab.t()); // (cin, cout)
            for ci in 0..cin {
                for co in 0..cout {
                    gw[(ci, co, a, bb)] += gw_ab[(ci, co)];
                }
            }
        }
    }
    for co in 0..cout {
        gb[co] += gy.index_axis(ndarray::Axis(0), co).sum();
    }
    gx_mat.into_shape_with_order((cin, h, wd)).unwrap()
}

/// 2x2 average pooling; spatial dims must be even.
pub fn avg_pool2(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        0.25 * (x[(ci, 2 * y, 2 * xx)]
            + x[(ci, 2 * y, 2 * xx + 1)]
            + x[(ci, 2 * y + 1, 2 * xx)]
            + x[(ci, 2 * y + 1, 2 * xx + 1)])
    })
}

/// Backward pass of [`avg_pool2`]: spread each gradient over its 2x2 window.
pub fn avg_pool2_backward(gy: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = gy.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| {
        0.25 * gy[(ci, y / 2, xx / 2)]
    })
}

pub fn relu(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| v.max(0.0))
}

/// Backward through ReLU given the forward *output* (zero exactly where the
/// output is zero).
pub fn relu_backward(gy: &Array3<f32>, out: &Array3<f32>) -> Array3<f32> {
    let mut g = gy.clone();
    g.zip_mut_with(out, |gv, &o| {
        if o <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Reflect-pad the bottom/right edges so both spatial dims become multiples
/// of `m`. Returns the padded tensor and the original `(h, w)`.
pub fn reflect_pad_to_multiple(x: &Array3<f32>, m: usize) -> (Array3<f32>, (usize, usize)) {
    let (c, h, w) = x.dim();
    let th = h.div_ceil(m) * m;
    let tw = w.div_ceil(m) * m;
    if th == h && tw == w {
        return (x.clone(), (h, w));
    }
    let out = Array3::from_shape_fn((c, th, tw), |(ci, y, xx)| {
        x[(ci, reflect_index(y as isize, h), reflect_index(xx as isize, w))]
    });
    (out, (h, w))
}

/// Reflect-pad a frame of `pad` pixels on every side.
pub fn reflect_pad_frame(x: &Array3<f32>, pad: usize) -> Array3<f32> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h + 2 * pad, w + 2 * pad), |(ci, y, xx)| {
        x[(
            ci,
            reflect_index(y as isize - pad as isize, h),
            reflect_index(xx as isize - pad as isize, w),
        )]
    })
}

/// Crop a frame of `pad` pixels from every side.
pub fn crop_frame(x: &Array3<f32>, pad: usize) -> Array3<f32> {
    let (_, h, w) = x.dim();
    x.slice(s![.., pad..h - pad, pad..w - pad]).to_owned()
}

/// Adjoint of [`crop_frame`]: embed into a zero frame.
pub fn embed_frame(g: &Array3<f32>, pad: usize) -> Array3<f32> {
    let (c, h, w) = g.dim();
    let mut out = Array3::<f32>::zeros((c, h + 2 * pad, w + 2 * pad));
    out.slice_mut(s![.., pad..h + pad, pad..w + pad]).assign(g);
    out
}

/// Top-left crop back to `(h, w)`.
pub fn crop_hw(x: &Array3<f32>, h: usize, w: usize) -> Array3<f32> {
    x.slice(s![.., ..h, ..w]).to_owned()
}

/// Adjoint of [`crop_hw`]: embed a gradient into a zero-padded canvas.
pub fn embed_hw(g: &Array3<f32>, h: usize, w: usize) -> Array3<f32> {
    let (c, gh, gw) = g.dim();
    let mut out = Array3::<f32>::zeros((c, h, w));
    out.slice_mut(s![.., ..gh, ..gw]).assign(g);
    out
}

pub fn concat_channels(a: &Array3<f32>, b: &Array3<f32>) -> Array3<f32> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

pub fn split_channels(g: &Array3<f32>, c_first: usize) -> (Array3<f32>, Array3<f32>) {
    (
        g.slice(s![..c_first, .., ..]).to_owned(),
        g.slice(s![c_first.., .., ..]).to_owned(),
    )
}

pub fn softplus_f32(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_f32(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
