//! Separable Gaussian filtering with reflect padding.
//!
//! Shared by the prior's residual-variance field and by SSIM's local
//! statistics. Kernels are normalized to sum to 1, so filtering a constant
//! field returns that constant.

use ndarray::Array2;

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// edge sample (`abcba` style). Handles arbitrary overshoot.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Normalized 1-D Gaussian taps for an odd window of `size` pixels.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    assert!(size % 2 == 1 && size >= 1);
    assert!(sigma > 0.0);
    let r = (size / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Filter a 2-D field with the separable kernel, reflect-padded at borders.
///
/// Equivalent to a full 2-D convolution with the normalized `size x size`
/// Gaussian because the window is an outer product of the 1-D taps.
pub fn filter_gaussian_2d(field: &Array2<f64>, size: usize, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(size, sigma);
    let r = (size / 2) as isize;
    let (h, w) = field.dim();

    let mut rows = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let xx = reflect_index(x as isize + t as isize - r, w);
                acc += kv * field[(y, xx)];
            }
            rows[(y, x)] = acc;
        }
    }

    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let yy = reflect_index(y as isize + t as isize - r, h);
                acc += kv * rows[(yy, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}
