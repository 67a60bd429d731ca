//! Windowed structural similarity (SSIM) with a separable Gaussian window.
//!
//! Both inputs are reduced to luma, the query is bilinearly resampled to the
//! reference dimensions, and the SSIM map is averaged over every window
//! position that lies fully inside the image.

use crate::raster::{LumaPlane, Raster};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams<T> {
    /// Side length of the square window; odd.
    pub window: usize,
    pub sigma: T,
    pub k1: T,
    pub k2: T,
    /// Dynamic range `L` of pixel values.
    pub dynamic_range: T,
}

impl<T: Scalar> Default for SsimParams<T> {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: T::lit(1.5),
            k1: T::lit(0.01),
            k2: T::lit(0.03),
            dynamic_range: T::lit(255.0),
        }
    }
}

impl<T: Scalar> SsimParams<T> {
    pub fn c1(&self) -> T {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> T {
        let v = self.k2 * self.dynamic_range;
        v * v
    }

    /// Window side actually used for a `width x height` image: the configured
    /// size, shrunk to the largest odd size that fits.
    pub fn effective_window(&self, width: usize, height: usize) -> usize {
        let mut w = self.window.min(width).min(height).max(1);
        if w % 2 == 0 {
            w -= 1;
        }
        w
    }
}

/// Normalized 1-D Gaussian taps of the given odd length.
pub fn gaussian_kernel<T: Scalar>(len: usize, sigma: T) -> Vec<T> {
    let center = T::lit((len / 2) as f64);
    let two_sigma_sq = T::lit(2.0) * sigma * sigma;
    let raw: Vec<T> = (0..len)
        .map(|i| {
            let d = T::lit(i as f64) - center;
            (-(d * d) / two_sigma_sq).exp()
        })
        .collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// SSIM between a query raster and a reference raster.
pub fn ssim<T: Scalar>(query: &Raster, reference: &Raster, params: &SsimParams<T>) -> T {
    let b = reference.to_luma::<T>();
    let a = query.to_luma::<T>().resize_bilinear(b.width, b.height);
    ssim_planes(&a, &b, params)
}

/// SSIM between two equally sized luma planes.
pub fn ssim_planes<T: Scalar>(a: &LumaPlane<T>, b: &LumaPlane<T>, params: &SsimParams<T>) -> T {
    assert_eq!((a.width, a.height), (b.width, b.height), "plane sizes differ");
    if a.width == 0 || a.height == 0 {
        return T::one();
    }
    let win = params.effective_window(a.width, a.height);
    let kernel = gaussian_kernel(win, params.sigma);

    let n = a.values.len();
    let mut aa = Vec::with_capacity(n);
    let mut bb = Vec::with_capacity(n);
    let mut ab = Vec::with_capacity(n);
    for (x, y) in a.values.iter().zip(&b.values) {
        aa.push(*x * *x);
        bb.push(*y * *y);
        ab.push(*x * *y);
    }

    let (w, h) = (a.width, a.height);
    let mu_a = filter_valid(&a.values, w, h, &kernel);
    let mu_b = filter_valid(&b.values, w, h, &kernel);
    let e_aa = filter_valid(&aa, w, h, &kernel);
    let e_bb = filter_valid(&bb, w, h, &kernel);
    let e_ab = filter_valid(&ab, w, h, &kernel);

    let (c1, c2) = (params.c1(), params.c2());
    let two = T::lit(2.0);
    let count = mu_a.len();
    let mut total = T::zero();
    for i in 0..count {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (two * ma * mb + c1) * (two * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total = total + num / den;
    }
    total / T::lit(count as f64)
}

/// Separable correlation keeping only fully-covered window positions.
fn filter_valid<T: Scalar>(src: &[T], w: usize, h: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = Vec::with_capacity(ow * h);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = T::zero();
            for (t, kv) in kernel.iter().enumerate() {
                acc = acc + row[x + t] * *kv;
            }
            rows.push(acc);
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (t, kv) in kernel.iter().enumerate() {
                acc = acc + rows[(y + t) * ow + x] * *kv;
            }
            out.push(acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> Raster {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[(x * 9 % 256) as u8, (y * 13 % 256) as u8, ((x + y) * 5 % 256) as u8]);
            }
        }
        Raster::new(w, h, data).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel::<f64>(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert!((k[i] - k[10 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_is_one() {
        let img = gradient(32, 24);
        let s = ssim(&img, &img, &SsimParams::<f64>::default());
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn small_images_shrink_window() {
        let p = SsimParams::<f64>::default();
        assert_eq!(p.effective_window(4, 20), 3);
        assert_eq!(p.effective_window(1, 1), 1);
        let img = gradient(4, 4);
        assert!((ssim(&img, &img, &p) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn f32_and_f64_agree_loosely() {
        let a = gradient(20, 20);
        let b = gradient(21, 19);
        let s64 = ssim(&a, &b, &SsimParams::<f64>::default());
        let s32 = ssim(&a, &b, &SsimParams::<f32>::default());
        assert!((s64 - s32 as f64).abs() < 1e-3);
    }
}
