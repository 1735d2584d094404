//! Radix-2 Cooley-Tukey transforms on split real/imaginary buffers.
//!
//! The forward transform is unnormalised; the inverse carries the `1/N`
//! factor, so `inverse(forward(x)) == x`.

use std::f64::consts::PI;

pub(crate) fn is_pow2(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

/// In-place 1-D transform of `n` complex values read with a stride.
fn fft_strided(re: &mut [f64], im: &mut [f64], offset: usize, stride: usize, n: usize, inverse: bool) {
    // bit reversal
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            re.swap(offset + i * stride, offset + j * stride);
            im.swap(offset + i * stride, offset + j * stride);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (ang * k as f64).sin_cos();
                let a = offset + (start + k) * stride;
                let b = offset + (start + k + half) * stride;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// 2-D transform of `planes` stacked `h x w` complex planes, in place.
pub(crate) fn fft2_planes(re: &mut [f64], im: &mut [f64], planes: usize, h: usize, w: usize, inverse: bool) {
    debug_assert!(is_pow2(h) && is_pow2(w));
    let hw = h * w;
    for p in 0..planes {
        let base = p * hw;
        for r in 0..h {
            fft_strided(re, im, base + r * w, 1, w, inverse);
        }
        for c in 0..w {
            fft_strided(re, im, base + c, w, h, inverse);
        }
    }
    if inverse {
        let s = 1.0 / hw as f64;
        for v in re.iter_mut().chain(im.iter_mut()) {
            *v *= s;
        }
    }
}
