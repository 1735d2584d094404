//! Wiener modulation of a blurred feature map at several SNRs.
//!
//! A sharp checkerboard is blurred with a small Gaussian kernel, then
//! modulated with that kernel. High SNR inverts the blur; low SNR only
//! attenuates.

use v2sfm::diffnum::Array;
use v2sfm::fusion::wiener_modulate;
use v2sfm::vibration::{SNR_CAP, SNR_FLOOR};

const N: usize = 16;

/// Circularly wrapped Gaussian centred on pixel (0, 0).
fn gaussian_kernel(sigma: f64) -> Array {
    let mut k = Array::from_fn(&[1, N, N], |i| {
        let wrap = |v: usize| v.min(N - v) as f64;
        let (y, x) = (wrap(i / N), wrap(i % N));
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    });
    let s: f64 = k.data().iter().sum();
    for v in k.data_mut() {
        *v /= s;
    }
    k
}

fn circular_conv(x: &Array, k: &Array) -> Array {
    Array::from_fn(&[1, N, N], |i| {
        let (y, xx) = (i / N, i % N);
        let mut acc = 0.0;
        for ky in 0..N {
            for kx in 0..N {
                acc += k.data()[ky * N + kx] * x.data()[((y + N - ky) % N) * N + (xx + N - kx) % N];
            }
        }
        acc
    })
}

fn rms(a: &Array, b: &Array) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

fn main() -> v2sfm::Result<()> {
    let sharp = Array::from_fn(&[1, N, N], |i| if ((i / N) / 4 + (i % N) / 4) % 2 == 0 { 1.0 } else { -1.0 });
    let k = gaussian_kernel(0.8);
    let blurred = circular_conv(&sharp, &k);
    println!("blurred vs sharp: rms {:.4}", rms(&blurred, &sharp));
    for snr in [SNR_FLOOR, 1e-1, 1.0, 1e2, 1e4, SNR_CAP] {
        let out = wiener_modulate(&blurred, &k, snr)?;
        println!("snr {snr:>9.0e}: rms to sharp {:.4}, energy {:.3}", rms(&out, &sharp), out.data().iter().map(|v| v * v).sum::<f64>());
    }
    Ok(())
}
