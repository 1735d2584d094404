//! Dense `f64` arrays with a reverse-mode tape.
//!
//! Values live in [`Array`]; differentiable computation is recorded on a
//! [`Tape`] and addressed through [`Var`] handles. Complex quantities are
//! carried as real/imaginary pairs ([`Spectrum`] on the tape,
//! [`SpectrumField`] outside it).

mod array;
mod fft;
mod gradcheck;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, grad_check_multi, rel_error, Coord, GradCheckReport, NonSmooth, REL_FLOOR};
pub use tape::{ElementwiseOp, Gradients, Padding, Spectrum, Tape, Var, DIV_GUARD};


use crate::{Error, Result};

/// Frequency-domain counterpart of a `[C, H, W]` field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumField {
    shape: [usize; 3],
    re: Vec<f64>,
    im: Vec<f64>,
}

impl SpectrumField {
    pub fn new(shape: [usize; 3], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if re.len() != n || im.len() != n {
            return Err(Error::shape(
                "SpectrumField::new",
                format!("{shape:?} needs {n} values, got {}/{}", re.len(), im.len()),
            ));
        }
        Ok(Self { shape, re, im })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// `sum |s|^2` over all bins.
    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).sum()
    }
}

fn spatial_dims(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 3 {
        return Err(Error::shape("fft2", format!("expected [C, H, W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    if !fft::is_pow2(h) || !fft::is_pow2(w) {
        return Err(Error::shape("fft2", format!("spatial dims {h}x{w} must be powers of two")));
    }
    Ok([shape[0], h, w])
}

/// Unnormalised 2-D transform of each channel of `x [C, H, W]`.
pub fn fft2(x: &Array) -> Result<SpectrumField> {
    let shape = spatial_dims(x.shape())?;
    let mut re = x.data().to_vec();
    let mut im = vec![0.0; re.len()];
    fft::fft2_planes(&mut re, &mut im, shape[0], shape[1], shape[2], false);
    Ok(SpectrumField { shape, re, im })
}

/// Inverse of [`fft2`], returning the complex result as a pair `(re, im)`.
pub fn ifft2_complex(s: &SpectrumField) -> Result<(Array, Array)> {
    let [c, h, w] = spatial_dims(&s.shape)?;
    let (mut re, mut im) = (s.re.clone(), s.im.clone());
    fft::fft2_planes(&mut re, &mut im, c, h, w, true);
    Ok((Array::new(&[c, h, w], re)?, Array::new(&[c, h, w], im)?))
}

/// Inverse of [`fft2`], keeping the real part.
pub fn ifft2(s: &SpectrumField) -> Result<Array> {
    Ok(ifft2_complex(s)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_bin_of_constant() {
        let x = Array::full(&[1, 4, 4], 0.75);
        let s = fft2(&x).unwrap();
        assert!((s.re()[0] - 12.0).abs() < 1e-12);
        assert!(s.re()[1..].iter().chain(s.im()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_pow2() {
        assert!(fft2(&Array::zeros(&[1, 6, 4])).is_err());
        assert!(fft2(&Array::zeros(&[4, 4])).is_err());
    }
}
