//! Finite-difference verification of tape gradients.

use super::array::Array;
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Floor on the denominator of the relative error, so gradients that are
/// zero analytically and numerically do not divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

/// Fraction of the largest analytic gradient magnitude that also floors the
/// denominator. Coordinates whose gradient is many orders below the rest are
/// dominated by finite-difference round-off and are judged against the
/// gradient's overall scale instead of their own.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Location of one checked coordinate: input index and flat offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coord {
    pub input: usize,
    pub index: usize,
}

/// Coordinate where the step-`h` and step-`h/2` difference quotients
/// disagree, or the one-sided quotients differ by a step-independent jump,
/// i.e. the function has a kink within reach of the stencil.
#[derive(Clone, Debug)]
pub struct NonSmooth {
    pub coord: Coord,
    pub analytic: f64,
    /// One-sided difference quotients `(f(x+h) - f(x)) / h` and `(f(x) - f(x-h)) / h`.
    pub right: f64,
    pub left: f64,
    /// Whether the analytic value falls inside the one-sided band.
    pub within_band: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coord>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
    pub excluded: Vec<NonSmooth>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.excluded.iter().all(|e| e.within_band)
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    rel_error_floored(a, n, REL_FLOOR)
}

fn rel_error_floored(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks the gradient of a scalar function of one array. See [`grad_check_multi`].
pub fn grad_check<F>(f: F, point: &Array, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_multi(|t, vs| f(t, vs[0]), std::slice::from_ref(point), h)
}

/// Compares the tape gradient of `f` at `points` against central
/// differences over every coordinate of every input.
///
/// Each coordinate is probed with steps `h` and `h/2`. When the two central
/// quotients disagree beyond what smooth truncation error allows, the
/// coordinate is reported as non-smooth and excluded from the error; the
/// analytic value is then only required to lie between the one-sided
/// quotients. Smooth coordinates are compared against the Richardson
/// combination `(4 c(h/2) - c(h)) / 3`, with the relative-error denominator
/// floored at `max(REL_FLOOR, SCALE_FLOOR * max|grad|)`.
pub fn grad_check_multi<F>(f: F, points: &[Array], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new();
    let vars = points
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let f0 = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    drop(tape);
    let grad_scale = vars
        .iter()
        .filter_map(|v| grads.get(*v))
        .fold(0.0_f64, |m, g| m.max(g.max_abs()));
    let floor = REL_FLOOR.max(SCALE_FLOOR * grad_scale);

    let eval = |inputs: &[Array]| -> Result<f64> {
        let mut t = Tape::new();
        let vs = inputs
            .iter()
            .map(|p| t.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut t, &vs)?;
        let v = t.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "grad_check" })
        }
    };

    let mut work: Vec<Array> = points.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        excluded: Vec::new(),
    };
    for (input, var) in vars.iter().enumerate() {
        let g = grads.get(*var).expect("param leaf always has a gradient");
        for index in 0..points[input].len() {
            let x0 = points[input].data()[index];
            let mut at = |dx: f64| -> Result<f64> {
                work[input].data_mut()[index] = x0 + dx;
                let v = eval(&work);
                work[input].data_mut()[index] = x0;
                v
            };
            let (fp, fm) = (at(h)?, at(-h)?);
            let (fp2, fm2) = (at(h / 2.0)?, at(-h / 2.0)?);
            let c_h = (fp - fm) / (2.0 * h);
            let c_h2 = (fp2 - fm2) / h;
            let analytic = g.data()[index];
            let coord = Coord { input, index };
            // smooth truncation error shrinks 4x between h and h/2; round-off
            // is ~eps*|f|/h. A gap far above both marks a kink.
            let noise = 1e-11 * (1.0 + f0.abs()) / h;
            let scale = c_h.abs().max(c_h2.abs()).max(REL_FLOOR);
            // a kink sitting exactly on x0 leaves the central quotients equal
            // but keeps a one-sided jump that does not shrink with the step
            let jump_h = (fp - f0) / h - (f0 - fm) / h;
            let jump_h2 = (fp2 - f0) / (h / 2.0) - (f0 - fm2) / (h / 2.0);
            let kinked = jump_h2.abs() > 2.0 * noise + 1e-3 * scale && jump_h2.abs() > 0.75 * jump_h.abs();
            if kinked || (c_h - c_h2).abs() > noise + 1e-3 * scale {
                let right = (fp - f0) / h;
                let left = (f0 - fm) / h;
                let (lo, hi) = (left.min(right), left.max(right));
                let slack = noise + 1e-4 * scale;
                report.excluded.push(NonSmooth {
                    coord,
                    analytic,
                    right,
                    left,
                    within_band: analytic >= lo - slack && analytic <= hi + slack,
                });
                continue;
            }
            let numeric = (4.0 * c_h2 - c_h) / 3.0;
            let err = rel_error_floored(analytic, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(coord);
                report.worst_values = (analytic, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_tight() {
        let x = Array::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let s = t.pow2(v)?;
                t.sum(s)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Array::new(&[3], vec![0.0, 1.5, -0.7]).unwrap();
        let r = grad_check(
            |t, v| {
                let s = t.relu(v)?;
                t.sum(s)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.excluded[0].coord.index, 0);
        assert!(r.excluded[0].within_band);
        assert_eq!(r.checked, 2);
        assert!(r.passes(1e-8));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // detach hides the dependence from the tape: analytic 0, numeric 2x
        let x = Array::new(&[1], vec![1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let d = t.detach(v)?;
                let s = t.mul(v, d)?;
                t.sum(s)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn step_out_of_range() {
        let x = Array::scalar(1.0);
        assert!(grad_check(|_, v| Ok(v), &x, 1e-2).is_err());
    }
}
