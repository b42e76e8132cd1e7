//! Central finite-difference verification of reverse-mode gradients.

/// Values below this magnitude are compared absolutely rather than
/// relatively; the central difference itself carries ~1e-11 of rounding
/// noise at `h = 1e-5`.
pub const RELATIVE_FLOOR: f64 = 1e-7;

/// One evaluation of the function under test.
#[derive(Debug, Clone)]
pub struct Probe {
    pub value: f64,
    /// Reverse-mode gradient with respect to the full point.
    pub gradient: Vec<f64>,
    /// Identifies the smooth piece the point lies on; see
    /// [`crate::autograd::Graph::kink_signature`]. Use 0 for smooth functions.
    pub signature: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a non-differentiable point.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_coordinate = other.worst_coordinate;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst_coordinate: None,
            checked: 0,
            skipped: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the reverse-mode gradient of `f` at `point` with
/// `(f(x+h) − f(x−h)) / 2h` on the listed coordinates (all when `None`).
pub fn finite_diff_check<F>(mut f: F, point: &[f64], h: f64, coords: Option<&[usize]>) -> GradCheckReport
where
    F: FnMut(&[f64]) -> Probe,
{
    let base = f(point);
    assert_eq!(base.gradient.len(), point.len(), "gradient length must match point");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };

    let mut report = GradCheckReport::default();
    let mut x = point.to_vec();
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * h);
        let err = relative_error(base.gradient[i], numeric);
        report.checked += 1;
        if report.worst_coordinate.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{sigmoid, Graph, ParamStore, Tensor};

    #[test]
    fn square_at_three() {
        let r = finite_diff_check(
            |x| Probe {
                value: x[0] * x[0],
                gradient: vec![2.0 * x[0]],
                signature: 0,
            },
            &[3.0],
            1e-5,
            None,
        );
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn sigmoid_at_zero_through_graph() {
        let store = ParamStore::new();
        let r = finite_diff_check(
            |x| {
                let mut g = Graph::new(&store);
                let v = g.variable(Tensor::scalar(x[0]));
                let y = g.sigmoid(v);
                let grads = g.backward(y).unwrap();
                Probe {
                    value: g.value(y).item(),
                    gradient: grads.wrt(v).unwrap().to_vec(),
                    signature: 0,
                }
            },
            &[0.0],
            1e-5,
            None,
        );
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(sigmoid(0.0) * (1.0 - sigmoid(0.0)), 0.25);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = finite_diff_check(
            |x| Probe {
                value: x[0] * x[0],
                gradient: vec![3.0 * x[0]],
                signature: 0,
            },
            &[1.0],
            1e-5,
            None,
        );
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst_coordinate, Some(0));
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let r = finite_diff_check(
            |x| Probe {
                value: x[0].abs(),
                gradient: vec![x[0].signum()],
                signature: u64::from(x[0] > 0.0),
            },
            &[1e-6],
            1e-5,
            None,
        );
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 0);
        assert!(!r.passes(1e-4));
    }
}
