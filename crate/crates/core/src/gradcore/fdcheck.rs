/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates with a ReLU kink within one step (forward and backward
    /// one-sided slopes disagree). There the analytic value only has to lie
    /// between the two slopes.
    pub kinks: usize,
    /// `(index, analytic, finite difference)` of every mismatch.
    pub failures: Vec<(usize, f64, f64)>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks `analytic` against central differences of `f` at `at`.
///
/// A coordinate passes when the relative error is at most `rel`, or the
/// absolute error is at most `abs_small` where the gradient magnitude is below
/// `1e-3`.
pub fn fd_check<F>(f: F, at: &[f64], analytic: &[f64], step: f64, rel: f64, abs_small: f64) -> FdReport
where
    F: Fn(&[f64]) -> f64,
{
    let f0 = f(at);
    let mut x = at.to_vec();
    let mut slopes = |i: usize, h: f64| {
        x[i] = at[i] + h;
        let up = f(&x);
        x[i] = at[i] - h;
        let dn = f(&x);
        x[i] = at[i];
        ((up - f0) / h, (f0 - dn) / h, (up - dn) / (2.0 * h))
    };
    // round-off of a one-sided slope at step / 10
    let noise = 1e-14 * f0.abs().max(1.0) / step;
    let mut report = FdReport::default();
    for i in 0..at.len() {
        let g = analytic[i];
        let (fwd, bwd, mut fd) = slopes(i, step);
        let gap = (fwd - bwd).abs();
        if gap > 100.0 * noise {
            // curvature shrinks the gap tenfold with the step, a kink at the
            // point keeps it, a kink further out removes it
            let (fwd2, bwd2, fd2) = slopes(i, step / 10.0);
            let gap2 = (fwd2 - bwd2).abs();
            if gap2 > 0.5 * gap {
                report.kinks += 1;
                let slack = rel * g.abs() + abs_small + (fwd - fwd2).abs().max((bwd - bwd2).abs());
                if g < fwd2.min(bwd2) - slack || g > fwd2.max(bwd2) + slack {
                    report.failures.push((i, g, 0.5 * (fwd2 + bwd2)));
                }
                continue;
            }
            if gap2 < gap / 30.0 {
                fd = fd2;
            }
        }
        let ok = if g.abs() < 1e-3 {
            (g - fd).abs() <= abs_small
        } else {
            (g - fd).abs() <= rel * g.abs()
        };
        report.checked += 1;
        if !ok {
            report.failures.push((i, g, fd));
        }
    }
    report
}
