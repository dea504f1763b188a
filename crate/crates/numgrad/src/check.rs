use crate::Matrix;

/// One scalar entry inside a list of parameter tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSample {
    pub tensor: usize,
    pub index: usize,
}

/// Central-difference gradient checker.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|, abs_floor)`,
/// so entries whose true gradient is (near) zero are compared on absolute
/// error scaled by `abs_floor` instead of blowing up.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub tol: f64,
    pub abs_floor: f64,
}

#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub sample: ParamSample,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl CheckReport {
    pub fn worst(&self) -> Option<&CheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-5,
        }
    }
}

impl GradCheck {
    /// # Panics
    /// Panics unless `eps` lies in `[1e-7, 1e-3]`.
    pub fn new(eps: f64, tol: f64) -> Self {
        assert!(
            (1e-7..=1e-3).contains(&eps),
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        );
        Self {
            eps,
            tol,
            ..Self::default()
        }
    }

    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(self.abs_floor);
        (analytic - numeric).abs() / denom
    }

    /// Perturbs every sampled entry of `params` by `±eps`, evaluates `loss`
    /// and compares the central difference with `analytic`. `params` is
    /// restored bit-for-bit before returning.
    pub fn run<F>(
        &self,
        params: &mut [Matrix],
        analytic: &[Matrix],
        samples: &[ParamSample],
        mut loss: F,
    ) -> CheckReport
    where
        F: FnMut(&[Matrix]) -> f64,
    {
        let mut entries = Vec::with_capacity(samples.len());
        for &sample in samples {
            let original = params[sample.tensor].data()[sample.index];
            params[sample.tensor].data_mut()[sample.index] = original + self.eps;
            let plus = loss(params);
            params[sample.tensor].data_mut()[sample.index] = original - self.eps;
            let minus = loss(params);
            params[sample.tensor].data_mut()[sample.index] = original;

            let numeric = (plus - minus) / (2.0 * self.eps);
            let a = analytic[sample.tensor].data()[sample.index];
            entries.push(CheckEntry {
                sample,
                analytic: a,
                numeric,
                rel_error: self.relative_error(a, numeric),
            });
        }
        let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
        CheckReport {
            passed: max_rel_error <= self.tol,
            entries,
            max_rel_error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut params = vec![Matrix::scalar(3.0)];
        let analytic = vec![Matrix::scalar(6.0)];
        let report = GradCheck::new(1e-5, 1e-8).run(
            &mut params,
            &analytic,
            &[ParamSample { tensor: 0, index: 0 }],
            |p| p[0].data()[0].powi(2),
        );
        assert!(report.passed, "{report:?}");
        assert!((report.entries[0].numeric - 6.0).abs() < 1e-8);
        assert_eq!(params[0].data()[0], 3.0);
    }

    #[test]
    fn zero_gradient_uses_absolute_fallback() {
        let mut params = vec![Matrix::scalar(0.0)];
        let analytic = vec![Matrix::scalar(0.0)];
        // f(w) = w^2 at 0: numeric difference is exactly 0, tiny noise must not explode.
        let check = GradCheck::new(1e-5, 1e-4);
        let report = check.run(
            &mut params,
            &analytic,
            &[ParamSample { tensor: 0, index: 0 }],
            |p| p[0].data()[0].powi(2) + 1e-17,
        );
        assert!(report.passed);
        assert!(check.relative_error(0.0, 1e-12) < 1e-6);
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut params = vec![Matrix::scalar(2.0)];
        let analytic = vec![Matrix::scalar(5.0)];
        let report = GradCheck::default().run(
            &mut params,
            &analytic,
            &[ParamSample { tensor: 0, index: 0 }],
            |p| p[0].data()[0].powi(2),
        );
        assert!(!report.passed);
        assert_eq!(report.worst().unwrap().sample.tensor, 0);
    }

    #[test]
    #[should_panic]
    fn step_outside_range_panics() {
        let _ = GradCheck::new(1e-2, 1e-4);
    }
}
