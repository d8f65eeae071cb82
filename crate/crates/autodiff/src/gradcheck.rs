//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::params::ParamSet;

/// Settings for [`GradCheck::run`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// gradients that are zero up to rounding compare absolutely.
    pub floor: f64,
    pub mode: Mode,
    /// Dropout seed; every evaluation reuses it so masks are identical.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-6,
            mode: Mode::Infer,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

impl GradCheck {
    /// Compares the reverse-mode gradient of the scalar built by `f` with
    /// `(f(x + h) - f(x - h)) / 2h` for every trainable scalar in `params`.
    pub fn run<F>(&self, params: &ParamSet<f64>, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
    {
        let eval = |ps: &ParamSet<f64>| -> Result<f64> {
            let mut g = Graph::with_seed(self.mode, self.seed);
            let out = f(&mut g, ps)?;
            let v = g.value(out);
            if v.len() != 1 {
                return Err(Error::shape("grad_check", "objective", &[1], v.shape()));
            }
            let v = v.data()[0];
            if !v.is_finite() {
                return Err(Error::NonFinite("grad_check objective".into()));
            }
            Ok(v)
        };
        eval(params)?;
        let mut g = Graph::with_seed(self.mode, self.seed);
        let out = f(&mut g, params)?;
        let grads = g.backward(out)?;

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        };
        let mut probe = params.clone();
        let trainable: Vec<String> = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, _)| k.to_string())
            .collect();
        for path in trainable {
            let n = params.tensor(&path)?.len();
            let analytic = grads.param(&path).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
            for i in 0..n {
                let x0 = params.tensor(&path)?.data()[i];
                probe.tensor_mut(&path)?.data_mut()[i] = x0 + self.step;
                let plus = eval(&probe)?;
                probe.tensor_mut(&path)?.data_mut()[i] = x0 - self.step;
                let minus = eval(&probe)?;
                probe.tensor_mut(&path)?.data_mut()[i] = x0;
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(analytic[i], numeric, self.floor);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some((path.clone(), i));
                }
            }
        }
        Ok(report)
    }
}
