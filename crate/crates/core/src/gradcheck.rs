//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward pass, so it stays independent of
//! the backward rules it verifies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Gradients;
use crate::params::ParamStore;
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose analytic and numeric magnitudes are both below this floor
/// are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Central difference of `loss` at one parameter entry.
pub fn numeric_partial<F>(params: &mut ParamStore, name: &str, index: usize, h: f64, loss: &F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let orig = params.get(name)?.data()[index];
    params.get_mut(name)?.data_mut()[index] = orig + h;
    let plus = loss(params)?;
    params.get_mut(name)?.data_mut()[index] = orig - h;
    let minus = loss(params)?;
    params.get_mut(name)?.data_mut()[index] = orig;
    Ok((plus - minus) / (2.0 * h))
}

/// Compares `analytic` (keyed `"{prefix}{name}"`) against central differences
/// for up to `per_tensor` randomly chosen entries of every tensor in `params`.
pub fn check_gradients<F>(
    params: &ParamStore,
    analytic: &Gradients,
    prefix: &str,
    loss: F,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.numel();
        let key = format!("{prefix}{name}");
        let grad = analytic.get(&key);
        let indices: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for idx in indices {
            let a = grad.map_or(0.0, |g| g.data()[idx]);
            let num = numeric_partial(&mut work, &name, idx, h, &loss)?;
            let err = relative_error(a, num);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((key.clone(), idx, a, num));
            }
        }
    }
    Ok(report)
}
