//! Central finite-difference verification of the hand-written backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelParams, ParamGrads};

/// Below this magnitude the relative error is measured against the floor
/// instead, so gradients that are zero up to rounding do not blow it up.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Which parameter entries to probe.
#[derive(Debug, Clone, Default)]
pub struct ParamSubset {
    /// Only tensors whose name starts with one of these; all tensors if empty.
    pub prefixes: Vec<String>,
    /// Probe at most this many random entries per tensor; all entries if `None`.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EntryCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl EntryCheck {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.analytic.abs().max(self.numeric.abs()).max(REL_ERROR_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<EntryCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(EntryCheck::rel_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.entries.iter().map(EntryCheck::abs_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&EntryCheck> {
        self.entries.iter().max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }

    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.max_rel_error() < self.tolerance
    }

    /// Largest relative error among tensors whose name ends with `suffix`.
    pub fn max_rel_error_for(&self, suffix: &str) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.tensor.ends_with(suffix))
            .map(EntryCheck::rel_error)
            .reduce(f64::max)
    }
}

/// Compares `analytic` against `(loss(θ+h) − loss(θ−h)) / 2h` entry by entry.
///
/// Runs in fp64; `loss` must be a deterministic function of the parameters.
pub fn grad_check<F>(
    params: &ModelParams<f64>,
    analytic: &ParamGrads<f64>,
    subset: &ParamSubset,
    loss: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(subset.seed);
    let names = params.tensor_names();
    let grads = analytic.tensors();
    let mut probe = params.clone();
    let mut entries = Vec::new();

    for (ti, name) in names.iter().enumerate() {
        if !subset.prefixes.is_empty() && !subset.prefixes.iter().any(|p| name.starts_with(p.as_str())) {
            continue;
        }
        let len = grads[ti].len();
        let indices: Vec<usize> = match subset.max_per_tensor {
            Some(n) if n < len => {
                let mut v = sample(&mut rng, len, n).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for index in indices {
            let original = params.tensors()[ti].data()[index];
            probe.tensors_mut()[ti].data_mut()[index] = original + step;
            let plus = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[index] = original - step;
            let minus = loss(&probe)?;
            probe.tensors_mut()[ti].data_mut()[index] = original;
            entries.push(EntryCheck {
                tensor: name.clone(),
                index,
                analytic: grads[ti].data()[index],
                numeric: (plus - minus) / (2.0 * step),
            });
        }
    }
    Ok(GradCheckReport { entries, tolerance })
}
