//! Central-difference verification of tape gradients.

use rand::Rng;

use crate::error::Result;
use crate::nn::params::Params;
use crate::nn::tape::{self, ParamLeaves, Tape, Var};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub passed: bool,
}

const FD_STEP: f64 = 1e-5;

/// If the parameter vector has more coordinates than this, a seeded random
/// subset is checked instead of every coordinate.
const EXHAUSTIVE_LIMIT: usize = 512;
const SUBSET_SIZE: usize = 128;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let err = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale > 1e-6 {
        err / scale
    } else {
        err
    }
}

fn coords_to_check(total: usize, seed: u64) -> Vec<usize> {
    if total <= EXHAUSTIVE_LIMIT {
        return (0..total).collect();
    }
    let mut r = rng::derive(seed, &[rng::stream::GRADCHECK]);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < SUBSET_SIZE {
        picked.insert(r.gen_range(0..total));
    }
    picked.into_iter().collect()
}

/// Compares a supplied analytic gradient against central differences of `f`.
pub fn check_against<F>(
    params: &Params,
    f: F,
    analytic: &Params,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<Var>,
{
    assert!(tolerance > 0.0, "tolerance must be positive");
    let coords = coords_to_check(params.len(), seed);
    let mut worst = 0.0_f64;
    let mut worst_index = 0;
    let mut perturbed = params.clone();
    for &k in &coords {
        let orig = perturbed.data[k];
        perturbed.data[k] = orig + FD_STEP;
        let plus = tape::eval_loss(&perturbed, &f)?;
        perturbed.data[k] = orig - FD_STEP;
        let minus = tape::eval_loss(&perturbed, &f)?;
        perturbed.data[k] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let rel = relative_error(analytic.data[k], numeric);
        if rel > worst {
            worst = rel;
            worst_index = k;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        coords_checked: coords.len(),
        passed: worst < tolerance,
    })
}

/// Computes the tape gradient of `f` and verifies it against central
/// differences. Failures are reported, not thrown.
pub fn check_gradients<F>(params: &Params, f: F, tolerance: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamLeaves) -> Result<Var>,
{
    let analytic = tape::grad(params, &f)?;
    check_against(params, f, &analytic, tolerance, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;

    fn quadratic_params() -> Params {
        let mut p = Params::zeros(Layout::builder().vector("theta", 6).build());
        p.data.copy_from_slice(&[0.4, -1.2, 2.0, 0.0, 3.3, -0.7]);
        p
    }

    #[test]
    fn quadratic_loss_passes_tightly() {
        let p = quadratic_params();
        let report = check_gradients(
            &p,
            |t, leaves| {
                let th = leaves.get("theta");
                let sq = t.mul(th, th);
                Ok(t.sum_elems(sq))
            },
            1e-6,
            0,
        )
        .unwrap();
        assert!(report.passed, "max rel {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn planted_fault_is_localized() {
        let p = quadratic_params();
        let f = |t: &mut Tape, leaves: &ParamLeaves| {
            let th = leaves.get("theta");
            let sq = t.mul(th, th);
            Ok(t.sum_elems(sq))
        };
        let mut bad = tape::grad(&p, f).unwrap();
        bad.data[3] = 1.0; // true gradient there is 0.0
        let report = check_against(&p, f, &bad, 1e-4, 0).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_index, 3);
    }

    #[test]
    fn large_params_use_a_subset_of_at_least_100_coords() {
        let p = Params::zeros(Layout::builder().vector("theta", 10_000).build());
        let report = check_gradients(
            &p,
            |t, leaves| {
                let th = leaves.get("theta");
                let sq = t.mul(th, th);
                Ok(t.sum_elems(sq))
            },
            1e-4,
            7,
        )
        .unwrap();
        assert!(report.coords_checked >= 100);
        assert!(report.coords_checked < 10_000);
        assert!(report.passed);
    }
}
