//! Randomised cross-checks of the exact Hessian diagonal against the path
//! expansion and the finite-difference oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activation::ActivationSpec;
use crate::error::Result;
use crate::hessian::{
    hessian_diag_exact, hessian_diag_fd, hessian_diag_fd_grad, hessian_diag_paths, single_hidden_layer_closed_form,
    FD_STEP, PATH_MAX_DEPTH, PATH_MAX_HIDDEN_NEURONS,
};
use crate::network::{InitScheme, Network};
use crate::train::mix_seed;

/// Tolerance of the exact-vs-paths comparison.
pub const PATHS_REL_TOL: f64 = 1e-10;
/// Absolute floor of the FD comparison, as a fraction of the relative tolerance.
pub const ABS_FLOOR_RATIO: f64 = 1e-2;

pub const ALPHAS: [f64; 4] = [1.0, 4.0, 14.0, 28.0];

#[derive(Debug, Clone)]
pub struct CheckCase {
    pub net: Network,
    pub x: Vec<f64>,
    pub y: f64,
}

/// Random scalar-output net with depth 2..=4, widths <= 8 and an RCT-AF
/// activation, plus a random sample.
pub fn random_case(seed: u64) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(2..=4usize);
    let mut widths = vec![rng.random_range(1..=4usize)];
    for _ in 1..depth {
        widths.push(rng.random_range(1..=8usize));
    }
    widths.push(1);
    let beta = rng.random_range(0..=2u8);
    let alpha = ALPHAS[rng.random_range(0..ALPHAS.len())];
    let act = ActivationSpec::rct_af(alpha, beta)?;
    let scheme = if rng.random_bool(0.5) {
        InitScheme::He
    } else {
        InitScheme::Xavier
    };
    let mut net = Network::init(&widths, act, rng.random(), scheme)?;
    // Non-zero biases so pre-activations are not all centred on the same point.
    for l in 1..=net.depth() {
        for b in net.biases_mut(l) {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let x = (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = rng.random_range(-1.5..1.5);
    Ok(CheckCase { net, x, y })
}

/// `trials` independent cases derived from one seed.
pub fn random_cases(seed: u64, trials: usize) -> Result<Vec<CheckCase>> {
    (0..trials as u64).map(|t| random_case(mix_seed(seed, t))).collect()
}

/// Worst-case deviations for one case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub widths: Vec<usize>,
    pub activation: String,
    pub params: usize,
    /// max |exact − fd| / max(|fd|, floor) over parameters (second difference of the loss).
    pub fd_max_rel: f64,
    /// Same against the central difference of the gradient.
    pub fd_grad_max_rel: f64,
    /// Whether every entry is within `max(tol·|fd|, floor)`.
    pub fd_pass: bool,
    /// max |exact − paths| / max(|exact|, tiny), when the net is small enough.
    pub paths_max_rel: Option<f64>,
    pub paths_pass: Option<bool>,
    /// max |exact − closed form| for one-hidden-layer nets.
    pub closed_form_max_abs: Option<f64>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.fd_pass && self.paths_pass.unwrap_or(true)
    }
}

fn max_scaled(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs() / v.abs().max(floor))
        .fold(0.0, f64::max)
}

/// `|exact − oracle| <= max(tol·|oracle|, tol·ABS_FLOOR_RATIO)` elementwise.
pub fn within(exact: &[f64], oracle: &[f64], tol: f64) -> bool {
    let floor = tol * ABS_FLOOR_RATIO;
    exact
        .iter()
        .zip(oracle)
        .all(|(e, o)| (e - o).abs() <= (tol * o.abs()).max(floor))
}

pub fn check_case(case: &CheckCase, tolerance: f64) -> Result<CaseReport> {
    let CheckCase { net, x, y } = case;
    let exact = hessian_diag_exact(net, x, *y)?;
    let fd = hessian_diag_fd(net, x, *y, FD_STEP)?;
    let fd_grad = hessian_diag_fd_grad(net, x, *y, 1e-6)?;
    let floor = ABS_FLOOR_RATIO.max(1e-300);
    let paths = if net.hidden_neurons() <= PATH_MAX_HIDDEN_NEURONS && net.depth() <= PATH_MAX_DEPTH {
        let p = hessian_diag_paths(net, x, *y)?;
        Some(max_scaled(&p.diag, &exact.diag, 1e-300))
    } else {
        None
    };
    // A zero tolerance demands exact agreement everywhere.
    let paths_tol = if tolerance > 0.0 { PATHS_REL_TOL } else { 0.0 };
    let closed_form = if net.depth() == 2 {
        let cf = single_hidden_layer_closed_form(net, x, *y)?;
        Some(
            cf.iter()
                .zip(&exact.diag)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(CaseReport {
        widths: net.widths().to_vec(),
        activation: net.activation().to_string(),
        params: net.param_count(),
        fd_max_rel: max_scaled(&exact.diag, &fd, floor),
        fd_grad_max_rel: max_scaled(&exact.diag, &fd_grad, floor),
        fd_pass: within(&exact.diag, &fd, tolerance),
        paths_max_rel: paths,
        paths_pass: paths.map(|e| e <= paths_tol),
        closed_form_max_abs: closed_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_cases_are_deterministic_and_in_range() {
        for seed in 0..50 {
            let a = random_case(seed).unwrap();
            let b = random_case(seed).unwrap();
            assert_eq!(a.net, b.net);
            assert_eq!(a.x, b.x);
            assert!((2..=4).contains(&a.net.depth()));
            assert!(a.net.widths().iter().all(|&w| w <= 8));
        }
    }

    #[test]
    fn zero_tolerance_fails() {
        let case = random_case(3).unwrap();
        let r = check_case(&case, 0.0).unwrap();
        assert!(!r.passed());
        let r = check_case(&case, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
