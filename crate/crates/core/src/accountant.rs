//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step RDP is tracked at the integer orders 2..=64, composed additively
//! across steps and converted to an (ε, δ) guarantee with
//! `ε = min_α [ rdp(α) + ln(1/δ) / (α - 1) ]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dp::DpError;

pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 64;

/// Noise search interval for [`calibrate_sigma`].
pub const SIGMA_SEARCH_MIN: f64 = 0.1;
pub const SIGMA_SEARCH_MAX: f64 = 1000.0;
const CALIBRATION_ITERATIONS: usize = 100;
/// Relative margin below the target ε. Training composes step by step, whose
/// rounding can differ from the multiplied composition used here by far less.
const CALIBRATION_SLACK: f64 = 1e-9;

/// Natural log of the binomial coefficient `C(n, k)`, exact up to the final rounding.
fn ln_binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        // stays exact: c * (n - i) is divisible by (i + 1)
        c = c * (n as u128 - i) / (i + 1);
    }
    (c as f64).ln()
}

/// RDP at integer order `alpha` of one step of the Gaussian mechanism with
/// noise multiplier `sigma`, applied to a Poisson subsample drawn at rate `q`.
///
/// For `q < 1` this is `ln(A_α) / (α - 1)` with
/// `A_α = Σ_{k=0..α} C(α,k) (1-q)^{α-k} q^k exp(k(k-1) / (2σ²))`,
/// summed in log space.
pub fn rdp_of_step(q: f64, sigma: f64, alpha: u32) -> Result<f64, DpError> {
    if alpha < MIN_ORDER {
        return Err(DpError::InvalidSpec(format!("RDP order {alpha} is below 2")));
    }
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(DpError::InvalidSpec(format!("sampling rate {q} outside [0, 1]")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DpError::InfinitePrivacyCost { sigma });
    }
    let a = alpha as f64;
    if q == 1.0 {
        return Ok(a / (2.0 * sigma * sigma));
    }

    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let terms: Vec<f64> = (0..=alpha)
        .map(|k| {
            let kf = k as f64;
            ln_binomial(alpha, k)
                + (a - kf) * ln_1mq
                + kf * ln_q
                + kf * (kf - 1.0) * inv_two_var
        })
        .collect();
    let (imax, &max) = terms
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("alpha >= 2 gives at least three terms");
    let rest: f64 = terms
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &t)| (t - max).exp())
        .sum();
    let ln_a = max + rest.ln_1p();
    Ok(ln_a / (a - 1.0))
}

/// Accumulated RDP per order plus the number of composed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    rdp_at_order: BTreeMap<u32, f64>,
    steps_recorded: usize,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new()
    }
}

impl AccountantState {
    /// Fresh accountant tracking orders 2..=64.
    pub fn new() -> Self {
        Self::with_orders(MIN_ORDER..=MAX_ORDER)
    }

    pub fn with_orders(orders: impl IntoIterator<Item = u32>) -> Self {
        Self {
            rdp_at_order: orders.into_iter().map(|a| (a, 0.0)).collect(),
            steps_recorded: 0,
        }
    }

    /// Accountant with explicit accumulated values.
    pub fn from_values(rdp_at_order: BTreeMap<u32, f64>, steps_recorded: usize) -> Self {
        Self {
            rdp_at_order,
            steps_recorded,
        }
    }

    pub fn steps_recorded(&self) -> usize {
        self.steps_recorded
    }

    pub fn rdp_at_order(&self) -> &BTreeMap<u32, f64> {
        &self.rdp_at_order
    }

    /// Compose `steps` identical steps at `(q, sigma)`.
    pub fn record_steps(&mut self, q: f64, sigma: f64, steps: usize) -> Result<(), DpError> {
        for (&alpha, acc) in self.rdp_at_order.iter_mut() {
            *acc += steps as f64 * rdp_of_step(q, sigma, alpha)?;
        }
        self.steps_recorded += steps;
        Ok(())
    }

    pub fn record_step(&mut self, q: f64, sigma: f64) -> Result<(), DpError> {
        self.record_steps(q, sigma, 1)
    }

    pub fn reset(&mut self) {
        self.rdp_at_order.values_mut().for_each(|v| *v = 0.0);
        self.steps_recorded = 0;
    }

    /// Realized ε at `delta`, together with the order attaining it.
    pub fn epsilon_and_order(&self, delta: f64) -> Result<(f64, u32), DpError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidSpec(format!("delta {delta} outside (0, 1)")));
        }
        if self.steps_recorded == 0 || self.rdp_at_order.is_empty() {
            return Err(DpError::EmptyAccountant);
        }
        let ln_inv_delta = -delta.ln();
        self.rdp_at_order
            .iter()
            .filter(|(&alpha, _)| alpha >= MIN_ORDER)
            .map(|(&alpha, &rdp)| (rdp + ln_inv_delta / (alpha as f64 - 1.0), alpha))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .ok_or(DpError::EmptyAccountant)
    }

    /// Compose-and-convert: the realized ε at `delta`.
    pub fn epsilon(&self, delta: f64) -> Result<f64, DpError> {
        self.epsilon_and_order(delta).map(|(eps, _)| eps)
    }
}

/// ε after `steps` subsampled Gaussian steps at `(q, sigma)`.
pub fn epsilon_for(q: f64, sigma: f64, steps: usize, delta: f64) -> Result<f64, DpError> {
    let mut acc = AccountantState::new();
    acc.record_steps(q, sigma, steps)?;
    acc.epsilon(delta)
}

/// Smallest noise multiplier in `[0.1, 1000]` whose realized ε over
/// `total_steps` steps at rate `q` stays at or below `target_epsilon`.
///
/// Bisects on `ln σ`. When even `σ = 0.1` meets the target, 0.1 is returned.
pub fn calibrate_sigma(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    total_steps: usize,
) -> Result<f64, DpError> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(DpError::InvalidSpec(format!(
            "target epsilon {target_epsilon} must be positive"
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(DpError::InvalidSpec(format!("sampling rate {q} outside (0, 1]")));
    }
    if total_steps == 0 {
        return Err(DpError::InvalidSpec("calibration needs at least one step".into()));
    }
    let eps_at = |sigma: f64| epsilon_for(q, sigma, total_steps, delta);
    let goal = target_epsilon * (1.0 - CALIBRATION_SLACK);

    let eps_max = eps_at(SIGMA_SEARCH_MAX)?;
    if eps_max > goal {
        return Err(DpError::CalibrationUnreachable {
            target: target_epsilon,
            best: eps_max,
        });
    }
    if eps_at(SIGMA_SEARCH_MIN)? <= goal {
        return Ok(SIGMA_SEARCH_MIN);
    }
    // invariant: eps(exp(lo)) > goal >= eps(exp(hi))
    let mut lo = SIGMA_SEARCH_MIN.ln();
    let mut hi = SIGMA_SEARCH_MAX.ln();
    for _ in 0..CALIBRATION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eps_at(mid.exp())? <= goal {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_binomial_small_cases() {
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert!((ln_binomial(5, 2) - 10f64.ln()).abs() < 1e-15);
        // C(64, 32) = 1832624140942590534
        assert!((ln_binomial(64, 32) - 1_832_624_140_942_590_534f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_costs_nothing() {
        assert_eq!(rdp_of_step(0.0, 1.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn full_batch_matches_gaussian_closed_form() {
        assert_eq!(rdp_of_step(1.0, 1.0, 2).unwrap(), 1.0);
        assert_eq!(rdp_of_step(1.0, 2.0, 8).unwrap(), 1.0);
    }

    #[test]
    fn zero_noise_is_an_error() {
        assert!(matches!(
            rdp_of_step(0.1, 0.0, 4),
            Err(DpError::InfinitePrivacyCost { .. })
        ));
    }

    #[test]
    fn order_two_closed_form() {
        // A_2 = (1-q)^2 + 2q(1-q) + q^2 e^{1/σ²} = 1 + q²(e^{1/σ²} - 1)
        let (q, s) = (0.01f64, 1.0f64);
        let expected = (q * q * ((1.0 / (s * s)).exp() - 1.0)).ln_1p();
        let got = rdp_of_step(q, s, 2).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn conversion_direct_formula() {
        let acc = AccountantState::from_values(BTreeMap::from([(2, 1.0)]), 1);
        let eps = acc.epsilon((-1f64).exp()).unwrap();
        assert!((eps - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reset_accountant_cannot_convert() {
        let mut acc = AccountantState::new();
        acc.record_steps(0.1, 1.0, 10).unwrap();
        acc.reset();
        assert_eq!(acc.epsilon(1e-5), Err(DpError::EmptyAccountant));
    }

    #[test]
    fn bad_delta_rejected() {
        let mut acc = AccountantState::new();
        acc.record_step(0.1, 1.0).unwrap();
        assert!(acc.epsilon(0.0).is_err());
        assert!(acc.epsilon(1.0).is_err());
    }

    #[test]
    fn doubling_steps_never_lowers_epsilon() {
        let one = epsilon_for(0.02, 1.1, 500, 1e-5).unwrap();
        let two = epsilon_for(0.02, 1.1, 1000, 1e-5).unwrap();
        assert!(two >= one);
    }

    #[test]
    fn calibration_brackets_target() {
        let (q, steps) = (0.032, 1875);
        for target in [1.02, 9.50] {
            let sigma = calibrate_sigma(target, 1e-5, q, steps).unwrap();
            let eps = epsilon_for(q, sigma, steps, 1e-5).unwrap();
            assert!(eps <= target && eps >= 0.995 * target, "{target}: {eps}");
        }
        let strict = calibrate_sigma(1.02, 1e-5, q, steps).unwrap();
        let loose = calibrate_sigma(9.50, 1e-5, q, steps).unwrap();
        assert!(loose < strict);
    }

    #[test]
    fn more_steps_need_more_noise() {
        let a = calibrate_sigma(2.0, 1e-5, 0.01, 1000).unwrap();
        let b = calibrate_sigma(2.0, 1e-5, 0.01, 4000).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn unreachable_target_errors() {
        // full-batch steps: even σ = 1000 cannot reach ε = 1e-4 after a million steps
        assert!(matches!(
            calibrate_sigma(1e-4, 1e-5, 1.0, 1_000_000),
            Err(DpError::CalibrationUnreachable { .. })
        ));
    }

    #[test]
    fn easy_target_returns_grid_floor() {
        let sigma = calibrate_sigma(1e6, 1e-5, 0.001, 1).unwrap();
        assert_eq!(sigma, SIGMA_SEARCH_MIN);
    }
}
