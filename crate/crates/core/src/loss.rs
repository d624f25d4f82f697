//! Negative-SDR objective with permutation-invariant assignment.
//!
//! `SDR(s, ŝ) = 10·log10(⟨s,ŝ⟩² / (‖s‖²‖ŝ‖² − ⟨s,ŝ⟩² + ε))`, which is
//! invariant to the scale of either argument up to the ε guard.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

pub const SDR_EPS: f64 = 1e-8;
/// Reporting clamp, in dB.
pub const DB_CLAMP: f64 = 80.0;
// ratio floor that makes an orthogonal estimate land on −80 dB
const RATIO_FLOOR: f64 = 1e-8;

fn check(s: &[f64], est: &[f64], what: &'static str) -> Result<(f64, f64, f64)> {
    if s.len() != est.len() {
        return Err(Error::Dimension(alloc::format!(
            "{what}: reference has {} samples, estimate {}",
            s.len(),
            est.len()
        )));
    }
    let a = dot(s, s);
    let b = dot(est, est);
    if a == 0.0 || b == 0.0 {
        return Err(Error::DegenerateSignal(what));
    }
    Ok((dot(s, est), a, b))
}

/// Signal-to-distortion ratio in dB, floored at −80 dB.
pub fn sdr(s: &[f64], est: &[f64]) -> Result<f64> {
    let (p, a, b) = check(s, est, "sdr")?;
    let ratio = p * p / (a * b - p * p + SDR_EPS);
    Ok(10.0 * libm::log10(ratio.max(RATIO_FLOOR)))
}

/// SDR and its gradient with respect to the estimate.
pub fn sdr_with_grad(s: &[f64], est: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (p, a, b) = check(s, est, "sdr")?;
    let den = a * b - p * p + SDR_EPS;
    let ratio = p * p / den;
    if ratio <= RATIO_FLOOR {
        return Ok((10.0 * libm::log10(RATIO_FLOOR), vec![0.0; est.len()]));
    }
    let c = 10.0 / LN_10;
    // d/dŝ [ln p² − ln den] = 2s/p − (2aŝ − 2ps)/den
    let grad = s
        .iter()
        .zip(est)
        .map(|(sv, ev)| c * (2.0 * sv / p - (2.0 * a * ev - 2.0 * p * sv) / den))
        .collect();
    Ok((10.0 * libm::log10(ratio), grad))
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    /// Minimum over permutations of the mean negative SDR.
    pub loss: f64,
    /// `permutation[i]` is the estimate assigned to source `i`.
    pub permutation: Vec<usize>,
    pub evaluated: usize,
}

/// Best assignment for a `[sources × estimates]` cost matrix (lower is better).
/// Ties resolve to the lexicographically first permutation.
pub fn pit_from_costs(costs: &Mat) -> PitResult {
    let n = costs.rows;
    let perms = permutations(n);
    let evaluated = perms.len();
    let mut best = (f64::INFINITY, Vec::new());
    for perm in perms {
        // summed in sorted order so relabelling sources cannot change the result
        let mut terms: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| costs.get(i, j)).collect();
        terms.sort_by(f64::total_cmp);
        let cost = terms.iter().sum::<f64>() / n as f64;
        if cost < best.0 {
            best = (cost, perm);
        }
    }
    PitResult { loss: best.0, permutation: best.1, evaluated }
}

fn check_counts(sources: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<()> {
    if sources.len() != estimates.len() || sources.is_empty() {
        return Err(Error::Dimension(alloc::format!(
            "{} sources vs {} estimates",
            sources.len(),
            estimates.len()
        )));
    }
    Ok(())
}

/// Permutation-invariant negative SDR.
pub fn pit_loss(sources: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<PitResult> {
    check_counts(sources, estimates)?;
    let n = sources.len();
    let mut costs = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            costs.set(i, j, -sdr(&sources[i], &estimates[j])?);
        }
    }
    Ok(pit_from_costs(&costs))
}

/// [`pit_loss`] plus `∂loss/∂estimate_j` for every estimate.
pub fn pit_loss_with_grad(sources: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<(PitResult, Vec<Vec<f64>>)> {
    let result = pit_loss(sources, estimates)?;
    let n = sources.len();
    let mut grads = vec![Vec::new(); n];
    for (i, &j) in result.permutation.iter().enumerate() {
        let (_, g) = sdr_with_grad(&sources[i], &estimates[j])?;
        grads[j] = g.into_iter().map(|v| -v / n as f64).collect();
    }
    Ok((result, grads))
}
