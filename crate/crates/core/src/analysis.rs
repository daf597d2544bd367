//! Read-out helpers: Bloch projections of the block state, decomposition
//! onto the instantaneous eigenmode pair, cosine-fringe fitting and
//! finite-shot sampling.
//!
//! Bloch conventions on the (|e>, |f>) block, index 0 = |e>:
//! `x = 2 Re rho_ef`, `y = -2 Im rho_ef`, `z = rho_ee - rho_ff`.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::spectra::{Eigenpair, Mat2, Vec2};

/// Tolerance on the eigenbasis determinant below which decomposition onto
/// the modes is refused as numerically meaningless.
const MODE_DET_FLOOR: f64 = 1e-12;

/// Smallest fitted contrast still treated as carrying phase information.
pub const CONTRAST_FLOOR: f64 = 1e-3;

/// (x, y, z) components of a block density matrix.
pub fn pauli_components(rho: &Mat2) -> (f64, f64, f64) {
    let x = 2.0 * rho[(0, 1)].re;
    let y = -2.0 * rho[(0, 1)].im;
    let z = rho[(0, 0)].re - rho[(1, 1)].re;
    (x, y, z)
}

/// (x, y, z) of a pure block amplitude, normalised first.
pub fn pauli_of_state(psi: &Vec2) -> (f64, f64, f64) {
    let n = psi.norm_squared();
    let rho01 = psi[0] * psi[1].conj() / C64::new(n, 0.0);
    (
        2.0 * rho01.re,
        -2.0 * rho01.im,
        (psi[0].norm_sqr() - psi[1].norm_sqr()) / n,
    )
}

/// Relative weights of the two instantaneous eigenmodes in a state.
/// Normalised so `p_plus + p_minus = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeWeights {
    pub p_plus: f64,
    pub p_minus: f64,
}

/// Dual (left) basis rows for a mode pair: rows of the inverse of the
/// column matrix [psi_plus psi_minus].
fn dual_rows(pair: &Eigenpair) -> Result<(Vec2, Vec2)> {
    if pair.coalesced {
        return Err(Error::Coalesced);
    }
    let vp = &pair.psi_plus;
    let vm = &pair.psi_minus;
    let det = vp[0] * vm[1] - vp[1] * vm[0];
    if det.norm() < MODE_DET_FLOOR {
        return Err(Error::Coalesced);
    }
    let inv = C64::new(1.0, 0.0) / det;
    // d_plus = (vm1, -vm0)/det, d_minus = (-vp1, vp0)/det; then
    // d_i . v_j = delta_ij (plain dot product, no conjugation)
    Ok((
        Vec2::new(vm[1] * inv, -vm[0] * inv),
        Vec2::new(-vp[1] * inv, vp[0] * inv),
    ))
}

/// Decompose a pure block state onto the eigenmode pair and return the
/// normalised weight of each mode.
pub fn eigenstate_populations(psi: &Vec2, pair: &Eigenpair) -> Result<ModeWeights> {
    let (dp, dm) = dual_rows(pair)?;
    let cp = dp[0] * psi[0] + dp[1] * psi[1];
    let cm = dm[0] * psi[0] + dm[1] * psi[1];
    weights_from(cp.norm_sqr(), cm.norm_sqr())
}

/// Same decomposition for a block density matrix: the raw weight of mode i
/// is `d_i rho d_i^dag`.
pub fn eigenstate_populations_density(rho: &Mat2, pair: &Eigenpair) -> Result<ModeWeights> {
    let (dp, dm) = dual_rows(pair)?;
    let quad = |d: &Vec2| -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                acc += d[a] * rho[(a, b)] * d[b].conj();
            }
        }
        acc.re
    };
    weights_from(quad(&dp), quad(&dm))
}

fn weights_from(wp: f64, wm: f64) -> Result<ModeWeights> {
    let total = wp + wm;
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "mode weights not normalisable, total {total}"
        )));
    }
    Ok(ModeWeights {
        p_plus: wp / total,
        p_minus: wm / total,
    })
}

/// Result of fitting `p(phi) = offset + contrast * cos(phi - chi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeResult {
    pub offset: f64,
    pub contrast: f64,
    /// Phase in (-pi, pi]. Meaningless when `reliable` is false.
    pub chi: f64,
    /// True when the contrast clears [`CONTRAST_FLOOR`].
    pub reliable: bool,
}

/// Fit a single cosine harmonic to probabilities sampled on a uniform
/// phase grid `phi_k = phi_0 + k * 2 pi / N` (at least 5 points, full
/// cycle, endpoint not repeated).
pub fn fit_fringe(phases: &[f64], probs: &[f64]) -> Result<FringeResult> {
    let n = phases.len();
    if n != probs.len() {
        return Err(Error::InvalidParameter(format!(
            "{n} phases but {} probabilities",
            probs.len()
        )));
    }
    if n < 5 {
        return Err(Error::InvalidParameter(format!(
            "need at least 5 phase points, got {n}"
        )));
    }
    let step = std::f64::consts::TAU / n as f64;
    for (k, (&phi, &p)) in phases.iter().zip(probs).enumerate() {
        if !phi.is_finite() || !p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at index {k}"
            )));
        }
        let expected = phases[0] + k as f64 * step;
        if (phi - expected).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "phase grid not uniform at index {k}: {phi} vs {expected}"
            )));
        }
    }
    let inv_n = 1.0 / n as f64;
    let offset = probs.iter().sum::<f64>() * inv_n;
    let mut f1 = C64::new(0.0, 0.0);
    for (&phi, &p) in phases.iter().zip(probs) {
        // positive exponent so arg(f1) lands on chi of the cosine model
        f1 += C64::new(p, 0.0) * C64::new(phi.cos(), phi.sin());
    }
    f1 *= C64::new(inv_n, 0.0);
    let contrast = 2.0 * f1.norm();
    Ok(FringeResult {
        offset,
        contrast,
        chi: if contrast > 0.0 { f1.arg() } else { 0.0 },
        reliable: contrast >= CONTRAST_FLOOR,
    })
}

/// Wrapped difference between two fitted fringe phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDifference {
    /// `wrap_angle(chi_a - chi_b)` in (-pi, pi].
    pub value: f64,
    /// Both input fits were reliable.
    pub reliable: bool,
}

pub fn phase_difference(a: &FringeResult, b: &FringeResult) -> PhaseDifference {
    PhaseDifference {
        value: wrap_angle(a.chi - b.chi),
        reliable: a.reliable && b.reliable,
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

/// Binomial estimate of a probability from a finite number of shots.
/// Clamps tiny numerical excursions outside [0, 1] before sampling.
pub fn sample_expectation<R: Rng + ?Sized>(p: f64, shots: u64, rng: &mut R) -> Result<f64> {
    if !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cannot sample a non-finite probability {p}"
        )));
    }
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be positive".into()));
    }
    if p < -1e-9 || p > 1.0 + 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "probability {p} far outside [0, 1]"
        )));
    }
    let clamped = p.clamp(0.0, 1.0);
    let bin = Binomial::new(shots, clamped)
        .map_err(|e| Error::InvalidParameter(format!("binomial setup failed: {e}")))?;
    Ok(bin.sample(rng) as f64 / shots as f64)
}

/// Stable per-measurement seed derived from a base seed and two indices
/// (splitmix-style avalanche, collision-free in practice for small grids).
pub fn derive_seed(base: u64, k: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(tag.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
