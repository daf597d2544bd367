//! Spectrum of the lossy two-level block.
//!
//! In the ordered basis (|e>, |f>) the block Hamiltonian is
//!
//! ```text
//!     H(j, delta, gamma) = [ delta - i*gamma/2   j ]
//!                          [ j                   0 ]
//! ```
//!
//! with `j` and `delta` in rad/us and `gamma` in 1/us. The eigenvalues are
//! the roots of `lambda^2 - (delta - i*gamma/2)*lambda - j^2`, written as
//! `lambda_pm = delta/2 - i*gamma/4 +- sqrt(j^2 + (delta/2 - i*gamma/4)^2)`,
//! and the right eigenvectors are proportional to `(lambda_pm, j)`.
//!
//! The complex square root is pinned to the branch with non-negative real
//! part (positive imaginary part on the real-part-zero boundary), so sheet
//! labels are reproducible. Both eigenvalues coalesce where the radicand
//! vanishes: `j = +-gamma/4` at `delta = 0`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<C64>;
pub type Vec2 = Vector2<C64>;

/// Point in the control-parameter space of the block Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianParams {
    /// Coupling between |e> and |f>, rad/us. May be negative.
    pub j: f64,
    /// Detuning carried by |e>, rad/us.
    pub delta: f64,
    /// Decay rate of |e>, 1/us. Non-negative.
    pub gamma: f64,
}

impl HamiltonianParams {
    pub fn new(j: f64, delta: f64, gamma: f64) -> Result<Self> {
        let p = Self { j, delta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j.is_finite() && self.delta.is_finite() && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite Hamiltonian parameters (j={}, delta={}, gamma={})",
                self.j, self.delta, self.gamma
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Eigenvalues and unit-norm right eigenvectors of the block Hamiltonian.
///
/// `coalesced` is set when the eigenvalue gap falls below
/// `1e-9 * max(1, |lambda_plus| + |lambda_minus|)`; both eigenvectors then
/// hold the single kernel direction.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub lambda_plus: C64,
    pub lambda_minus: C64,
    pub psi_plus: Vec2,
    pub psi_minus: Vec2,
    pub coalesced: bool,
}

/// Location of a spectral degeneracy in the (j, delta) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpLocation {
    pub j: f64,
    pub delta: f64,
}

/// One grid point of the exported eigenvalue surface.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub j: f64,
    pub delta: f64,
    pub lambda_plus: C64,
    pub lambda_minus: C64,
    /// |<psi_plus|psi_minus>|, a coalescence diagnostic: 0 for a Hermitian
    /// point, 1 where the eigenvectors merge.
    pub overlap: f64,
}

pub fn build_hamiltonian(p: &HamiltonianParams) -> Result<Mat2> {
    p.validate()?;
    Ok(hamiltonian_matrix(p))
}

/// Unchecked matrix assembly for callers that already validated `p`.
pub(crate) fn hamiltonian_matrix(p: &HamiltonianParams) -> Mat2 {
    let j = C64::new(p.j, 0.0);
    Mat2::new(
        C64::new(p.delta, -p.gamma / 2.0),
        j,
        j,
        C64::new(0.0, 0.0),
    )
}

/// Square root on the branch with Re >= 0, and Im >= 0 when Re == 0.
fn principal_sqrt(z: C64) -> C64 {
    let mut s = z.sqrt();
    if s.re < 0.0 {
        s = -s;
    }
    if s.re == 0.0 && s.im < 0.0 {
        s = -s;
    }
    s
}

/// Deterministic global phase: first component real non-negative, falling
/// back to the second when the first is negligible.
fn fix_gauge(v: Vec2) -> Vec2 {
    let anchor = if v[0].norm() > 1e-12 { v[0] } else { v[1] };
    let n = anchor.norm();
    if n == 0.0 {
        return v;
    }
    v * (anchor.conj() / n)
}

pub fn eigensystem(p: &HamiltonianParams) -> Result<Eigenpair> {
    p.validate()?;
    let half = C64::new(p.delta / 2.0, -p.gamma / 4.0);
    let radicand = C64::new(p.j * p.j, 0.0) + half * half;
    let root = principal_sqrt(radicand);
    let lambda_plus = half + root;
    let lambda_minus = half - root;

    let scale = (lambda_plus.norm() + lambda_minus.norm()).max(1.0);
    let coalesced = (lambda_plus - lambda_minus).norm() < 1e-9 * scale;

    let (psi_plus, psi_minus) = if p.j == 0.0 {
        // Diagonal matrix: the formula (lambda, j) collapses. The root at
        // delta - i*gamma/2 belongs to |e>, the root at zero to |f>.
        let e = Vec2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let f = Vec2::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        if coalesced {
            (f, f)
        } else if lambda_plus.norm() >= lambda_minus.norm() {
            (e, f)
        } else {
            (f, e)
        }
    } else {
        let jc = C64::new(p.j, 0.0);
        if coalesced {
            let kernel = fix_gauge(Vec2::new(lambda_plus, jc).normalize());
            (kernel, kernel)
        } else {
            (
                fix_gauge(Vec2::new(lambda_plus, jc).normalize()),
                fix_gauge(Vec2::new(lambda_minus, jc).normalize()),
            )
        }
    };

    Ok(Eigenpair {
        lambda_plus,
        lambda_minus,
        psi_plus,
        psi_minus,
        coalesced,
    })
}

/// Static degeneracies of the spectrum for a given decay rate: two at
/// `(+-gamma/4, 0)` for `gamma > 0`, collapsing to the single Hermitian
/// diabolic point at the origin for `gamma == 0`. Sorted by `j`.
pub fn ep_locations(gamma: f64) -> Result<Vec<EpLocation>> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite and non-negative, got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return Ok(vec![EpLocation { j: 0.0, delta: 0.0 }]);
    }
    Ok(vec![
        EpLocation {
            j: -gamma / 4.0,
            delta: 0.0,
        },
        EpLocation {
            j: gamma / 4.0,
            delta: 0.0,
        },
    ])
}

/// Eigenvalue surface over a rectangular (j, delta) grid.
///
/// Rows run along `delta` at fixed `j` and are exported in row-major order
/// (outer `j`, inner `delta`). Within each row the two sheets are assigned
/// by continuity: starting from the pinned branch at the first grid point,
/// each subsequent point keeps or swaps labels to minimise total eigenvalue
/// displacement. Naive branch labels would swap sheets whenever a row
/// crosses `delta = 0` at `|j| < gamma/4`; tracked rows stay continuous.
pub fn riemann_surface(
    j_grid: &[f64],
    delta_grid: &[f64],
    gamma: f64,
) -> Result<Vec<SurfacePoint>> {
    if j_grid.is_empty() || delta_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "surface grids must be non-empty".into(),
        ));
    }
    for &v in j_grid.iter().chain(delta_grid.iter()) {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(
                "surface grids must be finite".into(),
            ));
        }
    }
    if delta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "delta grid must be strictly increasing for branch tracking".into(),
        ));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite and non-negative, got {gamma}"
        )));
    }

    let rows: Vec<Vec<SurfacePoint>> = j_grid
        .par_iter()
        .map(|&j| surface_row(j, delta_grid, gamma))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn surface_row(j: f64, delta_grid: &[f64], gamma: f64) -> Result<Vec<SurfacePoint>> {
    let mut row = Vec::with_capacity(delta_grid.len());
    let mut prev: Option<(C64, C64)> = None;
    for &delta in delta_grid {
        let p = HamiltonianParams { j, delta, gamma };
        let eig = eigensystem(&p)?;
        let (mut lp, mut lm) = (eig.lambda_plus, eig.lambda_minus);
        let (mut vp, mut vm) = (eig.psi_plus, eig.psi_minus);
        if let Some((pp, pm)) = prev {
            let keep = (lp - pp).norm() + (lm - pm).norm();
            let swap = (lp - pm).norm() + (lm - pp).norm();
            if swap < keep {
                std::mem::swap(&mut lp, &mut lm);
                std::mem::swap(&mut vp, &mut vm);
            }
        }
        prev = Some((lp, lm));
        row.push(SurfacePoint {
            j,
            delta,
            lambda_plus: lp,
            lambda_minus: lm,
            overlap: vp.dotc(&vm).norm(),
        });
    }
    Ok(row)
}
