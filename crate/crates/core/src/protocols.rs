//! Full experiment sequences: pause-and-probe tomography along a control
//! loop, the self-referenced phase interferometer against the idle |h>
//! level, and mode-transfer maps over grids of loop shapes.
//!
//! Each sequence can run on either engine: the post-selected two-component
//! amplitude (`nh`) or the four-level density matrix with the full channel
//! set (`lindblad`).

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::analysis::{
    derive_seed, eigenstate_populations, eigenstate_populations_density, pauli_components,
    pauli_of_state, sample_expectation,
};
use crate::error::{Error, Result};
use crate::evolve::{
    apply_rotation, apply_rotation_density, embed_ef, integrate_block, postselect_ef,
    propagate_lindblad, propagate_nh, DissipationRates, IntegratorConfig, RotationKind, Vec4, E,
    F, G, H,
};
use crate::paths::{Direction, ParameterLoop};
use crate::spectra::{eigensystem, Eigenpair, Vec2};

/// Dynamics backend for a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Two-component block amplitude, losses enter through the decaying
    /// norm, read-out is conditioned on staying in the block.
    Nh,
    /// Four-level density matrix with jump and dephasing channels.
    Lindblad,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Nh => "nh",
            Engine::Lindblad => "lindblad",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nh" => Ok(Engine::Nh),
            "lindblad" => Ok(Engine::Lindblad),
            other => Err(Error::InvalidParameter(format!(
                "engine must be \"nh\" or \"lindblad\", got \"{other}\""
            ))),
        }
    }
}

/// Which eigenmode the final mapping pulse sends to the read-out level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    PsiPlus,
    PsiMinus,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::PsiPlus => "psi_plus",
            Target::PsiMinus => "psi_minus",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psi_plus" => Ok(Target::PsiPlus),
            "psi_minus" => Ok(Target::PsiMinus),
            other => Err(Error::InvalidParameter(format!(
                "target must be \"psi_plus\" or \"psi_minus\", got \"{other}\""
            ))),
        }
    }
}

/// Read-out statistics: exact expectation values or binomial estimates
/// from a finite, seeded number of shots per data point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Exact,
    Sampled { shots: u64, seed: u64 },
}

/// One pause point of a tomography run. The `*_eig` columns hold the Bloch
/// components of the instantaneous eigenmode branch that starts as the
/// long-lived mode at t = 0, followed continuously along the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TomographyRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Probability of passing the block post-selection.
    pub survival: f64,
    pub x_eig: f64,
    pub y_eig: f64,
    pub z_eig: f64,
}

#[derive(Debug, Clone)]
pub struct TomographyOptions {
    /// Number of pause points, end points included. At least 2.
    pub n_pauses: usize,
    pub engine: Engine,
    /// Channel rates for the `lindblad` engine; ignored by `nh`.
    pub rates: DissipationRates,
    pub integrator: IntegratorConfig,
    pub shots: Shots,
}

/// Probe the state along the loop: prepare the long-lived mode at t = 0,
/// evolve to each pause time from scratch, and record the post-selected
/// Bloch components together with the survival probability.
pub fn run_encircle_tomography(
    lp: &ParameterLoop,
    opts: &TomographyOptions,
) -> Result<Vec<TomographyRecord>> {
    lp.validate()?;
    opts.integrator.validate()?;
    opts.rates.validate()?;
    if opts.n_pauses < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 pause points, got {}",
            opts.n_pauses
        )));
    }
    let n = opts.n_pauses;
    let times: Vec<f64> = (0..n)
        .map(|s| lp.period * s as f64 / (n - 1) as f64)
        .collect();
    let pair0 = eigensystem(&lp.params_at(0.0)?)?;
    if pair0.coalesced {
        return Err(Error::Coalesced);
    }
    let psi0 = pair0.psi_minus;
    let overlay = tracked_minus_branch(lp, &times)?;

    let mut records = Vec::with_capacity(n);
    for (k, (&t, ov)) in times.iter().zip(&overlay).enumerate() {
        let (x, y, z, survival) = match opts.engine {
            Engine::Nh => {
                let out = propagate_nh(&psi0, lp, t, &opts.integrator)?;
                let (x, y, z) = pauli_of_state(&out.psi);
                (x, y, z, out.survival)
            }
            Engine::Lindblad => {
                let rho =
                    propagate_lindblad(&embed_ef(&psi0), lp, t, &opts.rates, &opts.integrator)?;
                let (cond, prob) = postselect_ef(&rho)?;
                let (x, y, z) = pauli_components(&cond);
                (x, y, z, prob)
            }
        };
        let (x, y, z, survival) = match opts.shots {
            Shots::Exact => (x, y, z, survival),
            Shots::Sampled { shots, seed } => {
                let axis = |value: f64, tag: u64| -> Result<f64> {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                        seed, k as u64, tag,
                    ));
                    let p = sample_expectation((1.0 + value) / 2.0, shots, &mut rng)?;
                    Ok(2.0 * p - 1.0)
                };
                let xs = axis(x, 0)?;
                let ys = axis(y, 1)?;
                let zs = axis(z, 2)?;
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, 3));
                let ss = sample_expectation(survival.clamp(0.0, 1.0), shots, &mut rng)?;
                (xs, ys, zs, ss)
            }
        };
        let (x_eig, y_eig, z_eig) = pauli_of_state(ov);
        records.push(TomographyRecord {
            t,
            x,
            y,
            z,
            survival,
            x_eig,
            y_eig,
            z_eig,
        });
    }
    Ok(records)
}

/// Eigenvector of the branch that starts as the long-lived mode, followed
/// by eigenvalue continuity through the requested times (densified in
/// between so the pairing never jumps sheets).
fn tracked_minus_branch(lp: &ParameterLoop, times: &[f64]) -> Result<Vec<Vec2>> {
    const SUBSTEPS: usize = 32;
    let first = eigensystem(&lp.params_at(times[0])?)?;
    let mut tracked_minus = first.lambda_minus;
    let mut tracked_plus = first.lambda_plus;
    let mut out = Vec::with_capacity(times.len());
    out.push(first.psi_minus);
    for w in times.windows(2) {
        for s in 1..=SUBSTEPS {
            let t = if s == SUBSTEPS {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * s as f64 / SUBSTEPS as f64
            };
            let pair = eigensystem(&lp.params_at(t)?)?;
            let keep = (pair.lambda_minus - tracked_minus).norm()
                + (pair.lambda_plus - tracked_plus).norm();
            let swap = (pair.lambda_plus - tracked_minus).norm()
                + (pair.lambda_minus - tracked_plus).norm();
            // the cheaper pairing assigns the principal labels outright;
            // once the branch sits on the other label, "swap" wins on
            // every later step
            let crossed = swap < keep;
            if crossed {
                tracked_minus = pair.lambda_plus;
                tracked_plus = pair.lambda_minus;
            } else {
                tracked_minus = pair.lambda_minus;
                tracked_plus = pair.lambda_plus;
            }
            if s == SUBSTEPS {
                out.push(if crossed { pair.psi_plus } else { pair.psi_minus });
            }
        }
    }
    Ok(out)
}

/// Phase scan of the interferometer for one loop and one target mode.
#[derive(Debug, Clone)]
pub struct FringeScan {
    pub phases: Vec<f64>,
    pub p_f: Vec<f64>,
    pub target: Target,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct InterferometryOptions {
    pub engine: Engine,
    /// Channel rates for the `lindblad` engine; ignored by `nh`.
    pub rates: DissipationRates,
    pub integrator: IntegratorConfig,
    pub target: Target,
    /// Phase grid size, uniform over a full cycle. At least 5.
    pub n_phases: usize,
    pub shots: Shots,
}

/// Run the self-referenced interferometer:
///
/// 1. pulse |g> up into the block and split half the weight onto the idle
///    |h> level (pi on (g,e), pi on (e,f), pi/2 on (f,h), then a pi/2
///    (e,f) pulse about y preparing the long-lived superposition),
/// 2. drive the control loop on the block while |h> idles,
/// 3. map the target mode onto |f> with a pi/2 (e,f) pulse about y (sign
///    of the angle picks the mode),
/// 4. close the interferometer with a pi/2 (f,h) pulse whose axis phase is
///    the scanned phi, and read the |f> population conditioned on (e, f,
///    h).
pub fn run_phase_interferometry(
    lp: &ParameterLoop,
    opts: &InterferometryOptions,
) -> Result<FringeScan> {
    lp.validate()?;
    opts.integrator.validate()?;
    opts.rates.validate()?;
    if opts.n_phases < 5 {
        return Err(Error::InvalidParameter(format!(
            "need at least 5 phase points, got {}",
            opts.n_phases
        )));
    }
    let phases: Vec<f64> = (0..opts.n_phases)
        .map(|k| std::f64::consts::TAU * k as f64 / opts.n_phases as f64)
        .collect();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let map_angle = match opts.target {
        Target::PsiPlus => half_pi,
        Target::PsiMinus => -half_pi,
    };

    let p_f: Vec<f64> = match opts.engine {
        Engine::Nh => {
            let mut psi = Vec4::zeros();
            psi[G] = C64::new(1.0, 0.0);
            psi = apply_rotation(&psi, RotationKind::Ge, std::f64::consts::PI, 0.0);
            psi = apply_rotation(&psi, RotationKind::Ef, std::f64::consts::PI, 0.0);
            psi = apply_rotation(&psi, RotationKind::Fh, half_pi, 0.0);
            psi = apply_rotation(&psi, RotationKind::Ef, half_pi, half_pi);
            let block = Vec2::new(psi[E], psi[F]);
            let evolved = integrate_block(&block, lp, lp.period, &opts.integrator)?;
            psi[E] = evolved[0];
            psi[F] = evolved[1];
            psi = apply_rotation(&psi, RotationKind::Ef, map_angle, half_pi);
            phases
                .iter()
                .map(|&phi| {
                    let fin = apply_rotation(&psi, RotationKind::Fh, half_pi, phi);
                    let kept =
                        fin[E].norm_sqr() + fin[F].norm_sqr() + fin[H].norm_sqr();
                    if kept < crate::evolve::POSTSELECT_FLOOR {
                        return Err(Error::PostSelectionExhausted {
                            prob: kept,
                            floor: crate::evolve::POSTSELECT_FLOOR,
                        });
                    }
                    Ok(fin[F].norm_sqr() / kept)
                })
                .collect::<Result<_>>()?
        }
        Engine::Lindblad => {
            let mut rho = crate::evolve::Mat4::zeros();
            rho[(G, G)] = C64::new(1.0, 0.0);
            rho = apply_rotation_density(&rho, RotationKind::Ge, std::f64::consts::PI, 0.0);
            rho = apply_rotation_density(&rho, RotationKind::Ef, std::f64::consts::PI, 0.0);
            rho = apply_rotation_density(&rho, RotationKind::Fh, half_pi, 0.0);
            rho = apply_rotation_density(&rho, RotationKind::Ef, half_pi, half_pi);
            rho = propagate_lindblad(&rho, lp, lp.period, &opts.rates, &opts.integrator)?;
            rho = apply_rotation_density(&rho, RotationKind::Ef, map_angle, half_pi);
            phases
                .iter()
                .map(|&phi| {
                    let fin = apply_rotation_density(&rho, RotationKind::Fh, half_pi, phi);
                    let kept = fin[(E, E)].re + fin[(F, F)].re + fin[(H, H)].re;
                    if kept < crate::evolve::POSTSELECT_FLOOR {
                        return Err(Error::PostSelectionExhausted {
                            prob: kept,
                            floor: crate::evolve::POSTSELECT_FLOOR,
                        });
                    }
                    Ok(fin[(F, F)].re / kept)
                })
                .collect::<Result<_>>()?
        }
    };

    let p_f = match opts.shots {
        Shots::Exact => p_f,
        Shots::Sampled { shots, seed } => p_f
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, 4));
                sample_expectation(p.clamp(0.0, 1.0), shots, &mut rng)
            })
            .collect::<Result<_>>()?,
    };

    Ok(FringeScan {
        phases,
        p_f,
        target: opts.target,
        direction: lp.direction(),
    })
}

/// One cell of a mode-transfer map. Runtime failures (post-selection
/// exhausted, degenerate decomposition) land in `error` instead of
/// aborting the whole grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMapCell {
    pub j_min: f64,
    pub period: f64,
    pub direction: Direction,
    /// Weight of the long-lived mode in the final post-selected state.
    pub p_psi_minus: Option<f64>,
    pub survival: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TransferMapOptions {
    pub j_max: f64,
    /// Magnitude of the detuning excursion; the cell direction sets its
    /// sign.
    pub delta_amp: f64,
    pub gamma: f64,
    pub engine: Engine,
    /// Channel rates for the `lindblad` engine; ignored by `nh`.
    pub rates: DissipationRates,
    pub integrator: IntegratorConfig,
}

/// Sweep loop shape (floor coupling, duration) and direction; for each
/// cell prepare the long-lived mode, drive one full loop, and decompose
/// the post-selected final state over the eigenmode pair at the start
/// point.
///
/// Cells come back sorted by (direction, j_min, period). Grid values must
/// be finite; j_min values must not exceed `j_max`, and the amplitude of
/// the detuning excursion must be positive so both directions exist.
pub fn run_transfer_map(
    j_mins: &[f64],
    periods: &[f64],
    directions: &[Direction],
    opts: &TransferMapOptions,
) -> Result<Vec<TransferMapCell>> {
    opts.integrator.validate()?;
    opts.rates.validate()?;
    if j_mins.is_empty() || periods.is_empty() || directions.is_empty() {
        return Err(Error::InvalidParameter(
            "transfer map grid must be non-empty in every dimension".into(),
        ));
    }
    if !opts.delta_amp.is_finite() || opts.delta_amp <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "detuning amplitude must be positive, got {}",
            opts.delta_amp
        )));
    }
    for &j in j_mins {
        if !j.is_finite() || j > opts.j_max {
            return Err(Error::InvalidParameter(format!(
                "grid coupling floor {j} not finite or above j_max {}",
                opts.j_max
            )));
        }
    }
    for &t in periods {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "grid period {t} must be finite and positive"
            )));
        }
    }

    let mut dirs: Vec<Direction> = Vec::new();
    for d in [Direction::Ccw, Direction::Cw] {
        if directions.contains(&d) {
            dirs.push(d);
        }
    }
    let mut j_sorted = j_mins.to_vec();
    j_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    j_sorted.dedup();
    let mut t_sorted = periods.to_vec();
    t_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t_sorted.dedup();

    let mut grid = Vec::with_capacity(dirs.len() * j_sorted.len() * t_sorted.len());
    for &d in &dirs {
        for &j in &j_sorted {
            for &t in &t_sorted {
                grid.push((d, j, t));
            }
        }
    }

    Ok(grid
        .into_par_iter()
        .map(|(direction, j_min, period)| {
            match transfer_cell(j_min, period, direction, opts) {
                Ok((p_psi_minus, survival)) => TransferMapCell {
                    j_min,
                    period,
                    direction,
                    p_psi_minus: Some(p_psi_minus),
                    survival: Some(survival),
                    error: None,
                },
                Err(e) => TransferMapCell {
                    j_min,
                    period,
                    direction,
                    p_psi_minus: None,
                    survival: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn transfer_cell(
    j_min: f64,
    period: f64,
    direction: Direction,
    opts: &TransferMapOptions,
) -> Result<(f64, f64)> {
    let lp = ParameterLoop {
        j_max: opts.j_max,
        j_min,
        delta_amp: direction.sign() * opts.delta_amp,
        period,
        gamma: opts.gamma,
    };
    lp.validate()?;
    let pair = eigensystem(&lp.params_at(0.0)?)?;
    if pair.coalesced {
        return Err(Error::Coalesced);
    }
    let psi0 = pair.psi_minus;
    match opts.engine {
        Engine::Nh => {
            let out = propagate_nh(&psi0, &lp, lp.period, &opts.integrator)?;
            let w = eigenstate_populations(&out.psi, &pair)?;
            Ok((w.p_minus, out.survival))
        }
        Engine::Lindblad => {
            let rho =
                propagate_lindblad(&embed_ef(&psi0), &lp, lp.period, &opts.rates, &opts.integrator)?;
            let (cond, prob) = postselect_ef(&rho)?;
            let w = eigenstate_populations_density(&cond, &pair)?;
            Ok((w.p_minus, prob))
        }
    }
}

/// Eigenmode pair at the loop start point (equal to the pair at the end
/// point, since the loop closes).
pub fn start_modes(lp: &ParameterLoop) -> Result<Eigenpair> {
    lp.validate()?;
    eigensystem(&lp.params_at(0.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{fit_fringe, wrap_angle};
    use approx::assert_relative_eq;

    fn deep_dip_loop(period: f64, delta_sign: f64) -> ParameterLoop {
        ParameterLoop {
            j_max: 30.0,
            j_min: 0.3,
            delta_amp: delta_sign * 10.0 * std::f64::consts::PI,
            period,
            gamma: 6.2,
        }
    }

    fn exact_opts(engine: Engine, n_pauses: usize) -> TomographyOptions {
        TomographyOptions {
            n_pauses,
            engine,
            rates: DissipationRates::relaxation_only(6.2),
            integrator: IntegratorConfig::default(),
            shots: Shots::Exact,
        }
    }

    #[test]
    fn tomography_starts_on_the_prepared_mode() {
        let lp = deep_dip_loop(1.5, 1.0);
        let recs = run_encircle_tomography(&lp, &exact_opts(Engine::Nh, 7)).unwrap();
        assert_eq!(recs.len(), 7);
        let r0 = &recs[0];
        assert_eq!(r0.t, 0.0);
        assert_relative_eq!(r0.x, -0.998664385845, epsilon = 1e-9);
        assert_relative_eq!(r0.y, 6.2 / 120.0, epsilon = 1e-12);
        assert!(r0.z.abs() < 1e-12);
        assert_relative_eq!(r0.survival, 1.0, epsilon = 1e-12);
        // overlay coincides with the state at t = 0
        assert_relative_eq!(r0.x_eig, r0.x, epsilon = 1e-12);
        assert_relative_eq!(r0.y_eig, r0.y, epsilon = 1e-12);
        let last = recs.last().unwrap();
        assert_relative_eq!(last.t, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn lossless_static_loop_keeps_the_mode() {
        let lp = ParameterLoop {
            j_max: 8.0,
            j_min: 8.0,
            delta_amp: 0.0,
            period: 1.0,
            gamma: 0.0,
        };
        let mut opts = exact_opts(Engine::Nh, 9);
        opts.rates = DissipationRates::default();
        let recs = run_encircle_tomography(&lp, &opts).unwrap();
        for r in &recs {
            assert_relative_eq!(r.x, -1.0, epsilon = 1e-9);
            assert!(r.y.abs() < 1e-9 && r.z.abs() < 1e-9);
            assert_relative_eq!(r.survival, 1.0, epsilon = 1e-9);
            assert_relative_eq!(r.x_eig, -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nh_tomography_records_are_pure() {
        let lp = deep_dip_loop(1.5, 1.0);
        let recs = run_encircle_tomography(&lp, &exact_opts(Engine::Nh, 13)).unwrap();
        for r in &recs {
            let len = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
            assert_relative_eq!(len, 1.0, epsilon = 1e-9);
            let ov = (r.x_eig.powi(2) + r.y_eig.powi(2) + r.z_eig.powi(2)).sqrt();
            assert_relative_eq!(ov, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn overlay_branch_swaps_mode_after_a_full_loop() {
        // after one encirclement the tracked branch lands on the other
        // mode at the start point
        let lp = deep_dip_loop(1.5, 1.0);
        let recs = run_encircle_tomography(&lp, &exact_opts(Engine::Nh, 31)).unwrap();
        let pair = start_modes(&lp).unwrap();
        let (xm, _, _) = pauli_of_state(&pair.psi_minus);
        let (xp, _, _) = pauli_of_state(&pair.psi_plus);
        let last = recs.last().unwrap();
        assert!((last.x_eig - xp).abs() < 1e-9, "overlay should end on the short-lived mode");
        assert!((last.x_eig - xm).abs() > 1.9);
    }

    #[test]
    fn engines_agree_on_relaxation_only_tomography() {
        let lp = deep_dip_loop(0.9, -1.0);
        let mut opts = exact_opts(Engine::Nh, 5);
        opts.integrator = IntegratorConfig { dt: 5e-4 };
        let a = run_encircle_tomography(&lp, &opts).unwrap();
        opts.engine = Engine::Lindblad;
        let b = run_encircle_tomography(&lp, &opts).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_relative_eq!(ra.x, rb.x, epsilon = 1e-6);
            assert_relative_eq!(ra.y, rb.y, epsilon = 1e-6);
            assert_relative_eq!(ra.z, rb.z, epsilon = 1e-6);
            assert_relative_eq!(ra.survival, rb.survival, epsilon = 1e-6);
        }
    }

    #[test]
    fn sampled_tomography_is_deterministic_and_consistent() {
        let lp = deep_dip_loop(1.5, 1.0);
        let mut opts = exact_opts(Engine::Nh, 6);
        opts.shots = Shots::Sampled {
            shots: 4_000_000,
            seed: 99,
        };
        let a = run_encircle_tomography(&lp, &opts).unwrap();
        let b = run_encircle_tomography(&lp, &opts).unwrap();
        assert_eq!(a, b);
        let exact = run_encircle_tomography(&lp, &exact_opts(Engine::Nh, 6)).unwrap();
        for (rs, re) in a.iter().zip(&exact) {
            // five sigma on 4e6 shots of a bounded observable
            assert!((rs.x - re.x).abs() < 5.0 * 1e-3 / 2.0_f64.sqrt());
            assert!((rs.survival - re.survival).abs() < 5.0 * 0.5e-3);
            // overlay columns are theory curves, never sampled
            assert_eq!(rs.x_eig, re.x_eig);
        }
    }

    #[test]
    fn interferometer_fringe_is_a_single_harmonic() {
        let lp = deep_dip_loop(0.8, 1.0);
        let opts = InterferometryOptions {
            engine: Engine::Nh,
            rates: DissipationRates::relaxation_only(6.2),
            integrator: IntegratorConfig::default(),
            target: Target::PsiPlus,
            n_phases: 21,
            shots: Shots::Exact,
        };
        let scan = run_phase_interferometry(&lp, &opts).unwrap();
        assert_eq!(scan.direction, Direction::Ccw);
        let fit = fit_fringe(&scan.phases, &scan.p_f).unwrap();
        assert!(fit.reliable);
        for (&phi, &p) in scan.phases.iter().zip(&scan.p_f) {
            let model = fit.offset + fit.contrast * (phi - fit.chi).cos();
            assert!((p - model).abs() < 1e-9, "residual {:e}", (p - model).abs());
        }
        assert!(fit.contrast <= fit.offset + 1e-12);
    }

    #[test]
    fn degenerate_loop_reproduces_the_bare_interferometer() {
        // vanishing loop duration: no evolution, the long-lived target
        // returns offset 1/2, contrast 1/2, phase pi
        let lp = deep_dip_loop(1e-6, 1.0);
        let opts = InterferometryOptions {
            engine: Engine::Nh,
            rates: DissipationRates::relaxation_only(6.2),
            integrator: IntegratorConfig::default(),
            target: Target::PsiMinus,
            n_phases: 24,
            shots: Shots::Exact,
        };
        let scan = run_phase_interferometry(&lp, &opts).unwrap();
        let fit = fit_fringe(&scan.phases, &scan.p_f).unwrap();
        assert_relative_eq!(fit.offset, 0.5, epsilon = 1e-3);
        assert_relative_eq!(fit.contrast, 0.5, epsilon = 1e-3);
        assert!(wrap_angle(fit.chi - std::f64::consts::PI).abs() < 1e-3);

        // the short-lived target holds no weight: flat, unreliable fringe
        let opts = InterferometryOptions {
            target: Target::PsiPlus,
            ..opts
        };
        let scan = run_phase_interferometry(&lp, &opts).unwrap();
        let fit = fit_fringe(&scan.phases, &scan.p_f).unwrap();
        assert!(fit.contrast < 1e-4);
    }

    #[test]
    fn interferometer_engines_agree_with_relaxation_only() {
        let lp = deep_dip_loop(0.8, -1.0);
        let mk = |engine| InterferometryOptions {
            engine,
            rates: DissipationRates::relaxation_only(6.2),
            integrator: IntegratorConfig { dt: 5e-4 },
            target: Target::PsiPlus,
            n_phases: 11,
            shots: Shots::Exact,
        };
        let a = run_phase_interferometry(&lp, &mk(Engine::Nh)).unwrap();
        let b = run_phase_interferometry(&lp, &mk(Engine::Lindblad)).unwrap();
        for (pa, pb) in a.p_f.iter().zip(&b.p_f) {
            assert_relative_eq!(pa, pb, epsilon = 1e-6);
        }
    }

    #[test]
    fn transfer_map_static_lossless_cell_keeps_the_mode() {
        let opts = TransferMapOptions {
            j_max: 30.0,
            delta_amp: 1e-300,
            gamma: 0.0,
            engine: Engine::Nh,
            rates: DissipationRates::default(),
            // fine steps: at j = 30 the phase turns fast enough for the
            // stepper's norm error to show at the default dt
            integrator: IntegratorConfig { dt: 2e-4 },
        };
        // j_min = j_max and a vanishing detuning amplitude: the loop sits
        // still and the mode only dephases
        let cells =
            run_transfer_map(&[30.0], &[1.0], &[Direction::Ccw], &opts).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert!(c.error.is_none());
        assert_relative_eq!(c.p_psi_minus.unwrap(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(c.survival.unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn transfer_map_is_sorted_and_deterministic() {
        let opts = TransferMapOptions {
            j_max: 30.0,
            delta_amp: 10.0 * std::f64::consts::PI,
            gamma: 6.2,
            engine: Engine::Nh,
            rates: DissipationRates::default(),
            integrator: IntegratorConfig { dt: 2e-3 },
        };
        let j = [1.2, 0.3];
        let t = [0.4, 0.2];
        let dirs = [Direction::Cw, Direction::Ccw];
        let a = run_transfer_map(&j, &t, &dirs, &opts).unwrap();
        let b = run_transfer_map(&j, &t, &dirs, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let key = |c: &TransferMapCell| {
            (
                matches!(c.direction, Direction::Cw) as u8,
                c.j_min,
                c.period,
            )
        };
        for w in a.windows(2) {
            assert!(key(&w[0]) < key(&w[1]));
        }
        for c in &a {
            assert!(c.error.is_none(), "{:?}", c.error);
            let p = c.p_psi_minus.unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn transfer_map_rejects_bad_grids() {
        let opts = TransferMapOptions {
            j_max: 30.0,
            delta_amp: 10.0,
            gamma: 6.2,
            engine: Engine::Nh,
            rates: DissipationRates::default(),
            integrator: IntegratorConfig::default(),
        };
        assert!(run_transfer_map(&[], &[1.0], &[Direction::Ccw], &opts).is_err());
        assert!(run_transfer_map(&[31.0], &[1.0], &[Direction::Ccw], &opts).is_err());
        assert!(run_transfer_map(&[1.0], &[0.0], &[Direction::Ccw], &opts).is_err());
        let bad = TransferMapOptions {
            delta_amp: 0.0,
            ..opts
        };
        assert!(run_transfer_map(&[1.0], &[1.0], &[Direction::Ccw], &bad).is_err());
    }

    #[test]
    fn lossless_direction_reversal_mirrors_the_bloch_path() {
        // with no decay, reversing the detuning sweep conjugates the
        // generator by sigma_x up to a global phase, so the Bloch path maps
        // to (x, -y, -z) point by point
        let mut ccw = deep_dip_loop(1.5, 1.0);
        let mut cw = deep_dip_loop(1.5, -1.0);
        ccw.gamma = 0.0;
        cw.gamma = 0.0;
        let mut opts = exact_opts(Engine::Nh, 31);
        opts.rates = DissipationRates::default();
        let a = run_encircle_tomography(&ccw, &opts).unwrap();
        let b = run_encircle_tomography(&cw, &opts).unwrap();
        let mut max_y = 0.0f64;
        let mut max_z = 0.0f64;
        for (p, q) in a.iter().zip(&b) {
            assert_relative_eq!(p.x, q.x, epsilon = 1e-7);
            assert_relative_eq!(p.y, -q.y, epsilon = 1e-7);
            assert_relative_eq!(p.z, -q.z, epsilon = 1e-7);
            assert_relative_eq!(p.survival, 1.0, epsilon = 1e-7);
            max_y = max_y.max(p.y.abs());
            max_z = max_z.max(p.z.abs());
        }
        // both flipped components swing hard along this path, so the signs
        // above are genuinely exercised
        assert!(max_y > 0.3 && max_z > 0.5, "y {max_y}, z {max_z}");
    }

    #[test]
    fn parser_round_trips() {
        assert_eq!("nh".parse::<Engine>().unwrap(), Engine::Nh);
        assert_eq!("lindblad".parse::<Engine>().unwrap(), Engine::Lindblad);
        assert!("NH".parse::<Engine>().is_err());
        assert_eq!("psi_plus".parse::<Target>().unwrap(), Target::PsiPlus);
        assert_eq!("psi_minus".parse::<Target>().unwrap(), Target::PsiMinus);
        assert!("plus".parse::<Target>().is_err());
        assert_eq!(Engine::Lindblad.to_string(), "lindblad");
        assert_eq!(Target::PsiPlus.to_string(), "psi_plus");
    }
}
