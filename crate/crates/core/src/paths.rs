//! Closed control loops in the (coupling, detuning) plane.
//!
//! A loop runs the coupling from `j_max` down to `j_min` and back through a
//! squared-cosine ramp while the detuning sweeps one full sine cycle:
//!
//! ```text
//!     j(t)     = (j_max - j_min) * cos^2(pi t / T) + j_min
//!     delta(t) = delta_amp * sin(2 pi t / T)
//! ```
//!
//! The sign of `delta_amp` sets the traversal sense: positive first swings
//! the detuning positive (counterclockwise in the (j, delta) plane as drawn
//! here), negative is the mirror image.

use crate::error::{Error, Result};
use crate::spectra::{ep_locations, HamiltonianParams};

/// Traversal sense of a loop; mapped onto the sign of `delta_amp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Ccw,
    Cw,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ccw => 1.0,
            Direction::Cw => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ccw => "ccw",
            Direction::Cw => "cw",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccw" => Ok(Direction::Ccw),
            "cw" => Ok(Direction::Cw),
            other => Err(Error::InvalidParameter(format!(
                "direction must be \"ccw\" or \"cw\", got {other:?}"
            ))),
        }
    }
}

/// Closed loop of Hamiltonian parameters with period `period` (us).
///
/// `gamma` rides along unchanged; it is part of the Hamiltonian at every
/// point of the loop but not a swept coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterLoop {
    pub j_max: f64,
    /// Smallest coupling reached, at half period. May be negative.
    pub j_min: f64,
    /// Signed detuning amplitude, rad/us.
    pub delta_amp: f64,
    /// Loop period, us. Strictly positive.
    pub period: f64,
    /// Decay rate carried by every point of the loop, 1/us.
    pub gamma: f64,
}

/// One sampled point of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSample {
    pub t: f64,
    pub params: HamiltonianParams,
}

impl ParameterLoop {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("j_max", self.j_max),
            ("j_min", self.j_min),
            ("delta_amp", self.delta_amp),
            ("period", self.period),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.period <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        if self.j_min > self.j_max {
            return Err(Error::InvalidParameter(format!(
                "j_min ({}) must not exceed j_max ({})",
                self.j_min, self.j_max
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

    pub fn direction(&self) -> Direction {
        if self.delta_amp >= 0.0 {
            Direction::Ccw
        } else {
            Direction::Cw
        }
    }

    /// Instantaneous parameters at `t` in [0, period].
    ///
    /// The phase is evaluated on the unit interval with `t == period` folded
    /// onto zero, so closure `params_at(0) == params_at(period)` holds
    /// exactly, not just to rounding.
    pub fn params_at(&self, t: f64) -> Result<HamiltonianParams> {
        self.validate()?;
        if !t.is_finite() || t < 0.0 || t > self.period {
            return Err(Error::TimeOutOfRange {
                t,
                period: self.period,
            });
        }
        let u = if t == self.period { 0.0 } else { t / self.period };
        let ramp = (std::f64::consts::PI * u).cos().powi(2);
        Ok(HamiltonianParams {
            j: (self.j_max - self.j_min) * ramp + self.j_min,
            delta: self.delta_amp * (std::f64::consts::TAU * u).sin(),
            gamma: self.gamma,
        })
    }

    /// `n >= 2` uniform samples over [0, period], endpoints included.
    pub fn samples(&self, n: usize) -> Result<Vec<ScheduleSample>> {
        self.validate()?;
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        (0..n)
            .map(|k| {
                let t = self.period * k as f64 / (n - 1) as f64;
                Ok(ScheduleSample {
                    t,
                    params: self.params_at(t)?,
                })
            })
            .collect()
    }

    /// Number of static spectral degeneracies strictly enclosed by the
    /// loop's trace in the (j, delta) plane.
    ///
    /// The trace is approximated by a 10^4-vertex polygon and each
    /// degeneracy is tested with an even-odd crossing rule. A degeneracy
    /// closer than 1e-9 to the sampled polyline is reported as
    /// [`Error::BoundaryAmbiguous`] instead of being counted either way.
    /// Diagnostic only: nothing in the propagation layer consumes this.
    pub fn winding_count(&self) -> Result<u32> {
        self.validate()?;
        const VERTICES: usize = 10_000;
        let poly: Vec<(f64, f64)> = (0..VERTICES)
            .map(|k| {
                let u = k as f64 / VERTICES as f64;
                let ramp = (std::f64::consts::PI * u).cos().powi(2);
                (
                    (self.j_max - self.j_min) * ramp + self.j_min,
                    self.delta_amp * (std::f64::consts::TAU * u).sin(),
                )
            })
            .collect();

        let mut count = 0;
        for ep in ep_locations(self.gamma)? {
            let p = (ep.j, ep.delta);
            let dist = polyline_distance(p, &poly);
            if dist < 1e-9 {
                return Err(Error::BoundaryAmbiguous { dist });
            }
            if point_in_polygon(p, &poly) {
                count += 1;
            }
        }
        Ok(count)
    }
}

/// Minimum distance from `p` to the closed polyline through `poly`.
fn polyline_distance(p: (f64, f64), poly: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        best = best.min(segment_distance(p, a, b));
    }
    best
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Even-odd crossing test against the closed polygon `poly`.
fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) {
            let x_cross = xi + (p.1 - yi) * (xj - xi) / (yj - yi);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
