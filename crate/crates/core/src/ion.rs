//! Trapped-ion plant model: latent drifting parameters, the map from RF
//! controls to gate parameters, and seeded drift trajectories.

use std::f64::consts::FRAC_PI_2;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Lower bound applied to a drifted `g2e`.
pub const G2E_FLOOR: f64 = 0.01;

/// Latent per-qubit parameters the controller cannot observe directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalState {
    /// Gain-to-electric-field proportionality; nominal 1.
    pub g2e: f64,
    /// Phase offset between the single- and two-qubit rotation axes (rad).
    pub psi_2q: f64,
}

impl PhysicalState {
    pub const NOMINAL: PhysicalState = PhysicalState { g2e: 1.0, psi_2q: 0.0 };

    pub fn new(g2e: f64, psi_2q: f64) -> Result<Self> {
        if !(g2e > 0.0 && g2e.is_finite()) || !psi_2q.is_finite() {
            return Err(Error::invalid(format!("invalid physical state g2e={g2e}, psi_2q={psi_2q}")));
        }
        Ok(PhysicalState { g2e, psi_2q })
    }
}

/// RF controls for one qubit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    /// RF amplitude gain; nominal 1.
    pub g: f64,
    /// RF phase difference (rad).
    pub psi: f64,
}

impl ControlState {
    pub const NOMINAL: ControlState = ControlState { g: 1.0, psi: 0.0 };

    pub fn new(g: f64, psi: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) || !psi.is_finite() {
            return Err(Error::invalid(format!("invalid control state g={g}, psi={psi}")));
        }
        Ok(ControlState { g, psi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleQubitParams {
    pub theta: f64,
    pub phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsParams {
    pub chi: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl MsParams {
    pub const NOMINAL: MsParams = MsParams {
        chi: FRAC_PI_2,
        phi1: 0.0,
        phi2: 0.0,
    };
}

/// Proportionality constants of the control map, fixed so that nominal
/// controls on a nominal plant give `theta = chi = pi/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub k_single: f64,
    pub k_ms: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::anchored(PhysicalState::NOMINAL, ControlState::NOMINAL)
    }
}

impl Calibration {
    pub fn anchored(p: PhysicalState, c: ControlState) -> Self {
        let amp = c.g * p.g2e;
        Calibration {
            k_single: FRAC_PI_2 / amp,
            k_ms: FRAC_PI_2 / (amp * amp),
        }
    }

    /// `theta = k * g * g2e`, `phi = psi`.
    pub fn map_single(&self, p: PhysicalState, c: ControlState) -> SingleQubitParams {
        SingleQubitParams {
            theta: self.k_single * c.g * p.g2e,
            phi: c.psi,
        }
    }

    /// `chi = k * (g1 g2e1)(g2 g2e2)`, `phi_i = psi_i + psi_i^2q`.
    pub fn map_ms(&self, p1: PhysicalState, c1: ControlState, p2: PhysicalState, c2: ControlState) -> MsParams {
        MsParams {
            chi: self.k_ms * (c1.g * p1.g2e) * (c2.g * p2.g2e),
            phi1: c1.psi + p1.psi_2q,
            phi2: c2.psi + p2.psi_2q,
        }
    }

    /// Controls that restore nominal single-qubit rotation angle for `p`.
    pub fn restoring_single(&self, p: PhysicalState) -> ControlState {
        ControlState {
            g: FRAC_PI_2 / (self.k_single * p.g2e),
            psi: 0.0,
        }
    }

    /// Controls that restore nominal MS parameters for the pair `(p1, p2)`,
    /// splitting the required gain product evenly between the qubits.
    pub fn restoring_ms(&self, p1: PhysicalState, p2: PhysicalState) -> (ControlState, ControlState) {
        let g = (FRAC_PI_2 / (self.k_ms * p1.g2e * p2.g2e)).sqrt();
        (
            ControlState { g, psi: -p1.psi_2q },
            ControlState { g, psi: -p2.psi_2q },
        )
    }
}

/// Random-walk settings for one kind of latent parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    /// Initial sinusoid amplitude `A(0)`.
    pub amplitude: f64,
    /// Initial angular frequency `omega(0)` in rad/s.
    pub omega: f64,
    /// Standard deviation of the per-step amplitude increment.
    pub sigma_amplitude: f64,
    /// Standard deviation of the per-step frequency increment (rad/s).
    pub sigma_omega: f64,
}

impl WalkConfig {
    fn validate(&self, field: &str) -> Result<()> {
        let checks = [
            ("amplitude", self.amplitude.is_finite()),
            ("omega", self.omega.is_finite()),
            ("sigma_amplitude", self.sigma_amplitude.is_finite() && self.sigma_amplitude >= 0.0),
            ("sigma_omega", self.sigma_omega.is_finite() && self.sigma_omega >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::config(format!("{field}.{name}"), "must be finite (sigmas non-negative)"));
            }
        }
        Ok(())
    }

    pub fn constant(amplitude: f64, omega: f64) -> Self {
        WalkConfig {
            amplitude,
            omega,
            sigma_amplitude: 0.0,
            sigma_omega: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Random-walk step (s).
    pub dt: f64,
    /// Relative drift of `g2e` (dimensionless).
    pub g2e: WalkConfig,
    /// Drift of `psi_2q` (rad).
    pub psi_2q: WalkConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        let omega = 2.0 * std::f64::consts::PI / (36.0 * 3600.0);
        DriftConfig {
            dt: 60.0,
            g2e: WalkConfig {
                amplitude: 0.05,
                omega,
                sigma_amplitude: 0.05 * 0.05 / 30.0,
                sigma_omega: 0.05 * omega / 30.0,
            },
            psi_2q: WalkConfig {
                amplitude: 0.08,
                omega,
                sigma_amplitude: 0.08 * 0.05 / 30.0,
                sigma_omega: 0.05 * omega / 30.0,
            },
            seed: 0,
        }
    }
}

impl DriftConfig {
    /// A plant that never drifts.
    pub fn zero() -> Self {
        DriftConfig {
            dt: 60.0,
            g2e: WalkConfig::constant(0.0, 0.0),
            psi_2q: WalkConfig::constant(0.0, 0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("drift.dt", format!("must be positive, got {}", self.dt)));
        }
        self.g2e.validate("drift.g2e")?;
        self.psi_2q.validate("drift.psi_2q")
    }
}

/// Identifies one of the four drifting latent parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    G2e(usize),
    Psi2q(usize),
}

impl ParamId {
    fn slot(self) -> Result<usize> {
        match self {
            ParamId::G2e(q) if q < 2 => Ok(q),
            ParamId::Psi2q(q) if q < 2 => Ok(2 + q),
            other => Err(Error::invalid(format!("unknown drift parameter {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Walk {
    amplitude: Vec<f64>,
    omega: Vec<f64>,
}

impl Walk {
    fn generate(cfg: &WalkConfig, steps: usize, mut rng: rng::StreamRng) -> Self {
        let mut amplitude = Vec::with_capacity(steps);
        let mut omega = Vec::with_capacity(steps);
        let (mut a, mut w) = (cfg.amplitude, cfg.omega);
        // Normal::new only fails for negative or non-finite sigma, which
        // validation excludes; sigma = 0 yields a constant walk.
        let da = Normal::new(0.0, cfg.sigma_amplitude).expect("validated sigma");
        let dw = Normal::new(0.0, cfg.sigma_omega).expect("validated sigma");
        for k in 0..steps {
            if k > 0 {
                a += da.sample(&mut rng);
                w += dw.sample(&mut rng);
            }
            amplitude.push(a);
            omega.push(w);
        }
        Walk { amplitude, omega }
    }
}

/// Seeded drift of `g2e` and `psi_2q` on two qubits.
///
/// Each parameter follows `a(t) = A(t) sin(omega(t) t)` where `A` and
/// `omega` are piecewise-constant Gaussian random walks with step `dt`.
/// Walks are generated up to a horizon; past it the last step is held.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftTrajectory {
    config: DriftConfig,
    walks: [Walk; 4],
}

impl DriftTrajectory {
    pub fn generate(config: &DriftConfig, horizon_s: f64) -> Result<Self> {
        config.validate()?;
        if !(horizon_s >= 0.0 && horizon_s.is_finite()) {
            return Err(Error::invalid(format!("horizon must be non-negative, got {horizon_s}")));
        }
        let steps = (horizon_s / config.dt).floor() as usize + 1;
        let walk = |slot: u64, cfg: &WalkConfig| Walk::generate(cfg, steps, rng::stream(config.seed, &[slot]));
        let walks = [
            walk(0, &config.g2e),
            walk(1, &config.g2e),
            walk(2, &config.psi_2q),
            walk(3, &config.psi_2q),
        ];
        Ok(DriftTrajectory {
            config: config.clone(),
            walks,
        })
    }

    pub fn config(&self) -> &DriftConfig {
        &self.config
    }

    fn step(&self, t: f64) -> usize {
        let steps = self.walks[0].amplitude.len();
        ((t / self.config.dt).floor() as usize).min(steps - 1)
    }

    /// `(A, omega)` in effect at time `t`.
    pub fn walk_state(&self, param: ParamId, t: f64) -> Result<(f64, f64)> {
        let slot = param.slot()?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("time must be non-negative, got {t}")));
        }
        let k = self.step(t);
        Ok((self.walks[slot].amplitude[k], self.walks[slot].omega[k]))
    }

    /// Drift offset `A(t) sin(omega(t) t)`.
    pub fn drift_value(&self, param: ParamId, t: f64) -> Result<f64> {
        let (a, w) = self.walk_state(param, t)?;
        Ok(a * (w * t).sin())
    }

    pub fn physical_state_at(&self, qubit: usize, t: f64) -> Result<PhysicalState> {
        if qubit >= 2 {
            return Err(Error::invalid(format!("qubit {qubit} out of range")));
        }
        let raw = 1.0 + self.drift_value(ParamId::G2e(qubit), t)?;
        let g2e = if raw < G2E_FLOOR {
            log::debug!("g2e of qubit {qubit} clamped at t={t}: {raw} -> {G2E_FLOOR}");
            G2E_FLOOR
        } else {
            raw
        };
        Ok(PhysicalState {
            g2e,
            psi_2q: self.drift_value(ParamId::Psi2q(qubit), t)?,
        })
    }

    pub fn physical_pair_at(&self, t: f64) -> Result<[PhysicalState; 2]> {
        Ok([self.physical_state_at(0, t)?, self.physical_state_at(1, t)?])
    }
}
