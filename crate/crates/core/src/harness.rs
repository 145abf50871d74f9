//! Closed-loop driver: plant + benchmark objective + controller on a
//! simulated wall clock.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::drb::{run_drb, CircuitRecord, DrbDesign, NoisyPlant, RuntimeModel};
use crate::error::{Error, Result};
use crate::esc::{esc_iteration, quadrature_knobs, EscKnob, EscSchedule, EscState, IterationRecord, SampleIndex};
use crate::ion::{Calibration, ControlState, DriftConfig, DriftTrajectory, PhysicalState};
use crate::quantum::{average_gate_fidelity, ms_gate, Circuit, Gate};
use crate::rng;

/// Knob order used by the loop: gain product, then the two MS phases.
pub const KNOB_NAMES: [&str; 3] = ["g1g2", "psi1", "psi2"];

/// Smallest gain product the knob map will apply.
const MIN_GAIN_PRODUCT: f64 = 1e-6;

/// Maps a knob vector `[g1g2, psi1, psi2]` to per-qubit controls, splitting
/// the gain product evenly between the qubits.
pub fn knobs_to_controls(knobs: &[f64]) -> [ControlState; 2] {
    let g = knobs[0].max(MIN_GAIN_PRODUCT).sqrt();
    [ControlState { g, psi: knobs[1] }, ControlState { g, psi: knobs[2] }]
}

/// Knob values that restore the nominal MS gate for the given plant state.
pub fn restoring_knobs(pair: &[PhysicalState; 2], cal: &Calibration) -> [f64; 3] {
    let (c1, c2) = cal.restoring_ms(pair[0], pair[1]);
    [c1.g * c2.g, c1.psi, c2.psi]
}

/// Drifting ion pair with fixed controls. Single-qubit gates are taken as
/// separately calibrated and execute ideally; MS gates go through the
/// control map.
#[derive(Clone, Debug)]
pub struct IonPlant<'a> {
    pub trajectory: &'a DriftTrajectory,
    pub controls: [ControlState; 2],
    pub calibration: Calibration,
}

impl IonPlant<'_> {
    fn ms_at(&self, pair: &[PhysicalState; 2]) -> crate::ion::MsParams {
        self.calibration
            .map_ms(pair[0], self.controls[0], pair[1], self.controls[1])
    }

    fn apply(&self, gate: &Gate, targets: &[usize], pair: &[PhysicalState; 2]) -> Gate {
        match gate {
            Gate::Ms { chi, phi1, phi2 } => {
                let ms = self.ms_at(pair);
                let phase = [ms.phi1, ms.phi2];
                Gate::Ms {
                    chi: chi * ms.chi / FRAC_PI_2,
                    phi1: phi1 + phase[targets[0]],
                    phi2: phi2 + phase[targets[1]],
                }
            }
            _ => gate.clone(),
        }
    }
}

impl NoisyPlant for IonPlant<'_> {
    fn execute_gate(&self, gate: &Gate, targets: &[usize], t: f64) -> Gate {
        let pair = self
            .trajectory
            .physical_pair_at(t.max(0.0))
            .expect("non-negative time on a validated trajectory");
        self.apply(gate, targets, &pair)
    }

    fn execute(&self, circuit: &Circuit, t: f64) -> Circuit {
        let pair = self
            .trajectory
            .physical_pair_at(t.max(0.0))
            .expect("non-negative time on a validated trajectory");
        circuit.map_gates(|g, q| self.apply(g, q, &pair))
    }
}

/// Exact MS infidelity `1 - F_avg(MS(map(p, c)), MS(pi/2, 0, 0))`.
pub fn true_error_rate(pair: &[PhysicalState; 2], controls: &[ControlState; 2], cal: &Calibration) -> f64 {
    let ms = cal.map_ms(pair[0], controls[0], pair[1], controls[1]);
    let actual = ms_gate(ms.chi, ms.phi1, ms.phi2).expect("finite gate parameters");
    let ideal = ms_gate(FRAC_PI_2, 0.0, 0.0).expect("finite gate parameters");
    let f = average_gate_fidelity(&actual, &ideal).expect("same dimension");
    (1.0 - f).max(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlOffsets {
    #[serde(default)]
    pub gain_product: f64,
    #[serde(default)]
    pub psi1: f64,
    #[serde(default)]
    pub psi2: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// All evaluations of a calibration see the drift at its start.
    Frozen,
    /// Each evaluation sees the drift at the time it runs.
    #[default]
    Advancing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub duration_hours: f64,
    pub interval_minutes: f64,
    pub iterations: usize,
    pub n_samples: usize,
    pub knobs: Vec<EscKnob>,
    pub drb: DrbDesign,
    pub drift: DriftConfig,
    pub runtime: RuntimeModel,
    pub initial_offsets: ControlOffsets,
    pub report_minutes: f64,
    pub drift_mode: DriftMode,
    /// Seed of the out-of-loop reference benchmark.
    pub probe_seed: u64,
}

impl LoopConfig {
    /// Hyperparameter set 1: 75 min interval, 5 circuits, 18 shots,
    /// 3 iterations of 30 samples, with the default knob table.
    pub fn set_one() -> Self {
        LoopConfig {
            duration_hours: 15.0,
            interval_minutes: 75.0,
            iterations: 3,
            n_samples: 30,
            knobs: quadrature_knobs(),
            drb: DrbDesign::simulation(5, 18),
            drift: DriftConfig::default(),
            runtime: RuntimeModel::default(),
            initial_offsets: ControlOffsets::default(),
            report_minutes: 5.0,
            drift_mode: DriftMode::Advancing,
            probe_seed: 0,
        }
    }

    /// Hyperparameter set 2: 70 min, 6 circuits, 16 shots, 5 x 28.
    pub fn set_two() -> Self {
        LoopConfig {
            interval_minutes: 70.0,
            iterations: 5,
            n_samples: 28,
            drb: DrbDesign::simulation(6, 16),
            ..LoopConfig::set_one()
        }
    }

    /// Hyperparameter set 3: 50 min, 6 circuits, 21 shots, 5 x 30.
    pub fn set_three() -> Self {
        LoopConfig {
            interval_minutes: 50.0,
            iterations: 5,
            n_samples: 30,
            drb: DrbDesign::simulation(6, 21),
            ..LoopConfig::set_one()
        }
    }

    /// Offset-recovery setting: experiment-scale benchmark (depths 1 and
    /// 50, 4 circuits x 100 shots), one iteration of 25 samples per
    /// calibration, no drift, and `(+0.1, -0.1)` rad phase offsets.
    pub fn offset_demo() -> Self {
        LoopConfig {
            iterations: 1,
            n_samples: 25,
            drb: DrbDesign::experiment(),
            drift: DriftConfig::zero(),
            runtime: RuntimeModel::experiment(),
            initial_offsets: ControlOffsets { gain_product: 0.0, psi1: 0.1, psi2: -0.1 },
            ..LoopConfig::set_one()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval_minutes > 0.0 && self.interval_minutes.is_finite()) {
            return Err(Error::config("loop.interval_minutes", format!("must be positive, got {}", self.interval_minutes)));
        }
        if !(self.duration_hours.is_finite() && self.duration_hours * 60.0 >= self.interval_minutes) {
            return Err(Error::config(
                "loop.duration_hours",
                format!("must be at least one calibration interval, got {}", self.duration_hours),
            ));
        }
        if !(self.report_minutes > 0.0 && self.report_minutes.is_finite()) {
            return Err(Error::config("loop.report_minutes", "must be positive"));
        }
        if self.iterations < 1 {
            return Err(Error::config("esc.iterations", "must be >= 1"));
        }
        EscSchedule::new(self.n_samples)?;
        if self.knobs.len() != KNOB_NAMES.len() || self.knobs.iter().zip(KNOB_NAMES).any(|(k, n)| k.name != n) {
            return Err(Error::config("esc.knobs", format!("knobs must be named {KNOB_NAMES:?} in that order")));
        }
        self.knobs.iter().try_for_each(EscKnob::validate)?;
        let o = self.initial_offsets;
        if !(o.gain_product.is_finite() && o.psi1.is_finite() && o.psi2.is_finite()) || 1.0 + o.gain_product <= 0.0 {
            return Err(Error::config("loop.initial_offsets", "must be finite with a positive gain product"));
        }
        self.drb.validate()?;
        self.drift.validate()?;
        self.runtime.validate()
    }

    pub fn schedule(&self) -> EscSchedule {
        EscSchedule { n_samples: self.n_samples }
    }

    pub fn initial_knobs(&self) -> Vec<f64> {
        let o = self.initial_offsets;
        vec![1.0 + o.gain_product, o.psi1, o.psi2]
    }

    /// Seconds of benchmark time one objective evaluation costs.
    pub fn evaluation_seconds(&self) -> f64 {
        self.runtime.drb_runtime(&self.drb, 1)
    }

    /// Benchmark time charged per calibration,
    /// `iterations * N_t * runtime(design, 1)`.
    pub fn calibration_seconds(&self) -> f64 {
        (self.iterations * self.n_samples) as f64 * self.evaluation_seconds()
    }

    /// Calibration cost in minutes per hour of operation.
    pub fn runtime_minutes_per_hour(&self) -> f64 {
        self.calibration_seconds() / 60.0 * (60.0 / self.interval_minutes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub t_s: f64,
    pub error_controlled: f64,
    pub error_uncontrolled: f64,
    pub gain_product: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub g2e1: f64,
    pub g2e2: f64,
    pub psi2q1: f64,
    pub psi2q2: f64,
    /// Mean objective of the last finished controller iteration.
    pub f_hat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationRecord {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub charged_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopTrace {
    pub rows: Vec<TraceRow>,
    pub calibrations: Vec<CalibrationRecord>,
    pub history: Vec<IterationRecord>,
    pub knobs: Vec<EscKnob>,
}

impl LoopTrace {
    pub fn charged_seconds(&self) -> f64 {
        self.calibrations.iter().map(|c| c.charged_s).sum()
    }
}

/// Per-evaluation benchmark seed keyed by calibration, iteration and sample.
fn evaluation_seed(drb_seed: u64, calibration: usize, idx: SampleIndex) -> u64 {
    rng::derive_seed(drb_seed, &[calibration as u64, idx.iteration as u64, idx.sample as u64])
}

/// A controller episode: applies ESC iterations from `start_s` and records
/// every base-value change with the time it took effect.
struct Episode<'a> {
    config: &'a LoopConfig,
    trajectory: &'a DriftTrajectory,
    calibration: Calibration,
}

impl Episode<'_> {
    fn run(
        &self,
        state: &mut EscState,
        calibration_index: usize,
        start_s: f64,
        iterations: usize,
        mut on_iteration: impl FnMut(&EscState, f64) -> Result<()>,
    ) -> Result<f64> {
        let cfg = self.config;
        let eval_s = cfg.evaluation_seconds();
        let schedule = cfg.schedule();
        let mut clock = start_s;
        for _ in 0..iterations {
            let iter_start = clock;
            let mut objective = |x: &[f64], idx: SampleIndex| -> Result<f64> {
                let t = match cfg.drift_mode {
                    DriftMode::Frozen => start_s,
                    DriftMode::Advancing => iter_start + idx.sample as f64 * eval_s,
                };
                let plant = IonPlant {
                    trajectory: self.trajectory,
                    controls: knobs_to_controls(x),
                    calibration: self.calibration,
                };
                let design = DrbDesign {
                    seed: evaluation_seed(cfg.drb.seed, calibration_index, idx),
                    ..cfg.drb.clone()
                };
                Ok(run_drb(&design, &plant, t)?.objective)
            };
            esc_iteration(state, &cfg.knobs, &schedule, &mut objective)?;
            clock = iter_start + cfg.n_samples as f64 * eval_s;
            on_iteration(state, clock)?;
        }
        Ok(clock)
    }
}

/// Runs the closed loop for the configured duration.
///
/// Calibrations start every `interval_minutes` (or as soon as the previous
/// one ends, if it overran). Controls are piecewise constant between
/// updates. The uncontrolled baseline holds the initial controls.
pub fn run_closed_loop(config: &LoopConfig) -> Result<LoopTrace> {
    config.validate()?;
    let duration_s = config.duration_hours * 3600.0;
    let interval_s = config.interval_minutes * 60.0;
    let horizon = duration_s + 2.0 * interval_s + config.calibration_seconds();
    let trajectory = DriftTrajectory::generate(&config.drift, horizon)?;
    let calibration = Calibration::default();
    let episode = Episode {
        config,
        trajectory: &trajectory,
        calibration,
    };

    let initial = config.initial_knobs();
    let mut state = EscState::new(initial.clone())?;
    let mut changes: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut calibrations = Vec::new();
    let mut next_start = 0.0;
    let mut index = 0;
    while next_start < duration_s {
        let start = next_start;
        let end = episode.run(&mut state, index, start, config.iterations, |s, clock| {
            let mean = s.history.last().map(IterationRecord::mean_objective).unwrap_or(f64::NAN);
            changes.push((clock, s.base.clone(), mean));
            Ok(())
        })?;
        calibrations.push(CalibrationRecord {
            index,
            start_s: start,
            end_s: end,
            charged_s: config.calibration_seconds(),
        });
        index += 1;
        next_start = (index as f64 * interval_s).max(end);
    }

    let frozen = knobs_to_controls(&initial);
    let report_s = config.report_minutes * 60.0;
    let n_reports = (duration_s / report_s).floor() as usize;
    let mut rows = Vec::with_capacity(n_reports + 1);
    let mut cursor = 0;
    let mut current = initial.clone();
    let mut f_hat = None;
    for j in 0..=n_reports {
        let t = j as f64 * report_s;
        while cursor < changes.len() && changes[cursor].0 <= t {
            current = changes[cursor].1.clone();
            f_hat = Some(changes[cursor].2);
            cursor += 1;
        }
        let pair = trajectory.physical_pair_at(t)?;
        let controls = knobs_to_controls(&current);
        rows.push(TraceRow {
            t_s: t,
            error_controlled: true_error_rate(&pair, &controls, &calibration),
            error_uncontrolled: true_error_rate(&pair, &frozen, &calibration),
            gain_product: current[0],
            psi1: current[1],
            psi2: current[2],
            g2e1: pair[0].g2e,
            g2e2: pair[1].g2e,
            psi2q1: pair[0].psi_2q,
            psi2q2: pair[1].psi_2q,
            f_hat,
        });
    }
    Ok(LoopTrace {
        rows,
        calibrations,
        history: state.history,
        knobs: config.knobs.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Suppression {
    pub ratio: f64,
    pub mean_uncontrolled: f64,
    pub mean_controlled: f64,
    /// Set when the controlled mean is zero and the ratio is infinite.
    pub degenerate: bool,
}

/// Ratio of arithmetic-mean uncontrolled to controlled error rate.
pub fn suppression_ratio(trace: &LoopTrace) -> Result<Suppression> {
    if trace.rows.is_empty() {
        return Err(Error::invalid("suppression ratio of an empty trace"));
    }
    let n = trace.rows.len() as f64;
    let mean_uncontrolled = trace.rows.iter().map(|r| r.error_uncontrolled).sum::<f64>() / n;
    let mean_controlled = trace.rows.iter().map(|r| r.error_controlled).sum::<f64>() / n;
    if mean_controlled == 0.0 {
        return Ok(Suppression {
            ratio: if mean_uncontrolled == 0.0 { 1.0 } else { f64::INFINITY },
            mean_uncontrolled,
            mean_controlled,
            degenerate: mean_uncontrolled != 0.0,
        });
    }
    Ok(Suppression {
        ratio: mean_uncontrolled / mean_controlled,
        mean_uncontrolled,
        mean_controlled,
        degenerate: false,
    })
}

/// Axes of a Cartesian hyperparameter grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub interval_minutes: Vec<f64>,
    pub circuits_per_depth: Vec<u32>,
    pub shots_per_circuit: Vec<u32>,
    pub iterations: Vec<usize>,
    pub n_samples: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub interval_minutes: f64,
    pub circuits_per_depth: u32,
    pub shots_per_circuit: u32,
    pub iterations: usize,
    pub n_samples: usize,
}

impl GridPoint {
    pub fn apply(&self, base: &LoopConfig) -> LoopConfig {
        LoopConfig {
            interval_minutes: self.interval_minutes,
            iterations: self.iterations,
            n_samples: self.n_samples,
            drb: DrbDesign {
                circuits_per_depth: self.circuits_per_depth,
                shots_per_circuit: self.shots_per_circuit,
                ..base.drb.clone()
            },
            ..base.clone()
        }
    }
}

/// Explicit points followed by the Cartesian product of `product`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpace {
    #[serde(default)]
    pub points: Vec<GridPoint>,
    #[serde(default)]
    pub product: Option<GridAxes>,
}

impl GridSpace {
    /// The three highlighted hyperparameter sets.
    pub fn reference_sets() -> Self {
        let p = |c: &LoopConfig| GridPoint {
            interval_minutes: c.interval_minutes,
            circuits_per_depth: c.drb.circuits_per_depth,
            shots_per_circuit: c.drb.shots_per_circuit,
            iterations: c.iterations,
            n_samples: c.n_samples,
        };
        GridSpace {
            points: vec![
                p(&LoopConfig::set_one()),
                p(&LoopConfig::set_two()),
                p(&LoopConfig::set_three()),
            ],
            product: None,
        }
    }

    pub fn enumerate(&self) -> Vec<GridPoint> {
        let mut out = self.points.clone();
        if let Some(a) = &self.product {
            for &interval_minutes in &a.interval_minutes {
                for &circuits_per_depth in &a.circuits_per_depth {
                    for &shots_per_circuit in &a.shots_per_circuit {
                        for &iterations in &a.iterations {
                            for &n_samples in &a.n_samples {
                                out.push(GridPoint {
                                    interval_minutes,
                                    circuits_per_depth,
                                    shots_per_circuit,
                                    iterations,
                                    n_samples,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub point: GridPoint,
    pub runtime_minutes_per_hour: f64,
    /// Suppression, or the error message if this cell failed.
    pub outcome: std::result::Result<Suppression, String>,
}

fn run_cell(point: &GridPoint, base: &LoopConfig) -> GridResult {
    let cfg = point.apply(base);
    let outcome = run_closed_loop(&cfg)
        .and_then(|trace| suppression_ratio(&trace))
        .map_err(|e| e.to_string());
    if let Err(e) = &outcome {
        log::warn!("grid cell {point:?} failed: {e}");
    }
    GridResult {
        point: *point,
        runtime_minutes_per_hour: cfg.runtime_minutes_per_hour(),
        outcome,
    }
}

/// Runs every cell on the same drift trajectory (the base config's seed).
/// Results come back in enumeration order.
pub fn grid_search(space: &GridSpace, base: &LoopConfig) -> Result<Vec<GridResult>> {
    let points = space.enumerate();
    if points.is_empty() {
        return Err(Error::invalid("grid space has no points"));
    }
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        points.par_iter().map(|p| run_cell(p, base)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results = points.iter().map(|p| run_cell(p, base)).collect();
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffsetDemoRow {
    pub iteration: usize,
    pub t_s: f64,
    pub gain_product: f64,
    pub psi1: f64,
    pub psi2: f64,
    /// Knob minus its analytic restoring value.
    pub residual_gain_product: f64,
    pub residual_psi1: f64,
    pub residual_psi2: f64,
    /// Out-of-loop benchmark of the current base controls.
    pub reference_p_hat: f64,
    pub true_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OffsetDemo {
    pub rows: Vec<OffsetDemoRow>,
    /// Reference benchmark counts, keyed by the iteration they probe.
    pub reference_records: Vec<(usize, CircuitRecord)>,
    pub history: Vec<IterationRecord>,
}

/// Injects the configured control offsets and runs `calibrations`
/// back-to-back controller episodes, probing the base controls with an
/// independent reference benchmark after every iteration.
pub fn run_offset_demo(config: &LoopConfig, calibrations: usize) -> Result<OffsetDemo> {
    config.validate()?;
    if calibrations < 1 {
        return Err(Error::config("loop.offset_demo_calibrations", "must be >= 1"));
    }
    let horizon = (calibrations as f64 + 1.0) * config.calibration_seconds();
    let trajectory = DriftTrajectory::generate(&config.drift, horizon)?;
    let calibration = Calibration::default();
    let episode = Episode {
        config,
        trajectory: &trajectory,
        calibration,
    };
    let probe = |knobs: &[f64], iteration: usize, t: f64| -> Result<(OffsetDemoRow, Vec<CircuitRecord>)> {
        let pair = trajectory.physical_pair_at(t)?;
        let target = restoring_knobs(&pair, &calibration);
        let controls = knobs_to_controls(knobs);
        let plant = IonPlant {
            trajectory: &trajectory,
            controls,
            calibration,
        };
        let design = DrbDesign {
            seed: rng::derive_seed(config.probe_seed, &[iteration as u64]),
            ..config.drb.clone()
        };
        let reference = run_drb(&design, &plant, t)?;
        let row = OffsetDemoRow {
            iteration,
            t_s: t,
            gain_product: knobs[0],
            psi1: knobs[1],
            psi2: knobs[2],
            residual_gain_product: knobs[0] - target[0],
            residual_psi1: knobs[1] - target[1],
            residual_psi2: knobs[2] - target[2],
            reference_p_hat: reference.p_hat,
            true_error: true_error_rate(&pair, &controls, &calibration),
        };
        Ok((row, reference.records))
    };

    let mut demo = OffsetDemo::default();
    let mut record = |(row, records): (OffsetDemoRow, Vec<CircuitRecord>)| {
        demo.reference_records
            .extend(records.into_iter().map(|r| (row.iteration, r)));
        demo.rows.push(row);
    };
    let mut state = EscState::new(config.initial_knobs())?;
    record(probe(&state.base, 0, 0.0)?);
    let mut clock = 0.0;
    for c in 0..calibrations {
        clock = episode.run(&mut state, c, clock, config.iterations, |s, t| {
            record(probe(&s.base, s.iteration, t)?);
            Ok(())
        })?;
    }
    demo.history = state.history;
    Ok(demo)
}
