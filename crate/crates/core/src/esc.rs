//! Extremum-seeking controller.
//!
//! Every knob is perturbed at once by its own sinusoid. The objective
//! samples are high-pass filtered, correlated against each knob's
//! perturbation to estimate a local derivative `xi`, and each base value
//! moves by `gain * xi`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscKnob {
    pub name: String,
    /// Perturbation amplitude in knob units.
    pub amplitude: f64,
    /// Angular frequency over the unit time window; a multiple of 2 pi.
    pub omega: f64,
    pub phase: f64,
    /// Knob units per objective unit.
    pub gain: f64,
}

impl EscKnob {
    pub fn new(name: impl Into<String>, amplitude: f64, omega: f64, phase: f64, gain: f64) -> Self {
        EscKnob {
            name: name.into(),
            amplitude,
            omega,
            phase,
            gain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("esc.knobs.{}.{f}", self.name);
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config(field("amplitude"), format!("must be positive, got {}", self.amplitude)));
        }
        if !self.gain.is_finite() {
            return Err(Error::config(field("gain"), "must be finite"));
        }
        if !self.phase.is_finite() {
            return Err(Error::config(field("phase"), "must be finite"));
        }
        let periods = self.omega / (2.0 * PI);
        if !(periods >= 0.5) || (periods - periods.round()).abs() > 1e-9 {
            return Err(Error::config(
                field("omega"),
                format!("must be a positive multiple of 2*pi, got {}", self.omega),
            ));
        }
        Ok(())
    }
}

/// Reference knob table: the gain product `g1 g2` at 8 pi, and the two MS
/// phases at 4 pi in antiphase. Because the phase knobs share a frequency
/// in antiphase, only `psi1 - psi2` is observable; the loop presets use
/// [`quadrature_knobs`].
pub fn antiphase_knobs() -> Vec<EscKnob> {
    vec![
        EscKnob::new("g1g2", 0.00525, 8.0 * PI, 0.0, 10_000.0),
        EscKnob::new("psi1", 0.021, 4.0 * PI, 0.0, 7_500.0),
        EscKnob::new("psi2", 0.021, 4.0 * PI, PI, 10_500.0),
    ]
}

/// [`antiphase_knobs`] with the second phase knob in quadrature
/// (phase pi/2) instead of antiphase. Two knobs sharing a frequency in
/// antiphase only observe their difference; in quadrature both are
/// observable.
pub fn quadrature_knobs() -> Vec<EscKnob> {
    let mut knobs = antiphase_knobs();
    knobs[2].phase = PI / 2.0;
    knobs
}

/// Sample grid `t_i = i / N_t`, `i = 0..N_t` (half-open on `[0, 1)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscSchedule {
    pub n_samples: usize,
}

impl EscSchedule {
    pub fn new(n_samples: usize) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::config("esc.n_samples", format!("must be >= 2, got {n_samples}")));
        }
        Ok(EscSchedule { n_samples })
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_samples as f64;
        (0..self.n_samples).map(move |i| i as f64 / n)
    }
}

pub fn perturbation_sequence(knob: &EscKnob, schedule: &EscSchedule) -> Vec<f64> {
    schedule
        .times()
        .map(|t| knob.amplitude * (knob.omega * t + knob.phase).sin())
        .collect()
}

/// DC-removal filter: subtracts the window mean.
pub fn high_pass(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::invalid("high-pass filter needs at least two samples"));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(samples.iter().map(|s| s - mean).collect())
}

/// `xi = sum_i perturbation_i * filtered_i / N_t`.
pub fn demodulate(perturbation: &[f64], filtered: &[f64]) -> Result<f64> {
    if perturbation.len() != filtered.len() || perturbation.is_empty() {
        return Err(Error::invalid(format!(
            "demodulation length mismatch: {} vs {}",
            perturbation.len(),
            filtered.len()
        )));
    }
    let sum: f64 = perturbation.iter().zip(filtered).map(|(a, f)| a * f).sum();
    Ok(sum / perturbation.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub base_before: Vec<f64>,
    pub xi: Vec<f64>,
    pub delta: Vec<f64>,
    /// Raw objective samples of the iteration.
    pub samples: Vec<f64>,
}

impl IterationRecord {
    pub fn base_after(&self) -> Vec<f64> {
        self.base_before.iter().zip(&self.delta).map(|(b, d)| b + d).collect()
    }

    pub fn mean_objective(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscState {
    pub base: Vec<f64>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
}

impl EscState {
    pub fn new(base: Vec<f64>) -> Result<Self> {
        if base.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("ESC base values must be finite"));
        }
        Ok(EscState {
            base,
            iteration: 0,
            history: Vec::new(),
        })
    }
}

/// Identifies one objective evaluation within a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    pub iteration: usize,
    pub sample: usize,
}

fn check_knobs(state: &EscState, knobs: &[EscKnob]) -> Result<()> {
    if knobs.len() != state.base.len() {
        return Err(Error::invalid(format!(
            "{} knobs for {} base values",
            knobs.len(),
            state.base.len()
        )));
    }
    knobs.iter().try_for_each(EscKnob::validate)
}

/// One controller step. `objective` receives the perturbed knob vector and
/// the sample index and returns one objective sample.
pub fn esc_iteration<F>(state: &mut EscState, knobs: &[EscKnob], schedule: &EscSchedule, objective: &mut F) -> Result<()>
where
    F: FnMut(&[f64], SampleIndex) -> Result<f64>,
{
    check_knobs(state, knobs)?;
    let perturbations: Vec<Vec<f64>> = knobs.iter().map(|k| perturbation_sequence(k, schedule)).collect();
    let iteration = state.iteration;
    let mut samples = Vec::with_capacity(schedule.n_samples);
    let mut point = vec![0.0; knobs.len()];
    for i in 0..schedule.n_samples {
        for (k, p) in point.iter_mut().enumerate() {
            *p = state.base[k] + perturbations[k][i];
        }
        let idx = SampleIndex { iteration, sample: i };
        let value = objective(&point, idx).map_err(|e| Error::Objective {
            iteration,
            sample: i,
            source: Box::new(e),
        })?;
        samples.push(value);
    }
    let filtered = high_pass(&samples)?;
    let mut xi = Vec::with_capacity(knobs.len());
    let mut delta = Vec::with_capacity(knobs.len());
    for (k, knob) in knobs.iter().enumerate() {
        let x = demodulate(&perturbations[k], &filtered)?;
        xi.push(x);
        delta.push(knob.gain * x);
    }
    let record = IterationRecord {
        iteration,
        base_before: state.base.clone(),
        xi,
        delta,
        samples,
    };
    state.base = record.base_after();
    state.iteration += 1;
    state.history.push(record);
    Ok(())
}

/// One row of the controller trace: `(iteration, knob, base, xi, delta)`,
/// where `base` is the value after the update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub knob: String,
    pub base: f64,
    pub xi: f64,
    pub delta: f64,
}

pub fn trace_rows(history: &[IterationRecord], knobs: &[EscKnob]) -> Vec<TraceRow> {
    history
        .iter()
        .flat_map(|rec| {
            let after = rec.base_after();
            knobs.iter().enumerate().map(move |(k, knob)| TraceRow {
                iteration: rec.iteration,
                knob: knob.name.clone(),
                base: after[k],
                xi: rec.xi[k],
                delta: rec.delta[k],
            })
        })
        .collect()
}

/// Runs `n_iterations` controller steps and returns the rows they added.
pub fn run_esc<F>(
    state: &mut EscState,
    knobs: &[EscKnob],
    schedule: &EscSchedule,
    objective: &mut F,
    n_iterations: usize,
) -> Result<Vec<TraceRow>>
where
    F: FnMut(&[f64], SampleIndex) -> Result<f64>,
{
    if n_iterations < 1 {
        return Err(Error::config("esc.iterations", "must be >= 1"));
    }
    let first = state.history.len();
    for _ in 0..n_iterations {
        esc_iteration(state, knobs, schedule, objective)?;
    }
    Ok(trace_rows(&state.history[first..], knobs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(opt: f64) -> impl FnMut(&[f64], SampleIndex) -> Result<f64> {
        move |x: &[f64], _| Ok(1.0 - (x[0] - opt).powi(2))
    }

    #[test]
    fn perturbation_examples() {
        let knob = EscKnob::new("psi1", 0.021, 4.0 * PI, 0.0, 7500.0);
        let sched = EscSchedule::new(8).unwrap();
        let seq = perturbation_sequence(&knob, &sched);
        assert_relative_eq!(seq[1], 0.021, epsilon = 1e-15); // t = 0.125
        let neg = perturbation_sequence(&EscKnob { phase: PI, ..knob.clone() }, &sched);
        for (a, b) in seq.iter().zip(&neg) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn full_periods_sum_to_zero() {
        for n in [25, 28, 30, 64] {
            for periods in 1..5 {
                let knob = EscKnob::new("k", 0.3, 2.0 * PI * periods as f64, 0.4, 1.0);
                let sched = EscSchedule::new(n).unwrap();
                let s: f64 = perturbation_sequence(&knob, &sched).iter().sum();
                assert!(s.abs() < 1e-10 * 0.3 * n as f64, "n={n} periods={periods}: {s}");
            }
        }
    }

    #[test]
    fn high_pass_examples() {
        assert_eq!(high_pass(&[2.5; 6]).unwrap(), vec![0.0; 6]);
        let ramp: Vec<f64> = (0..7).map(|i| i as f64 * 0.1 + 3.0).collect();
        let out = high_pass(&ramp).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
        for i in 0..7 {
            assert_relative_eq!(out[i], -out[6 - i], epsilon = 1e-12);
        }
        assert!(high_pass(&[1.0]).is_err());
    }

    #[test]
    fn demodulate_examples() {
        assert_eq!(demodulate(&[0.1, -0.2, 0.3], &[0.0; 3]).unwrap(), 0.0);
        assert!(demodulate(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn knob_validation() {
        assert!(EscKnob::new("a", 0.0, 4.0 * PI, 0.0, 1.0).validate().is_err());
        assert!(EscKnob::new("a", 0.1, 3.0, 0.0, 1.0).validate().is_err());
        assert!(EscKnob::new("a", 0.1, -4.0 * PI, 0.0, 1.0).validate().is_err());
        assert!(EscKnob::new("a", 0.1, 4.0 * PI, 0.0, f64::NAN).validate().is_err());
        for k in antiphase_knobs() {
            k.validate().unwrap();
        }
        assert!(EscSchedule::new(1).is_err());
    }

    #[test]
    fn step_moves_toward_optimum() {
        let knobs = [EscKnob::new("a", 0.05, 4.0 * PI, 0.0, 100.0)];
        let sched = EscSchedule::new(30).unwrap();
        let mut state = EscState::new(vec![0.2]).unwrap();
        esc_iteration(&mut state, &knobs, &sched, &mut quad(0.5)).unwrap();
        assert!((state.base[0] - 0.5).abs() < 0.3);
        assert!(state.history[0].xi[0] > 0.0);
    }

    #[test]
    fn constant_objective_leaves_base() {
        let knobs = antiphase_knobs();
        let sched = EscSchedule::new(30).unwrap();
        let mut state = EscState::new(vec![1.0, 0.1, -0.2]).unwrap();
        let mut calls = 0;
        let mut obj = |_: &[f64], _| {
            calls += 1;
            Ok(0.987)
        };
        esc_iteration(&mut state, &knobs, &sched, &mut obj).unwrap();
        assert_eq!(calls, 30);
        for (b, e) in state.base.iter().zip([1.0, 0.1, -0.2]) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn run_counts_calls_and_rows() {
        let knobs = antiphase_knobs();
        let sched = EscSchedule::new(30).unwrap();
        let mut state = EscState::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut calls = 0;
        let mut obj = |x: &[f64], _| {
            calls += 1;
            Ok(1.0 - x.iter().map(|v| v * v).sum::<f64>())
        };
        let rows = run_esc(&mut state, &knobs, &sched, &mut obj, 3).unwrap();
        assert!(run_esc(&mut state, &knobs, &sched, &mut obj, 0).is_err());
        assert_eq!(calls, 90);
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[8].iteration, 2);
    }

    #[test]
    fn zero_gain_holds_base() {
        let knobs = [EscKnob::new("a", 0.05, 4.0 * PI, 0.0, 0.0)];
        let sched = EscSchedule::new(25).unwrap();
        let mut state = EscState::new(vec![0.2]).unwrap();
        run_esc(&mut state, &knobs, &sched, &mut quad(0.5), 5).unwrap();
        assert_eq!(state.base, vec![0.2]);
    }

    #[test]
    fn objective_errors_carry_context() {
        let knobs = [EscKnob::new("a", 0.05, 4.0 * PI, 0.0, 1.0)];
        let sched = EscSchedule::new(25).unwrap();
        let mut state = EscState::new(vec![0.0]).unwrap();
        let mut obj = |_: &[f64], idx: SampleIndex| {
            if idx.sample == 7 {
                Err(Error::invalid("boom"))
            } else {
                Ok(0.0)
            }
        };
        match esc_iteration(&mut state, &knobs, &sched, &mut obj) {
            Err(Error::Objective { iteration: 0, sample: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn update_ignores_objective_offset() {
        let knobs = antiphase_knobs();
        let sched = EscSchedule::new(30).unwrap();
        let f = |x: &[f64]| 1.0 - 3.0 * (x[0] - 1.01).powi(2) - 0.4 * (x[1] - 0.02).powi(2) - 0.4 * x[2].powi(2);
        let mut a = EscState::new(vec![1.0, 0.0, 0.01]).unwrap();
        let mut b = a.clone();
        esc_iteration(&mut a, &knobs, &sched, &mut |x: &[f64], _| Ok(f(x))).unwrap();
        esc_iteration(&mut b, &knobs, &sched, &mut |x: &[f64], _| Ok(f(x) + 123.0)).unwrap();
        for (x, y) in a.base.iter().zip(&b.base) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
