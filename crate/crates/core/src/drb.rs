//! Randomized-benchmarking objective.
//!
//! Circuits are random layers of native gates followed by one layer that
//! exactly inverts the ideal circuit, so an ideal run always returns to
//! `|00>`. The success probability decays with depth under gate errors and
//! is fitted to `S(d) = A p^d + 1/4`; the fitted `p` is the objective.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{apply_circuit, sample_measurements, Circuit, ComplexUnitary, Gate, Layer, Placement, QuantumState};
use crate::rng;

/// Time for one single-qubit layer (s).
pub const SINGLE_QUBIT_GATE_TIME: f64 = 90e-6;
/// Time for one MS layer (s).
pub const TWO_QUBIT_GATE_TIME: f64 = 700e-6;

/// Asymptotic success probability of a fully depolarized two-qubit register.
pub const ASYMPTOTE: f64 = 0.25;
/// Wall time of one 25-sample iteration on the hardware benchmark, which
/// includes classical overheads the gate times do not cover.
pub const EXPERIMENT_ITERATION_SECONDS: f64 = 9.5 * 60.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    /// One noiseless unitary layer undoes the ideal circuit.
    #[default]
    Ideal,
    /// The inverse is executed as reversed native gates and is subject to
    /// the same plant errors as the core layers.
    NativeMirror,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrbDesign {
    pub depths: Vec<u32>,
    pub circuits_per_depth: u32,
    pub shots_per_circuit: u32,
    pub two_qubit_fraction: f64,
    #[serde(default = "two")]
    pub n_qubits: usize,
    #[serde(default)]
    pub inversion: InversionMode,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

impl DrbDesign {
    /// Depths `[1, 32, 128]` at two-qubit fraction 0.75.
    pub fn simulation(circuits_per_depth: u32, shots_per_circuit: u32) -> Self {
        DrbDesign {
            depths: vec![1, 32, 128],
            circuits_per_depth,
            shots_per_circuit,
            two_qubit_fraction: 0.75,
            n_qubits: 2,
            inversion: InversionMode::Ideal,
            seed: 0,
        }
    }

    /// Depths `[1, 50]`, 4 circuits per depth, 100 shots, fraction 0.75.
    pub fn experiment() -> Self {
        DrbDesign {
            depths: vec![1, 50],
            circuits_per_depth: 4,
            shots_per_circuit: 100,
            ..DrbDesign::simulation(4, 100)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() {
            return Err(Error::config("drb.depths", "must not be empty"));
        }
        if self.depths[0] < 1 || self.depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("drb.depths", "must be strictly increasing and >= 1"));
        }
        if self.circuits_per_depth < 1 {
            return Err(Error::config("drb.circuits_per_depth", "must be >= 1"));
        }
        if self.shots_per_circuit < 1 {
            return Err(Error::config("drb.shots_per_circuit", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.two_qubit_fraction) {
            return Err(Error::config(
                "drb.two_qubit_fraction",
                format!("must lie in [0, 1], got {}", self.two_qubit_fraction),
            ));
        }
        if self.n_qubits != 2 {
            return Err(Error::config("drb.n_qubits", "only 2 qubits are supported"));
        }
        Ok(())
    }

    /// Mean duration of one core layer (s).
    pub fn mean_layer_time(&self) -> f64 {
        let f = self.two_qubit_fraction;
        f * TWO_QUBIT_GATE_TIME + (1.0 - f) * SINGLE_QUBIT_GATE_TIME
    }
}

/// Wall-clock cost model for benchmark evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeModel {
    pub single_qubit_gate_time: f64,
    pub two_qubit_gate_time: f64,
    /// Fixed cost per shot (state prep, cooling, readout, latency).
    pub overhead_per_shot: f64,
}

impl Default for RuntimeModel {
    fn default() -> Self {
        RuntimeModel {
            single_qubit_gate_time: SINGLE_QUBIT_GATE_TIME,
            two_qubit_gate_time: TWO_QUBIT_GATE_TIME,
            overhead_per_shot: 0.0,
        }
    }
}

impl RuntimeModel {
    pub fn with_overhead(overhead_per_shot: f64) -> Self {
        RuntimeModel {
            overhead_per_shot,
            ..Default::default()
        }
    }

    /// Overhead calibrated so one 25-sample controller iteration on the
    /// experiment design costs [`EXPERIMENT_ITERATION_SECONDS`].
    pub fn experiment() -> Self {
        let base = RuntimeModel::default();
        let overhead = base
            .calibrate_overhead(&DrbDesign::experiment(), 25, EXPERIMENT_ITERATION_SECONDS)
            .expect("experiment target exceeds the gate-time floor");
        RuntimeModel::with_overhead(overhead)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.single_qubit_gate_time) || !ok(self.two_qubit_gate_time) || !ok(self.overhead_per_shot) {
            return Err(Error::config("runtime", "gate times and overhead must be finite and non-negative"));
        }
        Ok(())
    }

    fn shots_and_layers(design: &DrbDesign) -> (f64, f64) {
        let per_depth = f64::from(design.circuits_per_depth) * f64::from(design.shots_per_circuit);
        let shots = per_depth * design.depths.len() as f64;
        let layers = per_depth * design.depths.iter().map(|&d| f64::from(d)).sum::<f64>();
        (shots, layers)
    }

    /// Time charged for `n_evals` benchmark runs (s).
    pub fn drb_runtime(&self, design: &DrbDesign, n_evals: u64) -> f64 {
        let f = design.two_qubit_fraction;
        let layer = f * self.two_qubit_gate_time + (1.0 - f) * self.single_qubit_gate_time;
        let (shots, layers) = Self::shots_and_layers(design);
        n_evals as f64 * (layers * layer + shots * self.overhead_per_shot)
    }

    /// Per-shot overhead that makes `n_evals` runs take `target_s` seconds.
    pub fn calibrate_overhead(&self, design: &DrbDesign, n_evals: u64, target_s: f64) -> Result<f64> {
        let bare = RuntimeModel {
            overhead_per_shot: 0.0,
            ..*self
        }
        .drb_runtime(design, n_evals);
        let (shots, _) = Self::shots_and_layers(design);
        let overhead = (target_s - bare) / (shots * n_evals as f64);
        if !(overhead >= 0.0) {
            return Err(Error::invalid(format!(
                "target {target_s} s is below the gate-time floor {bare} s"
            )));
        }
        Ok(overhead)
    }
}

/// Runtime with the default gate times and the given per-shot overhead.
pub fn drb_runtime(design: &DrbDesign, n_evals: u64, overhead_per_shot: f64) -> f64 {
    RuntimeModel::with_overhead(overhead_per_shot).drb_runtime(design, n_evals)
}

/// Maps ideal native gates to the gates a device actually executes.
pub trait NoisyPlant {
    fn execute_gate(&self, gate: &Gate, targets: &[usize], t: f64) -> Gate;

    /// Executed version of `circuit`; the layer structure is preserved.
    fn execute(&self, circuit: &Circuit, t: f64) -> Circuit {
        circuit.map_gates(|g, q| self.execute_gate(g, q, t))
    }
}

/// Executes every gate exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdealPlant;

impl NoisyPlant for IdealPlant {
    fn execute_gate(&self, gate: &Gate, _targets: &[usize], _t: f64) -> Gate {
        gate.clone()
    }
}

/// Adds fixed offsets to native gate parameters. Phase offsets are per
/// physical qubit; fixed unitaries pass through untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StaticOffsetPlant {
    pub chi: f64,
    pub phi: [f64; 2],
    pub theta: f64,
}

impl NoisyPlant for StaticOffsetPlant {
    fn execute_gate(&self, gate: &Gate, targets: &[usize], _t: f64) -> Gate {
        match gate {
            Gate::Rot { theta, phi } => Gate::Rot {
                theta: theta + self.theta,
                phi: *phi,
            },
            Gate::Ms { chi, phi1, phi2 } => Gate::Ms {
                chi: chi + self.chi,
                phi1: phi1 + self.phi[targets[0]],
                phi2: phi2 + self.phi[targets[1]],
            },
            Gate::Unitary(_) => gate.clone(),
        }
    }
}

/// Applies the same local unitary error on every qubit after every native
/// gate. Two-qubit gates become fixed unitaries `(E (x) E) U`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerErrorPlant {
    error: ComplexUnitary,
    pair_error: ComplexUnitary,
}

impl LayerErrorPlant {
    pub fn new(error: ComplexUnitary) -> Result<Self> {
        let pair_error = ComplexUnitary::kron(&error, &error)?;
        Ok(LayerErrorPlant { error, pair_error })
    }

    /// Error channel of one full layer, `E (x) E`.
    pub fn layer_error(&self) -> &ComplexUnitary {
        &self.pair_error
    }
}

impl NoisyPlant for LayerErrorPlant {
    fn execute_gate(&self, gate: &Gate, _targets: &[usize], _t: f64) -> Gate {
        match gate {
            Gate::Unitary(_) => gate.clone(),
            g => {
                let u = g.unitary().expect("finite native gate");
                let e = if u.dim() == 2 { &self.error } else { &self.pair_error };
                Gate::Unitary(e.mul_unchecked(&u))
            }
        }
    }
}

impl<P: NoisyPlant + ?Sized> NoisyPlant for &P {
    fn execute_gate(&self, gate: &Gate, targets: &[usize], t: f64) -> Gate {
        (**self).execute_gate(gate, targets, t)
    }
}

fn random_core_layer<R: Rng + ?Sized>(fraction: f64, rng: &mut R) -> Layer {
    if rng.random::<f64>() < fraction {
        let phi1 = if rng.random::<bool>() { FRAC_PI_2 } else { 0.0 };
        let phi2 = if rng.random::<bool>() { FRAC_PI_2 } else { 0.0 };
        Layer::single(Gate::Ms { chi: FRAC_PI_2, phi1, phi2 }, [0, 1])
    } else {
        let mut rot = |q: usize| {
            let phi = f64::from(rng.random_range(0..4u8)) * FRAC_PI_2;
            Placement::new(Gate::Rot { theta: FRAC_PI_2, phi }, [q])
        };
        let p0 = rot(0);
        let p1 = rot(1);
        Layer::new(vec![p0, p1])
    }
}

/// Samples one benchmark circuit with `depth` core layers plus inversion.
pub fn sample_drb_circuit<R: Rng + ?Sized>(design: &DrbDesign, depth: u32, rng: &mut R) -> Result<Circuit> {
    if depth < 1 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let mut circuit = Circuit::new(2)?;
    for _ in 0..depth {
        circuit.push(random_core_layer(design.two_qubit_fraction, rng))?;
    }
    match design.inversion {
        InversionMode::Ideal => {
            let inverse = circuit.unitary()?.dagger();
            circuit.push(Layer::single(Gate::Unitary(inverse), [0, 1]))?;
        }
        InversionMode::NativeMirror => {
            let mirrored: Vec<Layer> = circuit
                .layers()
                .iter()
                .rev()
                .map(|l| {
                    Layer::new(
                        l.placements
                            .iter()
                            .map(|p| Placement::new(p.gate.inverse(), p.targets.clone()))
                            .collect(),
                    )
                })
                .collect();
            for l in mirrored {
                circuit.push(l)?;
            }
        }
    }
    Ok(circuit)
}

/// Outcome counts of one executed circuit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CircuitRecord {
    pub depth: u32,
    pub circuit_index: u32,
    pub successes: u64,
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub amplitude: f64,
    pub p: f64,
    pub p_stderr: f64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrbEstimate {
    /// Fitted per-layer decay in `[0, 1]`.
    pub p_hat: f64,
    pub amplitude: f64,
    /// Objective value handed to the controller (equals `p_hat`).
    pub objective: f64,
    /// Mean success probability per depth, in design order.
    pub depth_means: Vec<(u32, f64)>,
    pub p_stderr: f64,
    pub low_confidence: bool,
    pub records: Vec<CircuitRecord>,
}

/// Converts a two-qubit decay parameter to an error rate,
/// `r = (1 - p)(4^n - 1) / 4^n`.
pub fn error_rate_from_decay(p: f64, n_qubits: u32) -> f64 {
    let d2 = 4f64.powi(n_qubits as i32);
    (1.0 - p) * (d2 - 1.0) / d2
}

fn sse_at(depths: &[f64], ys: &[f64], p: f64) -> (f64, f64) {
    let (mut syp, mut spp, mut syy) = (0.0, 0.0, 0.0);
    for (&d, &y) in depths.iter().zip(ys) {
        let pd = p.powf(d);
        syp += y * pd;
        spp += pd * pd;
        syy += y * y;
    }
    if spp <= 0.0 {
        return (syy, 0.0);
    }
    let a = syp / spp;
    (syy - syp * syp / spp, a)
}

/// Least-squares fit of `S(d) = A p^d + 1/4` with `A` free and `p` in
/// `[0, 1]`. For fixed `p` the optimal `A` is closed-form, so the fit is
/// a one-dimensional search over `p`.
///
/// `variances` are per-depth variances of the means, used only for the
/// standard error of `p`.
pub fn fit_decay(depths: &[u32], means: &[f64], variances: &[f64]) -> Result<DecayFit> {
    if depths.is_empty() || depths.len() != means.len() || means.len() != variances.len() {
        return Err(Error::invalid("fit needs matching, non-empty depth/mean/variance lists"));
    }
    let ds: Vec<f64> = depths.iter().map(|&d| f64::from(d)).collect();
    let ys: Vec<f64> = means.iter().map(|m| m - ASYMPTOTE).collect();

    const GRID: usize = 2000;
    let mut best = (f64::INFINITY, 1.0);
    for k in 0..=GRID {
        let p = k as f64 / GRID as f64;
        let (sse, _) = sse_at(&ds, &ys, p);
        if sse <= best.0 {
            best = (sse, p);
        }
    }
    let (mut lo, mut hi) = (
        (best.1 - 1.0 / GRID as f64).max(0.0),
        (best.1 + 1.0 / GRID as f64).min(1.0),
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = sse_at(&ds, &ys, x1).0;
    let mut f2 = sse_at(&ds, &ys, x2).0;
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = sse_at(&ds, &ys, x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = sse_at(&ds, &ys, x2).0;
        }
    }
    let mut p = 0.5 * (lo + hi);
    // The bracket search can stop one ulp short of an exact endpoint.
    for edge in [0.0, 1.0] {
        if sse_at(&ds, &ys, edge).0 <= sse_at(&ds, &ys, p).0 {
            p = edge;
        }
    }
    let (sse, amplitude) = sse_at(&ds, &ys, p);

    let scale: f64 = ys.iter().map(|y| y * y).sum::<f64>().max(1e-300);
    let slope_at_one = {
        let h = 1e-7;
        (sse_at(&ds, &ys, 1.0).0 - sse_at(&ds, &ys, 1.0 - h).0) / h
    };
    let pinned_high = p >= 1.0 - 1e-12 && slope_at_one < -1e-9 * scale && sse > 1e-14 * scale;
    let low_confidence = amplitude <= 0.0 || p <= 0.0 || pinned_high || !p.is_finite();

    // Weighted Gauss-Newton covariance of (A, p).
    let (mut jaa, mut jap, mut jpp) = (0.0, 0.0, 0.0);
    for (&d, &v) in ds.iter().zip(variances) {
        let w = 1.0 / v.max(1e-300);
        let da = p.powf(d);
        let dp = if d == 0.0 { 0.0 } else { amplitude * d * p.powf(d - 1.0) };
        jaa += w * da * da;
        jap += w * da * dp;
        jpp += w * dp * dp;
    }
    let det = jaa * jpp - jap * jap;
    let p_stderr = if det > 0.0 { (jaa / det).sqrt() } else { f64::INFINITY };

    Ok(DecayFit {
        amplitude,
        p: p.clamp(0.0, 1.0),
        p_stderr,
        low_confidence,
    })
}

/// Probability of measuring `|00>` after executing `circuit` on `plant`.
pub fn success_probability<P: NoisyPlant + ?Sized>(circuit: &Circuit, plant: &P, t: f64) -> Result<f64> {
    let executed = plant.execute(circuit, t);
    let out = apply_circuit(&QuantumState::zero(2)?, &executed)?;
    Ok(out.probabilities()[0])
}

fn run_one<P: NoisyPlant + ?Sized>(design: &DrbDesign, plant: &P, t: f64, depth: u32, index: u32) -> Result<CircuitRecord> {
    let path = [u64::from(depth), u64::from(index)];
    let mut circuit_rng = rng::stream(design.seed, &[path[0], path[1], 0]);
    let circuit = sample_drb_circuit(design, depth, &mut circuit_rng)?;
    let executed = plant.execute(&circuit, t);
    let out = apply_circuit(&QuantumState::zero(2)?, &executed)?;
    let shots = u64::from(design.shots_per_circuit);
    let hist = sample_measurements(&out, shots, rng::derive_seed(design.seed, &[path[0], path[1], 1]))?;
    Ok(CircuitRecord {
        depth,
        circuit_index: index,
        successes: hist.get("00").copied().unwrap_or(0),
        shots,
    })
}

/// Runs the full benchmark on `plant` at time `t`.
///
/// Every circuit draws from its own stream keyed by `(seed, depth, index)`,
/// so the result does not depend on execution order.
pub fn run_drb<P: NoisyPlant + Sync + ?Sized>(design: &DrbDesign, plant: &P, t: f64) -> Result<DrbEstimate> {
    design.validate()?;
    let jobs: Vec<(u32, u32)> = design
        .depths
        .iter()
        .flat_map(|&d| (0..design.circuits_per_depth).map(move |i| (d, i)))
        .collect();

    #[cfg(feature = "parallel")]
    let records: Result<Vec<CircuitRecord>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(d, i)| run_one(design, plant, t, d, i)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Result<Vec<CircuitRecord>> = jobs.iter().map(|&(d, i)| run_one(design, plant, t, d, i)).collect();
    let records = records?;

    let n_c = f64::from(design.circuits_per_depth);
    let shots = f64::from(design.shots_per_circuit);
    let mut means = Vec::with_capacity(design.depths.len());
    let mut variances = Vec::with_capacity(design.depths.len());
    for (k, &d) in design.depths.iter().enumerate() {
        let chunk = &records[k * design.circuits_per_depth as usize..(k + 1) * design.circuits_per_depth as usize];
        let fracs: Vec<f64> = chunk.iter().map(|r| r.successes as f64 / shots).collect();
        let mean = fracs.iter().sum::<f64>() / n_c;
        let spread = if fracs.len() > 1 {
            fracs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n_c - 1.0) / n_c
        } else {
            0.0
        };
        let binomial = mean * (1.0 - mean) / (n_c * shots);
        let floor = 1.0 / (n_c * shots).powi(2);
        debug_assert!(d >= 1);
        means.push(mean);
        variances.push(spread.max(binomial).max(floor));
    }
    let fit = fit_decay(&design.depths, &means, &variances)?;
    Ok(DrbEstimate {
        p_hat: fit.p,
        amplitude: fit.amplitude,
        objective: fit.p,
        depth_means: design.depths.iter().copied().zip(means).collect(),
        p_stderr: fit.p_stderr,
        low_confidence: fit.low_confidence,
        records,
    })
}

/// Exact decay parameter of a layer-averaged error channel: the mean over
/// layer types of `(d F - 1)/(d - 1)`, weighted by the two-qubit fraction.
/// Used as an independent reference for fitted decays.
pub fn layer_decay_oracle<P: NoisyPlant + ?Sized>(design: &DrbDesign, plant: &P, t: f64) -> Result<f64> {
    use crate::quantum::average_gate_fidelity;
    let d = 4.0;
    let decay = |f: f64| (d * f - 1.0) / (d - 1.0);
    let mut ms_sum = 0.0;
    for (a, b) in [(0.0, 0.0), (0.0, FRAC_PI_2), (FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2)] {
        let ideal = Circuit::from_layers(2, vec![Layer::single(Gate::Ms { chi: FRAC_PI_2, phi1: a, phi2: b }, [0, 1])])?;
        let f = average_gate_fidelity(&plant.execute(&ideal, t).unitary()?, &ideal.unitary()?)?;
        ms_sum += decay(f);
    }
    let mut single_sum = 0.0;
    let phases = [0.0, FRAC_PI_2, PI, 1.5 * PI];
    for &a in &phases {
        for &b in &phases {
            let ideal = Circuit::from_layers(
                2,
                vec![Layer::new(vec![
                    Placement::new(Gate::Rot { theta: FRAC_PI_2, phi: a }, [0]),
                    Placement::new(Gate::Rot { theta: FRAC_PI_2, phi: b }, [1]),
                ])],
            )?;
            let f = average_gate_fidelity(&plant.execute(&ideal, t).unitary()?, &ideal.unitary()?)?;
            single_sum += decay(f);
        }
    }
    let frac = design.two_qubit_fraction;
    Ok(frac * ms_sum / 4.0 + (1.0 - frac) * single_sum / 16.0)
}
