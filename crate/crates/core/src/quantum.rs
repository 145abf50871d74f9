//! Dense state-vector simulation for one and two qubits.
//!
//! Qubit 0 is the most significant bit of a basis index, so the bitstring
//! `"10"` means qubit 0 is in `|1>` and qubit 1 in `|0>`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::rng;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerance used when validating constructed unitaries.
pub const UNITARY_TOL: f64 = 1e-10;
/// Tolerance used when validating propagated states.
pub const NORM_TOL: f64 = 1e-9;

/// Dense `d x d` unitary, `d` in {2, 4}, stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexUnitary {
    dim: usize,
    entries: Vec<C64>,
}

impl fmt::Debug for ComplexUnitary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexUnitary({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|c| {
                    let z = self.get(r, c);
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl ComplexUnitary {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = ONE;
        }
        ComplexUnitary { dim, entries }
    }

    /// Builds a unitary from row-major entries, checking `U^dagger U = I`.
    pub fn from_row_major(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if dim != 2 && dim != 4 {
            return Err(Error::invalid(format!("unitary dimension must be 2 or 4, got {dim}")));
        }
        if entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("unitary has non-finite entries"));
        }
        let u = ComplexUnitary { dim, entries };
        let defect = u.unitarity_defect();
        if defect > UNITARY_TOL {
            return Err(Error::invalid(format!("matrix is not unitary (max |U'U - I| = {defect:e})")));
        }
        Ok(u)
    }

    pub(crate) fn from_raw(dim: usize, entries: Vec<C64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        ComplexUnitary { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_qubits(&self) -> usize {
        if self.dim == 2 {
            1
        } else {
            2
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn dagger(&self) -> Self {
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                entries[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        ComplexUnitary { dim: d, entries }
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &ComplexUnitary) -> Result<Self> {
        if self.dim != rhs.dim {
            return Err(Error::invalid(format!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.dim, rhs.dim
            )));
        }
        Ok(self.mul_unchecked(rhs))
    }

    pub(crate) fn mul_unchecked(&self, rhs: &ComplexUnitary) -> Self {
        let d = self.dim;
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.entries[r * d + k];
                if a == ZERO {
                    continue;
                }
                for c in 0..d {
                    entries[r * d + c] += a * rhs.entries[k * d + c];
                }
            }
        }
        ComplexUnitary { dim: d, entries }
    }

    /// Kronecker product of two single-qubit unitaries.
    pub fn kron(a: &ComplexUnitary, b: &ComplexUnitary) -> Result<Self> {
        if a.dim != 2 || b.dim != 2 {
            return Err(Error::invalid("kron is only defined for two 2x2 factors"));
        }
        let mut entries = vec![ZERO; 16];
        for ar in 0..2 {
            for ac in 0..2 {
                for br in 0..2 {
                    for bc in 0..2 {
                        entries[(2 * ar + br) * 4 + 2 * ac + bc] = a.get(ar, ac) * b.get(br, bc);
                    }
                }
            }
        }
        Ok(ComplexUnitary { dim: 4, entries })
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest entrywise deviation of `U^dagger U` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += self.entries[k * d + r].conj() * self.entries[k * d + c];
                }
                if r == c {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &ComplexUnitary) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn check_finite(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite, got {v}")));
        }
    }
    Ok(())
}

/// Single-qubit rotation `exp(-i (theta/2) sigma_phi)` with
/// `sigma_phi = cos(phi) X + sin(phi) Y`.
pub fn rot_gate(theta: f64, phi: f64) -> Result<ComplexUnitary> {
    check_finite(&[("theta", theta), ("phi", phi)])?;
    let (s, c) = (theta / 2.0).sin_cos();
    let mi_s = C64::new(0.0, -s);
    let entries = vec![
        C64::new(c, 0.0),
        mi_s * C64::from_polar(1.0, -phi),
        mi_s * C64::from_polar(1.0, phi),
        C64::new(c, 0.0),
    ];
    Ok(ComplexUnitary::from_raw(2, entries))
}

/// Molmer-Sorensen gate `exp(-i (chi/2) sigma_phi1 (x) sigma_phi2)`.
/// `chi = pi/2` is maximally entangling.
pub fn ms_gate(chi: f64, phi1: f64, phi2: f64) -> Result<ComplexUnitary> {
    check_finite(&[("chi", chi), ("phi1", phi1), ("phi2", phi2)])?;
    let (s, c) = (chi / 2.0).sin_cos();
    let mi_s = C64::new(0.0, -s);
    let mut entries = vec![ZERO; 16];
    for i in 0..4 {
        entries[i * 4 + i] = C64::new(c, 0.0);
    }
    // sigma_phi1 (x) sigma_phi2 only couples |ab> to |(1-a)(1-b)>.
    entries[3] = mi_s * C64::from_polar(1.0, -phi1 - phi2);
    entries[4 + 2] = mi_s * C64::from_polar(1.0, -phi1 + phi2);
    entries[2 * 4 + 1] = mi_s * C64::from_polar(1.0, phi1 - phi2);
    entries[3 * 4] = mi_s * C64::from_polar(1.0, phi1 + phi2);
    Ok(ComplexUnitary::from_raw(4, entries))
}

/// Average gate fidelity `(|Tr(V^dagger U)|^2 + d) / (d^2 + d)`.
pub fn average_gate_fidelity(actual: &ComplexUnitary, ideal: &ComplexUnitary) -> Result<f64> {
    if actual.dim != ideal.dim {
        return Err(Error::invalid(format!(
            "fidelity between {}x{} and {}x{} unitaries",
            actual.dim, actual.dim, ideal.dim, ideal.dim
        )));
    }
    let d = actual.dim;
    let mut tr = ZERO;
    for r in 0..d {
        for c in 0..d {
            tr += ideal.get(r, c).conj() * actual.get(r, c);
        }
    }
    let d = d as f64;
    Ok(((tr.norm_sqr() + d) / (d * d + d)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<C64>,
}

impl QuantumState {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if !(1..=2).contains(&n_qubits) {
            return Err(Error::invalid(format!("only 1 or 2 qubits are supported, got {n_qubits}")));
        }
        let dim = 1 << n_qubits;
        if index >= dim {
            return Err(Error::invalid(format!("basis index {index} out of range for {n_qubits} qubits")));
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(QuantumState { amplitudes })
    }

    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        if !matches!(amplitudes.len(), 2 | 4) {
            return Err(Error::invalid(format!(
                "state length must be 2 or 4, got {}",
                amplitudes.len()
            )));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNITARY_TOL {
            return Err(Error::invalid(format!("state norm must be 1, got {norm}")));
        }
        Ok(QuantumState { amplitudes })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn n_qubits(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|<self|other>|`, insensitive to global phase.
    pub fn overlap(&self, other: &QuantumState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .norm()
    }
}

/// Bitstring label of a basis index, qubit 0 first.
pub fn bitstring(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .map(|q| if (index >> (n_qubits - 1 - q)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// `R(theta, phi)` on one qubit.
    Rot { theta: f64, phi: f64 },
    /// `MS(chi, phi1, phi2)` on two qubits.
    Ms { chi: f64, phi1: f64, phi2: f64 },
    /// A fixed unitary applied as-is.
    Unitary(ComplexUnitary),
}

impl Gate {
    pub fn arity(&self) -> usize {
        match self {
            Gate::Rot { .. } => 1,
            Gate::Ms { .. } => 2,
            Gate::Unitary(u) => u.n_qubits(),
        }
    }

    pub fn unitary(&self) -> Result<ComplexUnitary> {
        match self {
            Gate::Rot { theta, phi } => rot_gate(*theta, *phi),
            Gate::Ms { chi, phi1, phi2 } => ms_gate(*chi, *phi1, *phi2),
            Gate::Unitary(u) => Ok(u.clone()),
        }
    }

    /// The exact inverse expressed in the same gate family.
    pub fn inverse(&self) -> Gate {
        match self {
            Gate::Rot { theta, phi } => Gate::Rot {
                theta: *theta,
                phi: phi + std::f64::consts::PI,
            },
            Gate::Ms { chi, phi1, phi2 } => Gate::Ms {
                chi: *chi,
                phi1: phi1 + std::f64::consts::PI,
                phi2: *phi2,
            },
            Gate::Unitary(u) => Gate::Unitary(u.dagger()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub gate: Gate,
    pub targets: Vec<usize>,
}

impl Placement {
    pub fn new(gate: Gate, targets: impl Into<Vec<usize>>) -> Self {
        Placement {
            gate,
            targets: targets.into(),
        }
    }
}

/// One time step: either a single two-qubit gate or non-overlapping
/// single-qubit gates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layer {
    pub placements: Vec<Placement>,
}

impl Layer {
    pub fn new(placements: Vec<Placement>) -> Self {
        Layer { placements }
    }

    pub fn single(gate: Gate, targets: impl Into<Vec<usize>>) -> Self {
        Layer {
            placements: vec![Placement::new(gate, targets)],
        }
    }

    pub fn has_two_qubit_gate(&self) -> bool {
        self.placements.iter().any(|p| p.gate.arity() == 2)
    }

    fn validate(&self, n_qubits: usize) -> Result<()> {
        let mut used = [false; 2];
        for p in &self.placements {
            if p.targets.len() != p.gate.arity() {
                return Err(Error::invalid(format!(
                    "gate of arity {} placed on {} targets",
                    p.gate.arity(),
                    p.targets.len()
                )));
            }
            for &t in &p.targets {
                if t >= n_qubits {
                    return Err(Error::invalid(format!("target {t} out of range for {n_qubits} qubits")));
                }
                if used[t] {
                    return Err(Error::invalid(format!("qubit {t} used twice in one layer")));
                }
                used[t] = true;
            }
        }
        if self.has_two_qubit_gate() && self.placements.len() != 1 {
            return Err(Error::invalid("a two-qubit layer must contain exactly one gate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    layers: Vec<Layer>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Result<Self> {
        if !(1..=2).contains(&n_qubits) {
            return Err(Error::invalid(format!("only 1 or 2 qubits are supported, got {n_qubits}")));
        }
        Ok(Circuit {
            n_qubits,
            layers: Vec::new(),
        })
    }

    pub fn from_layers(n_qubits: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut c = Circuit::new(n_qubits)?;
        for l in layers {
            c.push(l)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, layer: Layer) -> Result<()> {
        layer.validate(self.n_qubits)?;
        self.layers.push(layer);
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Rebuilds the circuit with every placement mapped through `f`,
    /// keeping the layer structure.
    pub fn map_gates<F>(&self, mut f: F) -> Circuit
    where
        F: FnMut(&Gate, &[usize]) -> Gate,
    {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                placements: l
                    .placements
                    .iter()
                    .map(|p| Placement {
                        gate: f(&p.gate, &p.targets),
                        targets: p.targets.clone(),
                    })
                    .collect(),
            })
            .collect();
        Circuit {
            n_qubits: self.n_qubits,
            layers,
        }
    }

    /// Full `2^n x 2^n` unitary of the circuit.
    pub fn unitary(&self) -> Result<ComplexUnitary> {
        let dim = 1 << self.n_qubits;
        let mut cols = Vec::with_capacity(dim);
        for j in 0..dim {
            let mut amps = vec![ZERO; dim];
            amps[j] = ONE;
            apply_layers(&mut amps, self.n_qubits, &self.layers)?;
            cols.push(amps);
        }
        let mut entries = vec![ZERO; dim * dim];
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                entries[r * dim + c] = *v;
            }
        }
        Ok(ComplexUnitary::from_raw(dim, entries))
    }
}

fn apply_one(amps: &mut [C64], n_qubits: usize, u: &ComplexUnitary, q: usize) {
    let mask = 1 << (n_qubits - 1 - q);
    let (u00, u01, u10, u11) = (u.get(0, 0), u.get(0, 1), u.get(1, 0), u.get(1, 1));
    for i in 0..amps.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (a, b) = (amps[i], amps[j]);
            amps[i] = u00 * a + u01 * b;
            amps[j] = u10 * a + u11 * b;
        }
    }
}

fn apply_two(amps: &mut [C64], n_qubits: usize, u: &ComplexUnitary, qa: usize, qb: usize) {
    let ma = 1 << (n_qubits - 1 - qa);
    let mb = 1 << (n_qubits - 1 - qb);
    for base in 0..amps.len() {
        if base & (ma | mb) != 0 {
            continue;
        }
        let idx = [base, base | mb, base | ma, base | ma | mb];
        let old = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
        for (r, &i) in idx.iter().enumerate() {
            amps[i] = (0..4).map(|c| u.get(r, c) * old[c]).sum();
        }
    }
}

fn apply_layers(amps: &mut [C64], n_qubits: usize, layers: &[Layer]) -> Result<()> {
    for layer in layers {
        for p in &layer.placements {
            let u = p.gate.unitary()?;
            match p.targets.as_slice() {
                [q] => apply_one(amps, n_qubits, &u, *q),
                [a, b] => apply_two(amps, n_qubits, &u, *a, *b),
                _ => return Err(Error::invalid("placements act on one or two qubits")),
            }
        }
    }
    Ok(())
}

/// Applies the layers of `circuit` to `state` in order.
pub fn apply_circuit(state: &QuantumState, circuit: &Circuit) -> Result<QuantumState> {
    if state.n_qubits() != circuit.n_qubits {
        return Err(Error::invalid(format!(
            "circuit on {} qubits applied to a {}-qubit state",
            circuit.n_qubits,
            state.n_qubits()
        )));
    }
    let mut amps = state.amplitudes.clone();
    apply_layers(&mut amps, circuit.n_qubits, &circuit.layers)?;
    Ok(QuantumState { amplitudes: amps })
}

/// Multinomial sample of `shots` computational-basis measurements.
///
/// Drawn as a chain of conditional binomials, so the cost does not grow
/// with the shot count.
pub fn sample_measurements(state: &QuantumState, shots: u64, seed: u64) -> Result<BTreeMap<String, u64>> {
    if shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    let mut rng = rng::stream(seed, &[]);
    let probs = state.probabilities();
    let n = state.n_qubits();
    let mut remaining = shots;
    let mut mass_left = 1.0f64;
    let mut hist = BTreeMap::new();
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let count = if i + 1 == probs.len() || mass_left <= 0.0 {
            remaining
        } else {
            let q = (p / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .map_err(|e| Error::invalid(format!("binomial draw: {e}")))?
                .sample(&mut rng)
        };
        if count > 0 {
            hist.insert(bitstring(i, n), count);
        }
        remaining -= count;
        mass_left -= p;
    }
    Ok(hist)
}
