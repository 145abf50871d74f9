//! Browser bindings for the demo page in `www/`.
//!
//! Each export has a plain-Rust twin in [`demo`] so the numbers can be
//! tested natively; the wasm wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use esc_gates::drb::{layer_decay_oracle, run_drb, DrbDesign, StaticOffsetPlant};
    use esc_gates::esc::{antiphase_knobs, quadrature_knobs};
    use esc_gates::harness::{run_closed_loop, suppression_ratio, LoopConfig};
    use esc_gates::ion::{DriftConfig, DriftTrajectory};

    /// Columns per row of [`drift_rows`].
    pub const DRIFT_STRIDE: usize = 5;
    /// Columns per row of [`LoopRows::rows`].
    pub const LOOP_STRIDE: usize = 6;
    pub const DECAY_DEPTHS: [u32; 6] = [1, 8, 16, 32, 64, 128];

    /// `[hours, g2e1, g2e2, psi2q1, psi2q2]` per sample, flattened.
    pub fn drift_rows(seed: u64, hours: f64, step_minutes: f64) -> Result<Vec<f64>, String> {
        if !(hours > 0.0 && step_minutes > 0.0) {
            return Err("hours and step must be positive".into());
        }
        let cfg = DriftConfig { seed, ..DriftConfig::default() };
        let traj = DriftTrajectory::generate(&cfg, hours * 3600.0).map_err(|e| e.to_string())?;
        let n = (hours * 60.0 / step_minutes).floor() as usize;
        let mut out = Vec::with_capacity((n + 1) * DRIFT_STRIDE);
        for j in 0..=n {
            let t = j as f64 * step_minutes * 60.0;
            let pair = traj.physical_pair_at(t).map_err(|e| e.to_string())?;
            out.extend([t / 3600.0, pair[0].g2e, pair[1].g2e, pair[0].psi_2q, pair[1].psi_2q]);
        }
        Ok(out)
    }

    /// `[p_hat, amplitude, oracle, d1, mean1, d2, mean2, ...]` for a plant
    /// with static MS offsets.
    pub fn decay(phase_offset: f64, chi_offset: f64, circuits: u32, shots: u32, seed: u64) -> Result<Vec<f64>, String> {
        let design = DrbDesign {
            depths: DECAY_DEPTHS.to_vec(),
            ..DrbDesign::simulation(circuits, shots).with_seed(seed)
        };
        let plant = StaticOffsetPlant { chi: chi_offset, phi: [phase_offset, 0.0], theta: 0.0 };
        let est = run_drb(&design, &plant, 0.0).map_err(|e| e.to_string())?;
        let oracle = layer_decay_oracle(&design, &plant, 0.0).map_err(|e| e.to_string())?;
        let mut out = vec![est.p_hat, est.amplitude, oracle];
        for (d, m) in est.depth_means {
            out.extend([f64::from(d), m]);
        }
        Ok(out)
    }

    pub struct LoopRows {
        pub suppression: f64,
        /// `[hours, error_controlled, error_uncontrolled, g1g2, psi1, psi2]`.
        pub rows: Vec<f64>,
    }

    /// Set-1 closed loop under the default drift model.
    pub fn closed_loop(seed: u64, hours: f64, interval_minutes: f64, quadrature: bool) -> Result<LoopRows, String> {
        let mut cfg = LoopConfig {
            duration_hours: hours,
            interval_minutes,
            knobs: if quadrature { quadrature_knobs() } else { antiphase_knobs() },
            ..LoopConfig::set_one()
        };
        cfg.drift.seed = seed;
        cfg.drb.seed = seed.wrapping_add(1);
        let trace = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
        let s = suppression_ratio(&trace).map_err(|e| e.to_string())?;
        let rows = trace
            .rows
            .iter()
            .flat_map(|r| [r.t_s / 3600.0, r.error_controlled, r.error_uncontrolled, r.gain_product, r.psi1, r.psi2])
            .collect();
        Ok(LoopRows { suppression: s.ratio, rows })
    }
}

#[wasm_bindgen]
pub fn drift_trajectory(seed: u64, hours: f64, step_minutes: f64) -> Result<Vec<f64>, JsError> {
    demo::drift_rows(seed, hours, step_minutes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn drb_decay(phase_offset: f64, chi_offset: f64, circuits: u32, shots: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    demo::decay(phase_offset, chi_offset, circuits, shots, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct LoopResult {
    suppression: f64,
    rows: Vec<f64>,
}

#[wasm_bindgen]
impl LoopResult {
    #[wasm_bindgen(getter)]
    pub fn suppression(&self) -> f64 {
        self.suppression
    }

    /// Flattened rows of six columns, see [`demo::LoopRows`].
    pub fn rows(&self) -> Vec<f64> {
        self.rows.clone()
    }
}

#[wasm_bindgen]
pub fn closed_loop(seed: u64, hours: f64, interval_minutes: f64, quadrature: bool) -> Result<LoopResult, JsError> {
    let r = demo::closed_loop(seed, hours, interval_minutes, quadrature).map_err(|e| JsError::new(&e))?;
    Ok(LoopResult { suppression: r.suppression, rows: r.rows })
}
