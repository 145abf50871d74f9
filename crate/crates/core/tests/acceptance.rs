//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion, and exits non-zero if any fails. Informational lines are
//! prefixed `info` and never affect the exit status.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::{Duration, Instant};

use num_complex::Complex64 as C;
use rand::Rng;

use esc_gates::config::{RunConfig, Seeds};
use esc_gates::drb::{
    layer_decay_oracle, run_drb, sample_drb_circuit, success_probability, CircuitRecord, DrbDesign, IdealPlant,
    LayerErrorPlant, RuntimeModel, StaticOffsetPlant,
};
use esc_gates::esc::{antiphase_knobs, demodulate, high_pass, perturbation_sequence, quadrature_knobs, EscSchedule};
use esc_gates::harness::{
    grid_search, run_closed_loop, run_offset_demo, suppression_ratio, ControlOffsets, GridSpace, LoopConfig,
};
use esc_gates::quantum::{ms_gate, rot_gate, ComplexUnitary};
use esc_gates::report::{drb_csv, grid_csv, offset_csv, trace_csv, Provenance};
use esc_gates::rng;

// ---------------------------------------------------------------------------
// Dense matrix-exponential oracle (Taylor series with scaling and squaring),
// independent of the closed-form gate constructors.

type Mat = Vec<Vec<C>>;

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut out = vec![vec![C::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![C::new(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn expm(a: &Mat) -> Mat {
    let n = a.len();
    let norm = a.iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 2f64.powi(-(squarings as i32));
    let scaled: Mat = a.iter().map(|r| r.iter().map(|z| z * scale).collect()).collect();
    let mut result: Mat = (0..n).map(|i| (0..n).map(|j| C::new(f64::from(u8::from(i == j)), 0.0)).collect()).collect();
    let mut term = result.clone();
    for k in 1..=30 {
        term = mat_mul(&term, &scaled);
        term = term.iter().map(|r| r.iter().map(|z| z / k as f64).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

fn sigma(phi: f64) -> Mat {
    let z = C::new(0.0, 0.0);
    vec![vec![z, C::from_polar(1.0, -phi)], vec![C::from_polar(1.0, phi), z]]
}

/// `exp(-i a/2 H)`.
fn oracle_exp(a: f64, h: &Mat) -> Mat {
    let gen: Mat = h.iter().map(|r| r.iter().map(|z| z * C::new(0.0, -a / 2.0)).collect()).collect();
    expm(&gen)
}

fn max_diff(u: &ComplexUnitary, m: &Mat) -> f64 {
    let n = m.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((u.get(i, j) - m[i][j]).norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = run();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "[{}] {id} {name}: {} ({:.1}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn info(msg: String) {
    println!("[info] {msg}");
}

fn prov(seed: u64) -> Provenance {
    Provenance::new("acceptance", Seeds::split(seed))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------

fn gate_construction() -> Outcome {
    let mut r = rng::stream(2024, &[1]);
    let mut worst_unitarity: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..1000 {
        let (theta, phi) = (r.random_range(-2.0 * PI..2.0 * PI), r.random_range(0.0..2.0 * PI));
        let u = rot_gate(theta, phi).unwrap();
        worst_unitarity = worst_unitarity.max(u.unitarity_defect());
        worst_oracle = worst_oracle.max(max_diff(&u, &oracle_exp(theta, &sigma(phi))));

        let (chi, p1, p2) = (
            r.random_range(-PI..PI),
            r.random_range(0.0..2.0 * PI),
            r.random_range(0.0..2.0 * PI),
        );
        let m = ms_gate(chi, p1, p2).unwrap();
        worst_unitarity = worst_unitarity.max(m.unitarity_defect());
        worst_oracle = worst_oracle.max(max_diff(&m, &oracle_exp(chi, &kron(&sigma(p1), &sigma(p2)))));
    }
    let ms = ms_gate(FRAC_PI_2, 0.0, 0.0).unwrap();
    let oracle = oracle_exp(FRAC_PI_2, &kron(&sigma(0.0), &sigma(0.0)));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let expected = [C::new(s, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, -s)];
    let mut bell_err: f64 = 0.0;
    for (i, e) in expected.iter().enumerate() {
        // Column 0 is MS|00>.
        bell_err = bell_err.max((ms.get(i, 0) - oracle[i][0]).norm());
        bell_err = bell_err.max((oracle[i][0] - e).norm());
    }
    Outcome {
        pass: worst_unitarity < 1e-10 && worst_oracle < 1e-10 && bell_err < 1e-10,
        detail: format!(
            "max unitarity defect {worst_unitarity:.1e}, max oracle diff {worst_oracle:.1e}, MS|00> vs Bell {bell_err:.1e} (tol 1e-10)"
        ),
    }
}

fn demodulation_identity() -> Outcome {
    let knobs = antiphase_knobs();
    let schedule = EscSchedule::new(30).unwrap();
    let seqs: Vec<Vec<f64>> = knobs.iter().map(|k| perturbation_sequence(k, &schedule)).collect();
    let c = 3.7;
    let mut worst_ratio_dev: f64 = 0.0;
    let mut worst_leak: f64 = 0.0;
    for (k, knob) in knobs.iter().enumerate() {
        let f: Vec<f64> = seqs[k].iter().map(|a| c * a).collect();
        let filtered = high_pass(&f).unwrap();
        let xi = demodulate(&seqs[k], &filtered).unwrap();
        let expect = c * knob.amplitude.powi(2) / 2.0;
        worst_ratio_dev = worst_ratio_dev.max((xi / expect - 1.0).abs());
        for (j, other) in knobs.iter().enumerate() {
            if other.omega == knob.omega {
                continue;
            }
            let leak = demodulate(&seqs[j], &filtered).unwrap();
            let direct = c * other.amplitude * knob.amplitude / 2.0;
            worst_leak = worst_leak.max((leak / direct).abs());
        }
    }
    Outcome {
        pass: worst_ratio_dev <= 0.02 && worst_leak < 0.05,
        detail: format!(
            "max |xi/(cA^2/2) - 1| = {worst_ratio_dev:.2e} (tol 0.02), 4pi<->8pi leakage {worst_leak:.2e} (tol 0.05)"
        ),
    }
}

/// Optima displaced up to this many perturbation amplitudes per knob.
const GRADIENT_OFFSET_SCALE: f64 = 20.0;

fn gradient_sign() -> Outcome {
    let knobs = quadrature_knobs();
    let schedule = EscSchedule::new(30).unwrap();
    let seqs: Vec<Vec<f64>> = knobs.iter().map(|k| perturbation_sequence(k, &schedule)).collect();
    let mut r = rng::stream(2024, &[3]);
    let normal = rand_distr::StandardNormal;
    let (mut agree, mut total) = (0usize, 0usize);
    for _ in 0..100 {
        let s: Vec<f64> = knobs.iter().map(|k| GRADIENT_OFFSET_SCALE * k.amplitude).collect();
        // Q = D (B^T B + I/2) D with D = diag(1/s): positive definite and
        // scaled to each knob's range.
        let b: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| 0.5 * r.sample::<f64, _>(normal)).collect()).collect();
        let mut q = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let btb: f64 = (0..3).map(|k| b[k][i] * b[k][j]).sum();
                q[i][j] = (btb + if i == j { 0.5 } else { 0.0 }) / (s[i] * s[j]);
            }
        }
        let opt: Vec<f64> = s.iter().map(|si| si * r.random_range(-1.0..1.0)).collect();
        let base = [1.0, 0.0, 0.0];
        let f = |x: &[f64]| -> f64 {
            let d: Vec<f64> = (0..3).map(|i| x[i] - base[i] - opt[i]).collect();
            -(0..3).map(|i| (0..3).map(|j| d[i] * q[i][j] * d[j]).sum::<f64>()).sum::<f64>()
        };
        let samples: Vec<f64> = (0..30)
            .map(|i| {
                let x: Vec<f64> = (0..3).map(|k| base[k] + seqs[k][i]).collect();
                f(&x)
            })
            .collect();
        let filtered = high_pass(&samples).unwrap();
        for k in 0..3 {
            let xi = demodulate(&seqs[k], &filtered).unwrap();
            let h = 1e-6 * s[k];
            let mut plus = base.to_vec();
            let mut minus = base.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            total += 1;
            if xi.signum() == fd.signum() {
                agree += 1;
            }
        }
    }
    let frac = agree as f64 / total as f64;
    Outcome {
        pass: frac >= 0.99,
        detail: format!("{agree}/{total} knob instances agree ({:.1}%, need >= 99%)", 100.0 * frac),
    }
}

fn inversion_csv() -> (bool, String, String) {
    let mut all_exact = true;
    let mut worst: f64 = 0.0;
    let mut csv = String::from("circuit,depth,p00\n");
    let design = DrbDesign::simulation(1, 1);
    let mut r = rng::stream(2024, &[4]);
    let depths = [1u32, 2, 8, 32, 128];
    for i in 0..1000 {
        let depth = depths[i % depths.len()];
        let c = sample_drb_circuit(&design, depth, &mut r).unwrap();
        let p = success_probability(&c, &IdealPlant, 0.0).unwrap();
        worst = worst.max((1.0 - p).abs());
        all_exact &= (1.0 - p).abs() < 1e-12;
        csv.push_str(&format!("{i},{depth},{p:.17e}\n"));
    }
    (all_exact, format!("1000 circuits, max |1 - P(00)| = {worst:.1e} (tol 1e-12)"), csv)
}

fn sensitivity_csv() -> (bool, String, String) {
    let offsets = [0.02, 0.05, 0.1];
    let mut medians = Vec::new();
    let mut records: Vec<(usize, CircuitRecord)> = Vec::new();
    for (k, &off) in offsets.iter().enumerate() {
        let plant = StaticOffsetPlant { phi: [off, 0.0], ..Default::default() };
        let mut ps = Vec::new();
        for seed in 0..50u64 {
            let design = DrbDesign::simulation(5, 18).with_seed(rng::derive_seed(2024, &[5, seed]));
            let e = run_drb(&design, &plant, 0.0).unwrap();
            ps.push(e.p_hat);
            records.extend(e.records.into_iter().map(|rec| (k * 50 + seed as usize, rec)));
        }
        medians.push(median(ps));
    }
    let pass = medians.windows(2).all(|w| w[1] < w[0]);
    let csv = drb_csv(&prov(2024), &records);
    (pass, format!("median p_hat at {offsets:?} rad = {medians:.6?} (must strictly decrease)"), csv)
}

fn offset_config(psi2: f64, seed: u64) -> LoopConfig {
    let mut cfg = LoopConfig::offset_demo();
    cfg.initial_offsets = ControlOffsets { gain_product: 0.0, psi1: 0.1, psi2 };
    let seeds = Seeds::split(seed);
    cfg.drb.seed = seeds.drb;
    cfg.drift.seed = seeds.drift;
    cfg.probe_seed = seeds.esc;
    cfg
}

fn offset_recovery_csv(psi2: f64) -> (usize, f64, String) {
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    let mut csv = String::new();
    for seed in 0..20 {
        let cfg = offset_config(psi2, seed);
        let demo = run_offset_demo(&cfg, 8).unwrap();
        let last = demo.rows.last().unwrap();
        let residual = last.residual_psi1.abs().max(last.residual_psi2.abs());
        worst = worst.max(residual);
        if residual < 0.02 {
            ok += 1;
        }
        csv.push_str(&offset_csv(&prov(seed), &demo.rows));
    }
    (ok, worst, csv)
}

fn suppression_runs(knobs: Option<Vec<esc_gates::esc::EscKnob>>) -> (Vec<f64>, String) {
    let mut ratios = Vec::new();
    let mut csv = String::new();
    for seed in 0..10 {
        let mut cfg = RunConfig { seed, ..RunConfig::default() }.loop_config();
        if let Some(k) = &knobs {
            cfg.knobs = k.clone();
        }
        let trace = run_closed_loop(&cfg).unwrap();
        ratios.push(suppression_ratio(&trace).unwrap().ratio);
        csv.push_str(&trace_csv(&prov(seed), &trace.rows));
    }
    (ratios, csv)
}

fn grid_csv_run() -> (bool, String, String) {
    let base = RunConfig { seed: 7, ..RunConfig::default() }.loop_config();
    let base = LoopConfig { runtime: RuntimeModel::default(), ..base };
    let results = grid_search(&GridSpace::reference_sets(), &base).unwrap();
    let runtimes: Vec<f64> = results.iter().map(|r| r.runtime_minutes_per_hour).collect();
    let paper = [15.3, 27.6, 54.3];
    let ordered = runtimes.windows(2).all(|w| w[0] < w[1]);
    let within = runtimes.iter().zip(paper).all(|(m, p)| m / p > 0.5 && m / p < 2.0);
    let supp: Vec<String> = results
        .iter()
        .map(|r| match &r.outcome {
            Ok(s) => format!("{:.1}", s.ratio),
            Err(e) => e.clone(),
        })
        .collect();
    let all_ok = results.iter().all(|r| r.outcome.is_ok());
    let csv = grid_csv(&prov(7), &results);
    (
        ordered && within && all_ok,
        format!("runtime min/h {runtimes:.1?} vs reference {paper:?} (ordered, within 2x), suppression {supp:?}"),
        csv,
    )
}

fn main() {
    let mut results = Vec::new();
    let mut csvs: Vec<(&str, String)> = Vec::new();

    results.push(report("1", "gate construction", Duration::from_secs(5), gate_construction));
    results.push(report("2", "demodulation identity", Duration::from_secs(1), demodulation_identity));
    results.push(report("3", "gradient sign", Duration::from_secs(10), gradient_sign));

    results.push(report("4", "DRB inversion correctness", Duration::from_secs(30), || {
        let (pass, detail, csv) = inversion_csv();
        csvs.push(("4", csv));
        Outcome { pass, detail }
    }));

    results.push(report("5", "DRB sensitivity", Duration::from_secs(300), || {
        let (pass, detail, csv) = sensitivity_csv();
        csvs.push(("5", csv));
        Outcome { pass, detail }
    }));

    results.push(report("6", "offset recovery", Duration::from_secs(600), || {
        let (ok, worst, csv) = offset_recovery_csv(-0.1);
        csvs.push(("6", csv));
        Outcome {
            pass: ok >= 18,
            detail: format!(
                "(psi1, psi2) = (0.1, -0.1): {ok}/20 seeds with residual < 0.02 rad (need >= 18), worst {worst:.4}"
            ),
        }
    }));

    results.push(report("7", "closed-loop suppression", Duration::from_secs(1800), || {
        let (ratios, csv) = suppression_runs(None);
        csvs.push(("7", csv));
        let ok = ratios.iter().filter(|&&r| r >= 5.0).count();
        Outcome {
            pass: ok >= 9,
            detail: format!("{ok}/10 seeds with ratio >= 5 (need >= 9); ratios {ratios:.1?}"),
        }
    }));

    results.push(report("8", "grid-search consistency", Duration::from_secs(5400), || {
        let (pass, detail, csv) = grid_csv_run();
        csvs.push(("8", csv));
        Outcome { pass, detail }
    }));

    results.push(report("9", "determinism", Duration::from_secs(5400), || {
        let reruns = [
            ("4", inversion_csv().2),
            ("5", sensitivity_csv().2),
            ("6", offset_recovery_csv(-0.1).2),
            ("7", suppression_runs(None).1),
            ("8", grid_csv_run().2),
        ];
        let mismatched: Vec<&str> = reruns
            .iter()
            .zip(&csvs)
            .filter(|((a, x), (b, y))| a != b || x != y)
            .map(|((a, _), _)| *a)
            .collect();
        let bytes: usize = csvs.iter().map(|(_, c)| c.len()).sum();
        Outcome {
            pass: mismatched.is_empty() && csvs.len() == reruns.len(),
            detail: format!("reran criteria 4-8: {} CSV bytes compared, mismatches {mismatched:?}", bytes),
        }
    }));

    // Context that is not part of the pass/fail gate.
    let (ok, worst, _) = offset_recovery_csv(0.1);
    info(format!("offset recovery with (psi1, psi2) = (0.1, 0.1): {ok}/20 seeds < 0.02 rad, worst {worst:.4}"));
    let (ratios, _) = suppression_runs(Some(antiphase_knobs()));
    info(format!("closed loop with antiphase phase knobs: ratios {ratios:.1?}"));
    let big = DrbDesign::simulation(200, 1000);
    let plant = LayerErrorPlant::new(rot_gate(0.05, 0.0).unwrap()).unwrap();
    let e = run_drb(&big, &plant, 0.0).unwrap();
    let oracle = layer_decay_oracle(&big, &plant, 0.0).unwrap();
    info(format!(
        "Rx(0.05) on each qubit after every layer: fitted p {:.6} +- {:.1e}, layer-fidelity oracle {oracle:.6} ({:.1} standard errors)",
        e.p_hat,
        e.p_stderr,
        (e.p_hat - oracle) / e.p_stderr
    ));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
