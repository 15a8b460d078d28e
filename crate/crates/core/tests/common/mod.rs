#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;

use bicgrid::controller::ControllerParams;
use bicgrid::graph::CommGraph;
use bicgrid::machine::GeneratorParams;

pub fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ten_bus.json")
}

/// Four-unit controller with the reference gains and limit offsets.
pub fn reference_params() -> ControllerParams {
    ControllerParams {
        k_t: 160.0,
        k_p: 0.0025,
        k_e: 0.1,
        k: 1e-6,
        n_gains: vec![1.0 / 2.0, 1.0 / 4.0, 1.0 / 6.0, 1.0 / 8.0],
        m_gains: vec![1.0; 4],
        t_m_nominal: vec![1.0, 2.0, 3.0, 4.0],
        e_f_nominal: vec![1.1; 4],
        dt_max: vec![2.0, 7.0, 0.5, 10.0],
        dt_min: vec![2.0, 4.36, 4.8, 6.1521],
        de_max: vec![2.0, 0.2, 2.0, 2.0],
        de_min: vec![0.5; 4],
        omega_s: 1.0,
    }
}

pub fn ring4() -> CommGraph {
    CommGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()
}

pub fn machine(r_a: f64) -> GeneratorParams {
    GeneratorParams {
        h: 3.5,
        d: 2.0,
        t_d0_prime: 8.0,
        x_d: 1.8,
        x_d_prime: 0.3,
        x_q_prime: 0.55,
        r_a,
        omega_b: 2.0 * std::f64::consts::PI * 60.0,
        omega_s: 1.0,
    }
}

/// Prints a verdict line that survives libtest output capture.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{verdict}] criterion {id} ({name}): {detail}");
}
