//! Pre-controller steady state: AC power flow followed by back-solving each
//! machine's internal states and constant inputs from its terminal
//! conditions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::machine::{GeneratorParams, GeneratorState};
use crate::network::{
    build_admittance, rotate_to_machine, stator_currents, AdmittanceMatrix, BusId, Complex,
    GeneratorConnection, Line, LoadAdmittance,
};

pub const PF_TOLERANCE: f64 = 1e-10;
pub const PF_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusKind {
    Slack {
        v: f64,
        angle: f64,
    },
    /// Net injection `p`, voltage magnitude `v`.
    Pv {
        p: f64,
        v: f64,
    },
    /// Net injections `p`, `q`.
    Pq {
        p: f64,
        q: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSpec {
    pub buses: Vec<BusKind>,
}

impl PowerFlowSpec {
    fn validate(&self) -> Result<usize> {
        let slack: Vec<usize> = self
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, BusKind::Slack { .. }))
            .map(|(i, _)| i)
            .collect();
        if slack.len() != 1 {
            return Err(Error::Validation(format!(
                "power flow needs exactly one slack bus, found {}",
                slack.len()
            )));
        }
        let finite = self.buses.iter().all(|b| match *b {
            BusKind::Slack { v, angle } => v.is_finite() && angle.is_finite() && v > 0.0,
            BusKind::Pv { p, v } => p.is_finite() && v.is_finite() && v > 0.0,
            BusKind::Pq { p, q } => p.is_finite() && q.is_finite(),
        });
        if !finite {
            return Err(Error::Validation(
                "power flow setpoints must be finite".into(),
            ));
        }
        Ok(slack[0])
    }
}

fn bus_power(y: &DMatrix<Complex>, v: &[Complex]) -> Vec<Complex> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let inj: Complex = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            v[i] * inj.conj()
        })
        .collect()
}

/// Newton-Raphson on the polar mismatch equations from a flat start.
pub fn solve_power_flow(y: &AdmittanceMatrix, spec: &PowerFlowSpec) -> Result<Vec<Complex>> {
    let n = y.size();
    if spec.buses.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: spec.buses.len(),
        });
    }
    spec.validate()?;
    let ym = y.entries();

    let mut vm: Vec<f64> = spec
        .buses
        .iter()
        .map(|b| match *b {
            BusKind::Slack { v, .. } | BusKind::Pv { v, .. } => v,
            BusKind::Pq { .. } => 1.0,
        })
        .collect();
    let mut va: Vec<f64> = spec
        .buses
        .iter()
        .map(|b| match *b {
            BusKind::Slack { angle, .. } => angle,
            _ => 0.0,
        })
        .collect();

    // unknown angles at PV and PQ buses, unknown magnitudes at PQ buses
    let ang_idx: Vec<usize> = (0..n)
        .filter(|&i| !matches!(spec.buses[i], BusKind::Slack { .. }))
        .collect();
    let mag_idx: Vec<usize> = (0..n)
        .filter(|&i| matches!(spec.buses[i], BusKind::Pq { .. }))
        .collect();
    let na = ang_idx.len();
    let dim = na + mag_idx.len();

    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex> {
        vm.iter()
            .zip(va)
            .map(|(&m, &a)| Complex::from_polar(m, a))
            .collect()
    };

    let mut mismatch_max = f64::INFINITY;
    for iteration in 0..=PF_MAX_ITERATIONS {
        let v = voltages(&vm, &va);
        let s = bus_power(ym, &v);
        let mut f = DVector::<f64>::zeros(dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            let p_spec = match spec.buses[i] {
                BusKind::Pv { p, .. } | BusKind::Pq { p, .. } => p,
                BusKind::Slack { .. } => unreachable!(),
            };
            f[r] = s[i].re - p_spec;
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            let q_spec = match spec.buses[i] {
                BusKind::Pq { q, .. } => q,
                _ => unreachable!(),
            };
            f[na + r] = s[i].im - q_spec;
        }
        mismatch_max = f.amax();
        if mismatch_max < PF_TOLERANCE {
            return Ok(v);
        }
        if iteration == PF_MAX_ITERATIONS || !mismatch_max.is_finite() {
            break;
        }

        // dS/dθ = j [V] conj([I] - Y [V]),  dS/d|V| = [V] conj(Y [V/|V|]) + conj([I]) [V/|V|]
        let ibus: Vec<Complex> = (0..n)
            .map(|i| (0..n).map(|k| ym[(i, k)] * v[k]).sum())
            .collect();
        let unit: Vec<Complex> = v.iter().map(|x| x / x.norm()).collect();
        let ds_dva = |i: usize, k: usize| -> Complex {
            let mut t = -ym[(i, k)] * v[k];
            if i == k {
                t += ibus[i];
            }
            Complex::i() * v[i] * t.conj()
        };
        let ds_dvm = |i: usize, k: usize| -> Complex {
            let mut t = v[i] * (ym[(i, k)] * unit[k]).conj();
            if i == k {
                t += ibus[i].conj() * unit[i];
            }
            t
        };
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, k).re;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(r, na + c)] = ds_dvm(i, k).re;
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &k) in ang_idx.iter().enumerate() {
                jac[(na + r, c)] = ds_dva(i, k).im;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(na + r, na + c)] = ds_dvm(i, k).im;
            }
        }
        let dx = jac.lu().solve(&f).ok_or(Error::PowerFlowDiverged {
            iterations: iteration,
            mismatch: mismatch_max,
        })?;
        for (r, &i) in ang_idx.iter().enumerate() {
            va[i] -= dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] -= dx[na + r];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: PF_MAX_ITERATIONS,
        mismatch: mismatch_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineEquilibrium {
    pub state: GeneratorState,
    pub t_m: f64,
    pub e_f: f64,
}

/// Finds the machine states and constant inputs that deliver `P + jQ` at
/// `terminal` with every derivative at zero and `omega = omega_s`.
///
/// The q axis lies along `V + (r_a + j X'_q) I`, which fixes `delta`
/// directly; `E'_q` and `E_f` then follow from the stator and field
/// equations.
pub fn back_solve_generator(
    terminal: Complex,
    p: f64,
    q: f64,
    params: &GeneratorParams,
) -> Result<MachineEquilibrium> {
    back_solve_indexed(0, terminal, p, q, params)
}

fn back_solve_indexed(
    generator: usize,
    terminal: Complex,
    p: f64,
    q: f64,
    params: &GeneratorParams,
) -> Result<MachineEquilibrium> {
    let infeasible = |reason: String| Error::InfeasibleDispatch { generator, reason };
    if !(terminal.norm() > 0.0) || !p.is_finite() || !q.is_finite() {
        return Err(infeasible(
            "terminal voltage must be non-zero and finite".into(),
        ));
    }
    let current = (Complex::new(p, q) / terminal).conj();
    let q_axis = terminal + Complex::new(params.r_a, params.x_q_prime) * current;
    let delta = if q_axis.norm() > 0.0 {
        q_axis.arg()
    } else {
        terminal.arg()
    };
    let load_angle = (Complex::from_polar(1.0, delta) / terminal).arg();
    if load_angle.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(infeasible(format!(
            "rotor angle leads the terminal voltage by {load_angle:.3} rad"
        )));
    }
    let (v_q, v_d) = rotate_to_machine(terminal.re, terminal.im, delta);
    let (i_q, i_d) = rotate_to_machine(current.re, current.im, delta);
    let e_q_prime = v_q + params.r_a * i_q - params.x_d_prime * i_d;
    if !(e_q_prime > 0.0) {
        return Err(infeasible(format!(
            "non-positive transient emf {e_q_prime}"
        )));
    }
    // the stator relations must reproduce the current we started from
    let (chk_d, chk_q) = stator_currents(e_q_prime, v_d, v_q, params)?;
    let scale = 1.0 + current.norm();
    if (chk_d - i_d).abs() > 1e-9 * scale || (chk_q - i_q).abs() > 1e-9 * scale {
        return Err(infeasible(
            "stator algebra inconsistent at the computed angle".into(),
        ));
    }
    let psi_d = params.x_d_prime * chk_d + e_q_prime;
    let psi_q = params.x_q_prime * chk_q;
    let t_e = psi_d * chk_q - psi_q * chk_d;
    let e_f = e_q_prime - (params.x_d - params.x_d_prime) * chk_d;
    Ok(MachineEquilibrium {
        state: GeneratorState {
            delta,
            omega: params.omega_s,
            e_q_prime,
        },
        t_m: t_e,
        e_f,
    })
}

/// How a generator bus enters the power flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispatch {
    Slack { v: f64 },
    Pv { p: f64, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorUnit {
    pub bus: BusId,
    pub params: GeneratorParams,
    pub dispatch: Dispatch,
}

/// Constant-power load used to define the initial operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLoad {
    pub bus: BusId,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    pub buses: usize,
    pub lines: Vec<Line>,
    pub loads: Vec<PowerLoad>,
    pub generators: Vec<GeneratorUnit>,
}

impl PowerSystem {
    pub fn connections(&self) -> Vec<GeneratorConnection> {
        self.generators
            .iter()
            .map(|g| GeneratorConnection {
                bus: g.bus,
                params: g.params,
            })
            .collect()
    }

    pub fn generator_shunts(&self) -> Vec<(BusId, Complex)> {
        self.generators
            .iter()
            .map(|g| (g.bus, Complex::new(1.0 / g.params.r_a, 0.0)))
            .collect()
    }

    pub fn power_flow_spec(&self) -> Result<PowerFlowSpec> {
        let mut net = vec![Complex::new(0.0, 0.0); self.buses];
        for l in &self.loads {
            if l.bus.0 >= self.buses {
                return Err(Error::BusOutOfRange {
                    index: l.bus.0,
                    buses: self.buses,
                });
            }
            net[l.bus.0] -= Complex::new(l.p, l.q);
        }
        let mut kinds: Vec<BusKind> = net
            .iter()
            .map(|s| BusKind::Pq { p: s.re, q: s.im })
            .collect();
        for g in &self.generators {
            if g.bus.0 >= self.buses {
                return Err(Error::BusOutOfRange {
                    index: g.bus.0,
                    buses: self.buses,
                });
            }
            kinds[g.bus.0] = match g.dispatch {
                Dispatch::Slack { v } => BusKind::Slack { v, angle: 0.0 },
                Dispatch::Pv { p, v } => BusKind::Pv {
                    p: p + net[g.bus.0].re,
                    v,
                },
            };
        }
        Ok(PowerFlowSpec { buses: kinds })
    }
}

/// Steady operating point the simulation starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub states: Vec<GeneratorState>,
    pub t_m_nominal: Vec<f64>,
    pub e_f_nominal: Vec<f64>,
    pub bus_voltages: Vec<Complex>,
    /// Generator terminal outputs from the power flow.
    pub generator_power: Vec<Complex>,
    /// Loads converted to constant admittances at the solved voltages.
    pub load_admittances: Vec<LoadAdmittance>,
}

impl EquilibriumPoint {
    /// Full admittance matrix: lines, equilibrium load admittances and
    /// generator shunts.
    pub fn admittance(&self, system: &PowerSystem) -> Result<AdmittanceMatrix> {
        build_admittance(
            system.buses,
            &system.lines,
            &self.load_admittances,
            &system.generator_shunts(),
        )
    }
}

pub fn initialize(system: &PowerSystem) -> Result<EquilibriumPoint> {
    let y_lines = build_admittance(system.buses, &system.lines, &[], &[])?;
    let spec = system.power_flow_spec()?;
    let v = solve_power_flow(&y_lines, &spec)?;
    let ym = y_lines.entries();
    let injected = bus_power(ym, &v);

    let mut load_at_bus = vec![Complex::new(0.0, 0.0); system.buses];
    for l in &system.loads {
        load_at_bus[l.bus.0] += Complex::new(l.p, l.q);
    }
    let load_admittances = system
        .loads
        .iter()
        .map(|l| LoadAdmittance {
            bus: l.bus,
            admittance: Complex::new(l.p, -l.q) / v[l.bus.0].norm_sqr(),
        })
        .collect();

    let mut states = Vec::new();
    let mut t_m_nominal = Vec::new();
    let mut e_f_nominal = Vec::new();
    let mut generator_power = Vec::new();
    for (idx, g) in system.generators.iter().enumerate() {
        let s = injected[g.bus.0] + load_at_bus[g.bus.0];
        let eq = back_solve_indexed(idx, v[g.bus.0], s.re, s.im, &g.params)?;
        states.push(eq.state);
        t_m_nominal.push(eq.t_m);
        e_f_nominal.push(eq.e_f);
        generator_power.push(s);
    }
    Ok(EquilibriumPoint {
        states,
        t_m_nominal,
        e_f_nominal,
        bus_voltages: v,
        generator_power,
        load_admittances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{generator_derivatives, DEFAULT_OMEGA_B};
    use crate::network::solve_network;
    use approx::assert_abs_diff_eq;

    fn machine() -> GeneratorParams {
        GeneratorParams {
            h: 6.5,
            d: 2.0,
            t_d0_prime: 8.0,
            x_d: 1.8,
            x_d_prime: 0.3,
            x_q_prime: 0.55,
            r_a: 0.0025,
            omega_b: DEFAULT_OMEGA_B,
            omega_s: 1.0,
        }
    }

    #[test]
    fn flat_solution_without_injections() {
        let lines = [
            Line::new(0, 1, 0.0, 0.1),
            Line::new(1, 2, 0.0, 0.2),
            Line::new(0, 2, 0.0, 0.3),
        ];
        let y = build_admittance(3, &lines, &[], &[]).unwrap();
        let spec = PowerFlowSpec {
            buses: vec![
                BusKind::Slack { v: 1.0, angle: 0.0 },
                BusKind::Pv { p: 0.0, v: 1.0 },
                BusKind::Pq { p: 0.0, q: 0.0 },
            ],
        };
        let v = solve_power_flow(&y, &spec).unwrap();
        for x in v {
            assert_abs_diff_eq!(x.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(x.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_bus_matches_quadratic() {
        // lossless line, slack at 1 pu: |V2|^2 solves
        // u^2 - (1 - 2 Q X) u + X^2 (P^2 + Q^2) = 0 (upper root)
        let x = 0.2;
        let (pl, ql) = (1.5, 0.4);
        let y = build_admittance(2, &[Line::new(0, 1, 0.0, x)], &[], &[]).unwrap();
        let spec = PowerFlowSpec {
            buses: vec![
                BusKind::Slack { v: 1.0, angle: 0.0 },
                BusKind::Pq { p: -pl, q: -ql },
            ],
        };
        let v = solve_power_flow(&y, &spec).unwrap();
        let b = 1.0 - 2.0 * ql * x;
        let u = 0.5 * (b + (b * b - 4.0 * x * x * (pl * pl + ql * ql)).sqrt());
        assert_abs_diff_eq!(v[1].norm(), u.sqrt(), epsilon = 1e-10);
        // P = |V2| sin(θ1 - θ2) / X
        let theta = (-pl * x / u.sqrt()).asin();
        assert_abs_diff_eq!(v[1].arg(), theta, epsilon = 1e-10);
    }

    #[test]
    fn power_balance_at_solution() {
        let lines = [
            Line::new(0, 1, 0.01, 0.1),
            Line::new(1, 2, 0.02, 0.2),
            Line::new(0, 2, 0.015, 0.15),
            Line::new(2, 3, 0.01, 0.12),
        ];
        let y = build_admittance(4, &lines, &[], &[]).unwrap();
        let spec = PowerFlowSpec {
            buses: vec![
                BusKind::Slack {
                    v: 1.02,
                    angle: 0.0,
                },
                BusKind::Pv { p: 0.8, v: 1.01 },
                BusKind::Pq { p: -1.0, q: -0.3 },
                BusKind::Pq { p: -0.6, q: -0.2 },
            ],
        };
        let v = solve_power_flow(&y, &spec).unwrap();
        let s = bus_power(y.entries(), &v);
        let losses: f64 = lines
            .iter()
            .map(|l| {
                let i = (v[l.from.0] - v[l.to.0]) * l.series_admittance();
                l.resistance * i.norm_sqr()
            })
            .sum();
        let gen = s[0].re + s[1].re;
        let load = 1.6;
        assert_abs_diff_eq!(gen, load + losses, epsilon = 1e-8);
        assert_abs_diff_eq!(s[1].re, 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(v[1].norm(), 1.01, epsilon = 1e-14);
    }

    #[test]
    fn divergence_reported() {
        let y = build_admittance(2, &[Line::new(0, 1, 0.0, 0.5)], &[], &[]).unwrap();
        let spec = PowerFlowSpec {
            buses: vec![
                BusKind::Slack { v: 1.0, angle: 0.0 },
                BusKind::Pq { p: -50.0, q: 0.0 },
            ],
        };
        assert!(matches!(
            solve_power_flow(&y, &spec),
            Err(Error::PowerFlowDiverged { .. })
        ));
    }

    #[test]
    fn needs_one_slack() {
        let y = build_admittance(2, &[Line::new(0, 1, 0.0, 0.5)], &[], &[]).unwrap();
        let spec = PowerFlowSpec {
            buses: vec![
                BusKind::Pv { p: 0.1, v: 1.0 },
                BusKind::Pq { p: -0.1, q: 0.0 },
            ],
        };
        assert!(matches!(
            solve_power_flow(&y, &spec),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn no_load_machine() {
        let p = machine();
        let eq = back_solve_generator(Complex::new(1.0, 0.0), 0.0, 0.0, &p).unwrap();
        assert_abs_diff_eq!(eq.state.delta, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.state.e_q_prime, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.t_m, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eq.e_f, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn back_solved_machine_is_stationary() {
        let p = machine();
        let terminal = Complex::from_polar(1.02, 0.17);
        let eq = back_solve_generator(terminal, 0.8, 0.2, &p).unwrap();
        let (q, d) = rotate_to_machine(terminal.re, terminal.im, eq.state.delta);
        let e = crate::network::ElectricalInterface::at_terminal(
            eq.state.delta,
            eq.state.e_q_prime,
            terminal,
            &p,
        )
        .unwrap();
        assert_abs_diff_eq!(e.v_q, q, epsilon = 1e-15);
        assert_abs_diff_eq!(e.v_d, d, epsilon = 1e-15);
        assert_abs_diff_eq!(e.p, 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(e.q, 0.2, epsilon = 1e-10);
        let der = generator_derivatives(&eq.state, eq.t_m, eq.e_f, e.i_d, e.t_e, &p);
        assert!(der.d_delta.abs() < 1e-12);
        assert!(der.d_omega.abs() < 1e-12);
        assert!(der.d_e_q_prime.abs() < 1e-12);
    }

    #[test]
    fn infeasible_dispatch() {
        let p = machine();
        let err = back_solve_generator(Complex::new(0.0, 0.0), 0.5, 0.0, &p).unwrap_err();
        assert!(matches!(err, Error::InfeasibleDispatch { .. }));
        // absorbing large reactive power pushes E'_q negative
        assert!(back_solve_generator(Complex::new(1.0, 0.0), 0.0, -5.0, &p).is_err());
    }

    fn small_system() -> PowerSystem {
        PowerSystem {
            buses: 3,
            lines: vec![
                Line::new(0, 2, 0.01, 0.1),
                Line::new(1, 2, 0.01, 0.12),
                Line::new(0, 1, 0.02, 0.3),
            ],
            loads: vec![PowerLoad {
                bus: BusId(2),
                p: 1.5,
                q: 0.4,
            }],
            generators: vec![
                GeneratorUnit {
                    bus: BusId(0),
                    params: machine(),
                    dispatch: Dispatch::Slack { v: 1.03 },
                },
                GeneratorUnit {
                    bus: BusId(1),
                    params: machine(),
                    dispatch: Dispatch::Pv { p: 0.7, v: 1.01 },
                },
            ],
        }
    }

    #[test]
    fn initialized_system_is_an_equilibrium() {
        let sys = small_system();
        let eq = initialize(&sys).unwrap();
        let y = eq.admittance(&sys).unwrap();
        let gens = sys.connections();
        let states: Vec<_> = eq.states.iter().map(|s| (s.delta, s.e_q_prime)).collect();
        let sol = solve_network(&y, &gens, &states).unwrap();
        assert!(sol.residual(&y, &gens) < 1e-9);
        for (i, v) in sol.bus_voltages.iter().enumerate() {
            assert!((v - eq.bus_voltages[i]).norm() < 1e-9);
        }
        for (k, g) in sys.generators.iter().enumerate() {
            let e = &sol.per_generator[k];
            let d = generator_derivatives(
                &eq.states[k],
                eq.t_m_nominal[k],
                eq.e_f_nominal[k],
                e.i_d,
                e.t_e,
                &g.params,
            );
            assert!(d.d_delta.abs() < 1e-9 && d.d_omega.abs() < 1e-9 && d.d_e_q_prime.abs() < 1e-9);
        }
        assert_abs_diff_eq!(eq.generator_power[1].re, 0.7, epsilon = 1e-9);
    }
}
