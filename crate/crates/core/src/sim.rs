//! Closed-loop simulation: plant and controller integrated as one ODE with a
//! fixed-step RK4, driven by a timed event script.

use crate::controller::{
    control_outputs, ControllerBank, ControllerParams, ControllerState, Measurement,
};
use crate::equilibrium::{initialize, EquilibriumPoint, PowerSystem};
use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::machine::{generator_derivatives, GeneratorState};
use crate::network::{
    build_admittance, BusId, Complex, LoadAdmittance, NetworkSolution, NetworkSolver,
};

/// Controller gains, sharing weights and limit offsets as configured; the
/// nominal inputs come from the initial equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub k_t: f64,
    pub k_p: f64,
    pub k_e: f64,
    pub k: f64,
    pub n_gains: Vec<f64>,
    pub m_gains: Vec<f64>,
    pub dt_max: Vec<f64>,
    pub dt_min: Vec<f64>,
    pub de_max: Vec<f64>,
    pub de_min: Vec<f64>,
}

impl ControllerSettings {
    pub fn with_nominal(
        &self,
        t_m_nominal: Vec<f64>,
        e_f_nominal: Vec<f64>,
        omega_s: f64,
    ) -> ControllerParams {
        ControllerParams {
            k_t: self.k_t,
            k_p: self.k_p,
            k_e: self.k_e,
            k: self.k,
            n_gains: self.n_gains.clone(),
            m_gains: self.m_gains.clone(),
            t_m_nominal,
            e_f_nominal,
            dt_max: self.dt_max.clone(),
            dt_min: self.dt_min.clone(),
            de_max: self.de_max.clone(),
            de_min: self.de_min.clone(),
            omega_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ControllerActivate,
    /// Adds a constant-admittance load drawing `p + jq` at the pre-event
    /// bus voltage.
    LoadAdd {
        id: String,
        bus: BusId,
        p: f64,
        q: f64,
    },
    /// Disconnects the load added under `id`.
    LoadRemove {
        id: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: PowerSystem,
    pub controller: ControllerSettings,
    pub graph: CommGraph,
    pub events: Vec<Event>,
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

/// Steps needed to reach `time`, if `time` lies on the step grid.
fn step_index(time: f64, dt: f64) -> Option<usize> {
    let k = (time / dt).round();
    if k < 0.0 || (k * dt - time).abs() > 1e-9 * time.abs().max(1.0) {
        None
    } else {
        Some(k as usize)
    }
}

impl Scenario {
    pub fn generators(&self) -> usize {
        self.system.generators.len()
    }

    pub fn total_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail(format!("t_end must be positive, got {}", self.t_end));
        }
        if step_index(self.t_end, self.dt).is_none() {
            return fail(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            ));
        }
        if self.record_every == 0 {
            return fail("record_every must be at least 1".into());
        }
        let n = self.generators();
        if n == 0 {
            return fail("at least one generator is required".into());
        }
        if self.graph.len() != n {
            return fail(format!(
                "adjacency matrix is {0}x{0} but there are {n} generators",
                self.graph.len()
            ));
        }
        for g in &self.system.generators {
            g.params.validate()?;
        }
        self.controller
            .with_nominal(vec![0.0; n], vec![0.0; n], 1.0)
            .validate()?;

        let mut previous = 0.0;
        let mut added: Vec<&str> = Vec::new();
        let mut removed: Vec<&str> = Vec::new();
        for e in &self.events {
            if !(e.time >= 0.0 && e.time <= self.t_end) {
                return fail(format!("event at t = {} lies outside [0, t_end]", e.time));
            }
            if e.time < previous {
                return fail("events must be sorted by time".into());
            }
            previous = e.time;
            if step_index(e.time, self.dt).is_none() {
                return fail(format!(
                    "event time {} is not a multiple of dt = {}",
                    e.time, self.dt
                ));
            }
            match &e.kind {
                EventKind::ControllerActivate => {}
                EventKind::LoadAdd { id, bus, p, q } => {
                    if added.contains(&id.as_str()) {
                        return fail(format!("duplicate load id '{id}'"));
                    }
                    if bus.0 >= self.system.buses {
                        return fail(format!(
                            "load '{id}' references bus {} of {}",
                            bus.0 + 1,
                            self.system.buses
                        ));
                    }
                    if !p.is_finite() || !q.is_finite() {
                        return fail(format!("load '{id}' has non-finite power"));
                    }
                    added.push(id);
                }
                EventKind::LoadRemove { id } => {
                    if !added.contains(&id.as_str()) || removed.contains(&id.as_str()) {
                        return fail(format!(
                            "load_remove refers to unknown or already removed load '{id}'"
                        ));
                    }
                    removed.push(id);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSample {
    pub omega: f64,
    pub delta: f64,
    pub e_q_prime: f64,
    pub p: f64,
    pub q: f64,
    pub t_m: f64,
    pub e_f: f64,
    pub sigma_t: f64,
    pub sigma_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub generators: Vec<GeneratorSample>,
    pub bus_voltage: Vec<f64>,
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(mut f: F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { (0..n).map(|i| y[i] + a * k[i]).collect() };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k1))?;
    let k3 = f(t + 0.5 * dt, &axpy(0.5 * dt, &k2))?;
    let k4 = f(t + dt, &axpy(dt, &k3))?;
    let out: Vec<f64> = (0..n)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationDiverged { time: t + dt });
    }
    Ok(out)
}

/// Layout of the stacked state `[δ, ω, E'_q, σ_T, σ_E]`, `n` entries each.
#[derive(Debug, Clone, Copy)]
pub struct StateLayout {
    pub n: usize,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        5 * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn generator(&self, x: &[f64], i: usize) -> GeneratorState {
        GeneratorState {
            delta: x[i],
            omega: x[self.n + i],
            e_q_prime: x[2 * self.n + i],
        }
    }

    pub fn controller(&self, x: &[f64]) -> ControllerState {
        ControllerState {
            sigma_t: x[3 * self.n..4 * self.n].to_vec(),
            sigma_e: x[4 * self.n..5 * self.n].to_vec(),
        }
    }

    pub fn pack(&self, gens: &[GeneratorState], ctrl: &ControllerState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(gens.iter().map(|g| g.delta));
        x.extend(gens.iter().map(|g| g.omega));
        x.extend(gens.iter().map(|g| g.e_q_prime));
        x.extend_from_slice(&ctrl.sigma_t);
        x.extend_from_slice(&ctrl.sigma_e);
        x
    }
}

/// Mutable simulation context: current network, active loads and
/// controller activation.
#[derive(Debug, Clone)]
pub struct Simulation {
    system: PowerSystem,
    equilibrium: EquilibriumPoint,
    params: ControllerParams,
    bank: ControllerBank,
    added_loads: Vec<(String, LoadAdmittance)>,
    solver: NetworkSolver,
    active: bool,
    layout: StateLayout,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let equilibrium = initialize(&scenario.system)?;
        let omega_s = scenario.system.generators[0].params.omega_s;
        let params = scenario.controller.with_nominal(
            equilibrium.t_m_nominal.clone(),
            equilibrium.e_f_nominal.clone(),
            omega_s,
        );
        params.validate()?;
        let y = equilibrium.admittance(&scenario.system)?;
        let solver = NetworkSolver::new(y, &scenario.system.connections())?;
        Ok(Simulation {
            system: scenario.system.clone(),
            layout: StateLayout {
                n: scenario.generators(),
            },
            equilibrium,
            params,
            bank: ControllerBank::new(scenario.graph.clone()),
            added_loads: Vec::new(),
            solver,
            active: false,
        })
    }

    pub fn equilibrium(&self) -> &EquilibriumPoint {
        &self.equilibrium
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ControllerParams {
        &mut self.params
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn solver(&self) -> &NetworkSolver {
        &self.solver
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn activate(&mut self) {
        self.active = true;
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.layout.pack(
            &self.equilibrium.states,
            &ControllerState::zeros(self.layout.n),
        )
    }

    fn rebuild_network(&mut self) -> Result<()> {
        let mut loads = self.equilibrium.load_admittances.clone();
        loads.extend(self.added_loads.iter().map(|(_, l)| *l));
        let y = build_admittance(
            self.system.buses,
            &self.system.lines,
            &loads,
            &self.system.generator_shunts(),
        )?;
        self.solver = NetworkSolver::new(y, &self.system.connections())?;
        Ok(())
    }

    pub fn network(&self, x: &[f64]) -> Result<NetworkSolution> {
        let states: Vec<(f64, f64)> = (0..self.layout.n)
            .map(|i| {
                let g = self.layout.generator(x, i);
                (g.delta, g.e_q_prime)
            })
            .collect();
        self.solver.solve(&states)
    }

    pub fn add_load(&mut self, id: &str, bus: BusId, p: f64, q: f64, x: &[f64]) -> Result<()> {
        let v = self.network(x)?.bus_voltages[bus.0];
        let admittance = Complex::new(p, -q) / v.norm_sqr();
        self.added_loads
            .push((id.to_string(), LoadAdmittance { bus, admittance }));
        self.rebuild_network()
    }

    pub fn remove_load(&mut self, id: &str) -> Result<()> {
        let before = self.added_loads.len();
        self.added_loads.retain(|(k, _)| k != id);
        if self.added_loads.len() == before {
            return Err(Error::Validation(format!("no active load '{id}'")));
        }
        self.rebuild_network()
    }

    fn measurements(&self, x: &[f64], sol: &NetworkSolution) -> Vec<Measurement> {
        (0..self.layout.n)
            .map(|i| Measurement {
                omega: self.layout.generator(x, i).omega,
                p: sol.per_generator[i].p,
                q: sol.per_generator[i].q,
            })
            .collect()
    }

    /// Time derivative of the full stacked state.
    pub fn global_derivative(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.layout.n;
        if x.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.len(),
                got: x.len(),
            });
        }
        let sol = self.network(x)?;
        let ctrl = self.layout.controller(x);
        let (t_m, e_f) = control_outputs(&self.params, &ctrl);
        let mut dx = vec![0.0; self.layout.len()];
        for (i, g) in self.system.generators.iter().enumerate() {
            let e = &sol.per_generator[i];
            let d = generator_derivatives(
                &self.layout.generator(x, i),
                t_m[i],
                e_f[i],
                e.i_d,
                e.t_e,
                &g.params,
            );
            dx[i] = d.d_delta;
            dx[n + i] = d.d_omega;
            dx[2 * n + i] = d.d_e_q_prime;
        }
        if self.active {
            let (d_t, d_e) =
                self.bank
                    .derivatives(&self.params, &ctrl, &self.measurements(x, &sol))?;
            dx[3 * n..4 * n].copy_from_slice(&d_t);
            dx[4 * n..5 * n].copy_from_slice(&d_e);
        }
        Ok(dx)
    }

    /// One RK4 step followed by the σ clamp policy.
    pub fn step(&self, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>> {
        let mut next = rk4_step(|t, y| self.global_derivative(t, y), t, x, dt)?;
        let n = self.layout.n;
        let mut ctrl = self.layout.controller(&next);
        ctrl.enforce_bounds(&self.params, t + dt)?;
        next[3 * n..4 * n].copy_from_slice(&ctrl.sigma_t);
        next[4 * n..5 * n].copy_from_slice(&ctrl.sigma_e);
        Ok(next)
    }

    pub fn record(&self, t: f64, x: &[f64]) -> Result<TrajectoryRecord> {
        let sol = self.network(x)?;
        let ctrl = self.layout.controller(x);
        let (t_m, e_f) = control_outputs(&self.params, &ctrl);
        let generators = (0..self.layout.n)
            .map(|i| {
                let g = self.layout.generator(x, i);
                let e = &sol.per_generator[i];
                GeneratorSample {
                    omega: g.omega,
                    delta: g.delta,
                    e_q_prime: g.e_q_prime,
                    p: e.p,
                    q: e.q,
                    t_m: t_m[i],
                    e_f: e_f[i],
                    sigma_t: ctrl.sigma_t[i],
                    sigma_e: ctrl.sigma_e[i],
                }
            })
            .collect();
        Ok(TrajectoryRecord {
            time: t,
            generators,
            bus_voltage: sol.bus_voltages.iter().map(|v| v.norm()).collect(),
        })
    }

    fn apply(&mut self, kind: &EventKind, x: &[f64]) -> Result<()> {
        match kind {
            EventKind::ControllerActivate => {
                self.activate();
                Ok(())
            }
            EventKind::LoadAdd { id, bus, p, q } => self.add_load(id, *bus, *p, *q, x),
            EventKind::LoadRemove { id } => self.remove_load(id),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub records: Vec<TrajectoryRecord>,
    pub controller: ControllerParams,
    pub equilibrium: EquilibriumPoint,
}

/// Integrates the scenario from its equilibrium, applying events on their
/// step boundaries and recording every `record_every` steps plus the final
/// step.
pub fn run_scenario(scenario: &Scenario) -> Result<SimulationOutput> {
    let mut sim = Simulation::new(scenario)?;
    let steps = scenario.total_steps();
    let dt = scenario.dt;
    let event_steps: Vec<usize> = scenario
        .events
        .iter()
        .map(|e| step_index(e.time, dt).expect("validated"))
        .collect();
    let mut next_event = 0;
    let mut x = sim.initial_state();
    let mut records = Vec::with_capacity(steps / scenario.record_every + 2);

    for k in 0..=steps {
        let t = k as f64 * dt;
        while next_event < event_steps.len() && event_steps[next_event] == k {
            sim.apply(&scenario.events[next_event].kind, &x)
                .map_err(|e| e.at(t))?;
            next_event += 1;
        }
        if k % scenario.record_every == 0 || k == steps {
            records.push(sim.record(t, &x).map_err(|e| e.at(t))?);
        }
        if k < steps {
            x = sim.step(t, &x, dt).map_err(|e| e.at(t))?;
        }
    }
    Ok(SimulationOutput {
        records,
        controller: sim.params.clone(),
        equilibrium: sim.equilibrium.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_zero_field() {
        let y = vec![1.0, -2.0, 3.5];
        let out = rk4_step(|_, y| Ok(vec![0.0; y.len()]), 0.0, &y, 0.1).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn rk4_exponential_decay_one_step() {
        let out = rk4_step(|_, y| Ok(vec![-y[0]]), 0.0, &[1.0], 0.1).unwrap();
        assert!((out[0] - 0.9048375).abs() < 1e-7);
        assert!((out[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut y = vec![1.0];
            for k in 0..steps {
                y = rk4_step(|_, y| Ok(vec![-y[0]]), k as f64 * dt, &y, dt).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_divergence() {
        let r = rk4_step(|_, y| Ok(vec![f64::INFINITY * y[0]]), 2.0, &[1.0], 0.1);
        assert!(matches!(r, Err(Error::IntegrationDiverged { .. })));
    }

    #[test]
    fn step_grid() {
        assert_eq!(step_index(300.0, 0.001), Some(300_000));
        assert_eq!(step_index(0.0, 0.001), Some(0));
        assert_eq!(step_index(0.0005, 0.001), None);
    }
}
