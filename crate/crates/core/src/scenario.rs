//! JSON scenario files.
//!
//! Buses and generators are numbered from 1 in files and reports and from 0
//! in memory. Machine constants come from `machine_defaults` unless a
//! generator overrides individual fields in its own `machine` block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Dispatch, GeneratorUnit, PowerLoad, PowerSystem};
use crate::error::{Error, Result};
use crate::graph::CommGraph;
use crate::machine::{GeneratorParams, DEFAULT_OMEGA_B};
use crate::network::{BusId, Line};
use crate::sim::{ControllerSettings, Event, EventKind, Scenario};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub buses: usize,
    #[serde(default = "default_omega_b")]
    pub omega_b: f64,
    #[serde(default = "default_omega_s")]
    pub omega_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_defaults: Option<MachineSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    pub controller: ControllerSpec,
    pub adjacency: Vec<Vec<u8>>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub simulation: SimulationSpec,
}

fn default_omega_b() -> f64 {
    DEFAULT_OMEGA_B
}

fn default_omega_s() -> f64 {
    1.0
}

fn default_record_every() -> usize {
    100
}

/// Machine constants; any subset may be given.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(rename = "T_d0_prime", skip_serializing_if = "Option::is_none")]
    pub t_d0_prime: Option<f64>,
    #[serde(rename = "X_d", skip_serializing_if = "Option::is_none")]
    pub x_d: Option<f64>,
    #[serde(rename = "X_d_prime", skip_serializing_if = "Option::is_none")]
    pub x_d_prime: Option<f64>,
    #[serde(rename = "X_q_prime", skip_serializing_if = "Option::is_none")]
    pub x_q_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_a: Option<f64>,
}

impl MachineSpec {
    fn merged(&self, defaults: &MachineSpec) -> MachineSpec {
        MachineSpec {
            h: self.h.or(defaults.h),
            d: self.d.or(defaults.d),
            t_d0_prime: self.t_d0_prime.or(defaults.t_d0_prime),
            x_d: self.x_d.or(defaults.x_d),
            x_d_prime: self.x_d_prime.or(defaults.x_d_prime),
            x_q_prime: self.x_q_prime.or(defaults.x_q_prime),
            r_a: self.r_a.or(defaults.r_a),
        }
    }

    fn resolve(&self, generator: usize, omega_b: f64, omega_s: f64) -> Result<GeneratorParams> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                Error::Validation(format!(
                    "generators[{generator}].machine: missing field `{name}` (no default given)"
                ))
            })
        };
        let params = GeneratorParams {
            h: need(self.h, "H")?,
            d: need(self.d, "D")?,
            t_d0_prime: need(self.t_d0_prime, "T_d0_prime")?,
            x_d: need(self.x_d, "X_d")?,
            x_d_prime: need(self.x_d_prime, "X_d_prime")?,
            x_q_prime: need(self.x_q_prime, "X_q_prime")?,
            r_a: need(self.r_a, "r_a")?,
            omega_b,
            omega_s,
        };
        params
            .validate()
            .map_err(|e| Error::Validation(format!("generators[{generator}].machine: {e}")))?;
        Ok(params)
    }

    fn from_params(p: &GeneratorParams) -> MachineSpec {
        MachineSpec {
            h: Some(p.h),
            d: Some(p.d),
            t_d0_prime: Some(p.t_d0_prime),
            x_d: Some(p.x_d),
            x_d_prime: Some(p.x_d_prime),
            x_q_prime: Some(p.x_q_prime),
            r_a: Some(p.r_a),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub bus: usize,
    /// Scheduled real power; omitted for the slack unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Terminal voltage setpoint.
    pub v: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub slack: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: usize,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(rename = "k_T")]
    pub k_t: f64,
    #[serde(rename = "k_P")]
    pub k_p: f64,
    #[serde(rename = "k_E")]
    pub k_e: f64,
    pub k: f64,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    #[serde(rename = "dT_max")]
    pub dt_max: Vec<f64>,
    #[serde(rename = "dT_min")]
    pub dt_min: Vec<f64>,
    #[serde(rename = "dE_max")]
    pub de_max: Vec<f64>,
    #[serde(rename = "dE_min")]
    pub de_min: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    ControllerActivate {
        time: f64,
    },
    LoadAdd {
        time: f64,
        id: String,
        bus: usize,
        p: f64,
        #[serde(default)]
        q: f64,
    },
    LoadRemove {
        time: f64,
        id: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_dt() -> f64 {
    1e-3
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    fn bus(&self, label: usize, what: &str) -> Result<BusId> {
        if label == 0 || label > self.buses {
            return Err(Error::Validation(format!(
                "{what}: bus {label} is outside 1..={}",
                self.buses
            )));
        }
        Ok(BusId(label - 1))
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        if self.buses == 0 {
            return Err(Error::Validation("buses must be at least 1".into()));
        }
        let defaults = self.machine_defaults.clone().unwrap_or_default();
        let mut generators = Vec::new();
        let mut slack_count = 0;
        for (k, g) in self.generators.iter().enumerate() {
            let label = k + 1;
            let bus = self.bus(g.bus, &format!("generators[{label}]"))?;
            let params = g
                .machine
                .clone()
                .unwrap_or_default()
                .merged(&defaults)
                .resolve(label, self.omega_b, self.omega_s)?;
            let dispatch = match (g.slack, g.p) {
                (true, None) => {
                    slack_count += 1;
                    Dispatch::Slack { v: g.v }
                }
                (true, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "generators[{label}]: slack unit must not schedule `p`"
                    )))
                }
                (false, Some(p)) => Dispatch::Pv { p, v: g.v },
                (false, None) => {
                    return Err(Error::Validation(format!(
                        "generators[{label}]: missing field `p` for a non-slack unit"
                    )))
                }
            };
            if !(g.v > 0.0) {
                return Err(Error::Validation(format!(
                    "generators[{label}]: v must be positive"
                )));
            }
            generators.push(GeneratorUnit {
                bus,
                params,
                dispatch,
            });
        }
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "exactly one generator must be the slack unit, found {slack_count}"
            )));
        }
        let lines = self
            .lines
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let what = format!("lines[{}]", k + 1);
                Ok(Line {
                    from: self.bus(l.from, &what)?,
                    to: self.bus(l.to, &what)?,
                    resistance: l.r,
                    reactance: l.x,
                    shunt_susceptance: l.b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let loads = self
            .loads
            .iter()
            .enumerate()
            .map(|(k, l)| {
                Ok(PowerLoad {
                    bus: self.bus(l.bus, &format!("loads[{}]", k + 1))?,
                    p: l.p,
                    q: l.q,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let graph = CommGraph::from_adjacency(&self.adjacency)?;
        let c = &self.controller;
        let controller = ControllerSettings {
            k_t: c.k_t,
            k_p: c.k_p,
            k_e: c.k_e,
            k: c.k,
            n_gains: c.n.clone(),
            m_gains: c.m.clone(),
            dt_max: c.dt_max.clone(),
            dt_min: c.dt_min.clone(),
            de_max: c.de_max.clone(),
            de_min: c.de_min.clone(),
        };
        let events = self
            .events
            .iter()
            .map(|e| {
                Ok(match e {
                    EventSpec::ControllerActivate { time } => Event {
                        time: *time,
                        kind: EventKind::ControllerActivate,
                    },
                    EventSpec::LoadAdd {
                        time,
                        id,
                        bus,
                        p,
                        q,
                    } => Event {
                        time: *time,
                        kind: EventKind::LoadAdd {
                            id: id.clone(),
                            bus: self.bus(*bus, &format!("event '{id}'"))?,
                            p: *p,
                            q: *q,
                        },
                    },
                    EventSpec::LoadRemove { time, id } => Event {
                        time: *time,
                        kind: EventKind::LoadRemove { id: id.clone() },
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scenario = Scenario {
            name: self.name.clone(),
            system: PowerSystem {
                buses: self.buses,
                lines,
                loads,
                generators,
            },
            controller,
            graph,
            events,
            t_end: self.simulation.t_end,
            dt: self.simulation.dt,
            record_every: self.simulation.record_every,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// The same scenario with every default written out explicitly.
    pub fn resolved(&self) -> Result<ScenarioFile> {
        let scenario = self.to_scenario()?;
        let mut out = self.clone();
        out.machine_defaults = None;
        for (spec, unit) in out.generators.iter_mut().zip(&scenario.system.generators) {
            spec.machine = Some(MachineSpec::from_params(&unit.params));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    ScenarioFile::parse(&text)?.to_scenario()
}
