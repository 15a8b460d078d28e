//! Distributed bounded-integral controller.
//!
//! Each generator `i` owns two integral states. The torque state follows
//!
//! ```text
//! dσ_T,i/dt = k_T g_T,i (ω_s - ω_i - k_P Σ_j (n_i P_i - n_j P_j) g_T,j) - k σ_T,i
//! ```
//!
//! and the field state
//!
//! ```text
//! dσ_E,i/dt = -k_E g_E,i Σ_j (m_i Q_i - m_j Q_j) g_E,j - k σ_E,i
//! ```
//!
//! with sums over communication neighbours `j`. The weight
//! `g(σ) = (1 - σ/Δmax)(1 + σ/Δmin)` vanishes on both limits, so at a limit
//! only the leakage `-k σ` remains and it points back into the interval.
//! A unit sitting on a limit has `g = 0`, which removes it from every
//! neighbour's consensus sum.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::CommGraph;

/// Numerical overshoot past a limit that is silently clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerParams {
    pub k_t: f64,
    pub k_p: f64,
    pub k_e: f64,
    /// Leakage gain, chosen arbitrarily small.
    pub k: f64,
    pub n_gains: Vec<f64>,
    pub m_gains: Vec<f64>,
    pub t_m_nominal: Vec<f64>,
    pub e_f_nominal: Vec<f64>,
    pub dt_max: Vec<f64>,
    pub dt_min: Vec<f64>,
    pub de_max: Vec<f64>,
    pub de_min: Vec<f64>,
    pub omega_s: f64,
}

impl ControllerParams {
    pub fn len(&self) -> usize {
        self.n_gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_gains.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        for (name, v) in [
            ("k_T", self.k_t),
            ("k_P", self.k_p),
            ("k_E", self.k_e),
            ("k", self.k),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        let n = self.len();
        let vectors: [(&str, &[f64], bool); 8] = [
            ("n", &self.n_gains, true),
            ("m", &self.m_gains, true),
            ("T_m_nominal", &self.t_m_nominal, false),
            ("E_f_nominal", &self.e_f_nominal, false),
            ("dT_max", &self.dt_max, true),
            ("dT_min", &self.dt_min, true),
            ("dE_max", &self.de_max, true),
            ("dE_min", &self.de_min, true),
        ];
        for (name, v, positive) in vectors {
            if v.len() != n {
                return fail(format!("{name} has {} entries, expected {n}", v.len()));
            }
            for (i, &x) in v.iter().enumerate() {
                if !x.is_finite() {
                    return fail(format!("{name}[{}] is not finite", i + 1));
                }
                if positive && x <= 0.0 {
                    return fail(format!("{name}[{}] = {x} must be strictly positive", i + 1));
                }
            }
        }
        if !(self.omega_s > 0.0) {
            return fail("omega_s must be positive".into());
        }
        Ok(())
    }

    pub fn t_m_limits(&self, i: usize) -> (f64, f64) {
        (
            self.t_m_nominal[i] - self.dt_min[i],
            self.t_m_nominal[i] + self.dt_max[i],
        )
    }

    pub fn e_f_limits(&self, i: usize) -> (f64, f64) {
        (
            self.e_f_nominal[i] - self.de_min[i],
            self.e_f_nominal[i] + self.de_max[i],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub sigma_t: Vec<f64>,
    pub sigma_e: Vec<f64>,
}

impl ControllerState {
    pub fn zeros(n: usize) -> Self {
        ControllerState {
            sigma_t: vec![0.0; n],
            sigma_e: vec![0.0; n],
        }
    }

    /// Clamps overshoot up to [`CLAMP_TOLERANCE`]; anything larger is an
    /// error. Returns the number of coordinates that were clamped.
    pub fn enforce_bounds(&mut self, params: &ControllerParams, time: f64) -> Result<usize> {
        let mut clamped = 0;
        for (state, values, hi, lo) in [
            ("sigma_T", &mut self.sigma_t, &params.dt_max, &params.dt_min),
            ("sigma_E", &mut self.sigma_e, &params.de_max, &params.de_min),
        ] {
            for (i, s) in values.iter_mut().enumerate() {
                let excess = (*s - hi[i]).max(-lo[i] - *s);
                if excess > CLAMP_TOLERANCE || !s.is_finite() {
                    return Err(Error::BoundViolation {
                        generator: i,
                        state,
                        excess,
                        time,
                    });
                }
                if excess > 0.0 {
                    *s = s.clamp(-lo[i], hi[i]);
                    clamped += 1;
                }
            }
        }
        Ok(clamped)
    }
}

/// `(1 - σ/Δmax)(1 + σ/Δmin)`.
pub fn g_value(sigma: f64, d_max: f64, d_min: f64) -> f64 {
    (1.0 - sigma / d_max) * (1.0 + sigma / d_min)
}

/// Interior maximum of [`g_value`] over `[-d_min, d_max]`.
pub fn g_peak(d_max: f64, d_min: f64) -> f64 {
    let s = 0.5 * (d_max - d_min);
    g_value(s, d_max, d_min)
}

/// `[g][A g] - [g] A [g]`.
pub fn weighted_laplacian(adjacency: &DMatrix<f64>, g: &[f64]) -> Result<DMatrix<f64>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: adjacency.ncols(),
        });
    }
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.len(),
        });
    }
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a != 0.0 {
                diag += a * g[j];
                l[(i, j)] = -g[i] * a * g[j];
            }
        }
        l[(i, i)] = g[i] * diag;
    }
    Ok(l)
}

/// What one controller publishes to its neighbours each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMessage {
    pub sender: usize,
    /// `n_j P_j`
    pub weighted_p: f64,
    /// `m_j Q_j`
    pub weighted_q: f64,
    pub g_t: f64,
    pub g_e: f64,
}

/// Locally held data of one controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalData {
    pub weighted_p: f64,
    pub weighted_q: f64,
    pub g_t: f64,
    pub g_e: f64,
}

/// Delivers each controller's data to its graph neighbours only.
pub fn exchange_messages(
    graph: &CommGraph,
    local: &[LocalData],
) -> Result<Vec<Vec<NeighborMessage>>> {
    if local.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            got: local.len(),
        });
    }
    Ok((0..graph.len())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .map(|&j| NeighborMessage {
                    sender: j,
                    weighted_p: local[j].weighted_p,
                    weighted_q: local[j].weighted_q,
                    g_t: local[j].g_t,
                    g_e: local[j].g_e,
                })
                .collect()
        })
        .collect())
}

/// One generator's controller, aware only of its own index and neighbour set.
#[derive(Debug, Clone)]
pub struct LocalController {
    index: usize,
    neighbors: Vec<usize>,
}

impl LocalController {
    pub fn new(graph: &CommGraph, index: usize) -> Self {
        LocalController {
            index,
            neighbors: graph.neighbors(index).to_vec(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn check_inbox(&self, msgs: &[NeighborMessage]) -> Result<()> {
        for (k, m) in msgs.iter().enumerate() {
            let duplicate = msgs[..k].iter().any(|o| o.sender == m.sender);
            if duplicate || !self.neighbors.contains(&m.sender) {
                return Err(Error::ProtocolViolation {
                    receiver: self.index,
                    sender: m.sender,
                });
            }
        }
        Ok(())
    }

    pub fn sigma_t_derivative(
        &self,
        sigma_t: f64,
        omega: f64,
        own_weighted_p: f64,
        own_g_t: f64,
        msgs: &[NeighborMessage],
        params: &ControllerParams,
    ) -> Result<f64> {
        self.check_inbox(msgs)?;
        let consensus: f64 = msgs
            .iter()
            .map(|m| (own_weighted_p - m.weighted_p) * m.g_t)
            .sum();
        Ok(
            params.k_t * own_g_t * (params.omega_s - omega - params.k_p * consensus)
                - params.k * sigma_t,
        )
    }

    pub fn sigma_e_derivative(
        &self,
        sigma_e: f64,
        own_weighted_q: f64,
        own_g_e: f64,
        msgs: &[NeighborMessage],
        params: &ControllerParams,
    ) -> Result<f64> {
        self.check_inbox(msgs)?;
        let consensus: f64 = msgs
            .iter()
            .map(|m| (own_weighted_q - m.weighted_q) * m.g_e)
            .sum();
        Ok(-params.k_e * own_g_e * consensus - params.k * sigma_e)
    }
}

/// Local measurements available to controller `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub omega: f64,
    pub p: f64,
    pub q: f64,
}

/// All controllers of the network, evaluated through the message exchange.
#[derive(Debug, Clone)]
pub struct ControllerBank {
    graph: CommGraph,
    locals: Vec<LocalController>,
}

impl ControllerBank {
    pub fn new(graph: CommGraph) -> Self {
        let locals = (0..graph.len())
            .map(|i| LocalController::new(&graph, i))
            .collect();
        ControllerBank { graph, locals }
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn local_data(
        params: &ControllerParams,
        state: &ControllerState,
        meas: &[Measurement],
    ) -> Vec<LocalData> {
        meas.iter()
            .enumerate()
            .map(|(i, m)| LocalData {
                weighted_p: params.n_gains[i] * m.p,
                weighted_q: params.m_gains[i] * m.q,
                g_t: g_value(state.sigma_t[i], params.dt_max[i], params.dt_min[i]),
                g_e: g_value(state.sigma_e[i], params.de_max[i], params.de_min[i]),
            })
            .collect()
    }

    /// `(dσ_T/dt, dσ_E/dt)` for every generator.
    pub fn derivatives(
        &self,
        params: &ControllerParams,
        state: &ControllerState,
        meas: &[Measurement],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.locals.len();
        for len in [
            meas.len(),
            state.sigma_t.len(),
            state.sigma_e.len(),
            params.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        let local = Self::local_data(params, state, meas);
        let inboxes = exchange_messages(&self.graph, &local)?;
        let mut d_t = Vec::with_capacity(n);
        let mut d_e = Vec::with_capacity(n);
        for (c, inbox) in self.locals.iter().zip(&inboxes) {
            let i = c.index();
            let own = &local[i];
            d_t.push(c.sigma_t_derivative(
                state.sigma_t[i],
                meas[i].omega,
                own.weighted_p,
                own.g_t,
                inbox,
                params,
            )?);
            d_e.push(c.sigma_e_derivative(
                state.sigma_e[i],
                own.weighted_q,
                own.g_e,
                inbox,
                params,
            )?);
        }
        Ok((d_t, d_e))
    }
}

/// Stacked form `k_T([g_T](ω_s 1 - ω) - k_P L_T n P) - k σ_T` and
/// `-k_E L_E m Q - k σ_E`, evaluated with the weighted Laplacians.
pub fn stacked_derivatives(
    graph: &CommGraph,
    params: &ControllerParams,
    state: &ControllerState,
    meas: &[Measurement],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = graph.len();
    let g_t: Vec<f64> = (0..n)
        .map(|i| g_value(state.sigma_t[i], params.dt_max[i], params.dt_min[i]))
        .collect();
    let g_e: Vec<f64> = (0..n)
        .map(|i| g_value(state.sigma_e[i], params.de_max[i], params.de_min[i]))
        .collect();
    let l_t = weighted_laplacian(graph.adjacency(), &g_t)?;
    let l_e = weighted_laplacian(graph.adjacency(), &g_e)?;
    let np = nalgebra::DVector::from_fn(n, |i, _| params.n_gains[i] * meas[i].p);
    let mq = nalgebra::DVector::from_fn(n, |i, _| params.m_gains[i] * meas[i].q);
    let lnp = &l_t * np;
    let lmq = &l_e * mq;
    let d_t = (0..n)
        .map(|i| {
            params.k_t * (g_t[i] * (params.omega_s - meas[i].omega) - params.k_p * lnp[i])
                - params.k * state.sigma_t[i]
        })
        .collect();
    let d_e = (0..n)
        .map(|i| -params.k_e * lmq[i] - params.k * state.sigma_e[i])
        .collect();
    Ok((d_t, d_e))
}

/// `T_m = T_m^n + σ_T`, `E_f = E_f^n + σ_E`.
pub fn control_outputs(params: &ControllerParams, state: &ControllerState) -> (Vec<f64>, Vec<f64>) {
    let t_m = params
        .t_m_nominal
        .iter()
        .zip(&state.sigma_t)
        .map(|(n, s)| n + s)
        .collect();
    let e_f = params
        .e_f_nominal
        .iter()
        .zip(&state.sigma_e)
        .map(|(n, s)| n + s)
        .collect();
    (t_m, e_f)
}
