//! Transmission network: nodal admittance assembly, machine stator algebra
//! and the algebraic network solve that couples machine states to bus
//! voltages.
//!
//! Machine-frame phasors are written `q + j d`. Rotating by the rotor angle
//! `delta` maps them into the common network frame `Q + j D`. Every machine
//! is represented as a current injection `i_g = (i_Q + j i_D) + v / r_a`
//! behind a shunt `1 / r_a` that lives in the admittance matrix, so the
//! nodal equations read `I = Y V` with zero injection at load buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::machine::GeneratorParams;

pub type Complex = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub resistance: f64,
    pub reactance: f64,
    /// Total line charging; half is placed at each end.
    pub shunt_susceptance: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, resistance: f64, reactance: f64) -> Self {
        Line {
            from: BusId(from),
            to: BusId(to),
            resistance,
            reactance,
            shunt_susceptance: 0.0,
        }
    }

    pub fn series_admittance(&self) -> Complex {
        Complex::new(1.0, 0.0) / Complex::new(self.resistance, self.reactance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadAdmittance {
    pub bus: BusId,
    pub admittance: Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    entries: DMatrix<Complex>,
}

impl AdmittanceMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex {
        self.entries[(i, j)]
    }

    pub fn entries(&self) -> &DMatrix<Complex> {
        &self.entries
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries == self.entries.transpose()
    }

    pub fn mul_vec(&self, v: &[Complex]) -> Vec<Complex> {
        let n = self.size();
        (0..n)
            .map(|i| (0..n).map(|j| self.entries[(i, j)] * v[j]).sum())
            .collect()
    }
}

/// Standard nodal assembly of lines, load admittances and generator shunts.
pub fn build_admittance(
    buses: usize,
    lines: &[Line],
    loads: &[LoadAdmittance],
    generator_shunts: &[(BusId, Complex)],
) -> Result<AdmittanceMatrix> {
    if lines.is_empty() {
        return Err(Error::NoLines);
    }
    let check = |b: BusId| {
        if b.0 >= buses {
            Err(Error::BusOutOfRange { index: b.0, buses })
        } else {
            Ok(())
        }
    };
    let mut y = DMatrix::<Complex>::zeros(buses, buses);
    for line in lines {
        check(line.from)?;
        check(line.to)?;
        if line.from == line.to {
            return Err(Error::InvalidLine {
                from: line.from.0,
                to: line.to.0,
                reason: "both ends on the same bus",
            });
        }
        if line.resistance == 0.0 && line.reactance == 0.0 {
            return Err(Error::ZeroImpedance {
                from: line.from.0,
                to: line.to.0,
            });
        }
        let (i, j) = (line.from.0, line.to.0);
        let ys = line.series_admittance();
        let half_b = Complex::new(0.0, 0.5 * line.shunt_susceptance);
        y[(i, i)] += ys + half_b;
        y[(j, j)] += ys + half_b;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for load in loads {
        check(load.bus)?;
        y[(load.bus.0, load.bus.0)] += load.admittance;
    }
    for &(bus, shunt) in generator_shunts {
        check(bus)?;
        y[(bus.0, bus.0)] += shunt;
    }
    Ok(AdmittanceMatrix { entries: y })
}

/// Solves the stator algebra for `(i_d, i_q)`:
/// `r_a i_q = X'_d i_d + E'_q - v_q` and `r_a i_d = -X'_q i_q - v_d`.
pub fn stator_currents(
    e_q_prime: f64,
    v_d: f64,
    v_q: f64,
    params: &GeneratorParams,
) -> Result<(f64, f64)> {
    let ra = params.r_a;
    let det = ra * ra + params.x_d_prime * params.x_q_prime;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateMachine { det });
    }
    // [ra  -xd'] [iq]   [E - vq]
    // [xq'  ra ] [id] = [ -vd  ]
    let b0 = e_q_prime - v_q;
    let b1 = -v_d;
    let i_q = (ra * b0 + params.x_d_prime * b1) / det;
    let i_d = (ra * b1 - params.x_q_prime * b0) / det;
    Ok((i_d, i_q))
}

/// `(q + j d) e^{j delta}`, returned as `(Q, D)`.
pub fn rotate_to_common(q: f64, d: f64, delta: f64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    (q * c - d * s, q * s + d * c)
}

/// Inverse of [`rotate_to_common`], returned as `(q, d)`.
pub fn rotate_to_machine(big_q: f64, big_d: f64, delta: f64) -> (f64, f64) {
    rotate_to_common(big_q, big_d, -delta)
}

pub fn injection_current(
    i_big_q: f64,
    i_big_d: f64,
    v_big_q: f64,
    v_big_d: f64,
    r_a: f64,
) -> Complex {
    Complex::new(i_big_q, i_big_d) + Complex::new(v_big_q, v_big_d) / r_a
}

pub fn electrical_torque(psi_d: f64, psi_q: f64, i_d: f64, i_q: f64) -> f64 {
    psi_d * i_q - psi_q * i_d
}

/// Per-machine electrical quantities at a solved operating point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElectricalInterface {
    pub i_d: f64,
    pub i_q: f64,
    pub psi_d: f64,
    pub psi_q: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub i_big_d: f64,
    pub i_big_q: f64,
    pub v_big_d: f64,
    pub v_big_q: f64,
    pub i_g: Complex,
    pub t_e: f64,
    pub p: f64,
    pub q: f64,
}

impl ElectricalInterface {
    /// Evaluates the machine algebra for a given terminal voltage in the
    /// common frame.
    pub fn at_terminal(
        delta: f64,
        e_q_prime: f64,
        terminal: Complex,
        params: &GeneratorParams,
    ) -> Result<Self> {
        let (v_q, v_d) = rotate_to_machine(terminal.re, terminal.im, delta);
        let (i_d, i_q) = stator_currents(e_q_prime, v_d, v_q, params)?;
        let psi_d = params.x_d_prime * i_d + e_q_prime;
        let psi_q = params.x_q_prime * i_q;
        let (i_big_q, i_big_d) = rotate_to_common(i_q, i_d, delta);
        Ok(ElectricalInterface {
            i_d,
            i_q,
            psi_d,
            psi_q,
            v_d,
            v_q,
            i_big_d,
            i_big_q,
            v_big_d: terminal.im,
            v_big_q: terminal.re,
            i_g: injection_current(i_big_q, i_big_d, terminal.re, terminal.im, params.r_a),
            t_e: electrical_torque(psi_d, psi_q, i_d, i_q),
            p: v_d * i_d + v_q * i_q,
            q: v_d * i_q - v_q * i_d,
        })
    }

    /// Stator current delivered to the network, `i_Q + j i_D`.
    pub fn stator_current(&self) -> Complex {
        Complex::new(self.i_big_q, self.i_big_d)
    }
}

/// A machine attached to a network bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConnection {
    pub bus: BusId,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSolution {
    pub bus_voltages: Vec<Complex>,
    pub per_generator: Vec<ElectricalInterface>,
}

impl NetworkSolution {
    /// Nodal injection vector `I` (zero at load buses).
    pub fn injections(&self, buses: usize, generators: &[GeneratorConnection]) -> Vec<Complex> {
        let mut inj = vec![Complex::new(0.0, 0.0); buses];
        for (g, e) in generators.iter().zip(&self.per_generator) {
            inj[g.bus.0] += e.i_g;
        }
        inj
    }

    /// `max_k |(Y V - I)_k|`.
    pub fn residual(&self, y: &AdmittanceMatrix, generators: &[GeneratorConnection]) -> f64 {
        let yv = y.mul_vec(&self.bus_voltages);
        let inj = self.injections(y.size(), generators);
        yv.iter()
            .zip(&inj)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Real 2x2 block for the map `v (common) -> i (common)` contributed by the
/// stator algebra, and the constant term driven by `E'_q`.
///
/// `i_common = R(d) S^-1 ([E'_q, 0] - R(-d) v_common)` where
/// `S = [[r_a, -X'_d], [X'_q, r_a]]` acts on `[q, d]` vectors.
fn machine_affine(
    delta: f64,
    e_q_prime: f64,
    p: &GeneratorParams,
) -> Result<([[f64; 2]; 2], [f64; 2])> {
    let ra = p.r_a;
    let det = ra * ra + p.x_d_prime * p.x_q_prime;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateMachine { det });
    }
    let s_inv = [
        [ra / det, p.x_d_prime / det],
        [-p.x_q_prime / det, ra / det],
    ];
    let (s, c) = delta.sin_cos();
    let rot = [[c, -s], [s, c]];
    let rot_t = [[c, s], [-s, c]];
    let m = mat2_mul(&mat2_mul(&rot, &s_inv), &rot_t);
    let rs = mat2_mul(&rot, &s_inv);
    let k = [rs[0][0] * e_q_prime, rs[1][0] * e_q_prime];
    Ok((m, k))
}

fn mat2_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Builds and solves the real `2m x 2m` system for the voltages at the
/// buses of `y` (which may be a Kron-reduced matrix over generator buses).
fn solve_folded(
    y: &DMatrix<Complex>,
    gen_rows: &[usize],
    generators: &[GeneratorConnection],
    states: &[(f64, f64)],
) -> Result<Vec<Complex>> {
    let m = y.nrows();
    let mut a = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = y[(i, j)];
            a[(2 * i, 2 * j)] = z.re;
            a[(2 * i, 2 * j + 1)] = -z.im;
            a[(2 * i + 1, 2 * j)] = z.im;
            a[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    let mut b = DVector::<f64>::zeros(2 * m);
    for ((&row, g), &(delta, e_q)) in gen_rows.iter().zip(generators).zip(states) {
        let (mblk, k) = machine_affine(delta, e_q, &g.params)?;
        let inv_ra = 1.0 / g.params.r_a;
        for r in 0..2 {
            for c in 0..2 {
                a[(2 * row + r, 2 * row + c)] += mblk[r][c];
            }
            a[(2 * row + r, 2 * row + r)] -= inv_ra;
            b[2 * row + r] += k[r];
        }
    }
    let lu = a.lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..2 * m).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < 1e14) {
        return Err(Error::NetworkSingular { condition });
    }
    let x = lu.solve(&b).ok_or(Error::NetworkSingular { condition })?;
    Ok((0..m)
        .map(|i| Complex::new(x[2 * i], x[2 * i + 1]))
        .collect())
}

fn check_generators(buses: usize, generators: &[GeneratorConnection], states: usize) -> Result<()> {
    if generators.len() != states {
        return Err(Error::DimensionMismatch {
            expected: generators.len(),
            got: states,
        });
    }
    let mut seen = vec![false; buses];
    for g in generators {
        if g.bus.0 >= buses {
            return Err(Error::BusOutOfRange {
                index: g.bus.0,
                buses,
            });
        }
        if std::mem::replace(&mut seen[g.bus.0], true) {
            return Err(Error::Validation(format!(
                "more than one generator on bus {}",
                g.bus.0
            )));
        }
    }
    Ok(())
}

fn interfaces(
    voltages: &[Complex],
    generators: &[GeneratorConnection],
    states: &[(f64, f64)],
) -> Result<Vec<ElectricalInterface>> {
    generators
        .iter()
        .zip(states)
        .map(|(g, &(delta, e_q))| {
            ElectricalInterface::at_terminal(delta, e_q, voltages[g.bus.0], &g.params)
        })
        .collect()
}

/// Solves `I = Y V` for the bus voltages given each machine's `(delta, E'_q)`.
///
/// `y` must already contain the `1 / r_a` generator shunts. The stator
/// algebra is affine in the terminal voltage, so it is folded into the nodal
/// equations and a single real linear system of size `2N` is solved.
pub fn solve_network(
    y: &AdmittanceMatrix,
    generators: &[GeneratorConnection],
    states: &[(f64, f64)],
) -> Result<NetworkSolution> {
    check_generators(y.size(), generators, states.len())?;
    let rows: Vec<usize> = generators.iter().map(|g| g.bus.0).collect();
    let bus_voltages = solve_folded(&y.entries, &rows, generators, states)?;
    let per_generator = interfaces(&bus_voltages, generators, states)?;
    Ok(NetworkSolution {
        bus_voltages,
        per_generator,
    })
}

/// Network solver with the load buses eliminated (Kron reduction) once up
/// front, for repeated solves against a fixed admittance matrix.
#[derive(Debug, Clone)]
pub struct NetworkSolver {
    y: AdmittanceMatrix,
    generators: Vec<GeneratorConnection>,
    reduced: DMatrix<Complex>,
    load_buses: Vec<usize>,
    /// `V_load = recover * V_gen`.
    recover: DMatrix<Complex>,
}

impl NetworkSolver {
    pub fn new(y: AdmittanceMatrix, generators: &[GeneratorConnection]) -> Result<Self> {
        let buses = y.size();
        check_generators(buses, generators, generators.len())?;
        let gen_buses: Vec<usize> = generators.iter().map(|g| g.bus.0).collect();
        let load_buses: Vec<usize> = (0..buses).filter(|b| !gen_buses.contains(b)).collect();
        let n = gen_buses.len();
        let l = load_buses.len();
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| y.entries[(rows[i], cols[j])])
        };
        let y_gg = pick(&gen_buses, &gen_buses);
        let (reduced, recover) = if l == 0 {
            (y_gg, DMatrix::zeros(0, n))
        } else {
            let y_gl = pick(&gen_buses, &load_buses);
            let y_lg = pick(&load_buses, &gen_buses);
            let y_ll = pick(&load_buses, &load_buses);
            let lu = y_ll.lu();
            let x = lu.solve(&y_lg).ok_or(Error::NetworkSingular {
                condition: f64::INFINITY,
            })?;
            (&y_gg - &y_gl * &x, -x)
        };
        Ok(NetworkSolver {
            y,
            generators: generators.to_vec(),
            reduced,
            load_buses,
            recover,
        })
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn generators(&self) -> &[GeneratorConnection] {
        &self.generators
    }

    pub fn solve(&self, states: &[(f64, f64)]) -> Result<NetworkSolution> {
        let n = self.generators.len();
        if states.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: states.len(),
            });
        }
        let rows: Vec<usize> = (0..n).collect();
        let v_gen = solve_folded(&self.reduced, &rows, &self.generators, states)?;
        let mut bus_voltages = vec![Complex::new(0.0, 0.0); self.y.size()];
        for (g, v) in self.generators.iter().zip(&v_gen) {
            bus_voltages[g.bus.0] = *v;
        }
        for (r, &bus) in self.load_buses.iter().enumerate() {
            bus_voltages[bus] = (0..n).map(|c| self.recover[(r, c)] * v_gen[c]).sum();
        }
        let per_generator = interfaces(&bus_voltages, &self.generators, states)?;
        Ok(NetworkSolution {
            bus_voltages,
            per_generator,
        })
    }
}
