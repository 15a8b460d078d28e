//! Trajectory CSV export/import and the steady-state metrics report.

use std::path::Path;

use serde::Serialize;

use crate::controller::{g_value, ControllerParams, CLAMP_TOLERANCE};
use crate::error::{Error, Result};
use crate::sim::{GeneratorSample, TrajectoryRecord};

/// Units whose window-averaged `g` falls to this level or below are treated
/// as saturated and left out of the sharing errors.
pub const ACTIVE_G_THRESHOLD: f64 = 0.01;

const GEN_COLUMNS: [&str; 9] = [
    "omega", "delta", "Eq_prime", "P", "Q", "Tm", "Ef", "sigma_T", "sigma_E",
];

pub fn csv_header(generators: usize, buses: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for g in 1..=generators {
        h.extend(GEN_COLUMNS.iter().map(|c| format!("{c}_{g}")));
    }
    h.extend((1..=buses).map(|b| format!("V_{b}")));
    h
}

pub fn write_csv<W: std::io::Write>(records: &[TrajectoryRecord], out: W) -> Result<()> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(first.generators.len(), first.bus_voltage.len()))?;
    let mut row: Vec<String> = Vec::new();
    for r in records {
        row.clear();
        row.push(r.time.to_string());
        for g in &r.generators {
            for v in [
                g.omega,
                g.delta,
                g.e_q_prime,
                g.p,
                g.q,
                g.t_m,
                g.e_f,
                g.sigma_t,
                g.sigma_e,
            ] {
                row.push(v.to_string());
            }
        }
        row.extend(r.bus_voltage.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(records: &[TrajectoryRecord], path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let file = std::fs::File::create(path)?;
    write_csv(records, std::io::BufWriter::new(file))
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let generators = header.iter().filter(|h| h.starts_with("omega_")).count();
    let buses = header.iter().filter(|h| h.starts_with("V_")).count();
    let expected = csv_header(generators, buses);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::MalformedCsv("unexpected header layout".into()));
    }
    let mut records = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let vals = row
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::MalformedCsv(format!("row {}: '{s}' is not a number", line + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let gens = (0..generators)
            .map(|g| {
                let v = &vals[1 + 9 * g..1 + 9 * (g + 1)];
                GeneratorSample {
                    omega: v[0],
                    delta: v[1],
                    e_q_prime: v[2],
                    p: v[3],
                    q: v[4],
                    t_m: v[5],
                    e_f: v[6],
                    sigma_t: v[7],
                    sigma_e: v[8],
                }
            })
            .collect();
        records.push(TrajectoryRecord {
            time: vals[0],
            generators: gens,
            bus_voltage: vals[1 + 9 * generators..].to_vec(),
        });
    }
    Ok(records)
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    read_csv(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Input {
    Tm,
    Ef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Limit {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationInterval {
    /// 1-based generator number.
    pub generator: usize,
    pub input: Input,
    pub limit: Limit,
    pub t_start: f64,
    pub t_end: f64,
    /// Largest distance between the input and its limit inside the interval.
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub window: (f64, f64),
    /// Window mean of `ω_i - ω_s`.
    pub final_frequency_deviation: Vec<f64>,
    /// Window maximum of `|ω_i - ω_s|`.
    pub max_frequency_deviation: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub active_p: Vec<bool>,
    pub active_q: Vec<bool>,
    pub sharing_error_p: f64,
    pub sharing_error_q: f64,
    pub bound_violations: usize,
    pub saturated_units: Vec<SaturationInterval>,
}

/// Spread of `w_i x_i` over the active units, relative to the largest.
pub fn sharing_error(weighted: &[f64], active: &[bool]) -> f64 {
    let vals: Vec<f64> = weighted
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .collect();
    if vals.len() < 2 {
        return 0.0;
    }
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        (hi - lo) / scale
    }
}

fn g_t(params: &ControllerParams, i: usize, s: &GeneratorSample) -> f64 {
    g_value(s.sigma_t, params.dt_max[i], params.dt_min[i])
}

fn g_e(params: &ControllerParams, i: usize, s: &GeneratorSample) -> f64 {
    g_value(s.sigma_e, params.de_max[i], params.de_min[i])
}

fn saturation_intervals(
    records: &[TrajectoryRecord],
    params: &ControllerParams,
) -> Vec<SaturationInterval> {
    let n = params.len();
    let mut out = Vec::new();
    for i in 0..n {
        for input in [Input::Tm, Input::Ef] {
            let mut open: Option<SaturationInterval> = None;
            for r in records {
                let s = &r.generators[i];
                let (g, sigma, hi, lo) = match input {
                    Input::Tm => (
                        g_t(params, i, s),
                        s.sigma_t,
                        params.dt_max[i],
                        params.dt_min[i],
                    ),
                    Input::Ef => (
                        g_e(params, i, s),
                        s.sigma_e,
                        params.de_max[i],
                        params.de_min[i],
                    ),
                };
                let limit = if sigma >= 0.0 {
                    Limit::Upper
                } else {
                    Limit::Lower
                };
                let gap = match limit {
                    Limit::Upper => (hi - sigma).abs(),
                    Limit::Lower => (sigma + lo).abs(),
                };
                let saturated = g <= ACTIVE_G_THRESHOLD;
                match (&mut open, saturated) {
                    (Some(iv), true) if iv.limit == limit => {
                        iv.t_end = r.time;
                        iv.max_gap = iv.max_gap.max(gap);
                    }
                    (_, true) => {
                        if let Some(iv) = open.take() {
                            out.push(iv);
                        }
                        open = Some(SaturationInterval {
                            generator: i + 1,
                            input,
                            limit,
                            t_start: r.time,
                            t_end: r.time,
                            max_gap: gap,
                        });
                    }
                    (_, false) => {
                        if let Some(iv) = open.take() {
                            out.push(iv);
                        }
                    }
                }
            }
            out.extend(open);
        }
    }
    out
}

pub fn compute_metrics(
    records: &[TrajectoryRecord],
    params: &ControllerParams,
    window: (f64, f64),
) -> Result<MetricsReport> {
    let (t0, t1) = window;
    let out_of_range = Error::WindowOutOfRange { t0, t1 };
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Err(out_of_range);
    };
    let eps = 1e-9 * last.time.abs().max(1.0);
    if !(t0 <= t1) || t0 < first.time - eps || t1 > last.time + eps {
        return Err(out_of_range);
    }
    let inside: Vec<&TrajectoryRecord> = records
        .iter()
        .filter(|r| r.time >= t0 - eps && r.time <= t1 + eps)
        .collect();
    if inside.is_empty() {
        return Err(out_of_range);
    }
    let n = params.len();
    if first.generators.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: first.generators.len(),
        });
    }
    let count = inside.len() as f64;
    let mean = |f: &dyn Fn(usize, &GeneratorSample) -> f64| -> Vec<f64> {
        (0..n)
            .map(|i| inside.iter().map(|r| f(i, &r.generators[i])).sum::<f64>() / count)
            .collect()
    };
    let omega_s = params.omega_s;
    let final_frequency_deviation = mean(&|_, s| s.omega - omega_s);
    let max_frequency_deviation = (0..n)
        .map(|i| {
            inside
                .iter()
                .map(|r| (r.generators[i].omega - omega_s).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mean_p = mean(&|_, s| s.p);
    let mean_q = mean(&|_, s| s.q);
    let active_p: Vec<bool> = mean(&|i, s| g_t(params, i, s))
        .iter()
        .map(|&g| g > ACTIVE_G_THRESHOLD)
        .collect();
    let active_q: Vec<bool> = mean(&|i, s| g_e(params, i, s))
        .iter()
        .map(|&g| g > ACTIVE_G_THRESHOLD)
        .collect();
    let np: Vec<f64> = (0..n).map(|i| params.n_gains[i] * mean_p[i]).collect();
    let mq: Vec<f64> = (0..n).map(|i| params.m_gains[i] * mean_q[i]).collect();

    let bound_violations = records
        .iter()
        .flat_map(|r| r.generators.iter().enumerate())
        .map(|(i, s)| {
            let bad_t = s.sigma_t > params.dt_max[i] + CLAMP_TOLERANCE
                || s.sigma_t < -params.dt_min[i] - CLAMP_TOLERANCE;
            let bad_e = s.sigma_e > params.de_max[i] + CLAMP_TOLERANCE
                || s.sigma_e < -params.de_min[i] - CLAMP_TOLERANCE;
            usize::from(bad_t) + usize::from(bad_e)
        })
        .sum();

    Ok(MetricsReport {
        window,
        final_frequency_deviation,
        max_frequency_deviation,
        sharing_error_p: sharing_error(&np, &active_p),
        sharing_error_q: sharing_error(&mq, &active_q),
        mean_p,
        mean_q,
        active_p,
        active_q,
        bound_violations,
        saturated_units: saturation_intervals(records, params),
    })
}
