//! Third-order synchronous machine model.
//!
//! States are the rotor angle `delta` (rad, relative to the synchronously
//! rotating network frame), the speed `omega` (pu) and the q-axis transient
//! emf `e_q_prime` (pu). Inputs are mechanical torque and field voltage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_OMEGA_B: f64 = 2.0 * std::f64::consts::PI * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    /// Inertia constant (s).
    #[serde(rename = "H")]
    pub h: f64,
    /// Damping, pu torque per pu slip.
    #[serde(rename = "D")]
    pub d: f64,
    /// d-axis open-circuit transient time constant (s).
    #[serde(rename = "T_d0_prime")]
    pub t_d0_prime: f64,
    #[serde(rename = "X_d")]
    pub x_d: f64,
    #[serde(rename = "X_d_prime")]
    pub x_d_prime: f64,
    #[serde(rename = "X_q_prime")]
    pub x_q_prime: f64,
    pub r_a: f64,
    /// Base angular velocity (rad/s).
    #[serde(default = "default_omega_b")]
    pub omega_b: f64,
    /// Synchronous speed (pu).
    #[serde(default = "default_omega_s")]
    pub omega_s: f64,
}

fn default_omega_b() -> f64 {
    DEFAULT_OMEGA_B
}

fn default_omega_s() -> f64 {
    1.0
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(msg.to_string()));
        let all = [
            self.h,
            self.d,
            self.t_d0_prime,
            self.x_d,
            self.x_d_prime,
            self.x_q_prime,
            self.r_a,
            self.omega_b,
            self.omega_s,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("machine constants must be finite");
        }
        if self.h <= 0.0 {
            return fail("H must be positive");
        }
        if self.t_d0_prime <= 0.0 {
            return fail("T_d0_prime must be positive");
        }
        if self.x_d_prime <= 0.0 || self.x_d < self.x_d_prime {
            return fail("reactances must satisfy X_d >= X_d_prime > 0");
        }
        if self.r_a <= 0.0 {
            return fail("r_a must be positive");
        }
        if self.omega_b <= 0.0 || self.omega_s <= 0.0 {
            return fail("omega_b and omega_s must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorState {
    pub delta: f64,
    pub omega: f64,
    pub e_q_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorDerivatives {
    pub d_delta: f64,
    pub d_omega: f64,
    pub d_e_q_prime: f64,
}

/// Right-hand side of the swing, angle and field equations.
pub fn generator_derivatives(
    state: &GeneratorState,
    t_m: f64,
    e_f: f64,
    i_d: f64,
    t_e: f64,
    params: &GeneratorParams,
) -> GeneratorDerivatives {
    let slip = state.omega - params.omega_s;
    GeneratorDerivatives {
        d_delta: params.omega_b * slip,
        d_omega: (t_m - t_e - params.d * slip) / (2.0 * params.h),
        d_e_q_prime: (e_f - state.e_q_prime + (params.x_d - params.x_d_prime) * i_d)
            / params.t_d0_prime,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GeneratorParams {
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
    fn synchronous_speed_gives_zero_angle_rate() {
        let p = params();
        let s = GeneratorState {
            delta: 0.3,
            omega: 1.0,
            e_q_prime: 1.1,
        };
        assert_eq!(
            generator_derivatives(&s, 0.7, 1.5, -0.4, 0.2, &p).d_delta,
            0.0
        );
    }

    #[test]
    fn torque_balance_at_synchronism() {
        let p = params();
        let s = GeneratorState {
            delta: 0.3,
            omega: 1.0,
            e_q_prime: 1.1,
        };
        assert_eq!(
            generator_derivatives(&s, 0.8, 1.5, -0.4, 0.8, &p).d_omega,
            0.0
        );
    }

    #[test]
    fn field_balance() {
        let p = params();
        let s = GeneratorState {
            delta: 0.3,
            omega: 1.01,
            e_q_prime: 1.0,
        };
        let i_d = 0.25;
        let e_f = s.e_q_prime - (p.x_d - p.x_d_prime) * i_d;
        assert!(
            generator_derivatives(&s, 0.8, e_f, i_d, 0.1, &p)
                .d_e_q_prime
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn equilibrium_iff_all_balances_hold() {
        let p = params();
        let s = GeneratorState {
            delta: -0.2,
            omega: 1.0,
            e_q_prime: 1.05,
        };
        let i_d = -0.6;
        let t_e = 0.9;
        let e_f = s.e_q_prime - (p.x_d - p.x_d_prime) * i_d;
        let d = generator_derivatives(&s, t_e, e_f, i_d, t_e, &p);
        assert_eq!(d, GeneratorDerivatives::default());

        // breaking any single balance leaves a non-zero derivative
        let off_speed = GeneratorState { omega: 1.001, ..s };
        assert_ne!(
            generator_derivatives(&off_speed, t_e, e_f, i_d, t_e, &p).d_delta,
            0.0
        );
        assert_ne!(
            generator_derivatives(&s, t_e + 0.1, e_f, i_d, t_e, &p).d_omega,
            0.0
        );
        assert_ne!(
            generator_derivatives(&s, t_e, e_f + 0.1, i_d, t_e, &p).d_e_q_prime,
            0.0
        );
    }

    #[test]
    fn affine_in_inputs() {
        let p = params();
        let s = GeneratorState {
            delta: 0.1,
            omega: 0.998,
            e_q_prime: 0.95,
        };
        let f = |tm: f64, ef: f64| generator_derivatives(&s, tm, ef, 0.3, 0.6, &p);
        let base = f(0.0, 0.0);
        let a = f(0.7, 1.3);
        let b = f(-0.2, 0.4);
        let ab = f(0.5, 1.7);
        // f(a + b) - f(0) == (f(a) - f(0)) + (f(b) - f(0))
        let lhs = ab.d_omega - base.d_omega;
        let rhs = (a.d_omega - base.d_omega) + (b.d_omega - base.d_omega);
        assert!((lhs - rhs).abs() < 1e-14);
        let lhs = ab.d_e_q_prime - base.d_e_q_prime;
        let rhs = (a.d_e_q_prime - base.d_e_q_prime) + (b.d_e_q_prime - base.d_e_q_prime);
        assert!((lhs - rhs).abs() < 1e-14);
        assert_eq!(ab.d_delta, base.d_delta);
    }

    #[test]
    fn validation_rejects_bad_constants() {
        assert!(params().validate().is_ok());
        assert!(GeneratorParams { h: 0.0, ..params() }.validate().is_err());
        assert!(GeneratorParams {
            r_a: 0.0,
            ..params()
        }
        .validate()
        .is_err());
        assert!(GeneratorParams {
            x_d: 0.2,
            ..params()
        }
        .validate()
        .is_err());
        assert!(GeneratorParams {
            t_d0_prime: -1.0,
            ..params()
        }
        .validate()
        .is_err());
    }
}
