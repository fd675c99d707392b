//! Two-axis synchronous machine with a three-state exciter/AVR and a
//! two-state turbine-governor, connected to an infinite bus through a
//! line impedance. Nine dynamic states in total.
//!
//! Stator/network algebra:
//!
//! ```text
//! [ Rs+Re      -(Xq+Xep) ] [Id]   [Vs sin(δ-θvs)]
//! [ X'd+Xep     Rs+Re    ] [Iq] = [Vs cos(δ-θvs)]
//!
//! Vd = Re Id - Xep Iq + Vs sin(δ-θvs)
//! Vq = Re Iq ∓ Xep Id + Vs cos(δ-θvs)     (sign set by `VqSign`)
//! Vt = sqrt(Vd² + Vq²),   SE(Efd) = a·exp(b·Efd)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_dim, check_finite, clamp_component, ComponentModel, Limit};
use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::sampling::InputDomain;

pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const E_Q_PRIME: usize = 2;
pub const E_D_PRIME: usize = 3;
pub const E_FD: usize = 4;
pub const R_F: usize = 5;
pub const V_R: usize = 6;
pub const P_M: usize = 7;
pub const P_SV: usize = 8;

pub const STATE_NAMES: [&str; 9] = [
    "delta",
    "omega",
    "e_q_prime",
    "e_d_prime",
    "e_fd",
    "r_f",
    "v_r",
    "p_m",
    "p_sv",
];

const SINGULAR_DET: f64 = 1e-12;

/// Machine state in the fixed order `[δ, ω, E'q, E'd, Efd, Rf, VR, PM, PSV]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmState {
    pub delta: f64,
    pub omega: f64,
    pub e_q_prime: f64,
    pub e_d_prime: f64,
    pub e_fd: f64,
    pub r_f: f64,
    pub v_r: f64,
    pub p_m: f64,
    pub p_sv: f64,
}

impl SmState {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.delta,
            self.omega,
            self.e_q_prime,
            self.e_d_prime,
            self.e_fd,
            self.r_f,
            self.v_r,
            self.p_m,
            self.p_sv,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        check_dim(9, x.len())?;
        Ok(Self {
            delta: x[DELTA],
            omega: x[OMEGA],
            e_q_prime: x[E_Q_PRIME],
            e_d_prime: x[E_D_PRIME],
            e_fd: x[E_FD],
            r_f: x[R_F],
            v_r: x[V_R],
            p_m: x[P_M],
            p_sv: x[P_SV],
        })
    }
}

/// Sign applied to the `Xep·Id` term of `Vq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqSign {
    /// `Vq = Re Iq - Xep Id + Vs cos(δ-θvs)`
    #[default]
    AsWritten,
    /// `Vq = Re Iq + Xep Id + Vs cos(δ-θvs)`
    Standard,
}

/// Machine, exciter, governor and network parameters (per unit, seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmParams {
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "R_s")]
    pub r_s: f64,
    #[serde(rename = "T_d0_prime")]
    pub t_d0_prime: f64,
    #[serde(rename = "T_q0_prime")]
    pub t_q0_prime: f64,
    #[serde(rename = "X_d")]
    pub x_d: f64,
    #[serde(rename = "X_d_prime")]
    pub x_d_prime: f64,
    #[serde(rename = "X_q")]
    pub x_q: f64,
    #[serde(rename = "X_q_prime")]
    pub x_q_prime: f64,
    #[serde(rename = "X_ep")]
    pub x_ep: f64,
    #[serde(rename = "R_e")]
    pub r_e: f64,
    #[serde(rename = "Omega_B")]
    pub omega_b: f64,
    #[serde(rename = "V_s")]
    pub v_s: f64,
    #[serde(rename = "theta_vs")]
    pub theta_vs: f64,
    #[serde(rename = "K_A")]
    pub k_a: f64,
    #[serde(rename = "T_A")]
    pub t_a: f64,
    #[serde(rename = "K_F")]
    pub k_f: f64,
    #[serde(rename = "T_F")]
    pub t_f: f64,
    #[serde(rename = "K_E")]
    pub k_e: f64,
    #[serde(rename = "T_E")]
    pub t_e: f64,
    #[serde(rename = "V_ref")]
    pub v_ref: f64,
    #[serde(rename = "V_R_min")]
    pub v_r_min: f64,
    #[serde(rename = "V_R_max")]
    pub v_r_max: f64,
    #[serde(rename = "P_c")]
    pub p_c: f64,
    #[serde(rename = "R_D")]
    pub r_d: f64,
    #[serde(rename = "T_CH")]
    pub t_ch: f64,
    #[serde(rename = "T_SV")]
    pub t_sv: f64,
    #[serde(rename = "P_SV_max")]
    pub p_sv_max: f64,
    pub sat_a: f64,
    pub sat_b: f64,
    pub vq_sign_convention: VqSign,
}

impl Default for SmParams {
    fn default() -> Self {
        Self {
            d: 2.0,
            h: 5.06,
            r_s: 0.0,
            t_d0_prime: 4.75,
            t_q0_prime: 1.6,
            x_d: 1.25,
            x_d_prime: 0.232,
            x_q: 1.22,
            x_q_prime: 0.715,
            x_ep: 0.1,
            r_e: 0.0,
            omega_b: 314.159,
            v_s: 1.0,
            theta_vs: 0.0,
            k_a: 20.0,
            t_a: 0.2,
            k_f: 0.063,
            t_f: 0.35,
            k_e: 1.0,
            t_e: 0.314,
            v_ref: 1.095,
            v_r_min: 0.8,
            v_r_max: 8.0,
            p_c: 0.7,
            r_d: 0.05,
            t_ch: 0.4,
            t_sv: 0.2,
            p_sv_max: 1.0,
            sat_a: 0.098,
            sat_b: 0.55,
            vq_sign_convention: VqSign::AsWritten,
        }
    }
}

impl SmParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: SmParams = toml::from_str(text)
            .map_err(|e| Error::config("component.params", e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.h),
            ("T_d0_prime", self.t_d0_prime),
            ("T_q0_prime", self.t_q0_prime),
            ("T_A", self.t_a),
            ("T_F", self.t_f),
            ("T_E", self.t_e),
            ("T_CH", self.t_ch),
            ("T_SV", self.t_sv),
            ("Omega_B", self.omega_b),
            ("P_SV_max", self.p_sv_max),
            ("R_D", self.r_d),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.v_r_min < self.v_r_max) {
            return Err(Error::InvalidParams(format!(
                "V_R_min ({}) must be below V_R_max ({})",
                self.v_r_min, self.v_r_max
            )));
        }
        let all = [
            self.d, self.r_s, self.x_d, self.x_d_prime, self.x_q, self.x_q_prime, self.x_ep,
            self.r_e, self.v_s, self.theta_vs, self.k_a, self.k_f, self.k_e, self.v_ref,
            self.p_c, self.sat_a, self.sat_b,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    fn network_matrix(&self) -> [[f64; 2]; 2] {
        let r = self.r_s + self.r_e;
        [
            [r, -(self.x_q + self.x_ep)],
            [self.x_d_prime + self.x_ep, r],
        ]
    }
}

/// Algebraic quantities derived from the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicOutputs {
    pub i_d: f64,
    pub i_q: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub v_t: f64,
    pub s_e: f64,
}

fn network_currents<S: Scalar>(delta: S, p: &SmParams) -> Result<(S, S)> {
    let m = p.network_matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::SingularNetworkMatrix { det });
    }
    let angle = delta - p.theta_vs;
    let b1 = angle.sin() * p.v_s;
    let b2 = angle.cos() * p.v_s;
    let i_d = (b1 * m[1][1] - b2 * m[0][1]) / det;
    let i_q = (b2 * m[0][0] - b1 * m[1][0]) / det;
    Ok((i_d, i_q))
}

/// Solves the 2x2 stator/network system for `(Id, Iq)`.
pub fn solve_network(delta: f64, params: &SmParams) -> Result<(f64, f64)> {
    if !delta.is_finite() {
        return Err(Error::NonFiniteState { index: DELTA, t: f64::NAN });
    }
    network_currents(delta, params)
}

struct Algebra<S> {
    v_t: S,
    s_e: S,
}

fn algebra<S: Scalar>(delta: S, e_fd: S, i_d: S, i_q: S, p: &SmParams) -> (S, S, Algebra<S>) {
    let angle = delta - p.theta_vs;
    let v_d = i_d * p.r_e - i_q * p.x_ep + angle.sin() * p.v_s;
    let xep_id = i_d * p.x_ep;
    let v_q_base = i_q * p.r_e + angle.cos() * p.v_s;
    let v_q = match p.vq_sign_convention {
        VqSign::AsWritten => v_q_base - xep_id,
        VqSign::Standard => v_q_base + xep_id,
    };
    let v_t = (v_d * v_d + v_q * v_q).sqrt();
    let s_e = (e_fd * p.sat_b).exp() * p.sat_a;
    (v_d, v_q, Algebra { v_t, s_e })
}

pub fn algebraic_outputs(
    delta: f64,
    e_fd: f64,
    i_d: f64,
    i_q: f64,
    params: &SmParams,
) -> Result<AlgebraicOutputs> {
    let (v_d, v_q, a) = algebra(delta, e_fd, i_d, i_q, params);
    let out = AlgebraicOutputs {
        i_d,
        i_q,
        v_d,
        v_q,
        v_t: a.v_t,
        s_e: a.s_e,
    };
    if [out.v_d, out.v_q, out.v_t, out.s_e].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(out)
}

fn rhs_generic<S: Scalar>(p: &SmParams, t: f64, x: &[S], dx: &mut [S]) -> Result<()> {
    check_dim(9, x.len())?;
    check_dim(9, dx.len())?;
    check_finite(t, x.iter().map(|v| v.value()))?;

    let delta = x[DELTA];
    let omega = x[OMEGA];
    let e_q = x[E_Q_PRIME];
    let e_d = x[E_D_PRIME];
    let e_fd = x[E_FD];
    let r_f = x[R_F];
    let v_r = x[V_R];
    let p_m = x[P_M];
    let p_sv = x[P_SV];

    let (i_d, i_q) = network_currents(delta, p)?;
    let (_, _, alg) = algebra(delta, e_fd, i_d, i_q, p);

    let p_e = e_d * i_d + e_q * i_q + i_d * i_q * (p.x_q_prime - p.x_d_prime);
    dx[DELTA] = omega;
    dx[OMEGA] = (p_m - p_e - omega * p.d) * (p.omega_b / (2.0 * p.h));
    dx[E_Q_PRIME] = (-e_q - i_d * (p.x_d - p.x_d_prime) + e_fd) / p.t_d0_prime;
    dx[E_D_PRIME] = (-e_d + i_q * (p.x_q - p.x_q_prime)) / p.t_q0_prime;
    dx[E_FD] = (-(alg.s_e + p.k_e) * e_fd + v_r) / p.t_e;
    dx[R_F] = (-r_f + e_fd * (p.k_f / p.t_f)) / p.t_f;
    dx[V_R] = (r_f * p.k_a - e_fd * (p.k_a * p.k_f / p.t_f) + (-alg.v_t + p.v_ref) * p.k_a - v_r)
        / p.t_a;
    dx[P_M] = (-p_m + p_sv) / p.t_ch;
    dx[P_SV] = (-p_sv + p.p_c - omega * (1.0 / (p.r_d * p.omega_b))) / p.t_sv;

    if let Some(index) = dx.iter().position(|v| !v.value().is_finite()) {
        return Err(Error::NonFiniteState { index, t });
    }
    Ok(())
}

/// Nine state derivatives, unclamped.
pub fn eval_rhs(t: f64, state: &SmState, params: &SmParams) -> Result<SmState> {
    let mut dx = [0.0; 9];
    rhs_generic(params, t, &state.to_array(), &mut dx)?;
    SmState::from_slice(&dx)
}

/// Clamps `V_R` to `[V_R_min, V_R_max]` and `P_SV` to `[0, P_SV_max]`,
/// zeroing derivatives that push further out of range.
pub fn apply_limits(state: &SmState, derivative: &SmState, params: &SmParams) -> (SmState, SmState) {
    let mut s = *state;
    let mut d = *derivative;
    clamp_component(&mut s.v_r, &mut d.v_r, params.v_r_min, params.v_r_max);
    clamp_component(&mut s.p_sv, &mut d.p_sv, 0.0, params.p_sv_max);
    (s, d)
}

#[derive(Debug, Clone, Default)]
pub struct Sm9Model {
    pub params: SmParams,
}

impl Sm9Model {
    pub fn new(params: SmParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

/// Reference initial-condition domain: rotor angle and speed deviation and
/// `E'_q` vary, every other state starts at its operating value.
pub fn reference_domain() -> InputDomain {
    let bounds = vec![
        (-2.0, 2.0),
        (-1.0, 1.0),
        (0.9, 1.1),
        (0.0, 0.0),
        (1.08, 1.08),
        (1.0, 1.0),
        (1.105, 1.105),
        (0.7048, 0.7048),
        (0.7048, 0.7048),
    ];
    let names = STATE_NAMES.iter().map(|s| s.to_string()).collect();
    InputDomain::new(names, bounds).expect("valid reference domain")
}

impl ComponentModel for Sm9Model {
    fn state_dim(&self) -> usize {
        9
    }

    fn state_names(&self) -> Vec<String> {
        STATE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        rhs_generic(&self.params, t, x, dx)
    }

    fn rhs_dual(&self, t: f64, x: &[Dual], dx: &mut [Dual]) -> Result<()> {
        rhs_generic(&self.params, t, x, dx)
    }

    fn limits(&self) -> Vec<Limit> {
        let mut lim = vec![None; 9];
        lim[V_R] = Some((self.params.v_r_min, self.params.v_r_max));
        lim[P_SV] = Some((0.0, self.params.p_sv_max));
        lim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> SmParams {
        SmParams::default()
    }

    fn nominal() -> SmState {
        SmState {
            delta: 0.3,
            omega: 0.1,
            e_q_prime: 1.0,
            e_d_prime: 0.0,
            e_fd: 1.08,
            r_f: 1.0,
            v_r: 1.105,
            p_m: 0.7048,
            p_sv: 0.7048,
        }
    }

    #[test]
    fn currents_at_zero_angle() {
        // Cramer's rule: det = 0*0 - (-1.32)(0.332) = 0.43824,
        // Id = (0*0 - 1*(-1.32)) / det = 1/0.332, Iq = (1*0 - 0*0.332) / det = 0.
        let (i_d, i_q) = solve_network(0.0, &reference()).unwrap();
        assert!((i_d - 3.012_048_192_771_084).abs() < 1e-12);
        assert_eq!(i_q, 0.0);
    }

    #[test]
    fn currents_at_quarter_turn() {
        // rhs = [1, cos(pi/2)]: Id = cos(pi/2)*1.32/det ≈ 0, Iq = -0.332/det = -1/1.32.
        let (i_d, i_q) = solve_network(std::f64::consts::FRAC_PI_2, &reference()).unwrap();
        assert!(i_d.abs() < 1e-15);
        assert!((i_q + 0.757_575_757_575_757_6).abs() < 1e-12);
    }

    #[test]
    fn zero_bus_voltage_gives_zero_current() {
        let p = SmParams { v_s: 0.0, theta_vs: 0.4, ..reference() };
        let (i_d, i_q) = solve_network(0.4, &p).unwrap();
        assert_eq!((i_d, i_q), (0.0, 0.0));
    }

    #[test]
    fn singular_network_is_an_error() {
        let p = SmParams {
            x_d_prime: -0.1,
            ..reference()
        };
        assert!(matches!(
            solve_network(0.2, &p),
            Err(Error::SingularNetworkMatrix { .. })
        ));
    }

    #[test]
    fn saturation_values() {
        let a = algebraic_outputs(0.0, 1.08, 0.0, 0.0, &reference()).unwrap();
        // 0.098 * exp(0.594), recomputed independently
        assert!((a.s_e - 0.177_499_444_382_400_15).abs() < 1e-12);
        let a = algebraic_outputs(0.0, 0.0, 0.0, 0.0, &reference()).unwrap();
        assert_eq!(a.s_e, 0.098);
    }

    #[test]
    fn terminal_voltage_at_zero_angle() {
        let p = reference();
        let (i_d, i_q) = solve_network(0.0, &p).unwrap();
        let a = algebraic_outputs(0.0, 1.08, i_d, i_q, &p).unwrap();
        assert_eq!(a.v_d, 0.0);
        assert!((a.v_q - (1.0 - 0.1 / 0.332)).abs() < 1e-12);
        assert!((a.v_q - 0.698_795).abs() < 1e-6);
        assert_eq!(a.v_t, a.v_q.abs());
    }

    #[test]
    fn standard_sign_flips_line_drop() {
        let p = SmParams {
            vq_sign_convention: VqSign::Standard,
            ..reference()
        };
        let (i_d, i_q) = solve_network(0.0, &p).unwrap();
        let a = algebraic_outputs(0.0, 1.08, i_d, i_q, &p).unwrap();
        assert!((a.v_q - (1.0 + 0.1 / 0.332)).abs() < 1e-12);
    }

    #[test]
    fn rate_feedback_derivative() {
        let d = eval_rhs(0.0, &nominal(), &reference()).unwrap();
        let expected = (1.0 / 0.35) * (-1.0 + (0.063 / 0.35) * 1.08);
        assert!((d.r_f - expected).abs() < 1e-14);
        assert!((d.r_f + 2.301_714).abs() < 1e-5);
    }

    #[test]
    fn angle_derivative_is_speed() {
        let s = SmState { omega: 0.0, ..nominal() };
        assert_eq!(eval_rhs(0.0, &s, &reference()).unwrap().delta, 0.0);
    }

    #[test]
    fn turbine_at_equilibrium() {
        let s = SmState { p_m: 0.61, p_sv: 0.61, ..nominal() };
        assert_eq!(eval_rhs(0.0, &s, &reference()).unwrap().p_m, 0.0);
    }

    #[test]
    fn non_finite_state_rejected() {
        let s = SmState { omega: f64::NAN, ..nominal() };
        assert!(matches!(
            eval_rhs(0.0, &s, &reference()),
            Err(Error::NonFiniteState { index: OMEGA, .. })
        ));
    }

    #[test]
    fn limit_examples() {
        let p = reference();
        let s = SmState { v_r: 9.0, ..nominal() };
        let d = SmState { v_r: 2.0, ..SmState::default() };
        let (s2, d2) = apply_limits(&s, &d, &p);
        assert_eq!((s2.v_r, d2.v_r), (8.0, 0.0));

        let s = SmState { p_sv: 0.5, ..nominal() };
        let d = SmState { p_sv: 3.0, ..SmState::default() };
        let (s2, d2) = apply_limits(&s, &d, &p);
        assert_eq!((s2, d2), (s, d));

        let s = SmState { v_r: 8.0, ..nominal() };
        let d = SmState { v_r: -1.0, ..SmState::default() };
        let (_, d2) = apply_limits(&s, &d, &p);
        assert_eq!(d2.v_r, -1.0);
    }

    #[test]
    fn params_file_round_trip() {
        let p = reference();
        let text = p.to_toml_string();
        assert!(text.contains("T_d0_prime = 4.75"));
        assert_eq!(SmParams::from_toml_str(&text).unwrap(), p);
        let partial = SmParams::from_toml_str("H = 3.0\nvq_sign_convention = \"standard\"").unwrap();
        assert_eq!(partial.h, 3.0);
        assert_eq!(partial.vq_sign_convention, VqSign::Standard);
        assert_eq!(partial.d, 2.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SmParams::from_toml_str("T_A = 0.0").is_err());
        assert!(SmParams::from_toml_str("V_R_min = 9.0").is_err());
        assert!(SmParams::from_toml_str("unknown_key = 1.0").is_err());
    }

    #[test]
    fn bundled_parameter_file_matches_defaults() {
        let text = include_str!("../../data/sm9_params.toml");
        assert_eq!(SmParams::from_toml_str(text).unwrap(), reference());
    }

    #[test]
    fn dual_jacobian_matches_finite_differences() {
        let m = Sm9Model::default();
        let x = nominal().to_array();
        let jac = m.jacobian(0.0, &x).unwrap();
        for j in 0..9 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let mut fp = [0.0; 9];
            let mut fm = [0.0; 9];
            m.rhs(0.0, &xp, &mut fp).unwrap();
            m.rhs(0.0, &xm, &mut fm).unwrap();
            for i in 0..9 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (jac[i * 9 + j] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                    "J[{i},{j}] = {} vs {fd}",
                    jac[i * 9 + j]
                );
            }
        }
    }

    fn state_strategy() -> impl Strategy<Value = [f64; 9]> {
        (
            -3.0..3.0f64,
            -2.0..2.0f64,
            0.5..1.5f64,
            -0.5..0.5f64,
            0.5..3.0f64,
            0.0..2.0f64,
            0.8..8.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
        )
            .prop_map(|(a, b, c, d, e, f, g, h, i)| [a, b, c, d, e, f, g, h, i])
    }

    proptest! {
        #[test]
        fn network_residual_is_tiny(delta in -10.0..10.0f64) {
            let p = SmParams { r_s: 0.01, r_e: 0.02, theta_vs: 0.3, ..reference() };
            let (i_d, i_q) = solve_network(delta, &p).unwrap();
            let m = p.network_matrix();
            let r1 = m[0][0] * i_d + m[0][1] * i_q - p.v_s * (delta - p.theta_vs).sin();
            let r2 = m[1][0] * i_d + m[1][1] * i_q - p.v_s * (delta - p.theta_vs).cos();
            prop_assert!(r1.abs() <= 1e-12 && r2.abs() <= 1e-12);
        }

        #[test]
        fn angle_rate_equals_speed(x in state_strategy()) {
            let mut dx = [0.0; 9];
            Sm9Model::default().rhs(0.0, &x, &mut dx).unwrap();
            prop_assert_eq!(dx[DELTA], x[OMEGA]);
        }

        #[test]
        fn linear_channels_are_affine(x in state_strategy(), h in 0.01..0.5f64) {
            let m = Sm9Model::default();
            for ch in [E_Q_PRIME, E_D_PRIME, R_F, V_R, P_M, P_SV] {
                let eval = |v: f64| {
                    let mut y = x;
                    y[ch] = v;
                    let mut dx = [0.0; 9];
                    m.rhs(0.0, &y, &mut dx).unwrap();
                    dx[ch]
                };
                let second = eval(x[ch] + h) - 2.0 * eval(x[ch]) + eval(x[ch] - h);
                prop_assert!(second.abs() < 1e-8, "channel {} second difference {}", ch, second);
            }
        }

        #[test]
        fn limits_are_idempotent(x in state_strategy(), vr in -2.0..12.0f64, psv in -1.0..2.0f64,
                                 dvr in -5.0..5.0f64, dpsv in -5.0..5.0f64) {
            let p = reference();
            let mut s = SmState::from_slice(&x).unwrap();
            s.v_r = vr;
            s.p_sv = psv;
            let d = SmState { v_r: dvr, p_sv: dpsv, ..SmState::default() };
            let once = apply_limits(&s, &d, &p);
            let twice = apply_limits(&once.0, &once.1, &p);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn rhs_is_deterministic(x in state_strategy()) {
            let m = Sm9Model::default();
            let mut a = [0.0; 9];
            let mut b = [0.0; 9];
            m.rhs(0.0, &x, &mut a).unwrap();
            m.rhs(0.0, &x, &mut b).unwrap();
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }
}
