//! Phase controllers: spin matching, coordinated capture and constrained
//! momentum decay.

use nalgebra::{Matrix3, Vector3, Vector6};
use thiserror::Error;

use crate::dynamics::{CompoundDynamics, ReducedDynamics, RobotInertiaSet};
use crate::model::{GainSet, TorqueLimits};
use crate::spatial::Quaternion;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("wheel torque distribution matrix B is singular")]
    SingularB,
    #[error("{constraint} limit is exceeded by the nonlinear terms alone (excess {excess:e})")]
    Infeasible { constraint: Constraint, excess: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    WheelTorque,
    EndEffectorTorque,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constraint::WheelTorque => f.write_str("wheel torque"),
            Constraint::EndEffectorTorque => f.write_str("end-effector torque"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsA {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsB {
    pub kp: f64,
    pub kd: f64,
    pub kw: f64,
    pub kq: f64,
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<(), ControlError> {
    for (name, v) in pairs {
        if !(v.is_finite() && *v > 0.0) {
            return Err(ControlError::InvalidGains(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

impl GainsA {
    pub fn new(kp: f64, kd: f64) -> Result<Self, ControlError> {
        check_positive(&[("k_p", kp), ("k_d", kd)])?;
        Ok(Self { kp, kd })
    }
}

impl GainsB {
    pub fn new(kp: f64, kd: f64, kw: f64, kq: f64) -> Result<Self, ControlError> {
        check_positive(&[("k_p", kp), ("k_d", kd), ("k_w", kw), ("k_q", kq)])?;
        Ok(Self { kp, kd, kw, kq })
    }
}

impl From<GainSet> for GainsA {
    fn from(g: GainSet) -> Self {
        Self { kp: g.kp, kd: g.kd }
    }
}

impl From<GainSet> for GainsB {
    fn from(g: GainSet) -> Self {
        Self { kp: g.kp, kd: g.kd, kw: g.kw, kq: g.kq }
    }
}

fn b_inverse(b: &Matrix3<f64>) -> Result<Matrix3<f64>, ControlError> {
    b.try_inverse().filter(|m| m.iter().all(|x| x.is_finite())).ok_or(ControlError::SingularB)
}

/// Spin-matching attitude law, `tau_r = B^-1 (c_b - M_b (k_p q_v + k_d w_rel))`.
///
/// The closed loop is `w_rel_dot = w_rel x A w_s - k_p q_v - k_d w_rel` for a
/// target in pure spin.
pub fn phase_a_torque(
    q_rel: &Quaternion,
    omega_rel: &Vector3<f64>,
    rd: &ReducedDynamics,
    g: &GainsA,
) -> Result<Vector3<f64>, ControlError> {
    let b_inv = b_inverse(&rd.b)?;
    Ok(b_inv * (rd.cb - rd.mb * (g.kp * q_rel.v + g.kd * omega_rel)))
}

/// Lyapunov function of the spin-matching loop,
/// `V = k_p |q - q*|^2 + |w_rel|^2 / 2`; along the closed loop
/// `V_dot = -k_d |w_rel|^2`.
pub fn lyapunov(q_rel: &Quaternion, omega_rel: &Vector3<f64>, kp: f64) -> f64 {
    let dq = q_rel.to_vector() - Quaternion::identity().to_vector();
    kp * dq.norm_squared() + 0.5 * omega_rel.norm_squared()
}

/// `V` with the attitude term weighted by `k_p / 2`. Its derivative along the
/// closed loop carries the extra term `-k_p w_rel^T q_v / 2`.
pub fn lyapunov_half_weight(q_rel: &Quaternion, omega_rel: &Vector3<f64>, kp: f64) -> f64 {
    let dq = q_rel.to_vector() - Quaternion::identity().to_vector();
    0.5 * kp * dq.norm_squared() + 0.5 * omega_rel.norm_squared()
}

/// Cubic rest-to-rest joint profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTrajectory {
    pub theta_i: Vector6<f64>,
    pub theta_f: Vector6<f64>,
    pub t_f: f64,
}

/// Reference position, rate and acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointReference {
    pub theta: Vector6<f64>,
    pub theta_dot: Vector6<f64>,
    pub theta_ddot: Vector6<f64>,
}

impl JointTrajectory {
    /// Evaluates at time `t` from the start of the motion; holds the end
    /// points outside `[0, t_f]`.
    pub fn evaluate(&self, t: f64) -> JointReference {
        let d = self.theta_f - self.theta_i;
        if self.t_f <= 0.0 || t >= self.t_f {
            return JointReference { theta: self.theta_f, theta_dot: Vector6::zeros(), theta_ddot: Vector6::zeros() };
        }
        if t <= 0.0 {
            return JointReference { theta: self.theta_i, theta_dot: Vector6::zeros(), theta_ddot: Vector6::zeros() };
        }
        let s = t / self.t_f;
        let tf = self.t_f;
        JointReference {
            theta: self.theta_i + d * (3.0 * s * s - 2.0 * s * s * s),
            theta_dot: d * (6.0 * s - 6.0 * s * s) / tf,
            theta_ddot: d * (6.0 - 12.0 * s) / (tf * tf),
        }
    }

    /// Rate at `t` without the end-point clamping, used to check the exact
    /// end condition.
    pub fn rate_at_normalized(&self, s: f64) -> Vector6<f64> {
        if self.t_f <= 0.0 {
            return Vector6::zeros();
        }
        (self.theta_f - self.theta_i) * (6.0 * s - 6.0 * s * s) / self.t_f
    }

    pub fn acceleration_at_normalized(&self, s: f64) -> Vector6<f64> {
        if self.t_f <= 0.0 {
            return Vector6::zeros();
        }
        (self.theta_f - self.theta_i) * (6.0 - 12.0 * s) / (self.t_f * self.t_f)
    }
}

/// Shortest cubic that respects both the joint rate and acceleration limits:
/// `t_f = max(1.5 |dtheta|_inf / qd_max, sqrt(6 |dtheta|_inf / qdd_max))`.
pub fn plan_capture_trajectory(theta_i: &Vector6<f64>, theta_f: &Vector6<f64>, qd_max: f64, qdd_max: f64) -> JointTrajectory {
    let d = (theta_f - theta_i).amax();
    let t_f = if d == 0.0 { 0.0 } else { (1.5 * d / qd_max).max((6.0 * d / qdd_max).sqrt()) };
    JointTrajectory { theta_i: *theta_i, theta_f: *theta_f, t_f }
}

/// Inputs of the coordination controller at one instant.
#[derive(Debug, Clone, Copy)]
pub struct CoordinationInput<'a> {
    pub q_rel: Quaternion,
    pub omega_rel: Vector3<f64>,
    /// Target rate mapped into the base frame, `A^T w_s`.
    pub omega_s_in_base: Vector3<f64>,
    /// Target angular acceleration mapped into the base frame.
    pub omega_s_dot_in_base: Vector3<f64>,
    pub theta: Vector6<f64>,
    pub theta_dot: Vector6<f64>,
    pub reference: JointReference,
    pub set: &'a RobotInertiaSet,
    pub rd: &'a ReducedDynamics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinationTorques {
    pub tau_r: Vector3<f64>,
    pub tau_m: Vector6<f64>,
}

/// Coordination law for the capture phase. Computed-torque on the reduced
/// dynamics, with desired accelerations chosen so that
/// `w_rel_dot + k_w w_rel + k_q q_v = 0` and
/// `e_ddot + k_d e_dot + k_p e = 0` with `e = theta* - theta`.
pub fn phase_b_torques(input: &CoordinationInput<'_>, g: &GainsB) -> Result<CoordinationTorques, ControlError> {
    let b_inv = b_inverse(&input.rd.b)?;
    let w = input.omega_rel;
    let u_w = -g.kw * w - g.kq * input.q_rel.v - w.cross(&input.omega_s_in_base) + input.omega_s_dot_in_base;
    let r = &input.reference;
    let u_th = r.theta_ddot + g.kd * (r.theta_dot - input.theta_dot) + g.kp * (r.theta - input.theta);
    let set = input.set;
    Ok(CoordinationTorques {
        tau_r: b_inv * (input.rd.cb + input.rd.mb * u_w + set.mbm * u_th),
        tau_m: set.cm + set.mbm.transpose() * u_w + set.mm * u_th,
    })
}

/// Result of the momentum-decay rate optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayRate {
    /// Compound momentum already below the completion threshold.
    Complete,
    Rate { sigma: f64, sigma_r: f64, sigma_e: f64 },
}

impl DecayRate {
    pub fn sigma(&self) -> f64 {
        match self {
            DecayRate::Complete => 0.0,
            DecayRate::Rate { sigma, .. } => *sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaOptions {
    pub eps_h: f64,
    /// Use `tau_e_max` in the wheel-torque constant term.
    pub appendix_literal: bool,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        Self { eps_h: 1e-6, appendix_literal: false }
    }
}

/// Coefficients of `a s^2 + b s + c <= 0` for each constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaQuadratics {
    pub wheel: [f64; 3],
    pub end_effector: [f64; 3],
}

struct DecayGeometry {
    p: Vector3<f64>,
    g: Vector3<f64>,
}

fn decay_geometry(cd: &CompoundDynamics, omega_b: &Vector3<f64>) -> Result<(DecayGeometry, f64), ControlError> {
    let b_inv = b_inverse(&cd.b)?;
    let hv = cd.mt * omega_b;
    let h = hv.norm();
    let u = if h > 0.0 { hv / h } else { Vector3::zeros() };
    Ok((DecayGeometry { p: b_inv * cd.ct, g: b_inv * u }, h))
}

pub fn sigma_quadratics(cd: &CompoundDynamics, omega_b: &Vector3<f64>, lim: &TorqueLimits, appendix_literal: bool) -> Result<SigmaQuadratics, ControlError> {
    let (geo, _) = decay_geometry(cd, omega_b)?;
    let (p, gv) = (geo.p, geo.g);
    let wheel_limit = if appendix_literal { lim.tau_e_max } else { lim.tau_r_max };
    let gg = cd.g * gv;
    let e0 = cd.g * p + cd.cg;
    Ok(SigmaQuadratics {
        wheel: [gv.norm_squared(), -2.0 * p.dot(&gv), p.norm_squared() - wheel_limit * wheel_limit],
        end_effector: [gg.norm_squared(), -2.0 * gg.dot(&e0), e0.norm_squared() - lim.tau_e_max * lim.tau_e_max],
    })
}

/// Largest root of `a s^2 + b s + c`, given `c <= 0`. Unbounded constraints
/// return infinity.
fn largest_root([a, b, c]: [f64; 3]) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
    if a <= 1e-14 * scale {
        return if b > 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    if b <= 0.0 {
        (-b + disc) / (2.0 * a)
    } else {
        2.0 * c / (-b - disc)
    }
}

/// Largest momentum decay rate meeting both torque limits.
pub fn phase_c_sigma(
    cd: &CompoundDynamics,
    omega_b: &Vector3<f64>,
    lim: &TorqueLimits,
    opts: &SigmaOptions,
) -> Result<DecayRate, ControlError> {
    let h = (cd.mt * omega_b).norm();
    if h <= opts.eps_h {
        return Ok(DecayRate::Complete);
    }
    let quad = sigma_quadratics(cd, omega_b, lim, opts.appendix_literal)?;
    if quad.wheel[2] > 0.0 {
        return Err(ControlError::Infeasible { constraint: Constraint::WheelTorque, excess: quad.wheel[2] });
    }
    if quad.end_effector[2] > 0.0 {
        return Err(ControlError::Infeasible { constraint: Constraint::EndEffectorTorque, excess: quad.end_effector[2] });
    }
    let sigma_r = largest_root(quad.wheel);
    let sigma_e = largest_root(quad.end_effector);
    Ok(DecayRate::Rate { sigma: sigma_r.min(sigma_e), sigma_r, sigma_e })
}

/// `tau_r = B^-1 (c_t - (M_t w / |M_t w|) sigma)`; zero torque once the
/// momentum is below `eps_h`.
pub fn phase_c_torque(cd: &CompoundDynamics, omega_b: &Vector3<f64>, sigma: f64, eps_h: f64) -> Result<Vector3<f64>, ControlError> {
    let (geo, h) = decay_geometry(cd, omega_b)?;
    if h <= eps_h {
        return Ok(Vector3::zeros());
    }
    Ok(geo.p - geo.g * sigma)
}
