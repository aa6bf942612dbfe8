//! Fixed-step RK4 mission integration, phase sequencing and momentum
//! bookkeeping.

use nalgebra::{Matrix3, Vector3, Vector4, Vector6};
use thiserror::Error;

use crate::control::{
    lyapunov, phase_a_torque, phase_b_torques, phase_c_sigma, phase_c_torque, plan_capture_trajectory,
    ControlError, CoordinationInput, DecayRate, GainsA, GainsB, JointTrajectory, SigmaOptions,
};
use crate::dynamics::{
    assemble, forward_dynamics, forward_dynamics_from, reduce, servicer_momentum, target_euler_rate,
    torque_transmission, CompoundPlant, DynamicsError, RobotState,
};
use crate::model::{IkError, SystemModel};
use crate::spatial::{quat_derivative, quat_error, Quaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
    Done,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
            Phase::Done => "Done",
        }
    }

    /// Numeric code used in the telemetry file.
    pub fn code(&self) -> u8 {
        match self {
            Phase::A => 1,
            Phase::B => 2,
            Phase::C => 3,
            Phase::Done => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("integration failed at t = {t} s: non-finite derivative\n{state}")]
    IntegrationFailure { t: f64, state: String },
    #[error("spin matching did not converge within {timeout} s")]
    PhaseATimeout { timeout: f64 },
    #[error("no joint solution reaches the grapple fixture: {0}")]
    Unreachable(#[from] IkError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Integrated mission state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub t: f64,
    /// Base attitude, base frame to inertial.
    pub q_b: Quaternion,
    pub omega_b: Vector3<f64>,
    /// Target attitude, target frame to inertial.
    pub q_s: Quaternion,
    pub omega_s: Vector3<f64>,
    pub theta: Vector6<f64>,
    pub theta_dot: Vector6<f64>,
    pub h_r: Vector3<f64>,
    pub phase: Phase,
    /// Target attached and joints locked.
    pub rigid: bool,
}

impl SystemState {
    pub fn robot(&self) -> RobotState {
        RobotState { theta: self.theta, theta_dot: self.theta_dot, omega_b: self.omega_b, h_r: self.h_r }
    }

    /// Base attitude relative to the target, canonical sign.
    pub fn q_rel(&self) -> Quaternion {
        quat_error(&self.q_s.normalize(), &self.q_b.normalize())
    }

    /// `w_b - A(q_rel)^T w_s`, base frame.
    pub fn omega_rel(&self) -> Vector3<f64> {
        self.omega_b - self.q_rel().rotation_matrix().transpose() * self.omega_s
    }

    fn advanced(&self, k: &StateRate, h: f64) -> SystemState {
        SystemState {
            t: self.t + h,
            q_b: Quaternion::from_vector(&(self.q_b.to_vector() + k.q_b * h)),
            omega_b: self.omega_b + k.omega_b * h,
            q_s: Quaternion::from_vector(&(self.q_s.to_vector() + k.q_s * h)),
            omega_s: self.omega_s + k.omega_s * h,
            theta: self.theta + k.theta * h,
            theta_dot: self.theta_dot + k.theta_dot * h,
            h_r: self.h_r + k.h_r * h,
            ..*self
        }
    }

    fn dump(&self) -> String {
        format!(
            "  phase {:?}\n  q_b {:?}\n  omega_b {:?}\n  q_s {:?}\n  omega_s {:?}\n  theta {:?}\n  theta_dot {:?}\n  h_r {:?}",
            self.phase,
            self.q_b.to_vector().as_slice(),
            self.omega_b.as_slice(),
            self.q_s.to_vector().as_slice(),
            self.omega_s.as_slice(),
            self.theta.as_slice(),
            self.theta_dot.as_slice(),
            self.h_r.as_slice()
        )
    }
}

/// Time derivative of [`SystemState`]. Locked coordinates get zero rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub q_b: Vector4<f64>,
    pub omega_b: Vector3<f64>,
    pub q_s: Vector4<f64>,
    pub omega_s: Vector3<f64>,
    pub theta: Vector6<f64>,
    pub theta_dot: Vector6<f64>,
    pub h_r: Vector3<f64>,
}

impl StateRate {
    fn is_finite(&self) -> bool {
        self.q_b.iter()
            .chain(self.omega_b.iter())
            .chain(self.q_s.iter())
            .chain(self.omega_s.iter())
            .chain(self.theta.iter())
            .chain(self.theta_dot.iter())
            .chain(self.h_r.iter())
            .all(|x| x.is_finite())
    }
}

/// One classic RK4 step. Quaternions are renormalized afterwards.
pub fn rk4_step<F>(state: &SystemState, dt: f64, mut rates: F) -> Result<SystemState, SimError>
where
    F: FnMut(&SystemState) -> Result<StateRate, SimError>,
{
    let mut eval = |s: &SystemState| -> Result<StateRate, SimError> {
        let k = rates(s)?;
        if k.is_finite() {
            Ok(k)
        } else {
            Err(SimError::IntegrationFailure { t: s.t, state: s.dump() })
        }
    };
    let k1 = eval(state)?;
    let k2 = eval(&state.advanced(&k1, 0.5 * dt))?;
    let k3 = eval(&state.advanced(&k2, 0.5 * dt))?;
    let k4 = eval(&state.advanced(&k3, dt))?;
    let sum = StateRate {
        q_b: k1.q_b + 2.0 * k2.q_b + 2.0 * k3.q_b + k4.q_b,
        omega_b: k1.omega_b + 2.0 * k2.omega_b + 2.0 * k3.omega_b + k4.omega_b,
        q_s: k1.q_s + 2.0 * k2.q_s + 2.0 * k3.q_s + k4.q_s,
        omega_s: k1.omega_s + 2.0 * k2.omega_s + 2.0 * k3.omega_s + k4.omega_s,
        theta: k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta,
        theta_dot: k1.theta_dot + 2.0 * k2.theta_dot + 2.0 * k3.theta_dot + k4.theta_dot,
        h_r: k1.h_r + 2.0 * k2.h_r + 2.0 * k3.h_r + k4.h_r,
    };
    let mut next = state.advanced(&sum, dt / 6.0);
    next.t = state.t + dt;
    next.q_b = next.q_b.normalize();
    next.q_s = next.q_s.normalize();
    if next.q_b.norm().is_finite() && next.q_s.norm().is_finite() {
        Ok(next)
    } else {
        Err(SimError::IntegrationFailure { t: state.t, state: state.dump() })
    }
}

fn target_rates(model: &SystemModel, s: &SystemState) -> (Vector4<f64>, Vector3<f64>) {
    (quat_derivative(&s.q_s, &s.omega_s), target_euler_rate(&model.target, &s.omega_s))
}

/// Rates of the servicer and target drifting with no actuation and no
/// contact. With `joints_locked` the arm is a rigid part of the base.
pub fn free_rates(model: &SystemModel, s: &SystemState, joints_locked: bool) -> Result<StateRate, SimError> {
    let acc = forward_dynamics(model, &s.robot(), &Vector3::zeros(), &Vector6::zeros(), &Vector6::zeros(), joints_locked)?;
    let (q_s, omega_s) = target_rates(model, s);
    Ok(StateRate {
        q_b: quat_derivative(&s.q_b, &s.omega_b),
        omega_b: acc.omega_b_dot,
        q_s,
        omega_s,
        theta: if joints_locked { Vector6::zeros() } else { s.theta_dot },
        theta_dot: acc.theta_ddot,
        h_r: Vector3::zeros(),
    })
}

/// Angular momenta in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumLedger {
    pub h_target: Vector3<f64>,
    pub h_servicer: Vector3<f64>,
    pub h_wheels: Vector3<f64>,
    pub h_total: Vector3<f64>,
}

/// Subsystem momenta. Before capture each body is taken about its own CoM,
/// both of which are at rest. Once rigid, `compound` splits `M_t w` into the
/// target's share about the compound CoM and the remainder.
pub fn momentum_ledger(model: &SystemModel, state: &SystemState, compound: Option<&CompoundPlant>) -> MomentumLedger {
    let rb = state.q_b.rotation_matrix();
    let h_wheels = rb * (model.wheels.axes * state.h_r);
    let (h_target, h_servicer) = match compound {
        Some(plant) if state.rigid => {
            let w = state.omega_b;
            let r = &plant.rho_s;
            let target = plant.inertia_c * w + plant.mass_s * r.cross(&w.cross(r));
            (rb * target, rb * (plant.mt * w - target))
        }
        _ => {
            let rs = state.q_s.rotation_matrix();
            let target = rs * (model.target.inertia * state.omega_s);
            (target, rb * servicer_momentum(model, &state.robot()).body)
        }
    };
    MomentumLedger { h_target, h_servicer, h_wheels, h_total: h_target + h_servicer + h_wheels }
}

/// Times of the mission events, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MissionEvents {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub t4: Option<f64>,
}

impl MissionEvents {
    pub const NAMES: [(&'static str, &'static str); 5] = [
        ("t0", "synch_start"),
        ("t1", "capture_start"),
        ("t2", "capture_complete"),
        ("t3", "detumble_start"),
        ("t4", "detumble_complete"),
    ];

    pub fn as_array(&self) -> [Option<f64>; 5] {
        [self.t0, self.t1, self.t2, self.t3, self.t4]
    }

    fn set(&mut self, index: usize, t: f64) {
        match index {
            0 => self.t0 = Some(t),
            1 => self.t1 = Some(t),
            2 => self.t2 = Some(t),
            3 => self.t3 = Some(t),
            _ => self.t4 = Some(t),
        }
    }
}

/// End-effector motion relative to the grapple fixture at the moment the
/// joints are relocked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureReport {
    pub position_error: f64,
    pub attitude_error: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub joint_error: f64,
    pub joint_rate: f64,
}

/// Relative pose and velocity of the grapple fixture seen from the
/// end-effector, base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrappleRelative {
    pub r_rel: Vector3<f64>,
    pub eta_rel: Quaternion,
    pub v_rel: Vector3<f64>,
    pub w_rel: Vector3<f64>,
}

/// Evaluates the end-effector/grapple geometry. The servicer CoM is the
/// inertial origin and the target CoM sits at `rho` on the spin axis.
pub fn grapple_relative(model: &SystemModel, state: &SystemState) -> GrappleRelative {
    let set = assemble(model, &state.robot());
    let chain = model.arm.chain(&state.theta);
    let p_e = chain.tip + model.base_com_from_chain(&chain);
    let rb = state.q_b.rotation_matrix();
    let varrho = model.target.grasp_offset;
    let eta = Quaternion::from_rotation_matrix(&chain.rot[5]);
    if state.rigid {
        let eta_rel = quat_error(&(state.q_b * eta), &(state.q_s * model.target.grasp_attitude));
        return GrappleRelative {
            r_rel: model.initial.rho + varrho - p_e,
            eta_rel,
            v_rel: Vector3::zeros(),
            w_rel: Vector3::zeros(),
        };
    }
    let rs = state.q_s.rotation_matrix();
    let grapple = model.initial.rho + rs * varrho;
    let twist = set.jb * state.omega_b + set.jm * state.theta_dot;
    let v_ee = twist.fixed_rows::<3>(0).into_owned();
    let w_ee = twist.fixed_rows::<3>(3).into_owned();
    let v_grapple = rb.transpose() * (rs * state.omega_s.cross(&varrho));
    let w_target = rb.transpose() * (rs * state.omega_s);
    let eta_rel = quat_error(&(state.q_b * eta), &(state.q_s * model.target.grasp_attitude));
    GrappleRelative {
        r_rel: rb.transpose() * grapple - p_e,
        eta_rel,
        v_rel: v_grapple - v_ee,
        w_rel: w_target - w_ee,
    }
}

/// One decimated output sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRecord {
    pub t: f64,
    pub omega_rel: Vector3<f64>,
    pub q_rel: Quaternion,
    pub r_rel: Vector3<f64>,
    pub eta_rel: Quaternion,
    pub v_rel: Vector3<f64>,
    pub w_rel_ee: Vector3<f64>,
    pub tau_r: Vector3<f64>,
    pub tau_e: Vector3<f64>,
    pub h_target: f64,
    pub h_servicer: f64,
    pub h_wheels: f64,
    pub lyapunov: f64,
    pub sigma: f64,
    pub phase: Phase,
}

/// Controls applied during one integrator stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageControl {
    pub tau_r: Vector3<f64>,
    pub tau_m: Vector6<f64>,
    pub tau_e: Vector3<f64>,
    pub sigma: f64,
}

/// What happened in one call to [`MissionRunner::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Controls at the start of the step.
    pub control: StageControl,
    /// RK4-weighted decay rate over the step.
    pub sigma_mean: f64,
    /// Largest wheel and end-effector torque norms over the four stages.
    pub tau_r_peak: f64,
    pub tau_e_peak: f64,
    /// `|M_t w|` before and after the step, during detumbling.
    pub compound_momentum: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPhase {
    /// Full mission from the configured initial conditions.
    Mission,
    /// Spin matching only.
    A,
    /// Capture from a synchronized start.
    B,
    /// Detumbling from the rigidized stack.
    C,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Sync,
    Capture { traj: JointTrajectory },
    Settle,
    Detumble,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct LockedServicer {
    mb: Matrix3<f64>,
    mb_inv: Matrix3<f64>,
    b: Matrix3<f64>,
    e: Matrix3<f64>,
}

impl LockedServicer {
    fn new(model: &SystemModel, theta: &Vector6<f64>) -> Result<Self, SimError> {
        let rd = reduce(&assemble(model, &RobotState::locked(*theta, Vector3::zeros(), Vector3::zeros())))?;
        let mb_inv = rd.mb.try_inverse().ok_or(DynamicsError::SingularInertia)?;
        Ok(Self { mb: rd.mb, mb_inv, b: rd.b, e: model.wheels.axes })
    }

    fn reduced(&self, omega_b: &Vector3<f64>, h_r: &Vector3<f64>) -> crate::dynamics::ReducedDynamics {
        let cb = omega_b.cross(&(self.mb * omega_b + self.e * h_r));
        crate::dynamics::ReducedDynamics { mb: self.mb, cb, b: self.b }
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct MissionReport {
    pub telemetry: Vec<TelemetryRecord>,
    pub events: MissionEvents,
    pub capture: Option<CaptureReport>,
    pub theta_f: Vector6<f64>,
    pub t_f: Option<f64>,
    pub initial: MomentumLedger,
    pub last: MomentumLedger,
    pub peak_tau_r: f64,
    pub peak_tau_e: f64,
    pub sigma_range: Option<(f64, f64)>,
    /// Steps in which a stage torque exceeded its limit during detumbling.
    pub constraint_violations: usize,
    pub final_state: SystemState,
    pub completed: bool,
}

/// Steps the mission one integration interval at a time.
pub struct MissionRunner {
    model: SystemModel,
    state: SystemState,
    mode: Mode,
    step_index: u64,
    dt: f64,
    end_step: u64,
    events: MissionEvents,
    theta_f: Vector6<f64>,
    gains_a: GainsA,
    gains_b: GainsB,
    locked: LockedServicer,
    compound: Option<CompoundPlant>,
    sync_since: Option<u64>,
    phase_start: u64,
    t_f: Option<f64>,
    capture: Option<CaptureReport>,
    stop_after: Option<Phase>,
}

impl MissionRunner {
    pub fn new(model: &SystemModel) -> Result<Self, SimError> {
        Self::with_start(model, StartPhase::Mission)
    }

    pub fn with_start(model: &SystemModel, start: StartPhase) -> Result<Self, SimError> {
        let init = &model.initial;
        let theta_f =
            model.solve_final_joints(&init.rho, &model.target.grasp_offset, &model.target.grasp_attitude, &init.theta_i)?;
        let gains_a = GainsA::new(model.gains.kp, model.gains.kd)?;
        let gains_b = GainsB::new(model.gains.kp, model.gains.kd, model.gains.kw, model.gains.kq)?;
        let locked = LockedServicer::new(model, &init.theta_i)?;
        let dt = model.sim.dt;
        let q_s = Quaternion::identity();
        let mut state = SystemState {
            t: 0.0,
            q_b: q_s * init.q_rel,
            omega_b: init.omega_b,
            q_s,
            omega_s: init.omega_s,
            theta: init.theta_i,
            theta_dot: Vector6::zeros(),
            h_r: init.h_r,
            phase: Phase::A,
            rigid: false,
        };
        let mut runner = Self {
            model: model.clone(),
            state,
            mode: Mode::Sync,
            step_index: 0,
            dt,
            end_step: (model.sim.t_end / dt).round() as u64,
            events: MissionEvents::default(),
            theta_f,
            gains_a,
            gains_b,
            locked,
            compound: None,
            sync_since: None,
            phase_start: 0,
            t_f: None,
            capture: None,
            stop_after: None,
        };
        match start {
            StartPhase::Mission => runner.events.set(0, 0.0),
            StartPhase::A => {
                runner.events.set(0, 0.0);
                runner.stop_after = Some(Phase::A);
            }
            StartPhase::B => {
                // Synchronized: base attitude and rate equal to the target's,
                // wheels holding the opposite of the base momentum.
                state.q_b = state.q_s;
                state.omega_b = state.omega_s;
                let body = servicer_momentum(model, &state.robot()).body;
                state.h_r = -model.wheels.axes.try_inverse().ok_or(DynamicsError::SingularCoupling)? * body;
                runner.state = state;
                runner.stop_after = Some(Phase::B);
                runner.start_capture()?;
            }
            StartPhase::C => {
                // Rigidized at the grapple pose, spinning with the target,
                // carrying the target's initial momentum in total.
                state.theta = theta_f;
                state.q_b = state.q_s;
                state.omega_b = state.omega_s;
                state.rigid = true;
                let plant = CompoundPlant::new(model, &theta_f, &init.rho)?;
                let total = model.target.inertia * state.omega_s;
                let e_inv = model.wheels.axes.try_inverse().ok_or(DynamicsError::SingularCoupling)?;
                state.h_r = e_inv * (total - plant.mt * state.omega_b);
                runner.compound = Some(plant);
                runner.state = state;
                runner.start_detumble()?;
            }
        }
        Ok(runner)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn events(&self) -> &MissionEvents {
        &self.events
    }

    pub fn theta_f(&self) -> &Vector6<f64> {
        &self.theta_f
    }

    pub fn trajectory(&self) -> Option<JointTrajectory> {
        match self.mode {
            Mode::Capture { traj } => Some(traj),
            _ => None,
        }
    }

    pub fn compound(&self) -> Option<&CompoundPlant> {
        self.compound.as_ref()
    }

    pub fn capture_report(&self) -> Option<&CaptureReport> {
        self.capture.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.mode, Mode::Done) || self.step_index >= self.end_step
    }

    pub fn ledger(&self) -> MomentumLedger {
        momentum_ledger(&self.model, &self.state, self.compound.as_ref())
    }

    fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }

    fn set_event(&mut self, index: usize) {
        self.events.set(index, self.state.t);
    }

    fn start_capture(&mut self) -> Result<(), SimError> {
        self.set_event(1);
        let traj = plan_capture_trajectory(&self.state.theta, &self.theta_f, self.model.arm.qd_max, self.model.arm.qdd_max);
        self.t_f = Some(traj.t_f);
        self.mode = Mode::Capture { traj };
        self.state.phase = Phase::B;
        self.phase_start = self.step_index;
        Ok(())
    }

    fn complete_capture(&mut self) -> Result<(), SimError> {
        self.set_event(2);
        let rel = grapple_relative(&self.model, &self.state);
        self.capture = Some(CaptureReport {
            position_error: rel.r_rel.norm(),
            attitude_error: rel.eta_rel.v.norm(),
            linear_velocity: rel.v_rel.norm(),
            angular_velocity: rel.w_rel.norm(),
            joint_error: (self.state.theta - self.theta_f).norm(),
            joint_rate: self.state.theta_dot.norm(),
        });
        // Rigidize: total momentum in the base frame is kept.
        let ledger = self.ledger();
        let rb = self.state.q_b.rotation_matrix();
        let l = rb.transpose() * ledger.h_total;
        let plant = CompoundPlant::new(&self.model, &self.state.theta, &self.model.initial.rho)?;
        let omega = plant.mt_inv * (l - self.model.wheels.axes * self.state.h_r);
        self.state.theta_dot = Vector6::zeros();
        self.state.omega_b = omega;
        self.state.q_s = self.state.q_b;
        self.state.omega_s = omega;
        self.state.rigid = true;
        self.compound = Some(plant);
        self.mode = Mode::Settle;
        self.phase_start = self.step_index;
        Ok(())
    }

    fn start_detumble(&mut self) -> Result<(), SimError> {
        self.set_event(3);
        self.state.phase = Phase::C;
        self.mode = Mode::Detumble;
        self.phase_start = self.step_index;
        self.check_detumbled();
        Ok(())
    }

    fn compound_momentum(&self) -> f64 {
        self.compound.as_ref().map_or(0.0, |p| (p.mt * self.state.omega_b).norm())
    }

    fn check_detumbled(&mut self) {
        if self.compound_momentum() < self.model.sim.eps_h {
            self.set_event(4);
            self.state.phase = Phase::Done;
            self.mode = Mode::Done;
        }
    }

    /// Applies the phase transitions due at the current state.
    fn detect_transitions(&mut self) -> Result<(), SimError> {
        let sim = self.model.sim;
        match self.mode {
            Mode::Sync => {
                let synced = self.state.omega_rel().norm() < sim.omega_tol && self.state.q_rel().v.norm() < sim.q_tol;
                if synced {
                    let since = *self.sync_since.get_or_insert(self.step_index);
                    let dwell_steps = (sim.dwell / self.dt).round() as u64;
                    if self.step_index - since >= dwell_steps {
                        if self.stop_after == Some(Phase::A) {
                            self.set_event(1);
                            self.mode = Mode::Done;
                            return Ok(());
                        }
                        self.start_capture()?;
                    }
                } else {
                    self.sync_since = None;
                    if self.state.t > sim.phase_a_timeout {
                        return Err(SimError::PhaseATimeout { timeout: sim.phase_a_timeout });
                    }
                }
            }
            Mode::Capture { traj } => {
                let elapsed = self.time_of(self.step_index - self.phase_start);
                if elapsed >= traj.t_f - 0.5 * self.dt {
                    self.complete_capture()?;
                }
            }
            Mode::Settle => {
                let settle_steps = (sim.settle / self.dt).round() as u64;
                if self.step_index - self.phase_start >= settle_steps {
                    if self.stop_after == Some(Phase::B) {
                        self.set_event(3);
                        self.mode = Mode::Done;
                        return Ok(());
                    }
                    self.start_detumble()?;
                }
            }
            Mode::Detumble => self.check_detumbled(),
            Mode::Done => {}
        }
        Ok(())
    }

    /// Controls and rates at a stage state. `sigma_cap` bounds the decay
    /// rate during detumbling.
    fn stage(&self, s: &SystemState, sigma_cap: f64) -> Result<(StateRate, StageControl), SimError> {
        let model = &self.model;
        let q_b_rate = quat_derivative(&s.q_b, &s.omega_b);
        match self.mode {
            Mode::Sync => {
                let rd = self.locked.reduced(&s.omega_b, &s.h_r);
                let tau_r = phase_a_torque(&s.q_rel(), &s.omega_rel(), &rd, &self.gains_a)?;
                let (q_s, omega_s) = target_rates(model, s);
                Ok((
                    StateRate {
                        q_b: q_b_rate,
                        omega_b: self.locked.mb_inv * (rd.b * tau_r - rd.cb),
                        q_s,
                        omega_s,
                        theta: Vector6::zeros(),
                        theta_dot: Vector6::zeros(),
                        h_r: tau_r,
                    },
                    StageControl { tau_r, ..StageControl::default() },
                ))
            }
            Mode::Capture { traj } => {
                let robot = s.robot();
                let set = assemble(model, &robot);
                let rd = reduce(&set)?;
                let q_rel = s.q_rel();
                let a_sb = q_rel.rotation_matrix().transpose();
                let elapsed = s.t - self.time_of(self.phase_start);
                let input = CoordinationInput {
                    q_rel,
                    omega_rel: s.omega_b - a_sb * s.omega_s,
                    omega_s_in_base: a_sb * s.omega_s,
                    omega_s_dot_in_base: a_sb * target_euler_rate(&model.target, &s.omega_s),
                    theta: s.theta,
                    theta_dot: s.theta_dot,
                    reference: traj.evaluate(elapsed),
                    set: &set,
                    rd: &rd,
                };
                let torques = phase_b_torques(&input, &self.gains_b)?;
                let acc = forward_dynamics_from(&set, &rd, &torques.tau_r, &torques.tau_m, &Vector6::zeros(), false)?;
                let (q_s, omega_s) = target_rates(model, s);
                Ok((
                    StateRate {
                        q_b: q_b_rate,
                        omega_b: acc.omega_b_dot,
                        q_s,
                        omega_s,
                        theta: s.theta_dot,
                        theta_dot: acc.theta_ddot,
                        h_r: torques.tau_r,
                    },
                    StageControl { tau_r: torques.tau_r, tau_m: torques.tau_m, ..StageControl::default() },
                ))
            }
            Mode::Settle | Mode::Detumble | Mode::Done => {
                let plant = self.compound.as_ref().expect("compound formed at capture");
                let cd = plant.evaluate(&s.omega_b, &s.h_r);
                let b_inv = cd.b.try_inverse().ok_or(ControlError::SingularB)?;
                let (tau_r, sigma) = match self.mode {
                    Mode::Settle => (b_inv * cd.ct, 0.0),
                    Mode::Detumble => {
                        let opts = SigmaOptions { eps_h: 0.0, appendix_literal: model.sim.appendix_literal };
                        match phase_c_sigma(&cd, &s.omega_b, &model.limits, &opts)? {
                            DecayRate::Complete => (Vector3::zeros(), 0.0),
                            DecayRate::Rate { sigma, .. } => {
                                let sigma = sigma.min(sigma_cap);
                                (phase_c_torque(&cd, &s.omega_b, sigma, 0.0)?, sigma)
                            }
                        }
                    }
                    _ => (Vector3::zeros(), 0.0),
                };
                let omega_dot = plant.mt_inv * (cd.b * tau_r - cd.ct);
                Ok((
                    StateRate {
                        q_b: q_b_rate,
                        omega_b: omega_dot,
                        q_s: q_b_rate,
                        omega_s: omega_dot,
                        theta: Vector6::zeros(),
                        theta_dot: Vector6::zeros(),
                        h_r: tau_r,
                    },
                    StageControl { tau_r, tau_e: torque_transmission(&cd, &tau_r), sigma, ..StageControl::default() },
                ))
            }
        }
    }

    /// Controls at the current state without advancing.
    pub fn current_control(&self) -> Result<StageControl, SimError> {
        Ok(self.stage(&self.state, f64::INFINITY)?.1)
    }

    /// Handles due transitions, then advances one step. Returns `None` once
    /// the mission is finished.
    pub fn step(&mut self) -> Result<Option<StepInfo>, SimError> {
        if self.is_finished() {
            return Ok(None);
        }
        self.detect_transitions()?;
        if self.is_finished() {
            return Ok(None);
        }
        let detumbling = matches!(self.mode, Mode::Detumble);
        let h_before = self.compound_momentum();
        let cap = if detumbling {
            ((h_before - 0.5 * self.model.sim.eps_h) / self.dt).max(0.0)
        } else {
            f64::INFINITY
        };
        let mut controls = Vec::with_capacity(4);
        let dt = self.dt;
        let next = rk4_step(&self.state, dt, |s| {
            let (rate, control) = self.stage(s, cap)?;
            controls.push(control);
            Ok(rate)
        })?;
        let weights = [1.0, 2.0, 2.0, 1.0];
        let sigma_mean = controls.iter().zip(weights).map(|(c, w)| c.sigma * w).sum::<f64>() / 6.0;
        let tau_r_peak = controls.iter().map(|c| c.tau_r.norm()).fold(0.0, f64::max);
        let tau_e_peak = controls.iter().map(|c| c.tau_e.norm()).fold(0.0, f64::max);
        self.state = next;
        self.step_index += 1;
        self.state.t = self.time_of(self.step_index);
        if self.state.rigid {
            // Keep the target frame welded to the base.
            self.state.q_s = self.state.q_b;
            self.state.omega_s = self.state.omega_b;
        }
        let h_after = self.compound_momentum();
        Ok(Some(StepInfo {
            control: controls[0],
            sigma_mean,
            tau_r_peak,
            tau_e_peak,
            compound_momentum: detumbling.then_some((h_before, h_after)),
        }))
    }

    /// Telemetry sample at the current state.
    pub fn telemetry(&self) -> Result<TelemetryRecord, SimError> {
        let control = if matches!(self.mode, Mode::Done) { StageControl::default() } else { self.current_control()? };
        let ledger = self.ledger();
        let rel = grapple_relative(&self.model, &self.state);
        let q_rel = self.state.q_rel();
        let omega_rel = self.state.omega_rel();
        Ok(TelemetryRecord {
            t: self.state.t,
            omega_rel,
            q_rel,
            r_rel: rel.r_rel,
            eta_rel: rel.eta_rel,
            v_rel: rel.v_rel,
            w_rel_ee: rel.w_rel,
            tau_r: control.tau_r,
            tau_e: control.tau_e,
            h_target: ledger.h_target.norm(),
            h_servicer: ledger.h_servicer.norm(),
            h_wheels: ledger.h_wheels.norm(),
            lyapunov: lyapunov(&q_rel, &omega_rel, self.gains_a.kp),
            sigma: control.sigma,
            phase: self.state.phase,
        })
    }

    /// Runs to completion, sampling telemetry every `telemetry_every` steps
    /// and at every event. Each sample pairs a state with the controls
    /// evaluated at that state.
    pub fn run(mut self) -> Result<MissionReport, SimError> {
        let every = self.model.sim.telemetry_every.max(1) as u64;
        let initial = self.ledger();
        let mut telemetry = Vec::new();
        let mut peak_tau_r: f64 = 0.0;
        let mut peak_tau_e: f64 = 0.0;
        let mut sigma_range: Option<(f64, f64)> = None;
        let mut violations = 0;
        let limits = self.model.limits;
        loop {
            let before = self.events;
            self.detect_transitions()?;
            if self.step_index.is_multiple_of(every) || before != self.events || self.is_finished() {
                telemetry.push(self.telemetry()?);
            }
            let Some(info) = self.step()? else { break };
            peak_tau_r = peak_tau_r.max(info.tau_r_peak);
            peak_tau_e = peak_tau_e.max(info.tau_e_peak);
            if info.compound_momentum.is_some() {
                if info.tau_r_peak > limits.tau_r_max + 1e-9 || info.tau_e_peak > limits.tau_e_max + 1e-9 {
                    violations += 1;
                }
                let s = info.control.sigma;
                sigma_range = Some(sigma_range.map_or((s, s), |(lo, hi)| (lo.min(s), hi.max(s))));
            }
        }
        let completed = matches!(self.mode, Mode::Done);
        Ok(MissionReport {
            telemetry,
            events: self.events,
            capture: self.capture,
            theta_f: self.theta_f,
            t_f: self.t_f,
            initial,
            last: self.ledger(),
            peak_tau_r,
            peak_tau_e,
            sigma_range,
            constraint_violations: violations,
            final_state: self.state,
            completed,
        })
    }
}

/// Runs the full mission for a model.
pub fn run_mission(model: &SystemModel) -> Result<MissionReport, SimError> {
    MissionRunner::new(model)?.run()
}
