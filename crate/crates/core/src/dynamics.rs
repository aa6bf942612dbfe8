//! Equations of motion of the free-floating servicer, the free target and the
//! rigidized compound.
//!
//! The servicer's generalized velocities are the base rate `w_b` (base
//! frame), the joint rates and the wheel spin rates. No external force acts
//! on the servicer before capture, so its CoM is the fixed origin and base
//! translation is eliminated. The inertia blocks are summed body by body from
//! velocity Jacobians about that CoM; the velocity-product terms come from a
//! recursive inverse-dynamics pass with zero accelerations.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use thiserror::Error;

use crate::model::{ChainKinematics, Matrix3x6, Matrix6x3, SystemModel, TargetModel, NUM_JOINTS};
use crate::spatial::skew;

/// Base rate, joints, wheels.
pub const NUM_DOF: usize = 3 + NUM_JOINTS + 3;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("wheel inertia matrix M_r is singular")]
    SingularWheelInertia,
    #[error("wheel/base coupling M_br is singular")]
    SingularCoupling,
    #[error("generalized inertia matrix is singular or indefinite")]
    SingularInertia,
    #[error("end-effector wrench map is rank deficient (|det| = {det:e})")]
    RankDeficient { det: f64 },
}

/// Velocity-level state of the servicer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub theta: Vector6<f64>,
    pub theta_dot: Vector6<f64>,
    pub omega_b: Vector3<f64>,
    /// Wheel angular momentum about each wheel axis.
    pub h_r: Vector3<f64>,
}

impl RobotState {
    pub fn locked(theta: Vector6<f64>, omega_b: Vector3<f64>, h_r: Vector3<f64>) -> Self {
        Self { theta, theta_dot: Vector6::zeros(), omega_b, h_r }
    }
}

/// Wheel spin rates relative to the base, from wheel momentum.
pub fn wheel_rates(model: &SystemModel, omega_b: &Vector3<f64>, h_r: &Vector3<f64>) -> Vector3<f64> {
    h_r / model.wheels.inertia - model.wheels.axes.transpose() * omega_b
}

/// Blocks of the full generalized inertia matrix and bias vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotInertiaSet {
    pub mb_tilde: Matrix3<f64>,
    pub mbm: Matrix3x6,
    pub mbr: Matrix3<f64>,
    pub mm: Matrix6<f64>,
    pub mr: Matrix3<f64>,
    pub cb_tilde: Vector3<f64>,
    pub cm: Vector6<f64>,
    pub cr: Vector3<f64>,
    /// End-effector twist Jacobian w.r.t. base rate.
    pub jb: Matrix6x3,
    /// End-effector twist Jacobian w.r.t. joint rates.
    pub jm: Matrix6<f64>,
}

impl RobotInertiaSet {
    /// The full 12x12 matrix ordered `[w_b, theta, phi]`.
    pub fn full_matrix(&self) -> SMatrix<f64, NUM_DOF, NUM_DOF> {
        let mut m = SMatrix::<f64, NUM_DOF, NUM_DOF>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.mb_tilde);
        m.fixed_view_mut::<3, 6>(0, 3).copy_from(&self.mbm);
        m.fixed_view_mut::<6, 3>(3, 0).copy_from(&self.mbm.transpose());
        m.fixed_view_mut::<6, 6>(3, 3).copy_from(&self.mm);
        m.fixed_view_mut::<3, 3>(0, 9).copy_from(&self.mbr);
        m.fixed_view_mut::<3, 3>(9, 0).copy_from(&self.mbr.transpose());
        m.fixed_view_mut::<3, 3>(9, 9).copy_from(&self.mr);
        m
    }
}

/// Dynamics with the wheel accelerations eliminated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedDynamics {
    pub mb: Matrix3<f64>,
    pub cb: Vector3<f64>,
    pub b: Matrix3<f64>,
}

/// Generalized forces dual to `[w_b, theta, phi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedForces {
    pub base: Vector3<f64>,
    pub joints: Vector6<f64>,
    pub wheels: Vector3<f64>,
}

impl GeneralizedForces {
    pub fn to_vector(&self) -> SVector<f64, NUM_DOF> {
        let mut v = SVector::<f64, NUM_DOF>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.base);
        v.fixed_rows_mut::<6>(3).copy_from(&self.joints);
        v.fixed_rows_mut::<3>(9).copy_from(&self.wheels);
        v
    }
}

/// Accelerations returned by the forward dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accelerations {
    pub omega_b_dot: Vector3<f64>,
    pub theta_ddot: Vector6<f64>,
}

struct BodyKinematics {
    mass: f64,
    /// Central inertia rotated into the base frame.
    inertia: Matrix3<f64>,
    /// Position relative to the base CoM and its base-frame derivatives.
    pos: Vector3<f64>,
    vel: Vector3<f64>,
    acc: Vector3<f64>,
    /// Angular velocity/acceleration relative to the base.
    w: Vector3<f64>,
    alpha: Vector3<f64>,
}

/// Motion of the base (index 0) and links (1..=6) relative to the base frame.
fn relative_motion(
    model: &SystemModel,
    chain: &ChainKinematics,
    theta_dot: &Vector6<f64>,
    theta_ddot: &Vector6<f64>,
) -> Vec<BodyKinematics> {
    let mut bodies = Vec::with_capacity(NUM_JOINTS + 1);
    bodies.push(BodyKinematics {
        mass: model.base.mass,
        inertia: model.base.inertia,
        pos: Vector3::zeros(),
        vel: Vector3::zeros(),
        acc: Vector3::zeros(),
        w: Vector3::zeros(),
        alpha: Vector3::zeros(),
    });
    let mut w_prev = Vector3::zeros();
    let mut alpha_prev = Vector3::zeros();
    let mut v_joint = Vector3::zeros();
    let mut a_joint = Vector3::zeros();
    for (i, link) in model.arm.links.iter().enumerate() {
        let a = chain.axis[i];
        let w = w_prev + a * theta_dot[i];
        let alpha = alpha_prev + a * theta_ddot[i] + w_prev.cross(&a) * theta_dot[i];
        let d = chain.com[i] - chain.origin[i];
        let vel = v_joint + w.cross(&d);
        let acc = a_joint + alpha.cross(&d) + w.cross(&w.cross(&d));
        let r = chain.rot[i];
        bodies.push(BodyKinematics {
            mass: link.body.mass,
            inertia: r * link.body.inertia * r.transpose(),
            pos: chain.com[i],
            vel,
            acc,
            w,
            alpha,
        });
        let next = if i + 1 < NUM_JOINTS { chain.origin[i + 1] } else { chain.tip };
        let dn = next - chain.origin[i];
        v_joint += w.cross(&dn);
        a_joint += alpha.cross(&dn) + w.cross(&w.cross(&dn));
        w_prev = w;
        alpha_prev = alpha;
    }
    bodies
}

fn center_of_mass(bodies: &[BodyKinematics]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let total: f64 = bodies.iter().map(|b| b.mass).sum();
    let mut c = (Vector3::zeros(), Vector3::zeros(), Vector3::zeros());
    for b in bodies {
        c.0 += b.mass * b.pos;
        c.1 += b.mass * b.vel;
        c.2 += b.mass * b.acc;
    }
    (c.0 / total, c.1 / total, c.2 / total)
}

/// Recursive inverse dynamics: generalized forces needed to produce the
/// accelerations `(w_b_dot, theta_ddot, phi_ddot)` at the given state.
pub fn inverse_dynamics(
    model: &SystemModel,
    state: &RobotState,
    omega_b_dot: &Vector3<f64>,
    theta_ddot: &Vector6<f64>,
    phi_ddot: &Vector3<f64>,
) -> GeneralizedForces {
    let chain = model.arm.chain(&state.theta);
    inverse_dynamics_with_chain(model, &chain, state, omega_b_dot, theta_ddot, phi_ddot)
}

fn inverse_dynamics_with_chain(
    model: &SystemModel,
    chain: &ChainKinematics,
    state: &RobotState,
    omega_b_dot: &Vector3<f64>,
    theta_ddot: &Vector6<f64>,
    phi_ddot: &Vector3<f64>,
) -> GeneralizedForces {
    let w = state.omega_b;
    let wd = *omega_b_dot;
    let bodies = relative_motion(model, chain, &state.theta_dot, theta_ddot);
    let (c, cd, cdd) = center_of_mass(&bodies);

    let mut force = [Vector3::zeros(); NUM_JOINTS + 1];
    let mut moment = [Vector3::zeros(); NUM_JOINTS + 1];
    let mut base = Vector3::zeros();
    for (k, b) in bodies.iter().enumerate() {
        let r = b.pos - c;
        let rd = b.vel - cd;
        let rdd = b.acc - cdd;
        let acc = wd.cross(&r) + w.cross(&w.cross(&r)) + 2.0 * w.cross(&rd) + rdd;
        let omega = w + b.w;
        let alpha = wd + b.alpha + w.cross(&b.w);
        force[k] = b.mass * acc;
        moment[k] = b.inertia * alpha + omega.cross(&(b.inertia * omega));
        base += r.cross(&force[k]) + moment[k];
    }

    let e = model.wheels.axes;
    let iw = model.wheels.inertia;
    let phi_dot = wheel_rates(model, &w, &state.h_r);
    let mut wheels = Vector3::zeros();
    for j in 0..3 {
        let axis = e.column(j).into_owned();
        let spin = w + axis * phi_dot[j];
        let alpha = wd + axis * phi_ddot[j] + w.cross(&axis) * phi_dot[j];
        let n = axis * (iw * axis.dot(&alpha)) + spin.cross(&(axis * (iw * axis.dot(&spin))));
        base += n;
        wheels[j] = axis.dot(&n);
    }

    let mut joints = Vector6::zeros();
    for i in 0..NUM_JOINTS {
        let o = chain.origin[i];
        let mut total = Vector3::zeros();
        for k in (i + 1)..=NUM_JOINTS {
            total += (bodies[k].pos - o).cross(&force[k]) + moment[k];
        }
        joints[i] = chain.axis[i].dot(&total);
    }

    GeneralizedForces { base, joints, wheels }
}

/// Inertia blocks by summing body Jacobians about the servicer CoM; bias
/// terms by inverse dynamics at zero acceleration.
pub fn assemble(model: &SystemModel, state: &RobotState) -> RobotInertiaSet {
    let chain = model.arm.chain(&state.theta);
    let com = model.base_com_from_chain(&chain) * -1.0;
    let jc = model.com_jacobian_from_chain(&chain) * -1.0;

    // Base body: r = -c, velocity -J_c theta_dot, no relative rotation.
    let rb = -com;
    let sb = skew(&rb);
    let mut mb_tilde = model.base.mass * sb.transpose() * sb + model.base.inertia;
    let mut mbm = model.base.mass * sb * (-jc);
    let mut mm = model.base.mass * jc.transpose() * jc;

    for (i, link) in model.arm.links.iter().enumerate() {
        let r = chain.com[i] - com;
        let s = skew(&r);
        let mut jp = Matrix3x6::zeros();
        let mut jw = Matrix3x6::zeros();
        for j in 0..=i {
            jp.set_column(j, &chain.axis[j].cross(&(chain.com[i] - chain.origin[j])));
            jw.set_column(j, &chain.axis[j]);
        }
        let jv = jp - jc;
        let inertia = chain.rot[i] * link.body.inertia * chain.rot[i].transpose();
        let m = link.body.mass;
        mb_tilde += m * s.transpose() * s + inertia;
        mbm += m * s * jv + inertia * jw;
        mm += m * jv.transpose() * jv + jw.transpose() * inertia * jw;
    }
    let e = model.wheels.axes;
    mb_tilde += model.wheels.inertia * e * e.transpose();

    let bias = inverse_dynamics_with_chain(model, &chain, state, &Vector3::zeros(), &Vector6::zeros(), &Vector3::zeros());

    let p_e = chain.tip - com;
    let mut jb = Matrix6x3::zeros();
    jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p_e)));
    jb.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    let mut jm = chain.tip_jacobian();
    let mut top = jm.fixed_view_mut::<3, 6>(0, 0);
    top -= jc;

    RobotInertiaSet {
        mb_tilde,
        mbm,
        mbr: model.wheels.coupling(),
        mm,
        mr: model.wheels.inertia_matrix(),
        cb_tilde: bias.base,
        cm: bias.joints,
        cr: bias.wheels,
        jb,
        jm,
    }
}

/// `B = -M_br M_r^-1`, `M_b = M~_b + B M_br^T`, `c_b = c~_b + B c_r`.
pub fn reduce(set: &RobotInertiaSet) -> Result<ReducedDynamics, DynamicsError> {
    let mr_inv = set.mr.try_inverse().ok_or(DynamicsError::SingularWheelInertia)?;
    if !mr_inv.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::SingularWheelInertia);
    }
    let b = -set.mbr * mr_inv;
    Ok(ReducedDynamics { mb: set.mb_tilde + b * set.mbr.transpose(), cb: set.cb_tilde + b * set.cr, b })
}

/// `phi(w) = lambda [w_y w_z, -w_x w_z, 0]`.
pub fn target_euler_rate(target: &TargetModel, omega_s: &Vector3<f64>) -> Vector3<f64> {
    let l = target.lambda();
    Vector3::new(l * omega_s.y * omega_s.z, -l * omega_s.x * omega_s.z, 0.0)
}

/// Forward dynamics of the servicer. With `joints_locked` the joint rows are
/// dropped and only the base equation is solved.
pub fn forward_dynamics(
    model: &SystemModel,
    state: &RobotState,
    tau_r: &Vector3<f64>,
    tau_m: &Vector6<f64>,
    n_e: &Vector6<f64>,
    joints_locked: bool,
) -> Result<Accelerations, DynamicsError> {
    let set = assemble(model, state);
    let rd = reduce(&set)?;
    forward_dynamics_from(&set, &rd, tau_r, tau_m, n_e, joints_locked)
}

pub fn forward_dynamics_from(
    set: &RobotInertiaSet,
    rd: &ReducedDynamics,
    tau_r: &Vector3<f64>,
    tau_m: &Vector6<f64>,
    n_e: &Vector6<f64>,
    joints_locked: bool,
) -> Result<Accelerations, DynamicsError> {
    let rhs_b = rd.b * tau_r - rd.cb + set.jb.transpose() * n_e;
    if joints_locked {
        let chol = rd.mb.cholesky().ok_or(DynamicsError::SingularInertia)?;
        return Ok(Accelerations { omega_b_dot: chol.solve(&rhs_b), theta_ddot: Vector6::zeros() });
    }
    let m = reduced_matrix(set, rd);
    let mut rhs = Vector9::zeros();
    rhs.fixed_rows_mut::<3>(0).copy_from(&rhs_b);
    rhs.fixed_rows_mut::<6>(3).copy_from(&(tau_m - set.cm + set.jm.transpose() * n_e));
    let chol = m.cholesky().ok_or(DynamicsError::SingularInertia)?;
    let acc = chol.solve(&rhs);
    Ok(Accelerations {
        omega_b_dot: acc.fixed_rows::<3>(0).into_owned(),
        theta_ddot: acc.fixed_rows::<6>(3).into_owned(),
    })
}

/// `M(theta)` of the reduced equations.
pub fn reduced_matrix(set: &RobotInertiaSet, rd: &ReducedDynamics) -> Matrix9 {
    let mut m = Matrix9::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rd.mb);
    m.fixed_view_mut::<3, 6>(0, 3).copy_from(&set.mbm);
    m.fixed_view_mut::<6, 3>(3, 0).copy_from(&set.mbm.transpose());
    m.fixed_view_mut::<6, 6>(3, 3).copy_from(&set.mm);
    m
}

/// Angular momentum of the servicer about its CoM, base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServicerMomentum {
    /// Base and links.
    pub body: Vector3<f64>,
    /// Wheel rotors, `E h_r`.
    pub wheels: Vector3<f64>,
}

pub fn servicer_momentum(model: &SystemModel, state: &RobotState) -> ServicerMomentum {
    let chain = model.arm.chain(&state.theta);
    let bodies = relative_motion(model, &chain, &state.theta_dot, &Vector6::zeros());
    let (c, cd, _) = center_of_mass(&bodies);
    let w = state.omega_b;
    let mut body = Vector3::zeros();
    for b in &bodies {
        let r = b.pos - c;
        let v = w.cross(&r) + b.vel - cd;
        body += b.mass * r.cross(&v) + b.inertia * (w + b.w);
    }
    // Wheel rotors carry only axial inertia; their full momentum is E h_r.
    let e = model.wheels.axes;
    let wheels = e * state.h_r;
    ServicerMomentum { body, wheels }
}

/// Constant part of the rigidized servicer-plus-target dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundPlant {
    pub mb: Matrix3<f64>,
    pub b: Matrix3<f64>,
    pub wheel_axes: Matrix3<f64>,
    pub mt: Matrix3<f64>,
    pub mt_inv: Matrix3<f64>,
    pub ms: Matrix3<f64>,
    pub g: Matrix3<f64>,
    pub inertia_c: Matrix3<f64>,
    pub mass_s: f64,
    pub lambda: f64,
    pub rho: Vector3<f64>,
    pub rho_s: Vector3<f64>,
    pub varrho: Vector3<f64>,
    pub jb: Matrix6x3,
    /// `W^-1 K`: end-effector wrench per unit compound acceleration.
    wrench_gain: Matrix6x3,
    wrench_inv: Matrix6<f64>,
}

/// Rigidized dynamics at one angular velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundDynamics {
    pub mt: Matrix3<f64>,
    pub ct: Vector3<f64>,
    pub ms: Matrix3<f64>,
    pub cs: Vector3<f64>,
    pub g: Matrix3<f64>,
    pub cg: Vector3<f64>,
    pub b: Matrix3<f64>,
    pub rho_s: Vector3<f64>,
}

impl CompoundPlant {
    /// Builds the compound of the servicer locked at `theta` and the target
    /// whose CoM sits at `rho` from the servicer CoM, grasped at `varrho`
    /// from its own CoM. Frames are aligned.
    ///
    /// The target's reaction on the end-effector is eliminated through the
    /// full 6x6 wrench map `W = [[I, 0], [[varrho x], I]]`, whose lower block
    /// row is `J_s^T = [[varrho x] I]`; the force row carries the target's
    /// CoM acceleration.
    pub fn new(model: &SystemModel, theta: &Vector6<f64>, rho: &Vector3<f64>) -> Result<Self, DynamicsError> {
        let state = RobotState::locked(*theta, Vector3::zeros(), Vector3::zeros());
        let set = assemble(model, &state);
        let rd = reduce(&set)?;
        let target = &model.target;
        let m_sv = model.servicer_mass();
        let m_s = target.mass;
        let rho_s = rho * (m_sv / (m_sv + m_s));
        let varrho = target.grasp_offset;

        let mut w = Matrix6::identity();
        w.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&varrho));
        let det = w.determinant();
        let lu = w.lu();
        let wrench_inv = lu.try_inverse().filter(|_| det.abs() > 1e-12).ok_or(DynamicsError::RankDeficient { det })?;

        let mut k = Matrix6x3::zeros();
        k.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-m_s * skew(&rho_s)));
        k.fixed_view_mut::<3, 3>(3, 0).copy_from(&target.inertia);
        let wrench_gain = wrench_inv * k;

        let p_e = rho + varrho;
        let mut jb = Matrix6x3::zeros();
        jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p_e)));
        jb.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());

        let mt = rd.mb + jb.transpose() * wrench_gain;
        let mt_inv = mt.try_inverse().ok_or(DynamicsError::SingularInertia)?;
        let ms = target.inertia + m_s * skew(&varrho) * skew(&rho_s);
        let g = -ms * mt_inv * rd.b;
        Ok(Self {
            mb: rd.mb,
            b: rd.b,
            wheel_axes: model.wheels.axes,
            mt,
            mt_inv,
            ms,
            g,
            inertia_c: target.inertia,
            mass_s: m_s,
            lambda: target.lambda(),
            rho: *rho,
            rho_s,
            varrho,
            jb,
            wrench_gain,
            wrench_inv,
        })
    }

    fn phi(&self, w: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.lambda * w.y * w.z, -self.lambda * w.x * w.z, 0.0)
    }

    /// Bias of the locked servicer, `w x (M_b w + E h_r)`.
    pub fn servicer_bias(&self, omega_b: &Vector3<f64>, h_r: &Vector3<f64>) -> Vector3<f64> {
        omega_b.cross(&(self.mb * omega_b + self.wheel_axes * h_r))
    }

    pub fn evaluate(&self, omega_b: &Vector3<f64>, h_r: &Vector3<f64>) -> CompoundDynamics {
        let w = omega_b;
        let cb = self.servicer_bias(w, h_r);
        let phi = self.phi(w);
        let centripetal = w.cross(&w.cross(&self.rho_s));
        let mut k0 = Vector6::zeros();
        k0.fixed_rows_mut::<3>(0).copy_from(&(self.mass_s * centripetal));
        k0.fixed_rows_mut::<3>(3).copy_from(&(-self.inertia_c * phi));
        let ct = cb + self.jb.transpose() * (self.wrench_inv * k0);
        let cs = -self.inertia_c * phi - self.mass_s * self.varrho.cross(&centripetal);
        let cg = self.ms * self.mt_inv * ct - cs;
        CompoundDynamics { mt: self.mt, ct, ms: self.ms, cs, g: self.g, cg, b: self.b, rho_s: self.rho_s }
    }

    /// Wrench applied to the end-effector by the target for a given compound
    /// acceleration: `n_e = -(W^-1 K w_dot + W^-1 k0)`.
    pub fn end_effector_wrench(&self, omega_b: &Vector3<f64>, omega_b_dot: &Vector3<f64>) -> Vector6<f64> {
        let w = omega_b;
        let centripetal = w.cross(&w.cross(&self.rho_s));
        let mut k0 = Vector6::zeros();
        k0.fixed_rows_mut::<3>(0).copy_from(&(self.mass_s * centripetal));
        k0.fixed_rows_mut::<3>(3).copy_from(&(-self.inertia_c * self.phi(w)));
        -(self.wrench_gain * omega_b_dot + self.wrench_inv * k0)
    }
}

/// Rigidized dynamics for joints locked at `theta`, with the reference
/// displacement `rho` from the model.
pub fn compound(
    model: &SystemModel,
    theta: &Vector6<f64>,
    omega_b: &Vector3<f64>,
    h_r: &Vector3<f64>,
) -> Result<CompoundDynamics, DynamicsError> {
    Ok(CompoundPlant::new(model, theta, &model.initial.rho)?.evaluate(omega_b, h_r))
}

/// Force exerted on the end-effector by the target:
/// `f_e = -m_s (w_dot x rho_s + w x (w x rho_s))`.
pub fn end_effector_force(mass_s: f64, rho_s: &Vector3<f64>, omega_b: &Vector3<f64>, omega_b_dot: &Vector3<f64>) -> Vector3<f64> {
    -mass_s * (omega_b_dot.cross(rho_s) + omega_b.cross(&omega_b.cross(rho_s)))
}

/// `tau_e = G tau_r + c_g`.
pub fn torque_transmission(cd: &CompoundDynamics, tau_r: &Vector3<f64>) -> Vector3<f64> {
    cd.g * tau_r + cd.cg
}

/// `w_dot = M_t^-1 (B tau_r - c_t)`.
pub fn compound_acceleration(cd: &CompoundDynamics, tau_r: &Vector3<f64>) -> Vector3<f64> {
    cd.mt.lu().solve(&(cd.b * tau_r - cd.ct)).expect("M_t is invertible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> SystemModel {
        SystemModel::reference()
    }

    fn state_strategy() -> impl Strategy<Value = RobotState> {
        (
            proptest::array::uniform6(-3.0..3.0f64),
            proptest::array::uniform6(-0.5..0.5f64),
            proptest::array::uniform3(-0.5..0.5f64),
            proptest::array::uniform3(-2.0..2.0f64),
        )
            .prop_map(|(t, td, w, h)| RobotState {
                theta: Vector6::from_column_slice(&t),
                theta_dot: Vector6::from_column_slice(&td),
                omega_b: Vector3::from_column_slice(&w),
                h_r: Vector3::from_column_slice(&h),
            })
    }

    #[test]
    fn bias_vanishes_at_rest() {
        let m = model();
        let s = RobotState::locked(Vector6::new(0.1, 0.2, -0.3, 0.4, 0.5, 0.6), Vector3::zeros(), Vector3::zeros());
        let set = assemble(&m, &s);
        assert_eq!(set.cb_tilde, Vector3::zeros());
        assert_eq!(set.cm, Vector6::zeros());
        assert_eq!(set.cr, Vector3::zeros());
    }

    #[test]
    fn massless_arm_leaves_base_inertia() {
        let mut m = model();
        for l in m.arm.links.iter_mut() {
            l.body.mass = 0.0;
            l.body.inertia = Matrix3::zeros();
        }
        let s = RobotState::locked(Vector6::new(0.1, 0.2, -0.3, 0.4, 0.5, 0.6), Vector3::zeros(), Vector3::zeros());
        let set = assemble(&m, &s);
        let rd = reduce(&set).unwrap();
        assert!((rd.mb - m.base.inertia).abs().max() < 1e-12);
        let wheel = m.wheels.inertia * m.wheels.axes * m.wheels.axes.transpose();
        assert!((set.mb_tilde - m.base.inertia - wheel).abs().max() < 1e-12);
    }

    #[test]
    fn diagonal_wheels_give_scaled_coupling() {
        let m = model();
        let set = assemble(&m, &RobotState::locked(m.initial.theta_i, Vector3::zeros(), Vector3::zeros()));
        let rd = reduce(&set).unwrap();
        assert!((rd.b + set.mbr / 0.05).abs().max() < 1e-12);
        assert!((rd.mb - rd.b * set.mbr.transpose() - set.mb_tilde).abs().max() < 1e-12);
    }

    #[test]
    fn singular_wheel_inertia_is_reported() {
        let m = model();
        let mut set = assemble(&m, &RobotState::locked(m.initial.theta_i, Vector3::zeros(), Vector3::zeros()));
        set.mr = Matrix3::zeros();
        assert_eq!(reduce(&set), Err(DynamicsError::SingularWheelInertia));
    }

    #[test]
    fn euler_rate_examples() {
        let m = model();
        assert_eq!(target_euler_rate(&m.target, &Vector3::new(0.0, 0.0, 0.3)), Vector3::zeros());
        let mut sphere = m.target;
        sphere.inertia = Matrix3::identity() * 50.0;
        assert_eq!(target_euler_rate(&sphere, &Vector3::new(0.1, 0.2, 0.3)), Vector3::zeros());

        let w = Vector3::new(0.1, 0.2, 0.3);
        let l = 1.0 - 40.0 / 70.0;
        let phi = target_euler_rate(&m.target, &w);
        assert!((phi - Vector3::new(0.3 * 0.2 * l, -0.3 * 0.1 * l, 0.0)).norm() < 1e-15);
        // Full torque-free Euler equations: I w_dot = -w x I w.
        let i = m.target.inertia;
        let euler = i.try_inverse().unwrap() * -(w.cross(&(i * w)));
        assert!((phi - euler).norm() < 1e-15);
    }

    #[test]
    fn locked_bias_matches_closed_form() {
        let m = model();
        let w = Vector3::new(0.03, -0.02, 0.05);
        let h = Vector3::new(0.5, -1.0, 0.2);
        let s = RobotState::locked(m.initial.theta_i, w, h);
        let set = assemble(&m, &s);
        let rd = reduce(&set).unwrap();
        let plant = CompoundPlant::new(&m, &m.initial.theta_i, &m.initial.rho).unwrap();
        assert!((plant.servicer_bias(&w, &h) - rd.cb).norm() < 1e-14);
    }

    #[test]
    fn coincident_coms_reduce_to_target_inertia() {
        let mut m = model();
        m.target.grasp_offset = Vector3::zeros();
        let plant = CompoundPlant::new(&m, &m.initial.theta_i, &Vector3::zeros()).unwrap();
        let w = Vector3::new(0.1, 0.2, 0.3);
        let cd = plant.evaluate(&w, &Vector3::zeros());
        assert_eq!(cd.ms, m.target.inertia);
        assert_eq!(cd.rho_s, Vector3::zeros());
        // Torque-free target: c_s = w x I_c w = -I_c phi(w).
        let expected = w.cross(&(m.target.inertia * w));
        assert!((cd.cs - expected).norm() < 1e-14);
    }

    #[test]
    fn compound_at_rest_has_no_bias() {
        let m = model();
        let cd = compound(&m, &m.initial.theta_i, &Vector3::zeros(), &Vector3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(cd.ct, Vector3::zeros());
        assert_eq!(cd.cs, Vector3::zeros());
        assert_eq!(cd.cg, Vector3::zeros());
        assert_eq!(torque_transmission(&cd, &Vector3::zeros()), Vector3::zeros());
    }

    #[test]
    fn force_examples() {
        let rho_s = Vector3::new(0.0, 0.0, 2.0);
        assert_eq!(end_effector_force(200.0, &rho_s, &Vector3::zeros(), &Vector3::zeros()), Vector3::zeros());
        let w = Vector3::new(0.1, -0.3, 0.2);
        assert_eq!(end_effector_force(200.0, &Vector3::zeros(), &w, &w), Vector3::zeros());
        let spin = Vector3::new(0.0, 0.0, 0.7);
        assert!(end_effector_force(200.0, &rho_s, &spin, &Vector3::zeros()).norm() < 1e-15);
    }

    #[test]
    fn affine_zero_of_transmission() {
        let m = model();
        let cd = compound(&m, &m.initial.theta_i, &Vector3::new(0.01, 0.02, 0.03), &Vector3::new(0.1, 0.0, -0.2)).unwrap();
        let tau = cd.g.lu().solve(&(-cd.cg)).unwrap();
        assert!(torque_transmission(&cd, &tau).norm() < 1e-15);
    }

    #[test]
    fn locked_forward_dynamics_matches_dense_solve() {
        let m = model();
        let s = RobotState::locked(m.initial.theta_i, Vector3::zeros(), Vector3::zeros());
        let tau = Vector3::new(0.0, 0.0, 0.5);
        let acc = forward_dynamics(&m, &s, &tau, &Vector6::zeros(), &Vector6::zeros(), true).unwrap();
        let set = assemble(&m, &s);
        let rd = reduce(&set).unwrap();
        let dense = rd.mb.lu().solve(&(rd.b * tau - rd.cb)).unwrap();
        assert!((acc.omega_b_dot - dense).norm() < 1e-14);
        assert_eq!(acc.theta_ddot, Vector6::zeros());
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        let m = model();
        let s = RobotState::locked(m.initial.theta_i, Vector3::zeros(), Vector3::zeros());
        let acc = forward_dynamics(&m, &s, &Vector3::zeros(), &Vector6::zeros(), &Vector6::zeros(), false).unwrap();
        assert_eq!(acc.omega_b_dot, Vector3::zeros());
        assert_eq!(acc.theta_ddot, Vector6::zeros());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn inertia_columns_match_inverse_dynamics(s in state_strategy()) {
            let m = model();
            let rest = RobotState { theta_dot: Vector6::zeros(), omega_b: Vector3::zeros(), h_r: Vector3::zeros(), ..s };
            let full = assemble(&m, &rest).full_matrix();
            for col in 0..NUM_DOF {
                let mut q = SVector::<f64, NUM_DOF>::zeros();
                q[col] = 1.0;
                let f = inverse_dynamics(
                    &m,
                    &rest,
                    &q.fixed_rows::<3>(0).into_owned(),
                    &q.fixed_rows::<6>(3).into_owned(),
                    &q.fixed_rows::<3>(9).into_owned(),
                );
                let diff = (f.to_vector() - full.column(col)).amax();
                prop_assert!(diff < 1e-10, "column {col}: {diff:e}");
            }
        }

        #[test]
        fn inverse_dynamics_is_affine_in_acceleration(s in state_strategy(), a in proptest::array::uniform12(-1.0..1.0f64)) {
            // ID(q, qd, qdd) = H qdd + ID(q, qd, 0)
            let m = model();
            let set = assemble(&m, &s);
            let q = SVector::<f64, NUM_DOF>::from_column_slice(&a);
            let f = inverse_dynamics(&m, &s, &q.fixed_rows::<3>(0).into_owned(), &q.fixed_rows::<6>(3).into_owned(), &q.fixed_rows::<3>(9).into_owned());
            let bias = GeneralizedForces { base: set.cb_tilde, joints: set.cm, wheels: set.cr }.to_vector();
            prop_assert!((f.to_vector() - set.full_matrix() * q - bias).amax() < 1e-10);
        }

        #[test]
        fn generalized_inertia_is_spd(s in state_strategy()) {
            let m = model();
            let set = assemble(&m, &s);
            let full = set.full_matrix();
            prop_assert!((full - full.transpose()).amax() < 1e-12);
            prop_assert!(full.cholesky().is_some());
            let rd = reduce(&set).unwrap();
            prop_assert!(reduced_matrix(&set, &rd).cholesky().is_some());
        }

        #[test]
        fn wheel_bias_is_zero(s in state_strategy()) {
            let set = assemble(&model(), &s);
            prop_assert!(set.cr.amax() < 1e-14);
        }

        #[test]
        fn momentum_matches_inertia_blocks(s in state_strategy()) {
            // L = M_b w + M_bm theta_dot + E h_r
            let m = model();
            let set = assemble(&m, &s);
            let rd = reduce(&set).unwrap();
            let p = servicer_momentum(&m, &s);
            let expected = rd.mb * s.omega_b + set.mbm * s.theta_dot;
            prop_assert!((p.body - expected).amax() < 1e-10);
            prop_assert!((p.wheels - m.wheels.axes * s.h_r).amax() < 1e-14);
        }

        #[test]
        fn end_effector_jacobians_match_finite_difference(s in state_strategy()) {
            let m = model();
            let set = assemble(&m, &s);
            let h = 1e-6;
            let tip = |t: &Vector6<f64>| m.forward_kinematics(t).r + m.base_com_offset(t);
            for j in 0..6 {
                let mut p = s.theta; p[j] += h;
                let mut n = s.theta; n[j] -= h;
                let fd = (tip(&p) - tip(&n)) / (2.0 * h);
                prop_assert!((fd - set.jm.fixed_view::<3, 1>(0, j)).amax() < 1e-6);
                let rp = m.arm.chain(&p).rot[5];
                let rn = m.arm.chain(&n).rot[5];
                let dr = (rp - rn) / (2.0 * h) * m.arm.chain(&s.theta).rot[5].transpose();
                let w = Vector3::new(dr[(2, 1)], dr[(0, 2)], dr[(1, 0)]);
                prop_assert!((w - set.jm.fixed_view::<3, 1>(3, j)).amax() < 1e-6);
            }
            // Base-rate block: rigid rotation of the tip about the servicer CoM.
            let p_e = tip(&s.theta);
            for j in 0..3 {
                let mut axis = Vector3::zeros();
                axis[j] = 1.0;
                let rot = |e: f64| nalgebra::Rotation3::from_scaled_axis(axis * e);
                let fd = (rot(h) * p_e - rot(-h) * p_e) / (2.0 * h);
                prop_assert!((fd - set.jb.fixed_view::<3, 1>(0, j)).amax() < 1e-6);
            }
        }
    }
}
