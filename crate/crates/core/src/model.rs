//! Kinematic and inertial description of the servicing robot and the target.
//!
//! The servicer is a rigid base carrying three reaction wheels and a six
//! revolute-joint serial arm. Link frames are parallel to the base frame when
//! all joint angles are zero; every link extends along its own local x axis,
//! the next joint sits at `[length, 0, 0]` in the link frame, and the
//! end-effector is the tip of link six. All positions below are expressed in
//! the base frame with the origin at the base CoM unless stated otherwise.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

use crate::spatial::{skew, Quaternion, UNIT_TOLERANCE};

pub const NUM_JOINTS: usize = 6;

pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix6x3 = SMatrix<f64, 6, 3>;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("grasp pose unreachable: residual {residual:e} after {iterations} iterations")]
    NoSolution { residual: f64, iterations: usize },
    #[error("singular arm configuration (condition number {condition:e}), residual {residual:e}")]
    Singular { condition: f64, residual: f64 },
}

/// Mass, CoM offset and central inertia of one rigid body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl BodyParams {
    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(invalid(format!("{field}.mass_kg"), format!("mass must be positive, got {}", self.mass)));
        }
        validate_inertia(&self.inertia, &format!("{field}.inertia_kgm2"))
    }

    /// Mass and SPD inertia only. The reference base tensor is positive
    /// definite but its principal moments fail the triangle inequality.
    pub fn validate_spd(&self, field: &str) -> Result<(), ConfigError> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(invalid(format!("{field}.mass_kg"), format!("mass must be positive, got {}", self.mass)));
        }
        validate_spd(&self.inertia, &format!("{field}.inertia_kgm2")).map(|_| ())
    }
}

/// Symmetric, positive definite and satisfying the triangle inequalities on
/// the principal moments.
pub fn validate_inertia(inertia: &Matrix3<f64>, field: &str) -> Result<(), ConfigError> {
    let eig = validate_spd(inertia, field)?;
    let scale = inertia.abs().max().max(f64::MIN_POSITIVE);
    let sum = eig.sum();
    for &l in eig.iter() {
        if l > sum - l + 1e-9 * scale {
            return Err(invalid(
                field,
                format!("principal moments {:?} violate the triangle inequality", eig.as_slice()),
            ));
        }
    }
    Ok(())
}

fn validate_spd(inertia: &Matrix3<f64>, field: &str) -> Result<Vector3<f64>, ConfigError> {
    if inertia.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    let scale = inertia.abs().max().max(f64::MIN_POSITIVE);
    if (inertia - inertia.transpose()).abs().max() > 1e-9 * scale {
        return Err(invalid(field, "inertia tensor is not symmetric"));
    }
    let eig = inertia.symmetric_eigen().eigenvalues;
    if eig.iter().any(|&l| l <= 0.0) {
        return Err(invalid(field, format!("inertia tensor is not positive definite (principal moments {:?})", eig.as_slice())));
    }
    Ok(eig)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// CoM and inertia expressed in the link frame.
    pub body: BodyParams,
    pub length: f64,
    /// Joint axis, unit vector in the link frame.
    pub axis: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    /// Joint-1 origin relative to the base CoM.
    pub mount: Vector3<f64>,
    pub links: [Link; NUM_JOINTS],
    pub qd_max: f64,
    pub qdd_max: f64,
}

/// Three wheels, axes stored as the columns of `axes`, identical axial inertia.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSet {
    pub axes: Matrix3<f64>,
    pub inertia: f64,
}

impl WheelSet {
    /// `M_br`, the base/wheel coupling block.
    pub fn coupling(&self) -> Matrix3<f64> {
        self.axes * self.inertia
    }

    /// `M_r`.
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::identity() * self.inertia
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetModel {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// Grapple fixture position relative to the target CoM, target frame.
    pub grasp_offset: Vector3<f64>,
    /// Required end-effector attitude at the grapple, target frame.
    pub grasp_attitude: Quaternion,
}

impl TargetModel {
    /// Spin-asymmetry parameter `1 - I_zz / I_xx`.
    pub fn lambda(&self) -> f64 {
        1.0 - self.inertia[(2, 2)] / self.inertia[(0, 0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueLimits {
    pub tau_r_max: f64,
    pub tau_e_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub omega_s: Vector3<f64>,
    pub q_rel: Quaternion,
    pub theta_i: Vector6<f64>,
    /// Target CoM relative to the servicer CoM, target frame. Constant.
    pub rho: Vector3<f64>,
    pub omega_b: Vector3<f64>,
    pub h_r: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    pub kp: f64,
    pub kd: f64,
    pub kw: f64,
    pub kq: f64,
}

impl GainSet {
    /// Stiffness from the squared bandwidth, damping from twice the bandwidth.
    pub fn from_bandwidth(bw: f64) -> Self {
        Self { kp: bw * bw, kd: 2.0 * bw, kw: 2.0 * bw, kq: bw * bw }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    pub t_end: f64,
    pub telemetry_every: usize,
    pub omega_tol: f64,
    pub q_tol: f64,
    pub dwell: f64,
    pub settle: f64,
    pub eps_h: f64,
    pub phase_a_timeout: f64,
    pub appendix_literal: bool,
}

/// Fully validated mission model.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub base: BodyParams,
    pub arm: ArmModel,
    pub wheels: WheelSet,
    pub target: TargetModel,
    pub limits: TorqueLimits,
    pub initial: InitialConditions,
    pub gains: GainSet,
    pub sim: SimSettings,
}

// ---------------------------------------------------------------------------
// Configuration file schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    base: RawBase,
    links: Vec<RawLink>,
    wheels: RawWheels,
    target: RawTarget,
    limits: RawLimits,
    initial: RawInitial,
    #[serde(default)]
    gains: RawGains,
    sim: RawSim,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    mass_kg: f64,
    com_m: [f64; 3],
    inertia_kgm2: [[f64; 3]; 3],
    arm_mount_m: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    mass_kg: f64,
    length_m: f64,
    com_m: [f64; 3],
    inertia_kgm2: [[f64; 3]; 3],
    axis: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWheels {
    axes: [[f64; 3]; 3],
    inertia_kgm2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    mass_kg: f64,
    inertia_kgm2: [[f64; 3]; 3],
    grasp_offset_m: [f64; 3],
    #[serde(default = "default_grasp_attitude")]
    grasp_attitude_q: [f64; 4],
}

fn default_grasp_attitude() -> [f64; 4] {
    [0.0, -std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawLimits {
    qd_max_rad_s: f64,
    qdd_max_rad_s2: f64,
    tau_r_max_Nm: f64,
    tau_e_max_Nm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawInitial {
    omega_s_rad_s: [f64; 3],
    q_rel: [f64; 4],
    theta_i_rad: [f64; 6],
    rho_m: [f64; 3],
    #[serde(default)]
    omega_b_rad_s: [f64; 3],
    #[serde(default)]
    h_r_Nms: [f64; 3],
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    bandwidth_rad_s: Option<f64>,
    kp: Option<f64>,
    kd: Option<f64>,
    kw: Option<f64>,
    kq: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawSim {
    dt_s: f64,
    t_end_s: f64,
    #[serde(default = "default_telemetry_every")]
    telemetry_every: usize,
    #[serde(default = "default_omega_tol")]
    omega_tol_rad_s: f64,
    #[serde(default = "default_q_tol")]
    q_tol: f64,
    #[serde(default = "default_dwell")]
    dwell_s: f64,
    #[serde(default = "default_settle")]
    settle_s: f64,
    #[serde(default = "default_eps_h")]
    eps_h_Nms: f64,
    phase_a_timeout_s: Option<f64>,
    #[serde(default)]
    appendix_literal: bool,
}

fn default_telemetry_every() -> usize {
    100
}
fn default_omega_tol() -> f64 {
    1e-4
}
fn default_q_tol() -> f64 {
    1e-3
}
fn default_dwell() -> f64 {
    5.0
}
fn default_settle() -> f64 {
    30.0
}
fn default_eps_h() -> f64 {
    1e-6
}

pub const DEFAULT_BANDWIDTH: f64 = 1.8;

fn mat3(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

fn vec3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::from_column_slice(v)
}

fn unit_axis(v: &[f64; 3], field: &str) -> Result<Vector3<f64>, ConfigError> {
    let a = vec3(v);
    if (a.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid(field, format!("axis must be a unit vector, norm is {}", a.norm())));
    }
    Ok(a / a.norm())
}

fn unit_quaternion(q: &[f64; 4], field: &str) -> Result<Quaternion, ConfigError> {
    let quat = Quaternion::from_vector(&nalgebra::Vector4::from_column_slice(q));
    if (quat.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(field, format!("quaternion must have unit norm, norm is {}", quat.norm())));
    }
    Ok(quat.normalize())
}

fn positive(x: f64, field: &str) -> Result<f64, ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(field, format!("must be positive, got {x}")))
    }
}

impl SystemModel {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_raw(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    /// The bundled reference configuration.
    pub fn reference() -> Self {
        Self::from_json_str(REFERENCE_CONFIG).expect("bundled reference config is valid")
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let base = BodyParams { mass: raw.base.mass_kg, com: vec3(&raw.base.com_m), inertia: mat3(&raw.base.inertia_kgm2) };
        base.validate_spd("base")?;

        if raw.links.len() != NUM_JOINTS {
            return Err(invalid("links", format!("expected {NUM_JOINTS} links, got {}", raw.links.len())));
        }
        let mut links = Vec::with_capacity(NUM_JOINTS);
        for (i, l) in raw.links.iter().enumerate() {
            let field = format!("links[{i}]");
            let body = BodyParams { mass: l.mass_kg, com: vec3(&l.com_m), inertia: mat3(&l.inertia_kgm2) };
            body.validate(&field)?;
            let axis = unit_axis(&l.axis, &format!("{field}.axis"))?;
            if !(l.length_m.is_finite() && l.length_m >= 0.0) {
                return Err(invalid(format!("{field}.length_m"), "length must be non-negative"));
            }
            links.push(Link { body, length: l.length_m, axis });
        }
        let links: [Link; NUM_JOINTS] = links.try_into().expect("length checked");

        let arm = ArmModel {
            mount: vec3(&raw.base.arm_mount_m) - base.com,
            links,
            qd_max: positive(raw.limits.qd_max_rad_s, "limits.qd_max_rad_s")?,
            qdd_max: positive(raw.limits.qdd_max_rad_s2, "limits.qdd_max_rad_s2")?,
        };

        let mut axes = Matrix3::zeros();
        for (i, a) in raw.wheels.axes.iter().enumerate() {
            axes.set_column(i, &unit_axis(a, &format!("wheels.axes[{i}]"))?);
        }
        if axes.determinant().abs() < 1e-6 {
            return Err(invalid("wheels.axes", "wheel axes must span three dimensions"));
        }
        let wheels = WheelSet { axes, inertia: positive(raw.wheels.inertia_kgm2, "wheels.inertia_kgm2")? };

        let t = &raw.target;
        let target = TargetModel {
            mass: positive(t.mass_kg, "target.mass_kg")?,
            inertia: mat3(&t.inertia_kgm2),
            grasp_offset: vec3(&t.grasp_offset_m),
            grasp_attitude: unit_quaternion(&t.grasp_attitude_q, "target.grasp_attitude_q")?,
        };
        validate_inertia(&target.inertia, "target.inertia_kgm2")?;
        let ti = &target.inertia;
        let off_diag = ti[(0, 1)].abs() + ti[(0, 2)].abs() + ti[(1, 2)].abs();
        if off_diag > 1e-12 * ti.abs().max() || (ti[(0, 0)] - ti[(1, 1)]).abs() > 1e-12 * ti[(0, 0)] {
            return Err(invalid("target.inertia_kgm2", "target must be axisymmetric: diag(I_xx, I_xx, I_zz)"));
        }

        let limits = TorqueLimits {
            tau_r_max: positive(raw.limits.tau_r_max_Nm, "limits.tau_r_max_Nm")?,
            tau_e_max: positive(raw.limits.tau_e_max_Nm, "limits.tau_e_max_Nm")?,
        };

        let ini = &raw.initial;
        let initial = InitialConditions {
            omega_s: vec3(&ini.omega_s_rad_s),
            q_rel: unit_quaternion(&ini.q_rel, "initial.q_rel")?,
            theta_i: Vector6::from_column_slice(&ini.theta_i_rad),
            rho: vec3(&ini.rho_m),
            omega_b: vec3(&ini.omega_b_rad_s),
            h_r: vec3(&ini.h_r_Nms),
        };
        if initial.omega_s.norm() > 0.0 && initial.rho.cross(&initial.omega_s).norm() > 1e-9 * initial.rho.norm() * initial.omega_s.norm() {
            return Err(invalid("initial.rho_m", "displacement rho must be parallel to the target spin axis"));
        }
        if initial.omega_s.x != 0.0 || initial.omega_s.y != 0.0 {
            return Err(invalid("initial.omega_s_rad_s", "target must spin about its symmetry (z) axis"));
        }

        let g = &raw.gains;
        let base_gains = GainSet::from_bandwidth(positive(g.bandwidth_rad_s.unwrap_or(DEFAULT_BANDWIDTH), "gains.bandwidth_rad_s")?);
        let gains = GainSet {
            kp: positive(g.kp.unwrap_or(base_gains.kp), "gains.kp")?,
            kd: positive(g.kd.unwrap_or(base_gains.kd), "gains.kd")?,
            kw: positive(g.kw.unwrap_or(base_gains.kw), "gains.kw")?,
            kq: positive(g.kq.unwrap_or(base_gains.kq), "gains.kq")?,
        };

        let s = &raw.sim;
        let t_end = positive(s.t_end_s, "sim.t_end_s")?;
        let sim = SimSettings {
            dt: positive(s.dt_s, "sim.dt_s")?,
            t_end,
            telemetry_every: if s.telemetry_every == 0 {
                return Err(invalid("sim.telemetry_every", "must be at least 1"));
            } else {
                s.telemetry_every
            },
            omega_tol: positive(s.omega_tol_rad_s, "sim.omega_tol_rad_s")?,
            q_tol: positive(s.q_tol, "sim.q_tol")?,
            dwell: positive(s.dwell_s, "sim.dwell_s")?,
            settle: if s.settle_s >= 0.0 { s.settle_s } else { return Err(invalid("sim.settle_s", "must be non-negative")) },
            eps_h: positive(s.eps_h_Nms, "sim.eps_h_Nms")?,
            phase_a_timeout: positive(s.phase_a_timeout_s.unwrap_or(t_end), "sim.phase_a_timeout_s")?,
            appendix_literal: s.appendix_literal,
        };

        Ok(Self { base, arm, wheels, target, limits, initial, gains, sim })
    }

    pub fn arm_mass(&self) -> f64 {
        self.arm.links.iter().map(|l| l.body.mass).sum()
    }

    /// Base plus arm.
    pub fn servicer_mass(&self) -> f64 {
        self.base.mass + self.arm_mass()
    }

    pub fn forward_kinematics(&self, theta: &Vector6<f64>) -> ForwardKinematics {
        let c = self.arm.chain(theta);
        ForwardKinematics {
            r: c.tip,
            eta: Quaternion::from_rotation_matrix(&c.rot[NUM_JOINTS - 1]),
            link_coms: c.com,
        }
    }

    /// Base CoM in the servicer-CoM frame: `r_b = -(1/m_b) sum m_i r_ci`.
    pub fn base_com_offset(&self, theta: &Vector6<f64>) -> Vector3<f64> {
        let c = self.arm.chain(theta);
        self.base_com_from_chain(&c)
    }

    pub(crate) fn base_com_from_chain(&self, c: &ChainKinematics) -> Vector3<f64> {
        // Servicer CoM relative to the base CoM, negated.
        let moment: Vector3<f64> = self.arm.links.iter().zip(c.com.iter()).map(|(l, p)| l.body.mass * p).sum();
        -moment / self.servicer_mass()
    }

    /// `J = d r_b / d theta`.
    pub fn com_jacobian(&self, theta: &Vector6<f64>) -> Matrix3x6 {
        let c = self.arm.chain(theta);
        self.com_jacobian_from_chain(&c)
    }

    pub(crate) fn com_jacobian_from_chain(&self, c: &ChainKinematics) -> Matrix3x6 {
        let mut jac = Matrix3x6::zeros();
        for (i, link) in self.arm.links.iter().enumerate() {
            for j in 0..=i {
                let col = c.axis[j].cross(&(c.com[i] - c.origin[j])) * link.body.mass;
                let mut dst = jac.column_mut(j);
                dst += col;
            }
        }
        -jac / self.servicer_mass()
    }

    /// End-effector Jacobian in the base frame: rows 0..3 map joint rates to
    /// the tip velocity relative to the base CoM, rows 3..6 to the
    /// end-effector angular velocity.
    pub fn end_effector_jacobian(&self, theta: &Vector6<f64>) -> Matrix6<f64> {
        self.arm.chain(theta).tip_jacobian()
    }

    /// Joint angles placing the end-effector on the grapple fixture with
    /// attitude `eta_f`, assuming aligned frames. The CoM shift of the base
    /// is part of the solve: the tip position relative to the servicer CoM,
    /// `r(theta) + r_b(theta)`, must equal `rho + varrho`.
    ///
    /// Damped least squares from `seed`.
    pub fn solve_final_joints(
        &self,
        rho: &Vector3<f64>,
        varrho: &Vector3<f64>,
        eta_f: &Quaternion,
        seed: &Vector6<f64>,
    ) -> Result<Vector6<f64>, IkError> {
        const DAMPING: f64 = 1e-3;
        const MAX_ITER: usize = 500;
        const TOL: f64 = 1e-11;
        const MAX_STEP: f64 = 0.2;

        let goal = rho + varrho;
        let r_f = eta_f.rotation_matrix();
        let mut theta = *seed;
        let mut residual = f64::INFINITY;
        let mut jac = Matrix6::zeros();
        for iter in 0..=MAX_ITER {
            let c = self.arm.chain(&theta);
            let pos = c.tip + self.base_com_from_chain(&c);
            let rot_err = Quaternion::from_rotation_matrix(&(r_f * c.rot[NUM_JOINTS - 1].transpose())).rotation_vector();
            let err = Vector6::new(
                goal.x - pos.x,
                goal.y - pos.y,
                goal.z - pos.z,
                rot_err.x,
                rot_err.y,
                rot_err.z,
            );
            residual = err.norm();
            if residual < TOL {
                return Ok(theta);
            }
            if iter == MAX_ITER {
                break;
            }
            jac = c.tip_jacobian();
            let jc = self.com_jacobian_from_chain(&c);
            let mut top = jac.fixed_view_mut::<3, 6>(0, 0);
            top += jc;
            let jjt = jac * jac.transpose() + Matrix6::identity() * DAMPING;
            let Some(sol) = jjt.cholesky() else { break };
            let mut step = jac.transpose() * sol.solve(&err);
            let n = step.norm();
            if n > MAX_STEP {
                step *= MAX_STEP / n;
            }
            theta += step;
        }
        let sv = jac.singular_values();
        let condition = sv.max() / sv.min().max(f64::MIN_POSITIVE);
        if condition > 1e8 {
            Err(IkError::Singular { condition, residual })
        } else {
            Err(IkError::NoSolution { residual, iterations: MAX_ITER })
        }
    }
}

pub const REFERENCE_CONFIG: &str = include_str!("../../../configs/reference.json");

/// End-effector pose and link CoMs, base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardKinematics {
    pub r: Vector3<f64>,
    pub eta: Quaternion,
    pub link_coms: [Vector3<f64>; NUM_JOINTS],
}

/// Per-link geometry of the chain at one configuration, base frame.
#[derive(Debug, Clone, Copy)]
pub struct ChainKinematics {
    /// Link frame orientation.
    pub rot: [Matrix3<f64>; NUM_JOINTS],
    /// Joint axis.
    pub axis: [Vector3<f64>; NUM_JOINTS],
    /// Joint origin.
    pub origin: [Vector3<f64>; NUM_JOINTS],
    /// Link CoM.
    pub com: [Vector3<f64>; NUM_JOINTS],
    pub tip: Vector3<f64>,
}

impl ChainKinematics {
    pub fn tip_jacobian(&self) -> Matrix6<f64> {
        let mut jac = Matrix6::zeros();
        for j in 0..NUM_JOINTS {
            let lin = self.axis[j].cross(&(self.tip - self.origin[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&self.axis[j]);
        }
        jac
    }
}

fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = skew(axis);
    Matrix3::identity() + s * k + (1.0 - c) * k * k
}

impl ArmModel {
    pub fn chain(&self, theta: &Vector6<f64>) -> ChainKinematics {
        let mut rot = [Matrix3::identity(); NUM_JOINTS];
        let mut axis = [Vector3::zeros(); NUM_JOINTS];
        let mut origin = [Vector3::zeros(); NUM_JOINTS];
        let mut com = [Vector3::zeros(); NUM_JOINTS];
        let mut parent_rot = Matrix3::identity();
        let mut joint = self.mount;
        for (i, link) in self.links.iter().enumerate() {
            axis[i] = parent_rot * link.axis;
            rot[i] = parent_rot * axis_rotation(&link.axis, theta[i]);
            origin[i] = joint;
            com[i] = joint + rot[i] * link.body.com;
            joint += rot[i] * Vector3::new(link.length, 0.0, 0.0);
            parent_rot = rot[i];
        }
        ChainKinematics { rot, axis, origin, com, tip: joint }
    }
}
