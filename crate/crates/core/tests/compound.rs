use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;
use spinsim::dynamics::{compound, torque_transmission, CompoundPlant};
use spinsim::SystemModel;

mod common;
use common::compound_inertia_oracle;

#[test]
fn compound_inertia_matches_parallel_axis_sum() {
    let m = SystemModel::reference();
    let theta = m.initial.theta_i;
    let cd = compound(&m, &theta, &Vector3::zeros(), &Vector3::zeros()).unwrap();
    let oracle = compound_inertia_oracle(&m, &theta, &m.initial.rho);
    let rel = (cd.mt - oracle).norm() / oracle.norm();
    assert!(rel < 1e-8, "relative error {rel:e}");
    assert!((cd.mt - cd.mt.transpose()).amax() < 1e-12);
}

#[test]
fn target_offset_follows_mass_ratio() {
    let m = SystemModel::reference();
    let cd = compound(&m, &m.initial.theta_i, &Vector3::zeros(), &Vector3::zeros()).unwrap();
    let m_sv = m.servicer_mass();
    let expected = m.initial.rho * m_sv / (m_sv + m.target.mass);
    assert!((cd.rho_s - expected).norm() < 1e-14);
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    proptest::array::uniform3(-1.0..1.0f64).prop_map(|a| Vector3::from_column_slice(&a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compound_inertia_oracle_at_random_poses(t in proptest::array::uniform6(-3.0..3.0f64), rho in vec3()) {
        let m = SystemModel::reference();
        let theta = Vector6::from_column_slice(&t);
        let rho = rho * 4.0;
        let plant = CompoundPlant::new(&m, &theta, &rho).unwrap();
        let oracle = compound_inertia_oracle(&m, &theta, &rho);
        prop_assert!((plant.mt - oracle).norm() / oracle.norm() < 1e-8);
    }

    #[test]
    fn transmitted_torque_matches_target_newton_euler(w in vec3(), h in vec3(), tau in vec3()) {
        // Path 1: tau_e = G tau_r + c_g.
        // Path 2: compound acceleration from the rigid-body oracle, then the
        // target's own Newton-Euler equations give the wrench at the grapple.
        let m = SystemModel::reference();
        let theta = m.initial.theta_i;
        let rho = m.initial.rho;
        let w = w * 0.05;
        let h = h * 2.0;
        let tau = tau * 0.1;
        let cd = compound(&m, &theta, &w, &h).unwrap();
        let tau_e = torque_transmission(&cd, &tau);

        let inertia = compound_inertia_oracle(&m, &theta, &rho);
        let e = m.wheels.axes;
        let b = -e;
        let wd = inertia.lu().solve(&(b * tau - w.cross(&(inertia * w + e * h)))).unwrap();
        let m_s = m.target.mass;
        let m_sv = m.servicer_mass();
        let r = rho * m_sv / (m_sv + m_s);
        let acc = wd.cross(&r) + w.cross(&w.cross(&r));
        let f_on_target = m_s * acc;
        let ic = m.target.inertia;
        let varrho = m.target.grasp_offset;
        // I_c w_dot + w x I_c w = tau_g + varrho x f, with tau_g the torque the
        // end-effector applies to the target; tau_e is its reaction.
        let torque_on_target = ic * wd + w.cross(&(ic * w)) - varrho.cross(&f_on_target);
        let scale = torque_on_target.norm().max(1e-9);
        prop_assert!((tau_e + torque_on_target).norm() / scale < 1e-8,
            "{tau_e} vs {torque_on_target}");
    }
}
