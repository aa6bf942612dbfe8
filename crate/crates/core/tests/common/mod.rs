//! Oracles shared by the integration tests.

use nalgebra::{Matrix3, Vector3, Vector6};
use spinsim::SystemModel;

fn parallel_axis(mass: f64, r: &Vector3<f64>) -> Matrix3<f64> {
    mass * (Matrix3::identity() * r.norm_squared() - r * r.transpose())
}

/// Rigid-body sum of base, links and target about the compound CoM.
pub fn compound_inertia_oracle(model: &SystemModel, theta: &Vector6<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let fk = model.forward_kinematics(theta);
    let rb = model.base_com_offset(theta);
    let m_sv = model.servicer_mass();
    let m_s = model.target.mass;
    let c = rho * (m_s / (m_sv + m_s));
    let mut total = model.base.inertia + parallel_axis(model.base.mass, &(rb - c));
    let chain = model.arm.chain(theta);
    for (i, link) in model.arm.links.iter().enumerate() {
        let r = fk.link_coms[i] + rb - c;
        let rot = chain.rot[i];
        total += rot * link.body.inertia * rot.transpose() + parallel_axis(link.body.mass, &r);
    }
    total + model.target.inertia + parallel_axis(m_s, &(rho - c))
}

