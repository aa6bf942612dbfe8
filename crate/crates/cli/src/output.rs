//! Text outputs: telemetry CSV, event list and run summary.

use std::fmt::Write as _;
use std::io::{self, Write};

use spinsim::sim::{MissionEvents, MissionReport, TelemetryRecord};

pub const TELEMETRY_HEADER: &str = "t,wrel_x,wrel_y,wrel_z,q1,q2,q3,q0,rrel_x,rrel_y,rrel_z,\
taur_x,taur_y,taur_z,taue_x,taue_y,taue_z,h_target,h_servicer,h_wheels,V,sigma,phase";

pub const EVENTS_HEADER: &str = "event,name,t_s";

/// One CSV row; every float carries 17 significant digits.
pub fn telemetry_row(r: &TelemetryRecord) -> String {
    let fields = [
        r.t,
        r.omega_rel.x,
        r.omega_rel.y,
        r.omega_rel.z,
        r.q_rel.v.x,
        r.q_rel.v.y,
        r.q_rel.v.z,
        r.q_rel.w,
        r.r_rel.x,
        r.r_rel.y,
        r.r_rel.z,
        r.tau_r.x,
        r.tau_r.y,
        r.tau_r.z,
        r.tau_e.x,
        r.tau_e.y,
        r.tau_e.z,
        r.h_target,
        r.h_servicer,
        r.h_wheels,
        r.lyapunov,
        r.sigma,
    ];
    let mut row = String::with_capacity(24 * fields.len());
    for f in fields {
        write!(row, "{f:.16e},").unwrap();
    }
    write!(row, "{}", r.phase.code()).unwrap();
    row
}

pub fn write_telemetry<W: Write>(w: &mut W, records: &[TelemetryRecord]) -> io::Result<()> {
    writeln!(w, "{TELEMETRY_HEADER}")?;
    for r in records {
        writeln!(w, "{}", telemetry_row(r))?;
    }
    Ok(())
}

/// Events that occurred, in order. Times use the shortest round-trip form.
pub fn events_csv(events: &MissionEvents) -> String {
    let mut s = format!("{EVENTS_HEADER}\n");
    for ((id, name), t) in MissionEvents::NAMES.iter().zip(events.as_array()) {
        if let Some(t) = t {
            writeln!(s, "{id},{name},{t}").unwrap();
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |t| format!("{t}"))
}

pub fn summary(report: &MissionReport) -> String {
    let mut s = String::new();
    let status = if report.completed { "complete" } else { "incomplete" };
    writeln!(s, "status = {status}").unwrap();
    writeln!(s, "final_time_s = {}", report.final_state.t).unwrap();
    writeln!(s, "\n[events]").unwrap();
    for ((id, name), t) in MissionEvents::NAMES.iter().zip(report.events.as_array()) {
        writeln!(s, "{id} {name:<18} = {}", opt(t)).unwrap();
    }
    writeln!(s, "\n[capture]").unwrap();
    writeln!(s, "trajectory_duration_s = {}", opt(report.t_f)).unwrap();
    let theta: Vec<String> = report.theta_f.iter().map(|v| format!("{v:.10}")).collect();
    writeln!(s, "theta_f_rad = [{}]", theta.join(", ")).unwrap();
    if let Some(c) = &report.capture {
        writeln!(s, "position_error_m = {:e}", c.position_error).unwrap();
        writeln!(s, "attitude_error_rad = {:e}", c.attitude_error).unwrap();
        writeln!(s, "linear_velocity_m_s = {:e}", c.linear_velocity).unwrap();
        writeln!(s, "angular_velocity_rad_s = {:e}", c.angular_velocity).unwrap();
    }
    writeln!(s, "\n[momentum, N m s]").unwrap();
    writeln!(s, "{:<10} {:>14} {:>14}", "", "initial", "final").unwrap();
    let rows = [
        ("target", report.initial.h_target, report.last.h_target),
        ("servicer", report.initial.h_servicer, report.last.h_servicer),
        ("wheels", report.initial.h_wheels, report.last.h_wheels),
        ("total", report.initial.h_total, report.last.h_total),
    ];
    for (name, a, b) in rows {
        writeln!(s, "{name:<10} {:>14.9} {:>14.9}", a.norm(), b.norm()).unwrap();
    }
    let h0 = report.initial.h_target.norm();
    let ratio = if h0 > 0.0 { format!("{:.6}", report.last.h_wheels.norm() / h0) } else { "-".into() };
    writeln!(s, "transfer_ratio = {ratio}").unwrap();
    writeln!(s, "\n[torques]").unwrap();
    writeln!(s, "peak_tau_r_Nm = {:.9}", report.peak_tau_r).unwrap();
    writeln!(s, "peak_tau_e_Nm = {:.9}", report.peak_tau_e).unwrap();
    writeln!(s, "constraint_violations = {}", report.constraint_violations).unwrap();
    match report.sigma_range {
        Some((lo, hi)) => {
            writeln!(s, "sigma_min = {lo:.9}").unwrap();
            writeln!(s, "sigma_max = {hi:.9}").unwrap();
        }
        None => {
            writeln!(s, "sigma_min = -").unwrap();
            writeln!(s, "sigma_max = -").unwrap();
        }
    }
    s
}
