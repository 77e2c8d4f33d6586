//! Fits the foot-ground stiffness and damping to each published contact pair at
//! 5.9 m/s and prints the constants, the residual and the resulting peaks.

use hopdyn_core::default_params;
use hopdyn_core::dynamics::{calibrate_ground_contact, peak_contact_metrics, ContactTarget};
use hopdyn_core::RobotParams;

fn main() {
    let p = default_params();
    for (compression, accel_g) in [(0.3e-3, 1055.0), (0.9e-3, 319.0)] {
        let target = ContactTarget {
            compression,
            accel: accel_g * p.g,
            v_td: 5.9,
        };
        let fit = calibrate_ground_contact(&[target], &p).expect("calibration failed");
        let q = RobotParams {
            k_f: fit.k_f,
            b_f: fit.b_f,
            ..p
        };
        let m = peak_contact_metrics(5.9, &q).expect("contact simulation failed");
        println!("target {:.1} mm, {accel_g} g", compression * 1e3);
        println!(
            "  k_F = {:.6e} N/m, b_F = {:.3} N s/m, zeta = {:.3}",
            fit.k_f, fit.b_f, fit.zeta
        );
        println!("  residual = {:.4} after {} evaluations", fit.residual, fit.evaluations);
        println!(
            "  peaks: foot {:.0} g ({:.0} N), compression {:.3} mm, body {:.1} g ({:.0} N)",
            m.a_foot_max_g,
            m.f_foot_max,
            m.compression_max * 1e3,
            m.a_body_max_g,
            m.f_body_max
        );
    }
}
