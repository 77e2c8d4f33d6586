//! Fits the stance model's unpublished inertias and foot offset to the 6 m/s,
//! 10 degree worked example and prints the best cell with its residual.

use hopdyn_core::accumulation::lin_space;
use hopdyn_core::stance::{calibrate_stance, StanceParams, StanceTarget};

fn main() {
    let target = StanceTarget::worked_example();
    let base = StanceParams::default();
    let i_b = lin_space(0.002, 0.030, 29);
    let i_f = lin_space(0.0, 0.012, 13);
    let r_f = lin_space(0.0, 0.18, 19);
    let fit = calibrate_stance(&target, &base, &i_b, &i_f, &r_f).expect("calibration failed");
    println!("I_cm_B   = {:.4} kg m^2", fit.i_cm_b);
    println!("I_cm_F   = {:.4} kg m^2", fit.i_cm_f);
    println!("r_F      = {:.3} m", fit.r_f);
    println!("residual = {:.4}", fit.residual);
    let o = fit.outcome;
    println!("liftoff angle {:.2} deg, mu {:.3}", o.liftoff_angle, o.mu_required);
    let p = o.partition;
    println!(
        "partition vertical {:.3} horizontal {:.3} rotational {:.3} foot loss {:.3}",
        p.vertical, p.horizontal, p.rotational, p.foot_loss
    );
}
