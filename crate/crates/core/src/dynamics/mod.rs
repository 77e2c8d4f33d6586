//! Vertical two-mass hybrid hopping model.
//!
//! The body (mass `m_B`) and foot (mass `m_F`) are joined by a leg spring with
//! free length `r_0` and a hard stop that limits extension to `stop_length`.
//! While the stop is engaged ("locked") both masses move together; the stop
//! releases when it would have to push, and a plastic velocity merge re-engages
//! it. The foot meets the ground through a unilateral spring-damper.

mod contact;
mod sim;

pub use contact::{
    calibrate_ground_contact, peak_contact_metrics, terminal_velocity, ContactMetrics, ContactTarget, GroundFit,
};
pub use sim::{simulate, SimOptions, Simulator, StepOutcome, StopCondition};

use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};
use crate::params::RobotParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Drop,
    Stance,
    Rebound,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Drop => "drop",
            Phase::Stance => "stance",
            Phase::Rebound => "rebound",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drop" => Some(Phase::Drop),
            "stance" => Some(Phase::Stance),
            "rebound" => Some(Phase::Rebound),
            _ => None,
        }
    }

    pub fn is_aerial(self) -> bool {
        self != Phase::Stance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub z_b: f64,
    pub v_b: f64,
    pub z_f: f64,
    pub v_f: f64,
    pub phase: Phase,
}

impl SimState {
    /// At rest with the leg at its stop and the foot `h` above the ground.
    pub fn at_rest(h: f64, p: &RobotParams) -> Self {
        SimState {
            t: 0.0,
            z_b: h + p.stop_length,
            v_b: 0.0,
            z_f: h,
            v_f: 0.0,
            phase: Phase::Drop,
        }
    }

    pub fn leg_length(&self) -> f64 {
        self.z_b - self.z_f
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.z_b.is_finite()
            && self.v_b.is_finite()
            && self.z_f.is_finite()
            && self.v_f.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Touchdown,
    Liftoff,
    Apex,
    /// Plastic re-engagement of the hard stop that did not end the stance.
    HardStop,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Touchdown => "touchdown",
            EventKind::Liftoff => "liftoff",
            EventKind::Apex => "apex",
            EventKind::HardStop => "hardstop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "touchdown" => Some(EventKind::Touchdown),
            "liftoff" => Some(EventKind::Liftoff),
            "apex" => Some(EventKind::Apex),
            "hardstop" => Some(EventKind::HardStop),
            _ => None,
        }
    }
}

/// Cumulative work and dissipation since the start of a run (J).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkChannels {
    /// Work done by the applied forces U_B, U_F.
    pub input: f64,
    /// Work done by drag (never positive).
    pub drag: f64,
    /// Energy dissipated in the foot-ground contact.
    pub ground: f64,
    /// Energy dissipated in the leg damper.
    pub leg: f64,
    /// Energy lost in hard-stop couplings.
    pub stop: f64,
}

impl WorkChannels {
    pub fn net(&self) -> f64 {
        self.input + self.drag - self.ground - self.leg - self.stop
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionEvent {
    pub kind: EventKind,
    pub t: f64,
    pub state_before: SimState,
    pub state_after: SimState,
    pub work: WorkChannels,
    /// Index of the sample holding `state_after`, when samples were recorded.
    pub sample_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// The requested time or hop count was reached.
    Completed,
    /// Hopping died out: a stance outlasted the timeout or an apex fell below the floor.
    Ceased,
    /// The centre of mass rose past the configured ceiling while ascending.
    Ceiling,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<SimState>,
    /// Applied forces (U_B, U_F) at each sample.
    pub inputs: Vec<(f64, f64)>,
    pub work: Vec<WorkChannels>,
    pub events: Vec<TransitionEvent>,
    pub termination: Option<Termination>,
}

impl Trajectory {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &TransitionEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Centre-of-mass heights at each apex event.
    pub fn apex_heights(&self, p: &RobotParams) -> Vec<f64> {
        self.events_of(EventKind::Apex)
            .map(|e| com_height(&e.state_after, p))
            .collect()
    }
}

/// Opaque force schedule driving the body and foot inputs.
///
/// `force` must be a smooth function of the state between switches. Discontinuities
/// belong at a breakpoint, a switch crossing, or a physical event, all of which end
/// an integration step.
pub trait ThrustSchedule {
    /// Applied forces (U_B, U_F) in newtons.
    fn force(&self, s: &SimState) -> (f64, f64);

    /// Next time-based switch strictly after `t`. The integrator lands a step on it.
    fn next_breakpoint(&self, _t: f64) -> Option<f64> {
        None
    }

    /// State-based switching surface; a crossing from positive to non-positive is
    /// localized like a physical event and reported through `on_switch`.
    fn switch_value(&self, _s: &SimState) -> Option<f64> {
        None
    }

    /// Called at a breakpoint or a switch crossing.
    fn on_switch(&mut self, _s: &SimState) {}

    /// Called after each physical event.
    fn on_event(&mut self, _kind: EventKind, _s: &SimState) {}

    /// Called after every accepted step.
    fn on_step(&mut self, _s: &SimState, _h: f64) {}
}

/// No applied force.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoThrust;

impl ThrustSchedule for NoThrust {
    fn force(&self, _s: &SimState) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Constant body force during the rebound phase only.
#[derive(Debug, Clone, Copy)]
pub struct ReboundThrust {
    pub force: f64,
}

impl ThrustSchedule for ReboundThrust {
    fn force(&self, s: &SimState) -> (f64, f64) {
        if s.phase == Phase::Rebound {
            (self.force, 0.0)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Centre-of-mass height above the reference configuration (foot on the ground, leg at its stop).
pub fn com_height(s: &SimState, p: &RobotParams) -> f64 {
    (p.m_b * (s.z_b - p.stop_length) + p.m_f * s.z_f) / p.m_t()
}

fn spring_energy(l: f64, p: &RobotParams) -> f64 {
    let c = p.r_0 - l;
    let c = if c > 1e-12 { c } else { 0.0 };
    0.5 * p.k_b * c * c
}

/// Kinetic plus potential energy relative to the reference configuration at rest.
/// The ground spring only stores energy during stance.
pub fn mechanical_energy(s: &SimState, p: &RobotParams) -> f64 {
    let ke = 0.5 * p.m_b * s.v_b * s.v_b + 0.5 * p.m_f * s.v_f * s.v_f;
    let pe_g = p.m_t() * p.g * com_height(s, p);
    let pe_leg = spring_energy(s.leg_length(), p) - spring_energy(p.stop_length, p);
    let pe_ground = if s.phase == Phase::Stance && s.z_f < 0.0 {
        0.5 * p.k_f * s.z_f * s.z_f
    } else {
        0.0
    };
    ke + pe_g + pe_leg + pe_ground
}

/// Forces acting on each mass for a given leg engagement.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForceBreakdown {
    /// Leg spring force, positive pushing the masses apart.
    pub spring: f64,
    /// Leg damper force, positive pushing the masses apart.
    pub damper: f64,
    /// Ground force on the foot after clamping.
    pub ground: f64,
    /// Ground force before clamping; its sign decides liftoff.
    pub ground_raw: f64,
    /// Drag on the body.
    pub drag: f64,
    /// Net force on the body excluding stop tension.
    pub body: f64,
    /// Net force on the foot excluding stop tension.
    pub foot: f64,
}

pub(crate) fn force_breakdown(p: &RobotParams, drag_factor: f64, s: &SimState, u_b: f64, u_f: f64) -> ForceBreakdown {
    let l = s.z_b - s.z_f;
    // Compressions below round-off of the positions do not engage the spring.
    let (spring, damper) = if p.r_0 - l > 1e-12 {
        let v_rel = s.v_b - s.v_f;
        let d = if v_rel < 0.0 { -p.b_b * v_rel } else { 0.0 };
        (p.k_b * (p.r_0 - l), d)
    } else {
        (0.0, 0.0)
    };
    let (ground, ground_raw) = if s.phase == Phase::Stance {
        let raw = -p.k_f * s.z_f - p.b_f * s.v_f;
        let g = if s.z_f < 0.0 { raw.max(0.0) } else { 0.0 };
        (g, raw)
    } else {
        (0.0, 0.0)
    };
    let drag = if p.rho > 0.0 {
        let v = s.v_b;
        -0.5 * p.rho * p.cda.area_scaled(v.abs(), drag_factor) * v * v.abs()
    } else {
        0.0
    };
    ForceBreakdown {
        spring,
        damper,
        ground,
        ground_raw,
        drag,
        body: -p.m_b * p.g + spring + damper + u_b + drag,
        foot: -p.m_f * p.g - spring - damper + u_f + ground,
    }
}

/// State derivative of the two-mass model with the leg free: (v_B, a_B, v_F, a_F).
///
/// With the hard stop engaged both masses share the acceleration of the total force;
/// the simulator handles that case.
pub fn vertical_derivatives(s: &SimState, p: &RobotParams, u_b: f64, u_f: f64) -> Result<[f64; 4]> {
    if !s.is_finite() {
        return Err(HopError::NonFiniteState { t: s.t });
    }
    let f = force_breakdown(p, p.cda.mass_factor(p.m_t()), s, u_b, u_f);
    Ok([s.v_b, f.body / p.m_b, s.v_f, f.foot / p.m_f])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;
    use approx::assert_relative_eq;

    fn aerial(z: f64, v: f64) -> SimState {
        SimState {
            t: 0.0,
            z_b: z + 0.2,
            v_b: v,
            z_f: z,
            v_f: v,
            phase: Phase::Drop,
        }
    }

    #[test]
    fn free_fall_accelerations() {
        let p = default_params();
        let d = vertical_derivatives(&aerial(1.0, 0.0), &p, 0.0, 0.0).unwrap();
        assert_eq!(d[1], -p.g);
        assert_eq!(d[3], -p.g);
    }

    #[test]
    fn static_equilibrium_body() {
        let p = default_params();
        let c = p.m_b * p.g / p.k_b;
        let s = SimState {
            t: 0.0,
            z_b: p.r_0 - c,
            v_b: 0.0,
            z_f: 0.0,
            v_f: 0.0,
            phase: Phase::Stance,
        };
        let d = vertical_derivatives(&s, &p, 0.0, 0.0).unwrap();
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn foot_in_ground_with_leg_free() {
        let p = default_params();
        let x = 1e-5;
        let s = SimState {
            t: 0.0,
            z_b: 1.0,
            v_b: 0.0,
            z_f: -x,
            v_f: 0.0,
            phase: Phase::Stance,
        };
        let d = vertical_derivatives(&s, &p, 0.0, 0.0).unwrap();
        assert_relative_eq!(d[3], (-p.m_f * p.g + p.k_f * x) / p.m_f, max_relative = 1e-12);
    }

    #[test]
    fn ground_never_pulls() {
        let p = default_params();
        let s = SimState {
            t: 0.0,
            z_b: 1.0,
            v_b: 0.0,
            z_f: -1e-7,
            v_f: 5.0,
            phase: Phase::Stance,
        };
        let f = force_breakdown(&p, 1.0, &s, 0.0, 0.0);
        assert_eq!(f.ground, 0.0);
        assert!(f.ground_raw < 0.0);
    }

    #[test]
    fn damper_only_while_compressing() {
        let p = RobotParams {
            b_b: 3.0,
            ..default_params()
        };
        let mut s = SimState {
            t: 0.0,
            z_b: 0.15,
            v_b: -1.0,
            z_f: 0.0,
            v_f: 0.0,
            phase: Phase::Stance,
        };
        assert_relative_eq!(force_breakdown(&p, 1.0, &s, 0.0, 0.0).damper, 3.0);
        s.v_b = 1.0;
        assert_eq!(force_breakdown(&p, 1.0, &s, 0.0, 0.0).damper, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let p = default_params();
        let s = aerial(f64::NAN, 0.0);
        assert!(matches!(
            vertical_derivatives(&s, &p, 0.0, 0.0),
            Err(HopError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn reference_energy_is_zero() {
        let p = default_params();
        let s = aerial(0.0, 0.0);
        assert_eq!(mechanical_energy(&s, &p), 0.0);
        assert_relative_eq!(
            mechanical_energy(&aerial(1.0, 0.0), &p),
            p.weight(),
            max_relative = 1e-12
        );
    }
}
