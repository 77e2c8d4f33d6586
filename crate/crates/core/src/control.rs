//! Vertical thrust scheduling for the drop-and-hop experiment.
//!
//! The robot hovers at the drop height, is released, and on every touchdown all
//! control is blanked for a fixed window. Rebound thrust then runs until the
//! ascent slows below a cutoff speed, and only stabilization remains up to apex.

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, EventKind, Phase, SimOptions, SimState, StopCondition, ThrustSchedule, Trajectory};
use crate::energy::{ledgers_from_trajectory, HopCycleRecord};
use crate::error::{HopError, Result};
use crate::params::RobotParams;

fn default_blanking() -> f64 {
    60.0
}
fn default_cutoff() -> f64 {
    1.0
}
fn default_hover() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Rebound thrust as a percentage of hover duty, i.e. of weight.
    pub alpha_pct: f64,
    #[serde(default = "default_blanking")]
    pub blanking_ms: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff_speed: f64,
    pub drop_height: f64,
    pub n_hops: usize,
    /// Maximum thrust (N); twice the weight when absent.
    #[serde(default)]
    pub thrust_max: Option<f64>,
    /// Upward force applied while descending, emulating stabilization effort (N).
    #[serde(default, rename = "stabilization_drain_N")]
    pub stabilization_drain_n: f64,
    /// Hover time before release (s).
    #[serde(default = "default_hover")]
    pub hover_s: f64,
    #[serde(default)]
    pub pid: Option<PidGains>,
}

impl ProtocolConfig {
    pub fn new(drop_height: f64, alpha_pct: f64, n_hops: usize) -> Self {
        ProtocolConfig {
            alpha_pct,
            blanking_ms: default_blanking(),
            cutoff_speed: default_cutoff(),
            drop_height,
            n_hops,
            thrust_max: None,
            stabilization_drain_n: 0.0,
            hover_s: default_hover(),
            pid: None,
        }
    }

    pub fn thrust_max(&self, p: &RobotParams) -> f64 {
        self.thrust_max.unwrap_or(2.0 * p.weight())
    }

    pub fn validate(&self, p: &RobotParams) -> Result<()> {
        let nonneg = [
            self.alpha_pct,
            self.blanking_ms,
            self.cutoff_speed,
            self.stabilization_drain_n,
            self.hover_s,
        ];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(HopError::invalid(
                "alpha_pct, blanking_ms, cutoff_speed, stabilization_drain_N and hover time must be non-negative",
            ));
        }
        if !(self.drop_height > 0.0) {
            return Err(HopError::invalid("drop height must be positive"));
        }
        if self.n_hops == 0 {
            return Err(HopError::invalid("n_hops must be positive"));
        }
        hover_duty(p, self.thrust_max(p))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on the integral term's contribution (N).
    pub integral_limit: f64,
}

impl PidGains {
    /// Critically damped height hold for a point mass `m` with natural frequency `omega`.
    pub fn critically_damped(m: f64, omega: f64) -> Self {
        PidGains {
            kp: m * omega * omega,
            kd: 2.0 * m * omega,
            ki: 0.1 * m * omega * omega * omega,
            integral_limit: 0.5 * m * 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pid {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub integral_limit: f64,
}

impl Pid {
    pub fn new(g: PidGains) -> Self {
        Pid {
            kp: g.kp,
            ki: g.ki,
            kd: g.kd,
            integral: 0.0,
            prev_error: 0.0,
            integral_limit: g.integral_limit,
        }
    }

    pub fn output(&self, error: f64, error_rate: f64) -> f64 {
        self.kp * error + self.kd * error_rate + self.ki * self.integral
    }

    pub fn accumulate(&mut self, error: f64, h: f64) {
        let bound = if self.ki > 0.0 {
            self.integral_limit / self.ki
        } else {
            0.0
        };
        self.integral = (self.integral + error * h).clamp(-bound, bound);
        self.prev_error = error;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Hover,
    DropStabilize,
    Blanking,
    ReboundInput,
    StabilizeToApex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    pub t_mode_entry: f64,
    pub pid: Pid,
    /// Height held while hovering (body coordinate).
    pub setpoint: f64,
}

impl ControllerState {
    pub fn hovering(setpoint: f64, pid: Pid) -> Self {
        ControllerState {
            mode: Mode::Hover,
            t_mode_entry: 0.0,
            pid,
            setpoint,
        }
    }
}

/// Fraction of maximum thrust that balances weight, under a linear thrust-duty map.
pub fn hover_duty(p: &RobotParams, thrust_max: f64) -> Result<f64> {
    let w = p.weight();
    if !(thrust_max > w) {
        return Err(HopError::invalid(format!(
            "cannot hover: thrust_max {thrust_max:.3} N does not exceed weight {w:.3} N"
        )));
    }
    Ok(w / thrust_max)
}

const T_EPS: f64 = 1e-12;

fn transition(cs: &ControllerState, s: &SimState, cfg: &ProtocolConfig) -> ControllerState {
    let mut c = *cs;
    for _ in 0..5 {
        let next = match c.mode {
            Mode::Hover if s.t >= c.t_mode_entry + cfg.hover_s - T_EPS => Some(Mode::DropStabilize),
            Mode::DropStabilize if s.phase == Phase::Stance => Some(Mode::Blanking),
            Mode::Blanking if s.t >= c.t_mode_entry + cfg.blanking_ms * 1e-3 - T_EPS => Some(Mode::ReboundInput),
            Mode::ReboundInput if s.phase == Phase::Rebound && s.v_b <= cfg.cutoff_speed => Some(Mode::StabilizeToApex),
            Mode::ReboundInput | Mode::StabilizeToApex if s.phase == Phase::Drop => Some(Mode::DropStabilize),
            _ => None,
        };
        match next {
            Some(m) => {
                c.mode = m;
                c.t_mode_entry = s.t;
            }
            None => break,
        }
    }
    c
}

fn output(c: &ControllerState, s: &SimState, cfg: &ProtocolConfig, p: &RobotParams) -> f64 {
    let u = match c.mode {
        Mode::Hover => p.weight() + c.pid.output(c.setpoint - s.z_b, -s.v_b),
        Mode::DropStabilize => cfg.stabilization_drain_n,
        Mode::Blanking | Mode::StabilizeToApex => 0.0,
        Mode::ReboundInput => cfg.alpha_pct / 100.0 * p.weight(),
    };
    u.clamp(0.0, cfg.thrust_max(p))
}

/// Advances the protocol state machine to `s` and returns the body thrust for the new mode.
pub fn thrust_command(
    cs: &ControllerState,
    s: &SimState,
    cfg: &ProtocolConfig,
    p: &RobotParams,
) -> (f64, ControllerState) {
    let next = transition(cs, s, cfg);
    (output(&next, s, cfg, p), next)
}

/// The protocol as a force schedule for the simulator.
#[derive(Debug, Clone)]
pub struct ProtocolSchedule {
    pub cfg: ProtocolConfig,
    pub params: RobotParams,
    pub state: ControllerState,
    /// Every mode entered, with its entry time.
    pub modes: Vec<(f64, Mode)>,
    pub apexes: usize,
}

impl ProtocolSchedule {
    pub fn new(cfg: ProtocolConfig, p: RobotParams, setpoint: f64) -> Self {
        let gains = cfg.pid.unwrap_or_else(|| PidGains::critically_damped(p.m_t(), 8.0));
        ProtocolSchedule {
            cfg,
            params: p,
            state: ControllerState::hovering(setpoint, Pid::new(gains)),
            modes: vec![(0.0, Mode::Hover)],
            apexes: 0,
        }
    }

    fn advance(&mut self, s: &SimState) {
        let next = transition(&self.state, s, &self.cfg);
        if next.mode != self.state.mode {
            self.modes.push((s.t, next.mode));
        }
        self.state = next;
    }
}

impl ThrustSchedule for ProtocolSchedule {
    fn force(&self, s: &SimState) -> (f64, f64) {
        (output(&self.state, s, &self.cfg, &self.params), 0.0)
    }

    fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let b = match self.state.mode {
            Mode::Hover => self.state.t_mode_entry + self.cfg.hover_s,
            Mode::Blanking => self.state.t_mode_entry + self.cfg.blanking_ms * 1e-3,
            _ => return None,
        };
        (b > t).then_some(b)
    }

    fn switch_value(&self, s: &SimState) -> Option<f64> {
        (self.state.mode == Mode::ReboundInput && s.phase == Phase::Rebound).then_some(s.v_b - self.cfg.cutoff_speed)
    }

    fn on_switch(&mut self, s: &SimState) {
        self.advance(s);
    }

    fn on_event(&mut self, kind: EventKind, s: &SimState) {
        if kind == EventKind::Apex {
            self.apexes += 1;
        }
        self.advance(s);
    }

    fn on_step(&mut self, s: &SimState, h: f64) {
        if self.state.mode == Mode::Hover {
            let e = self.state.setpoint - s.z_b;
            self.state.pid.accumulate(e, h);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub trajectory: Trajectory,
    pub records: Vec<HopCycleRecord>,
    /// Apex heights starting with the release height.
    pub heights: Vec<f64>,
    /// Successive apex ratios.
    pub deltas: Vec<f64>,
    pub modes: Vec<(f64, Mode)>,
    /// Release time: the end of the hover.
    pub t_release: f64,
}

/// Runs whose centre of mass rises above this multiple of the drop height are cut short.
pub const PROTOCOL_CEILING_FACTOR: f64 = 20.0;

/// Hover at the drop height, release, and hop `n_hops` times under the protocol.
pub fn run_protocol(p: &RobotParams, cfg: &ProtocolConfig, opts: &SimOptions) -> Result<ProtocolRun> {
    p.ensure_valid()?;
    cfg.validate(p)?;
    let init = SimState::at_rest(cfg.drop_height, p);
    let mut sched = ProtocolSchedule::new(*cfg, *p, init.z_b);
    let o = SimOptions {
        min_apex_height: Some(crate::accumulation::CESSATION_HEIGHT),
        ceiling: opts.ceiling.or(Some(PROTOCOL_CEILING_FACTOR * cfg.drop_height)),
        ..*opts
    };
    let trajectory = simulate(p, init, &mut sched, StopCondition::Hops(cfg.n_hops), &o).map_err(|e| {
        if e.is_numerical() {
            HopError::invalid(format!("protocol failed during hop {}: {e}", sched.apexes + 1))
        } else {
            e
        }
    })?;
    let mut heights = vec![cfg.drop_height];
    heights.extend(trajectory.apex_heights(p));
    let deltas = heights.windows(2).map(|w| w[1] / w[0]).collect();
    let records = if o.record {
        ledgers_from_trajectory(&trajectory, p).unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(ProtocolRun {
        trajectory,
        records,
        heights,
        deltas,
        modes: sched.modes,
        t_release: cfg.hover_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::NoThrust;
    use crate::params::default_params;

    #[test]
    fn hover_duty_values() {
        let p = default_params();
        assert!((hover_duty(&p, 2.0 * p.weight()).unwrap() - 0.5).abs() < 1e-15);
        assert!((p.weight() - 6.833).abs() < 1e-3);
        assert!(hover_duty(&p, p.weight()).is_err());
    }

    #[test]
    fn blanking_outputs_zero() {
        let p = default_params();
        let cfg = ProtocolConfig::new(1.5, 85.0, 3);
        let mut cs = ControllerState::hovering(1.7, Pid::new(PidGains::critically_damped(p.m_t(), 8.0)));
        cs.mode = Mode::Blanking;
        cs.t_mode_entry = 1.0;
        let s = SimState {
            t: 1.01,
            z_b: 0.1,
            v_b: -3.0,
            z_f: -1e-4,
            v_f: 0.0,
            phase: Phase::Stance,
        };
        assert_eq!(thrust_command(&cs, &s, &cfg, &p).0, 0.0);
    }

    #[test]
    fn rebound_input_is_fraction_of_weight() {
        let p = default_params();
        let cfg = ProtocolConfig::new(1.5, 55.0, 3);
        let mut cs = ControllerState::hovering(1.7, Pid::new(PidGains::critically_damped(p.m_t(), 8.0)));
        cs.mode = Mode::ReboundInput;
        let s = SimState {
            t: 2.0,
            z_b: 0.5,
            v_b: 3.0,
            z_f: 0.3,
            v_f: 3.0,
            phase: Phase::Rebound,
        };
        let (u, next) = thrust_command(&cs, &s, &cfg, &p);
        assert_eq!(next.mode, Mode::ReboundInput);
        assert_eq!(u, 0.55 * p.weight());
    }

    #[test]
    fn mode_sequence_per_hop() {
        let p = default_params();
        let cfg = ProtocolConfig::new(1.0, 55.0, 3);
        let run = run_protocol(&p, &cfg, &SimOptions::default().unrecorded()).unwrap();
        let modes: Vec<Mode> = run.modes.iter().map(|m| m.1).collect();
        assert_eq!(modes[0], Mode::Hover);
        let cycle = [
            Mode::DropStabilize,
            Mode::Blanking,
            Mode::ReboundInput,
            Mode::StabilizeToApex,
        ];
        for (i, m) in modes[1..].iter().enumerate() {
            assert_eq!(*m, cycle[i % 4], "{modes:?}");
        }
        assert_eq!(modes.len(), 1 + 4 * 3 + 1);
    }

    #[test]
    fn zero_input_matches_uncontrolled() {
        let p = default_params();
        let cfg = ProtocolConfig::new(1.5, 0.0, 2);
        let run = run_protocol(&p, &cfg, &SimOptions::default().unrecorded()).unwrap();
        let mut init = SimState::at_rest(1.5, &p);
        init.t = cfg.hover_s;
        let free = simulate(
            &p,
            init,
            &mut NoThrust,
            StopCondition::Hops(2),
            &SimOptions::default().unrecorded(),
        )
        .unwrap();
        let a: Vec<_> = run
            .trajectory
            .events
            .iter()
            .filter(|e| e.kind != EventKind::HardStop)
            .collect();
        let b: Vec<_> = free.events.iter().filter(|e| e.kind != EventKind::HardStop).collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.kind, y.kind);
            assert!((x.t - y.t).abs() < 1e-6);
            assert!((x.state_after.z_b - y.state_after.z_b).abs() < 1e-6);
        }
    }

    #[test]
    fn thrust_bounded() {
        let p = default_params();
        let cfg = ProtocolConfig {
            thrust_max: Some(1.2 * p.weight()),
            ..ProtocolConfig::new(1.0, 150.0, 2)
        };
        let run = run_protocol(&p, &cfg, &SimOptions::default()).unwrap();
        assert_eq!(run.trajectory.termination, Some(crate::dynamics::Termination::Ceiling));
        for (u, _) in &run.trajectory.inputs {
            assert!(*u >= 0.0 && *u <= 1.2 * p.weight() + 1e-12);
        }
    }
}
