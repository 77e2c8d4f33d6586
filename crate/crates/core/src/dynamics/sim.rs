use crate::error::{HopError, Result};
use crate::params::RobotParams;

use super::{
    com_height, force_breakdown, EventKind, Phase, SimState, Termination, ThrustSchedule, Trajectory, TransitionEvent,
    WorkChannels,
};

/// Stop tension below which the hard stop releases (N). Keeps round-off from toggling it.
const UNLOCK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Step in the air (s).
    pub dt_air: f64,
    /// Step while the foot is in stance (s).
    pub dt_contact: f64,
    /// Event localization tolerance (s).
    pub event_tol: f64,
    /// Keep the hard stop engaged at all times, making the robot a single rigid mass.
    pub rigid_leg: bool,
    /// A stance longer than this means hopping has ceased (s).
    pub stance_timeout: f64,
    pub max_steps: u64,
    /// End the run once the centre of mass rises above this height while ascending.
    pub ceiling: Option<f64>,
    /// End the run when an apex falls below this height.
    pub min_apex_height: Option<f64>,
    /// Store samples; events are always kept.
    pub record: bool,
    /// Sample spacing during stance (s).
    pub record_dt_contact: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt_air: 1e-4,
            dt_contact: 1e-6,
            event_tol: 1e-7,
            rigid_leg: false,
            stance_timeout: 1.0,
            max_steps: 4_000_000_000,
            ceiling: None,
            min_apex_height: None,
            record: true,
            record_dt_contact: 1e-4,
        }
    }
}

impl SimOptions {
    /// Same options with every step and tolerance divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        SimOptions {
            dt_air: self.dt_air / factor,
            dt_contact: self.dt_contact / factor,
            event_tol: self.event_tol / factor,
            ..*self
        }
    }

    /// Aerial step `dt`, with contact step and event tolerance following it.
    pub fn with_dt(dt: f64) -> Self {
        SimOptions {
            dt_air: dt,
            dt_contact: dt / 100.0,
            event_tol: dt / 1000.0,
            ..Default::default()
        }
    }

    pub fn unrecorded(mut self) -> Self {
        self.record = false;
        self
    }

    fn check(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.dt_air) && ok(self.dt_contact) && ok(self.event_tol) && ok(self.stance_timeout)) {
            return Err(HopError::invalid("integration steps and tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    /// Run until this absolute time.
    Time(f64),
    /// Run until this many apexes have been reached.
    Hops(usize),
}

/// Outcome of a single integrator step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    /// A stance outlasted the timeout.
    StanceTimeout,
}

type Y = [f64; 8];

/// Steppable hybrid integrator. [`simulate`] drives it; contact analyses step it directly.
pub struct Simulator {
    p: RobotParams,
    opts: SimOptions,
    drag_factor: f64,
    m_t: f64,
    t: f64,
    y: Y,
    phase: Phase,
    locked: bool,
    stop_loss: f64,
    steps: u64,
    t_stance: f64,
    t_limit: Option<f64>,
    events: Vec<TransitionEvent>,
}

fn add(y: &Y, k: &Y, h: f64) -> Y {
    let mut o = *y;
    for i in 0..8 {
        o[i] += h * k[i];
    }
    o
}

impl Simulator {
    pub fn new(p: &RobotParams, init: SimState, opts: SimOptions) -> Result<Self> {
        p.ensure_valid()?;
        opts.check()?;
        if !init.is_finite() {
            return Err(HopError::NonFiniteState { t: init.t });
        }
        let m_t = p.m_t();
        let locked = opts.rigid_leg || init.leg_length() >= p.stop_length - 1e-12 && init.v_b == init.v_f;
        Ok(Simulator {
            p: *p,
            opts,
            drag_factor: p.cda.mass_factor(m_t),
            m_t,
            t: init.t,
            y: [init.z_b, init.v_b, init.z_f, init.v_f, 0.0, 0.0, 0.0, 0.0],
            phase: init.phase,
            locked,
            stop_loss: 0.0,
            steps: 0,
            t_stance: init.t,
            t_limit: None,
            events: Vec::with_capacity(4),
        })
    }

    /// Steps will land exactly on this time and never pass it.
    pub fn set_time_limit(&mut self, t: Option<f64>) {
        self.t_limit = t;
    }

    pub fn state(&self) -> SimState {
        self.state_at(self.t, &self.y)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn work(&self) -> WorkChannels {
        WorkChannels {
            input: self.y[4],
            drag: self.y[5],
            ground: self.y[6],
            leg: self.y[7],
            stop: self.stop_loss,
        }
    }

    pub fn params(&self) -> &RobotParams {
        &self.p
    }

    /// Force breakdown at the current state under the given schedule.
    pub fn forces(&self, sched: &dyn ThrustSchedule) -> super::ForceBreakdown {
        let s = self.state();
        let (u_b, u_f) = sched.force(&s);
        force_breakdown(&self.p, self.drag_factor, &s, u_b, u_f)
    }

    /// Events produced by the last step, oldest first.
    pub fn drain_events(&mut self) -> std::vec::Drain<'_, TransitionEvent> {
        self.events.drain(..)
    }

    pub fn stance_duration(&self) -> f64 {
        if self.phase == Phase::Stance {
            self.t - self.t_stance
        } else {
            0.0
        }
    }

    fn state_at(&self, t: f64, y: &Y) -> SimState {
        SimState {
            t,
            z_b: y[0],
            v_b: y[1],
            z_f: y[2],
            v_f: y[3],
            phase: self.phase,
        }
    }

    fn deriv(&self, t: f64, y: &Y, sched: &dyn ThrustSchedule) -> Y {
        let s = self.state_at(t, y);
        let (u_b, u_f) = sched.force(&s);
        let f = force_breakdown(&self.p, self.drag_factor, &s, u_b, u_f);
        let (a_b, a_f) = if self.locked {
            let a = (f.body + f.foot) / self.m_t;
            (a, a)
        } else {
            (f.body / self.p.m_b, f.foot / self.p.m_f)
        };
        let ground = if self.phase == Phase::Stance && y[2] < 0.0 {
            -y[3] * (f.ground + self.p.k_f * y[2])
        } else {
            0.0
        };
        [
            y[1],
            a_b,
            y[3],
            a_f,
            u_b * y[1] + u_f * y[3],
            f.drag * y[1],
            ground,
            f.damper * (y[3] - y[1]),
        ]
    }

    fn rk4(&self, t: f64, y: &Y, h: f64, sched: &dyn ThrustSchedule) -> Y {
        let k1 = self.deriv(t, y, sched);
        let k2 = self.deriv(t + 0.5 * h, &add(y, &k1, 0.5 * h), sched);
        let k3 = self.deriv(t + 0.5 * h, &add(y, &k2, 0.5 * h), sched);
        let k4 = self.deriv(t + h, &add(y, &k3, h), sched);
        let mut o = *y;
        for i in 0..8 {
            o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        o
    }

    /// Hard-stop tension with drag excluded, so drag alone never opens the leg in flight.
    fn stop_tension(&self, t: f64, y: &Y, sched: &dyn ThrustSchedule) -> f64 {
        let s = self.state_at(t, y);
        let (u_b, u_f) = sched.force(&s);
        let f = force_breakdown(&self.p, self.drag_factor, &s, u_b, u_f);
        let body = f.body - f.drag;
        body - self.p.m_b * (body + f.foot) / self.m_t
    }

    /// Event function values; a crossing from positive to non-positive triggers.
    /// Slot 0 is the phase's primary event, slot 1 the stop release, slot 2 the schedule switch.
    fn event_values(&self, t: f64, y: &Y, sched: &dyn ThrustSchedule) -> [f64; 3] {
        let inf = f64::INFINITY;
        let mut g = [inf; 3];
        match self.phase {
            Phase::Drop => g[0] = y[2],
            Phase::Rebound => g[0] = y[1],
            Phase::Stance => {
                if self.locked {
                    g[0] = -self.p.k_f * y[2] - self.p.b_f * y[3];
                    if !self.opts.rigid_leg {
                        g[1] = self.stop_tension(t, y, sched) + UNLOCK_EPS;
                    }
                } else {
                    g[0] = self.p.stop_length - (y[0] - y[2]);
                }
            }
        }
        if let Some(v) = sched.switch_value(&self.state_at(t, y)) {
            g[2] = v;
        }
        g
    }

    fn next_break(&self, sched: &dyn ThrustSchedule) -> Option<f64> {
        let b = sched.next_breakpoint(self.t);
        match (b, self.t_limit) {
            (Some(a), Some(l)) => Some(a.min(l)),
            (Some(a), None) => Some(a),
            (None, l) => l.filter(|&l| l > self.t),
        }
    }

    fn push_event(&mut self, kind: EventKind, before: SimState, after: SimState) {
        self.events.push(TransitionEvent {
            kind,
            t: after.t,
            state_before: before,
            state_after: after,
            work: self.work(),
            sample_index: None,
        });
    }

    /// Advances one step, localizing any event inside it.
    pub fn step(&mut self, sched: &mut dyn ThrustSchedule) -> Result<StepOutcome> {
        self.steps += 1;
        if self.steps > self.opts.max_steps {
            return Err(HopError::StepLimit {
                limit: self.opts.max_steps,
                t: self.t,
            });
        }
        let mut h = if self.phase == Phase::Stance {
            self.opts.dt_contact
        } else {
            self.opts.dt_air
        };
        let mut at_break = None;
        if let Some(b) = self.next_break(sched) {
            if b - self.t <= h * (1.0 + 1e-9) {
                h = b - self.t;
                at_break = Some(b);
            }
        }
        let t0 = self.t;
        let y0 = self.y;
        if h <= 0.0 {
            if let Some(b) = at_break {
                self.t = b;
                let s = self.state();
                sched.on_switch(&s);
            }
            return Ok(StepOutcome::Continue);
        }

        let g0 = self.event_values(t0, &y0, &*sched);
        let y1 = self.rk4(t0, &y0, h, &*sched);
        let g1 = self.event_values(t0 + h, &y1, &*sched);
        let crossed = |a: &[f64; 3], b: &[f64; 3]| (0..3).any(|i| a[i] > 0.0 && b[i] <= 0.0);

        if !crossed(&g0, &g1) {
            self.t = at_break.unwrap_or(t0 + h);
            self.y = y1;
            self.check_finite()?;
            if at_break.is_some() {
                let s = self.state();
                sched.on_switch(&s);
            }
        } else {
            let (mut lo, mut hi) = (0.0, h);
            let (mut y_lo, mut y_hi) = (y0, y1);
            let mut iters = 0;
            while hi - lo > self.opts.event_tol {
                iters += 1;
                if iters > 200 {
                    return Err(HopError::EventNotConverged { t: t0 });
                }
                let mid = 0.5 * (lo + hi);
                let ym = self.rk4(t0, &y0, mid, &*sched);
                let gm = self.event_values(t0 + mid, &ym, &*sched);
                if crossed(&g0, &gm) {
                    hi = mid;
                    y_hi = ym;
                } else {
                    lo = mid;
                    y_lo = ym;
                }
            }
            let g_hi = self.event_values(t0 + hi, &y_hi, &*sched);
            let before = self.state_at(t0 + lo, &y_lo);
            self.t = t0 + hi;
            self.y = y_hi;
            self.check_finite()?;
            if g0[0] > 0.0 && g_hi[0] <= 0.0 {
                self.fire_primary(before, sched);
            }
            if g0[1] > 0.0 && g_hi[1] <= 0.0 && self.phase == Phase::Stance && self.locked {
                self.locked = false;
            }
            if g0[2] > 0.0 && g_hi[2] <= 0.0 {
                let s = self.state();
                sched.on_switch(&s);
            }
        }
        let s = self.state();
        sched.on_step(&s, self.t - t0);
        self.settle(sched);
        if self.phase == Phase::Stance && self.t - self.t_stance > self.opts.stance_timeout {
            return Ok(StepOutcome::StanceTimeout);
        }
        Ok(StepOutcome::Continue)
    }

    fn check_finite(&self) -> Result<()> {
        if self.y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(HopError::NonFiniteState { t: self.t })
        }
    }

    fn enter(&mut self, phase: Phase, sched: &mut dyn ThrustSchedule, kind: EventKind, before: SimState) {
        self.phase = phase;
        if phase == Phase::Stance {
            self.t_stance = self.t;
        }
        let after = self.state();
        self.push_event(kind, before, after);
        sched.on_event(kind, &after);
    }

    fn fire_primary(&mut self, before: SimState, sched: &mut dyn ThrustSchedule) {
        match self.phase {
            Phase::Drop => self.enter(Phase::Stance, sched, EventKind::Touchdown, before),
            Phase::Rebound => self.enter(Phase::Drop, sched, EventKind::Apex, before),
            Phase::Stance if self.locked => {
                if self.y[3] > 0.0 {
                    self.enter(Phase::Rebound, sched, EventKind::Liftoff, before);
                }
            }
            Phase::Stance => self.couple(sched),
        }
    }

    /// Plastic merge at the hard stop, followed by a liftoff check.
    fn couple(&mut self, sched: &mut dyn ThrustSchedule) {
        let before = self.state();
        let (m_b, m_f) = (self.p.m_b, self.p.m_f);
        let (v_b, v_f) = (self.y[1], self.y[3]);
        let v = (m_b * v_b + m_f * v_f) / self.m_t;
        let ke0 = 0.5 * m_b * v_b * v_b + 0.5 * m_f * v_f * v_f;
        let ke1 = 0.5 * self.m_t * v * v;
        self.stop_loss += (ke0 - ke1).max(0.0);
        self.y[1] = v;
        self.y[3] = v;
        self.locked = true;
        let raw = -self.p.k_f * self.y[2] - self.p.b_f * v;
        if raw <= 0.0 && v > 0.0 {
            self.enter(Phase::Rebound, sched, EventKind::Liftoff, before);
        } else {
            let after = self.state();
            self.push_event(EventKind::HardStop, before, after);
            sched.on_event(EventKind::HardStop, &after);
        }
    }

    /// Discrete updates that need no localization because their condition already holds.
    fn settle(&mut self, sched: &mut dyn ThrustSchedule) {
        for _ in 0..4 {
            let s = self.state();
            match self.phase {
                Phase::Stance
                    if self.locked
                        && !self.opts.rigid_leg
                        && self.stop_tension(self.t, &self.y, &*sched) <= -UNLOCK_EPS =>
                {
                    self.locked = false;
                }
                Phase::Drop if s.z_f <= 0.0 && s.v_f < 0.0 => {
                    self.enter(Phase::Stance, sched, EventKind::Touchdown, s);
                }
                Phase::Rebound if s.v_b <= 0.0 => {
                    self.enter(Phase::Drop, sched, EventKind::Apex, s);
                }
                _ => return,
            }
        }
    }
}

/// Integrates from `init` until `stop` is met, the hopping ceases, or the ceiling is reached.
pub fn simulate(
    p: &RobotParams,
    init: SimState,
    schedule: &mut dyn ThrustSchedule,
    stop: StopCondition,
    opts: &SimOptions,
) -> Result<Trajectory> {
    match stop {
        StopCondition::Time(t) if !(t > init.t) => {
            return Err(HopError::invalid("stop time must lie after the initial time"))
        }
        StopCondition::Hops(0) => return Err(HopError::invalid("hop count must be positive")),
        _ => {}
    }
    let mut sim = Simulator::new(p, init, *opts)?;
    if let StopCondition::Time(t) = stop {
        sim.set_time_limit(Some(t));
    }
    let mut traj = Trajectory::default();
    let mut last_rec = f64::NEG_INFINITY;
    let record = |traj: &mut Trajectory, sim: &Simulator, sched: &dyn ThrustSchedule, last: &mut f64| -> usize {
        let s = sim.state();
        let u = sched.force(&s);
        if traj.samples.last().is_some_and(|l| l.t >= s.t) {
            let i = traj.samples.len() - 1;
            traj.samples[i] = s;
            traj.inputs[i] = u;
            traj.work[i] = sim.work();
            return i;
        }
        traj.samples.push(s);
        traj.inputs.push(u);
        traj.work.push(sim.work());
        *last = s.t;
        traj.samples.len() - 1
    };
    if opts.record {
        record(&mut traj, &sim, &*schedule, &mut last_rec);
    }
    let mut apexes = 0usize;
    loop {
        let outcome = sim.step(schedule)?;
        let events: Vec<TransitionEvent> = sim.drain_events().collect();
        let phase = sim.state().phase;
        if opts.record {
            if !events.is_empty() || phase.is_aerial() || sim.time() - last_rec >= opts.record_dt_contact - 1e-12 {
                let idx = record(&mut traj, &sim, &*schedule, &mut last_rec);
                if !events.is_empty() {
                    // Events localized within one step share the step's end sample.
                    for mut e in events.iter().copied() {
                        e.sample_index = Some(idx);
                        traj.events.push(e);
                    }
                }
            }
        } else {
            traj.events.extend(events.iter().copied());
        }
        for e in &events {
            if e.kind == EventKind::Apex {
                apexes += 1;
                if let Some(floor) = opts.min_apex_height {
                    if com_height(&e.state_after, p) < floor {
                        traj.termination = Some(Termination::Ceased);
                        return Ok(traj);
                    }
                }
            }
        }
        if outcome == StepOutcome::StanceTimeout {
            traj.termination = Some(Termination::Ceased);
            return Ok(traj);
        }
        if let Some(c) = opts.ceiling {
            let s = sim.state();
            if s.phase == Phase::Rebound && s.v_b > 0.0 && com_height(&s, p) > c {
                traj.termination = Some(Termination::Ceiling);
                return Ok(traj);
            }
        }
        let done = match stop {
            StopCondition::Time(t) => sim.time() >= t,
            StopCondition::Hops(n) => apexes >= n,
        };
        if done {
            traj.termination = Some(Termination::Completed);
            return Ok(traj);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{mechanical_energy, NoThrust, ReboundThrust};
    use crate::params::default_params;

    fn lossless() -> RobotParams {
        RobotParams {
            b_b: 0.0,
            b_f: 0.0,
            rho: 0.0,
            ..default_params()
        }
    }

    #[test]
    fn lossless_rigid_drop_returns_to_height() {
        let p = lossless();
        let opts = SimOptions {
            rigid_leg: true,
            ..Default::default()
        };
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut NoThrust,
            StopCondition::Hops(1),
            &opts,
        )
        .unwrap();
        let h = tr.apex_heights(&p);
        assert_eq!(h.len(), 1);
        assert!((h[0] - 1.0).abs() < 1e-4, "apex {}", h[0]);
        let e0 = mechanical_energy(&tr.samples[0], &p);
        for s in &tr.samples {
            let e = mechanical_energy(s, &p);
            assert!(((e - e0) / e0).abs() < 1e-4, "energy drift at t={}", s.t);
        }
    }

    #[test]
    fn default_drop_loses_height() {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut NoThrust,
            StopCondition::Hops(1),
            &SimOptions::default(),
        )
        .unwrap();
        let h = tr.apex_heights(&p);
        assert!(h[0] < 1.0 && h[0] > 0.3, "apex {}", h[0]);
    }

    #[test]
    fn energy_balance_closes() {
        let p = RobotParams {
            b_b: 2.0,
            ..default_params()
        };
        let mut sched = ReboundThrust {
            force: 0.5 * p.weight(),
        };
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut sched,
            StopCondition::Hops(2),
            &SimOptions::default(),
        )
        .unwrap();
        let e0 = mechanical_energy(&tr.samples[0], &p);
        let scale = p.weight();
        for (s, w) in tr.samples.iter().zip(&tr.work) {
            let e = mechanical_energy(s, &p);
            assert!(
                (e - e0 - w.net()).abs() < 1e-5 * scale,
                "imbalance {} at t={}",
                e - e0 - w.net(),
                s.t
            );
        }
    }

    #[test]
    fn events_alternate_with_single_apex() {
        let p = default_params();
        let mut sched = ReboundThrust {
            force: 0.4 * p.weight(),
        };
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut sched,
            StopCondition::Hops(4),
            &SimOptions::default(),
        )
        .unwrap();
        let kinds: Vec<_> = tr
            .events
            .iter()
            .map(|e| e.kind)
            .filter(|k| *k != EventKind::HardStop)
            .collect();
        let cycle = [EventKind::Touchdown, EventKind::Liftoff, EventKind::Apex];
        assert_eq!(kinds.len(), 12);
        for (i, k) in kinds.iter().enumerate() {
            assert_eq!(*k, cycle[i % 3]);
        }
        for w in tr.events.windows(2) {
            assert!(w[0].t <= w[1].t);
        }
    }

    #[test]
    fn samples_strictly_increasing() {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(0.5, &p),
            &mut NoThrust,
            StopCondition::Hops(2),
            &SimOptions::default(),
        )
        .unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].t - w[0].t <= 1e-4 + 1e-12);
        }
    }

    #[test]
    fn coupling_conserves_momentum_and_loses_energy() {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut NoThrust,
            StopCondition::Hops(1),
            &SimOptions::default(),
        )
        .unwrap();
        let lo = tr.events.iter().find(|e| e.kind == EventKind::Liftoff).unwrap();
        let (b, a) = (lo.state_before, lo.state_after);
        let mom0 = p.m_b * b.v_b + p.m_f * b.v_f;
        let mom1 = p.m_b * a.v_b + p.m_f * a.v_f;
        assert!((mom0 - mom1).abs() < 1e-12);
        let ke = |s: &SimState| 0.5 * p.m_b * s.v_b * s.v_b + 0.5 * p.m_f * s.v_f * s.v_f;
        assert!(ke(&a) <= ke(&b));
    }

    #[test]
    fn time_stop_lands_exactly() {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut NoThrust,
            StopCondition::Time(0.123456),
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(tr.samples.last().unwrap().t, 0.123456);
    }

    #[test]
    fn bad_stop_rejected() {
        let p = default_params();
        assert!(simulate(
            &p,
            SimState::at_rest(1.0, &p),
            &mut NoThrust,
            StopCondition::Hops(0),
            &SimOptions::default()
        )
        .is_err());
    }
}
