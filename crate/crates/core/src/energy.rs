//! Eight-term per-cycle energy ledger.
//!
//! A hop from apex to apex passes through drop, touchdown, stance, liftoff and
//! rebound. Each stage scales or adds to the energy carried into the next:
//!
//! ```text
//! 1/2 m_T v_TD^2   = m_T g h_d (alpha_d + eta_FDd)
//! E_S0             = eta_TD * 1/2 m_T v_TD^2
//! E_S1             = (alpha_s + eta_mech) * E_S0
//! E_LO+            = eta_LO * E_S1
//! E_LO+            = m_T g h_r (2 - alpha_r - eta_FDr)
//! ```
//!
//! Chaining the stages gives the rebound-to-drop height ratio in closed form.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    com_height, mechanical_energy, simulate, EventKind, NoThrust, SimOptions, SimState, StopCondition, Trajectory,
};
use crate::error::{HopError, Result};
use crate::params::RobotParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub alpha_d: f64,
    #[serde(rename = "eta_FDd")]
    pub eta_fdd: f64,
    #[serde(rename = "eta_TD")]
    pub eta_td: f64,
    pub alpha_s: f64,
    pub eta_mech: f64,
    #[serde(rename = "eta_LO")]
    pub eta_lo: f64,
    pub alpha_r: f64,
    #[serde(rename = "eta_FDr")]
    pub eta_fdr: f64,
}

impl EnergyLedger {
    pub const LOSSLESS: EnergyLedger = EnergyLedger {
        alpha_d: 0.0,
        eta_fdd: 1.0,
        eta_td: 1.0,
        alpha_s: 0.0,
        eta_mech: 1.0,
        eta_lo: 1.0,
        alpha_r: 0.0,
        eta_fdr: 1.0,
    };

    /// Energy carried out of liftoff per unit of drop potential energy.
    pub fn numerator(&self) -> f64 {
        (self.alpha_d + self.eta_fdd) * self.eta_td * (self.alpha_s + self.eta_mech) * self.eta_lo
    }
}

/// Raw per-stage energies (J). Losses are negative; control inputs carry their sign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RawEnergies {
    pub e_d_star: f64,
    pub e_fdd: f64,
    pub e_td: f64,
    pub e_s_star: f64,
    pub e_mech: f64,
    pub e_lo: f64,
    pub e_r_star: f64,
    pub e_fdr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopCycleRecord {
    pub h_d: f64,
    pub h_r: f64,
    pub v_td_minus: f64,
    pub v_lo_minus: f64,
    pub v_lo_plus: f64,
    pub m_t: f64,
    pub g: f64,
    /// Energy entering stance after touchdown losses (J).
    pub e_s0: f64,
    /// Energy at the end of stance, before the liftoff transfer (J).
    pub e_s1: f64,
    pub raw: RawEnergies,
    pub ledger: EnergyLedger,
}

impl HopCycleRecord {
    pub fn delta_measured(&self) -> f64 {
        self.h_r / self.h_d
    }

    /// Builds a record from raw energies, normalizing each by its stage's input energy.
    pub fn from_raw(
        h_d: f64,
        h_r: f64,
        v_td: f64,
        v_lo_minus: f64,
        v_lo_plus: f64,
        m_t: f64,
        g: f64,
        raw: RawEnergies,
    ) -> Result<Self> {
        if !(h_d > 0.0) {
            return Err(HopError::invalid("drop height must be positive"));
        }
        if !(h_r > 0.0) {
            return Err(HopError::invalid("rebound height must be positive"));
        }
        let wd = m_t * g * h_d;
        let wr = m_t * g * h_r;
        let ke_td = 0.5 * m_t * v_td * v_td;
        let e_s0 = ke_td + raw.e_td;
        let e_s1 = e_s0 + raw.e_s_star + raw.e_mech;
        let ledger = EnergyLedger {
            alpha_d: raw.e_d_star / wd,
            eta_fdd: 1.0 + raw.e_fdd / wd,
            eta_td: e_s0 / ke_td,
            alpha_s: raw.e_s_star / e_s0,
            eta_mech: 1.0 + raw.e_mech / e_s0,
            eta_lo: 1.0 + raw.e_lo / e_s1,
            alpha_r: raw.e_r_star / wr,
            eta_fdr: 1.0 + raw.e_fdr / wr,
        };
        Ok(HopCycleRecord {
            h_d,
            h_r,
            v_td_minus: v_td,
            v_lo_minus,
            v_lo_plus,
            m_t,
            g,
            e_s0,
            e_s1,
            raw,
            ledger,
        })
    }
}

/// Rebound-to-drop height ratio implied by a ledger.
pub fn delta_rd(l: &EnergyLedger) -> Result<f64> {
    let den = 2.0 - l.alpha_r - l.eta_fdr;
    if !(den > 0.0) {
        return Err(HopError::UnboundedRise { denominator: den });
    }
    Ok(l.numerator() / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha_r: f64,
    /// The required average rebound force exceeds weight.
    pub flight: bool,
}

/// Rebound input ratio that makes the ledger reach `delta_target`. The ledger's own
/// `alpha_r` is ignored.
pub fn required_alpha_r(l: &EnergyLedger, delta_target: f64) -> Result<AlphaSolution> {
    if !(delta_target.is_finite() && delta_target > 0.0) {
        return Err(HopError::invalid("target height ratio must be positive"));
    }
    let a = 2.0 - l.eta_fdr - l.numerator() / delta_target;
    Ok(AlphaSolution {
        alpha_r: a,
        flight: a > 1.0,
    })
}

/// One minus the losses and energy-removing inputs, as a fraction of the drop energy.
pub fn cycle_efficiency(rec: &HopCycleRecord) -> f64 {
    let r = &rec.raw;
    let removed: f64 = [
        r.e_d_star, r.e_fdd, r.e_td, r.e_s_star, r.e_mech, r.e_lo, r.e_r_star, r.e_fdr,
    ]
    .iter()
    .map(|e| e.min(0.0).abs())
    .sum();
    1.0 - removed / (rec.m_t * rec.g * rec.h_d)
}

/// Cycle efficiency rebuilt from normalized terms and the measured height ratio.
pub fn ledger_cycle_efficiency(l: &EnergyLedger, delta: f64) -> f64 {
    let ke_td = l.alpha_d + l.eta_fdd;
    let e_s0 = l.eta_td * ke_td;
    let e_s1 = (l.eta_mech + l.alpha_s) * e_s0;
    let terms = [
        l.alpha_d,
        -(1.0 - l.eta_fdd),
        -(1.0 - l.eta_td) * ke_td,
        l.alpha_s * e_s0,
        -(1.0 - l.eta_mech) * e_s0,
        -(1.0 - l.eta_lo) * e_s1,
        l.alpha_r * delta,
        -(1.0 - l.eta_fdr) * delta,
    ];
    1.0 - terms.iter().map(|e| e.min(0.0).abs()).sum::<f64>()
}

/// Sample and event indices bounding one apex-to-apex cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleSpan {
    /// Sample of the opening apex.
    pub start: usize,
    /// Sample of the closing apex.
    pub end: usize,
    /// Event index of the touchdown.
    pub touchdown: usize,
    /// Event index of the liftoff.
    pub liftoff: usize,
}

/// Splits a recorded trajectory into complete apex-to-apex cycles. A run that starts
/// at rest in the drop phase counts its first sample as an apex.
pub fn cycle_spans(traj: &Trajectory) -> Vec<CycleSpan> {
    let mut out = Vec::new();
    let mut open: Option<usize> = traj
        .samples
        .first()
        .filter(|s| s.v_b == 0.0 && s.phase == crate::dynamics::Phase::Drop)
        .map(|_| 0);
    let (mut td, mut lo) = (None, None);
    for (i, e) in traj.events.iter().enumerate() {
        match e.kind {
            EventKind::Touchdown => {
                td = Some(i);
                lo = None;
            }
            EventKind::Liftoff => lo = Some(i),
            EventKind::Apex => {
                let Some(end) = e.sample_index else { continue };
                if let (Some(start), Some(t), Some(l)) = (open, td, lo) {
                    if traj.events[t].t < traj.events[l].t {
                        out.push(CycleSpan {
                            start,
                            end,
                            touchdown: t,
                            liftoff: l,
                        });
                    }
                }
                open = Some(end);
                td = None;
                lo = None;
            }
            EventKind::HardStop => {}
        }
    }
    out
}

/// Work done by drag between two samples, by the trapezoid rule over body height.
fn drag_work(traj: &Trajectory, a: usize, b: usize, p: &RobotParams) -> f64 {
    let s = &traj.samples;
    (a..b)
        .map(|k| {
            let f0 = p.drag_force(s[k].v_b);
            let f1 = p.drag_force(s[k + 1].v_b);
            0.5 * (f0 + f1) * (s[k + 1].z_b - s[k].z_b)
        })
        .sum()
}

/// Measures the ledger of one simulated cycle.
///
/// Heights come from the apexes; touchdown loss is the ground dissipation over stance;
/// the liftoff loss is the energy jump across the liftoff event; stance mechanical loss
/// is the residual. Drag work uses the trapezoid rule over recorded samples.
pub fn ledger_from_cycle(traj: &Trajectory, span: &CycleSpan, p: &RobotParams) -> Result<HopCycleRecord> {
    let (n, ne) = (traj.samples.len(), traj.events.len());
    if span.start >= n || span.end >= n || span.touchdown >= ne || span.liftoff >= ne {
        return Err(HopError::MissingEvents("cycle span out of range".into()));
    }
    let td = &traj.events[span.touchdown];
    let lo = &traj.events[span.liftoff];
    if td.kind != EventKind::Touchdown || lo.kind != EventKind::Liftoff {
        return Err(HopError::MissingEvents(
            "span must reference a touchdown and a liftoff".into(),
        ));
    }
    let (Some(i_td), Some(i_lo)) = (td.sample_index, lo.sample_index) else {
        return Err(HopError::MissingEvents("events lack recorded samples".into()));
    };
    let s0 = &traj.samples[span.start];
    let s1 = &traj.samples[span.end];
    let w0 = traj.work[span.start];
    let w1 = traj.work[span.end];
    let h_d = com_height(s0, p);
    if !(h_d > 0.0) {
        return Err(HopError::invalid("zero drop height"));
    }
    let h_r = com_height(s1, p);
    let v_td = td.state_after.v_b.abs();

    let raw_e_td = -(lo.work.ground - td.work.ground);
    let e_s_star = lo.work.input - td.work.input;
    let ke_td = 0.5 * p.m_t() * v_td * v_td;
    let e_s0 = ke_td + raw_e_td;
    let e_s1 = mechanical_energy(&lo.state_before, p);
    let e_after = mechanical_energy(&lo.state_after, p);

    let raw = RawEnergies {
        e_d_star: td.work.input - w0.input,
        e_fdd: drag_work(traj, span.start, i_td, p),
        e_td: raw_e_td,
        e_s_star,
        e_mech: e_s1 - e_s0 - e_s_star,
        e_lo: e_after - e_s1,
        e_r_star: w1.input - lo.work.input,
        e_fdr: drag_work(traj, i_lo, span.end, p),
    };
    HopCycleRecord::from_raw(
        h_d,
        h_r,
        v_td,
        lo.state_before.v_b,
        lo.state_after.v_b,
        p.m_t(),
        p.g,
        raw,
    )
}

/// Ledgers for every complete cycle in a recorded trajectory.
pub fn ledgers_from_trajectory(traj: &Trajectory, p: &RobotParams) -> Result<Vec<HopCycleRecord>> {
    let spans = cycle_spans(traj);
    if spans.is_empty() {
        return Err(HopError::NoCycles);
    }
    spans.iter().map(|s| ledger_from_cycle(traj, s, p)).collect()
}

/// One thrustless hop from rest at `h_d`.
pub fn thrustless_cycle(p: &RobotParams, h_d: f64, opts: &SimOptions) -> Result<HopCycleRecord> {
    let tr = simulate(
        p,
        SimState::at_rest(h_d, p),
        &mut NoThrust,
        StopCondition::Hops(1),
        opts,
    )?;
    let spans = cycle_spans(&tr);
    let span = spans.first().ok_or(HopError::NoCycles)?;
    ledger_from_cycle(&tr, span, p)
}

/// Leg damping that brings the thrustless cycle efficiency from `h_d` down to `target`.
pub fn calibrate_leg_damping(p: &RobotParams, h_d: f64, target: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&target) {
        return Err(HopError::invalid("target efficiency must lie in [0, 1)"));
    }
    let opts = SimOptions::default();
    let eff = |b: f64| -> Result<f64> {
        let q = RobotParams { b_b: b, ..*p };
        Ok(cycle_efficiency(&thrustless_cycle(&q, h_d, &opts)?))
    };
    let e0 = eff(0.0)?;
    if e0 <= target {
        return Err(HopError::NoRoot {
            lo: 0.0,
            hi: 0.0,
            reason: format!("undamped efficiency {e0:.4} is already below the target"),
        });
    }
    let mut hi = 1.0;
    while eff(hi)? > target {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(HopError::NoRoot {
                lo: 0.0,
                hi,
                reason: "damping cannot reach the target efficiency".into(),
            });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-4 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if eff(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
