//! Critical rebound-input ratios, design-space sweeps and hop sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{com_height, simulate, ReboundThrust, SimOptions, SimState, StopCondition, Termination};
use crate::error::{HopError, Result};
use crate::params::RobotParams;

/// Apexes below this height end a sequence (m).
pub const CESSATION_HEIGHT: f64 = 1e-3;
/// Relative slack under which a rebound still counts as reaching the drop height.
const SUSTAIN_REL_TOL: f64 = 1e-6;
const ALPHA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceEnd {
    /// An apex fell below the cessation height or the robot came to rest.
    Ceased,
    /// The requested number of cycles was reached.
    CycleCap,
    /// Thrust at or above weight: the robot rose past the ceiling without an apex.
    Flight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSequence {
    pub alpha_r: f64,
    /// Apex heights, starting with the release height.
    pub heights: Vec<f64>,
    pub end: SequenceEnd,
}

/// Runs `n` hops from rest at `h_0` with rebound thrust `alpha_r * m_T * g`.
pub fn hop_sequence(p: &RobotParams, alpha_r: f64, h_0: f64, n: usize, opts: &SimOptions) -> Result<HopSequence> {
    if !(0.0..=1.0).contains(&alpha_r) {
        return Err(HopError::invalid("alpha_r must lie in [0, 1]"));
    }
    if !(h_0 > 0.0) {
        return Err(HopError::invalid("release height must be positive"));
    }
    if n == 0 {
        return Err(HopError::invalid("cycle count must be positive"));
    }
    let ceiling = 10.0 * h_0;
    let o = SimOptions {
        record: false,
        min_apex_height: Some(CESSATION_HEIGHT),
        ceiling: (alpha_r >= 1.0).then_some(ceiling),
        ..*opts
    };
    let mut sched = ReboundThrust {
        force: alpha_r * p.weight(),
    };
    let tr = simulate(p, SimState::at_rest(h_0, p), &mut sched, StopCondition::Hops(n), &o)?;
    let mut heights = vec![h_0];
    heights.extend(tr.apex_heights(p));
    let end = match tr.termination {
        Some(Termination::Ceiling) => {
            heights.push(ceiling);
            SequenceEnd::Flight
        }
        Some(Termination::Ceased) => SequenceEnd::Ceased,
        _ => SequenceEnd::CycleCap,
    };
    Ok(HopSequence { alpha_r, heights, end })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CriticalAlpha {
    Value(f64),
    /// Even zero input sustains the reference height.
    AlwaysAccumulates,
    /// Not even thrust equal to weight sustains it.
    NeverAccumulates,
}

impl CriticalAlpha {
    /// Numeric form: zero when any input accumulates, NaN when none does.
    pub fn as_f64(&self) -> f64 {
        match *self {
            CriticalAlpha::Value(v) => v,
            CriticalAlpha::AlwaysAccumulates => 0.0,
            CriticalAlpha::NeverAccumulates => f64::NAN,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CriticalAlpha::Value(_) => "value",
            CriticalAlpha::AlwaysAccumulates => "always",
            CriticalAlpha::NeverAccumulates => "never",
        }
    }
}

/// Whether one hop from `h_ref` with input ratio `alpha` climbs back to `h_ref`.
pub fn accumulates(p: &RobotParams, alpha: f64, h_ref: f64, opts: &SimOptions) -> Result<bool> {
    let thr = h_ref * (1.0 - SUSTAIN_REL_TOL);
    let o = SimOptions {
        record: false,
        ceiling: Some(thr),
        min_apex_height: None,
        ..*opts
    };
    let mut sched = ReboundThrust {
        force: alpha * p.weight(),
    };
    let tr = simulate(p, SimState::at_rest(h_ref, p), &mut sched, StopCondition::Hops(1), &o)?;
    Ok(match tr.termination {
        Some(Termination::Ceiling) => true,
        Some(Termination::Ceased) => false,
        _ => tr
            .events
            .iter()
            .rev()
            .find(|e| e.kind == crate::dynamics::EventKind::Apex)
            .is_some_and(|e| com_height(&e.state_after, p) >= thr),
    })
}

/// Smallest rebound input ratio whose single hop from `h_ref` returns to `h_ref`,
/// by bisection on [0, 1] to 1e-4.
pub fn critical_alpha(p: &RobotParams, h_ref: f64, opts: &SimOptions) -> Result<CriticalAlpha> {
    if !(h_ref > 0.0) {
        return Err(HopError::invalid("reference height must be positive"));
    }
    if accumulates(p, 0.0, h_ref, opts)? {
        return Ok(CriticalAlpha::AlwaysAccumulates);
    }
    if !accumulates(p, 1.0, h_ref, opts)? {
        return Ok(CriticalAlpha::NeverAccumulates);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > ALPHA_TOL {
        let mid = 0.5 * (lo + hi);
        if accumulates(p, mid, h_ref, opts)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalAlpha::Value(0.5 * (lo + hi)))
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Critical ratio and force over total mass and body fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub masses: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Indexed `[mass][fraction]`.
    pub cells: Vec<Vec<CriticalAlpha>>,
    pub alpha_crit: Vec<Vec<f64>>,
    pub f_crit: Vec<Vec<f64>>,
    pub g: f64,
}

impl SweepGrid {
    /// Least-squares slope of alpha_crit against log10 of total mass, for one fraction column.
    pub fn log_mass_slope(&self, fraction_index: usize) -> f64 {
        let xs: Vec<f64> = self.masses.iter().map(|m| m.log10()).collect();
        let ys: Vec<f64> = self.alpha_crit.iter().map(|row| row[fraction_index]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }
}

/// Evaluates `critical_alpha` for every (m_T, fraction) cell of the base design rescaled by
/// [`RobotParams::with_masses`]. Cells run in parallel on the current rayon pool and are
/// gathered by index; a cell's failure is stored as its sentinel rather than aborting the sweep.
pub fn critical_surface(
    base: &RobotParams,
    masses: &[f64],
    fractions: &[f64],
    h_ref: f64,
    opts: &SimOptions,
) -> Result<SweepGrid> {
    if masses.is_empty() || fractions.is_empty() {
        return Err(HopError::invalid("sweep axes must be non-empty"));
    }
    if masses.iter().any(|m| !(*m > 0.0)) || fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(HopError::invalid("masses must be positive and fractions inside (0, 1)"));
    }
    if !(h_ref > 0.0) {
        return Err(HopError::invalid("reference height must be positive"));
    }
    let nf = fractions.len();
    let flat: Vec<CriticalAlpha> = (0..masses.len() * nf)
        .into_par_iter()
        .map(|k| {
            let m = masses[k / nf];
            let f = fractions[k % nf];
            let p = base.with_masses(m * f, m * (1.0 - f));
            critical_alpha(&p, h_ref, opts).unwrap_or(CriticalAlpha::NeverAccumulates)
        })
        .collect();
    let cells: Vec<Vec<CriticalAlpha>> = flat.chunks(nf).map(|c| c.to_vec()).collect();
    let alpha_crit: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|c| c.as_f64()).collect()).collect();
    let f_crit = alpha_crit
        .iter()
        .zip(masses)
        .map(|(r, m)| r.iter().map(|a| a * m * base.g).collect())
        .collect();
    Ok(SweepGrid {
        masses: masses.to_vec(),
        fractions: fractions.to_vec(),
        cells,
        alpha_crit,
        f_crit,
        g: base.g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassTarget {
    Body,
    Foot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub alpha_crit_before: f64,
    pub alpha_crit_after: f64,
    pub f_crit_before: f64,
    pub f_crit_after: f64,
}

/// Critical ratio and force before and after adding `delta_m` to the body or foot.
/// Leg, ground and drag constants follow the same mass scaling as the design sweep.
pub fn added_mass_whatif(
    p: &RobotParams,
    delta_m: f64,
    target: MassTarget,
    h_ref: f64,
    opts: &SimOptions,
) -> Result<WhatIf> {
    if !(delta_m >= 0.0) {
        return Err(HopError::invalid("added mass must be non-negative"));
    }
    let q = match target {
        MassTarget::Body => p.with_masses(p.m_b + delta_m, p.m_f),
        MassTarget::Foot => p.with_masses(p.m_b, p.m_f + delta_m),
    };
    let a0 = critical_alpha(p, h_ref, opts)?.as_f64();
    let a1 = if delta_m == 0.0 {
        a0
    } else {
        critical_alpha(&q, h_ref, opts)?.as_f64()
    };
    Ok(WhatIf {
        alpha_crit_before: a0,
        alpha_crit_after: a1,
        f_crit_before: a0 * p.weight(),
        f_crit_after: a1 * q.weight(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;

    #[test]
    fn thrustless_sequence_decreases() {
        let p = default_params();
        let s = hop_sequence(&p, 0.0, 1.0, 6, &SimOptions::default()).unwrap();
        assert!(s.heights.len() >= 4);
        for w in s.heights.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn full_thrust_is_flight() {
        let p = default_params();
        let s = hop_sequence(&p, 1.0, 1.0, 5, &SimOptions::default()).unwrap();
        assert_eq!(s.end, SequenceEnd::Flight);
        for w in s.heights.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn lossless_is_always() {
        let p = RobotParams {
            b_b: 0.0,
            b_f: 0.0,
            rho: 0.0,
            ..default_params()
        };
        let opts = SimOptions {
            rigid_leg: true,
            ..Default::default()
        };
        let c = critical_alpha(&p, 1.0, &opts).unwrap();
        assert_eq!(c, CriticalAlpha::AlwaysAccumulates);
        assert_eq!(c.as_f64(), 0.0);
    }

    #[test]
    fn whatif_zero_is_identity() {
        let p = default_params();
        let w = added_mass_whatif(&p, 0.0, MassTarget::Body, 0.5, &SimOptions::default()).unwrap();
        assert_eq!(w.alpha_crit_before, w.alpha_crit_after);
        assert_eq!(w.f_crit_before, w.f_crit_after);
    }

    #[test]
    fn spacing_helpers() {
        let m = log_space(0.01, 100.0, 5);
        assert!((m[2] - 1.0).abs() < 1e-12);
        assert_eq!(lin_space(0.4, 0.95, 2), vec![0.4, 0.95]);
    }

    #[test]
    fn input_validation() {
        let p = default_params();
        assert!(hop_sequence(&p, 1.5, 1.0, 3, &SimOptions::default()).is_err());
        assert!(critical_alpha(&p, 0.0, &SimOptions::default()).is_err());
    }

    #[test]
    fn corner_roots_match_long_runs() {
        let p = default_params();
        let opts = SimOptions::default();
        let m0 = p.m_t();
        for (m, f) in [
            (m0 / 100.0, 0.4),
            (m0 / 100.0, 0.95),
            (m0 * 100.0, 0.4),
            (m0 * 100.0, 0.95),
        ] {
            let q = p.with_masses(m * f, m * (1.0 - f));
            let c = critical_alpha(&q, 1.0, &opts).unwrap().as_f64();
            let above = hop_sequence(&q, (c + 0.02).min(1.0), 1.0, 100, &opts).unwrap();
            let below = hop_sequence(&q, c - 0.02, 1.0, 100, &opts).unwrap();
            assert!(*above.heights.last().unwrap() > 1.0, "m {m} f {f}");
            assert!(*below.heights.last().unwrap() < 1.0, "m {m} f {f}");
        }
    }
}
