//! Planar two degree-of-freedom stance model.
//!
//! The foot pivots about its ground contact while the body slides along the leg.
//! State is (r, r_dot, theta, theta_dot) with theta measured from vertical; positive
//! theta tips the leg away from vertical and gravity amplifies it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};
use crate::params::{K_B_DEFAULT, M_B_PROTOTYPE, M_F_PROTOTYPE, R_0_DEFAULT};

/// Body rotational inertia fitted to the 6 m/s, 10 degree worked example.
pub const I_CM_B_DEFAULT: f64 = 0.016;
/// Foot rotational inertia from the same fit.
pub const I_CM_F_DEFAULT: f64 = 0.0;
/// Foot centre-of-mass height above the contact from the same fit.
pub const R_F_DEFAULT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceParams {
    pub m_b: f64,
    pub m_f: f64,
    pub k: f64,
    pub r_0: f64,
    pub i_cm_b: f64,
    pub i_cm_f: f64,
    pub r_f: f64,
    pub g: f64,
    /// Friction demand is evaluated where vertical load is at least this fraction of its peak.
    pub mu_load_fraction: f64,
}

impl Default for StanceParams {
    fn default() -> Self {
        StanceParams {
            m_b: M_B_PROTOTYPE,
            m_f: M_F_PROTOTYPE,
            k: K_B_DEFAULT,
            r_0: R_0_DEFAULT,
            i_cm_b: I_CM_B_DEFAULT,
            i_cm_f: I_CM_F_DEFAULT,
            r_f: R_F_DEFAULT,
            g: 9.81,
            mu_load_fraction: 0.5,
        }
    }
}

impl StanceParams {
    pub fn m_t(&self) -> f64 {
        self.m_b + self.m_f
    }

    /// Inertia about the contact point at leg length `r`.
    pub fn inertia(&self, r: f64) -> f64 {
        self.i_cm_b + self.m_b * r * r + self.i_cm_f + self.m_f * self.r_f * self.r_f
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.m_b, self.m_f, self.k, self.r_0, self.g];
        if pos.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(HopError::invalid(
                "stance masses, stiffness, length and gravity must be positive",
            ));
        }
        if [self.i_cm_b, self.i_cm_f, self.r_f]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(HopError::invalid("inertias and foot offset must be non-negative"));
        }
        if self.r_f >= self.r_0 {
            return Err(HopError::invalid("foot offset must be shorter than the leg"));
        }
        if !(0.0..=1.0).contains(&self.mu_load_fraction) {
            return Err(HopError::invalid("load fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Stance energy: body radial and whole-leg rotational kinetic energy, spring and gravity.
    pub fn energy(&self, y: &[f64; 4]) -> f64 {
        let [r, rd, th, thd] = *y;
        let c = self.r_0 - r;
        0.5 * self.m_b * rd * rd
            + 0.5 * self.inertia(r) * thd * thd
            + 0.5 * self.k * c * c
            + (self.m_b * r + self.m_f * self.r_f) * self.g * th.cos()
    }
}

/// (r_dot, r_ddot, theta_dot, theta_ddot).
pub fn stance_derivatives(y: &[f64; 4], sp: &StanceParams) -> Result<[f64; 4]> {
    let [r, rd, th, thd] = *y;
    if !(r > 0.0) {
        return Err(HopError::invalid("leg length must be positive"));
    }
    let i_t = sp.inertia(r);
    let rdd = r * thd * thd - sp.k / sp.m_b * (r - sp.r_0) - sp.g * th.cos();
    let thdd = (sp.m_b * r + sp.m_f * sp.r_f) / i_t * sp.g * th.sin() - 2.0 * sp.m_b / i_t * r * thd * rd;
    Ok([rd, rdd, thd, thdd])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPartition {
    pub vertical: f64,
    pub horizontal: f64,
    pub rotational: f64,
    pub foot_loss: f64,
}

impl EnergyPartition {
    pub fn sum(&self) -> f64 {
        self.vertical + self.horizontal + self.rotational + self.foot_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceOutcome {
    pub v_td: f64,
    /// Degrees from vertical.
    pub theta_td: f64,
    /// Direction of the centre-of-mass velocity after liftoff, degrees from vertical.
    pub liftoff_angle: f64,
    pub mu_required: f64,
    pub partition: EnergyPartition,
    pub stance_time: f64,
    /// The leg passed horizontal before liftoff; the other fields describe the state at that moment.
    pub fell_over: bool,
}

impl StanceOutcome {
    /// Placeholder for a grid cell whose simulation failed: every result is NaN.
    pub fn failed(v_td: f64, theta_td: f64) -> Self {
        StanceOutcome {
            v_td,
            theta_td,
            liftoff_angle: f64::NAN,
            mu_required: f64::NAN,
            partition: EnergyPartition {
                vertical: f64::NAN,
                horizontal: f64::NAN,
                rotational: f64::NAN,
                foot_loss: f64::NAN,
            },
            stance_time: f64::NAN,
            fell_over: false,
        }
    }
}

const DT: f64 = 1e-5;
const EVENT_TOL: f64 = 1e-10;
const MAX_STANCE: f64 = 2.0;

fn rk4(y: &[f64; 4], h: f64, sp: &StanceParams) -> Result<[f64; 4]> {
    let add = |a: &[f64; 4], k: &[f64; 4], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]];
    let k1 = stance_derivatives(y, sp)?;
    let k2 = stance_derivatives(&add(y, &k1, 0.5 * h), sp)?;
    let k3 = stance_derivatives(&add(y, &k2, 0.5 * h), sp)?;
    let k4 = stance_derivatives(&add(y, &k3, h), sp)?;
    let mut o = *y;
    for i in 0..4 {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(o)
}

/// Ground reaction (F_x, F_z) on the foot from the accelerations of both masses.
fn ground_reaction(y: &[f64; 4], sp: &StanceParams) -> Result<(f64, f64)> {
    let [r, rd, th, thd] = *y;
    let d = stance_derivatives(y, sp)?;
    let (rdd, thdd) = (d[1], d[3]);
    let (s, c) = th.sin_cos();
    let e_r = (s, c);
    let e_t = (c, -s);
    let ab_r = rdd - r * thd * thd;
    let ab_t = r * thdd + 2.0 * rd * thd;
    let af_r = -sp.r_f * thd * thd;
    let af_t = sp.r_f * thdd;
    let fr = sp.m_b * ab_r + sp.m_f * af_r;
    let ft = sp.m_b * ab_t + sp.m_f * af_t;
    let fx = fr * e_r.0 + ft * e_t.0;
    let fz = fr * e_r.1 + ft * e_t.1 + sp.m_t() * sp.g;
    Ok((fx, fz))
}

/// Integrates one stance from a vertical touchdown at `v_td` with the leg at `theta_td`
/// degrees, until the spring returns to free length while extending.
pub fn simulate_stance(v_td: f64, theta_td: f64, sp: &StanceParams) -> Result<StanceOutcome> {
    sp.validate()?;
    if !(v_td.is_finite() && v_td > 0.0) {
        return Err(HopError::invalid("touchdown speed must be positive"));
    }
    if !(theta_td.abs() < 45.0) {
        return Err(HopError::invalid(
            "touchdown angle must lie within 45 degrees of vertical",
        ));
    }
    let th0 = theta_td.to_radians();
    let i0 = sp.inertia(sp.r_0);
    // Impact: the foot is pinned, the body keeps its velocity along the leg, and
    // angular momentum about the contact is conserved.
    let mut y = [
        sp.r_0,
        -v_td * th0.cos(),
        th0,
        (sp.m_b * sp.r_0 + sp.m_f * sp.r_f) * v_td * th0.sin() / i0,
    ];
    let mut t = 0.0;
    let mut loads: Vec<(f64, f64)> = Vec::with_capacity(16384);
    loads.push(ground_reaction(&y, sp)?);
    let mut fell = false;
    loop {
        let y1 = rk4(&y, DT, sp)?;
        let g0 = sp.r_0 - y[0];
        let g1 = sp.r_0 - y1[0];
        if g0 > 0.0 && g1 <= 0.0 && y1[1] > 0.0 {
            let (mut lo, mut hi) = (0.0, DT);
            let mut yh = y1;
            while hi - lo > EVENT_TOL {
                let mid = 0.5 * (lo + hi);
                let ym = rk4(&y, mid, sp)?;
                if sp.r_0 - ym[0] <= 0.0 {
                    hi = mid;
                    yh = ym;
                } else {
                    lo = mid;
                }
            }
            y = yh;
            t += hi;
            break;
        }
        y = y1;
        t += DT;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(HopError::NonFiniteState { t });
        }
        loads.push(ground_reaction(&y, sp)?);
        if y[2].abs() >= std::f64::consts::FRAC_PI_2 {
            fell = true;
            break;
        }
        if t > MAX_STANCE {
            return Err(HopError::invalid("stance did not end"));
        }
    }

    let fz_peak = loads.iter().map(|l| l.1).fold(0.0, f64::max);
    let cut = sp.mu_load_fraction * fz_peak;
    let mu = loads
        .iter()
        .filter(|l| l.1 >= cut && l.1 > 0.0)
        .map(|l| (l.0 / l.1).abs())
        .fold(0.0, f64::max);

    let [r, rd, th, thd] = y;
    let m_t = sp.m_t();
    let v_r = sp.m_b * rd / m_t;
    let r_c = (sp.m_b * r + sp.m_f * sp.r_f) / m_t;
    let v_t = r_c * thd;
    let (s, c) = th.sin_cos();
    let vx = v_r * s + v_t * c;
    let vz = v_r * c - v_t * s;
    let i_c = sp.i_cm_b + sp.i_cm_f + sp.m_b * (r - r_c).powi(2) + sp.m_f * (sp.r_f - r_c).powi(2);
    let e_v = 0.5 * m_t * vz * vz;
    let e_h = 0.5 * m_t * vx * vx;
    let e_rot = 0.5 * i_c * thd * thd;
    let e_loss = 0.5 * sp.m_b * sp.m_f / m_t * rd * rd;
    let total = e_v + e_h + e_rot + e_loss;
    Ok(StanceOutcome {
        v_td,
        theta_td,
        liftoff_angle: vx.atan2(vz).to_degrees(),
        mu_required: mu,
        partition: EnergyPartition {
            vertical: e_v / total,
            horizontal: e_h / total,
            rotational: e_rot / total,
            foot_loss: e_loss / total,
        },
        stance_time: t,
        fell_over: fell,
    })
}

/// Outcomes over every (theta, speed) pair, speed varying fastest. Cells run in parallel;
/// a failed cell is returned as its error.
pub fn stance_maps(thetas: &[f64], speeds: &[f64], sp: &StanceParams) -> Vec<Result<StanceOutcome>> {
    let ns = speeds.len();
    (0..thetas.len() * ns)
        .into_par_iter()
        .map(|k| simulate_stance(speeds[k % ns], thetas[k / ns], sp))
        .collect()
}

/// The worked example the defaults are fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceTarget {
    pub v_td: f64,
    pub theta_td: f64,
    pub liftoff_angle: f64,
    pub mu: f64,
    pub partition: EnergyPartition,
}

impl StanceTarget {
    pub fn worked_example() -> Self {
        StanceTarget {
            v_td: 6.0,
            theta_td: 10.0,
            liftoff_angle: 45.0,
            mu: 1.0,
            partition: EnergyPartition {
                vertical: 0.35,
                horizontal: 0.44,
                rotational: 0.04,
                foot_loss: 0.17,
            },
        }
    }

    /// Squared misfit with each term scaled by its tolerance (5 degrees, 0.2, 0.05).
    pub fn misfit(&self, o: &StanceOutcome) -> f64 {
        let sq = |x: f64| x * x;
        sq((o.liftoff_angle - self.liftoff_angle) / 5.0)
            + sq((o.mu_required - self.mu) / 0.2)
            + sq((o.partition.vertical - self.partition.vertical) / 0.05)
            + sq((o.partition.horizontal - self.partition.horizontal) / 0.05)
            + sq((o.partition.rotational - self.partition.rotational) / 0.05)
            + sq((o.partition.foot_loss - self.partition.foot_loss) / 0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceFit {
    pub i_cm_b: f64,
    pub i_cm_f: f64,
    pub r_f: f64,
    pub residual: f64,
    pub outcome: StanceOutcome,
}

/// Grid search over body inertia, foot inertia and foot offset.
pub fn calibrate_stance(
    target: &StanceTarget,
    base: &StanceParams,
    i_b: &[f64],
    i_f: &[f64],
    r_f: &[f64],
) -> Result<StanceFit> {
    let cells: Vec<(f64, f64, f64)> = i_b
        .iter()
        .flat_map(|&a| i_f.iter().flat_map(move |&b| r_f.iter().map(move |&c| (a, b, c))))
        .collect();
    let evals: Vec<Option<StanceFit>> = cells
        .par_iter()
        .map(|&(a, b, c)| {
            let sp = StanceParams {
                i_cm_b: a,
                i_cm_f: b,
                r_f: c,
                ..*base
            };
            let o = simulate_stance(target.v_td, target.theta_td, &sp).ok()?;
            Some(StanceFit {
                i_cm_b: a,
                i_cm_f: b,
                r_f: c,
                residual: target.misfit(&o),
                outcome: o,
            })
        })
        .collect();
    evals
        .into_iter()
        .flatten()
        .filter(|f| !f.outcome.fell_over)
        .min_by(|x, y| {
            // The fit has a ridge of equal residuals; prefer the lighter, more compact foot.
            let key = |f: &StanceFit| ((f.residual * 1e9).round(), f.i_cm_f, f.r_f);
            let (a, b) = (key(x), key(y));
            a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2))
        })
        .ok_or(HopError::SearchExhausted {
            evaluations: cells.len(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_touchdown_is_symmetric() {
        let sp = StanceParams::default();
        let o = simulate_stance(6.0, 0.0, &sp).unwrap();
        assert_eq!(o.liftoff_angle, 0.0);
        assert_eq!(o.mu_required, 0.0);
        assert_eq!(o.partition.horizontal, 0.0);
        assert_eq!(o.partition.rotational, 0.0);
        assert!((o.partition.vertical + o.partition.foot_loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_basics() {
        let sp = StanceParams::default();
        let d = stance_derivatives(&[0.15, -1.0, 0.0, 0.0], &sp).unwrap();
        assert_eq!(d[3], 0.0);
        let d = stance_derivatives(&[sp.r_0, 0.0, 0.0, 0.0], &sp).unwrap();
        assert!((d[1] + sp.g).abs() < 1e-12);
        assert!(stance_derivatives(&[0.0, 0.0, 0.0, 0.0], &sp).is_err());
    }

    #[test]
    fn small_angle_growth_matches_finite_difference() {
        let sp = StanceParams::default();
        let r = 0.18;
        let eps = 1e-6;
        let d1 = stance_derivatives(&[r, 0.0, eps, 0.0], &sp).unwrap()[3];
        let d0 = stance_derivatives(&[r, 0.0, 0.0, 0.0], &sp).unwrap()[3];
        let lin = (sp.m_b * r + sp.m_f * sp.r_f) * sp.g / sp.inertia(r);
        assert!(((d1 - d0) / eps - lin).abs() < 1e-6 * lin);
    }

    #[test]
    fn energy_conserved_during_stance() {
        let sp = StanceParams::default();
        let th = 10f64.to_radians();
        let i0 = sp.inertia(sp.r_0);
        let mut y = [
            sp.r_0,
            -6.0 * th.cos(),
            th,
            (sp.m_b * sp.r_0 + sp.m_f * sp.r_f) * 6.0 * th.sin() / i0,
        ];
        let e0 = sp.energy(&y);
        for _ in 0..5000 {
            y = rk4(&y, DT, &sp).unwrap();
            assert!(((sp.energy(&y) - e0) / e0).abs() < 1e-4);
        }
    }

    #[test]
    fn mirror_symmetry_and_partition_sum() {
        let sp = StanceParams::default();
        for th in [3.0, 8.0, 15.0] {
            let a = simulate_stance(5.0, th, &sp).unwrap();
            let b = simulate_stance(5.0, -th, &sp).unwrap();
            assert!((a.liftoff_angle + b.liftoff_angle).abs() < 1e-9);
            assert!((a.mu_required - b.mu_required).abs() < 1e-9);
            assert!((a.partition.sum() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn grows_with_touchdown_angle() {
        let sp = StanceParams::default();
        let outs: Vec<_> = [2.0, 5.0, 10.0, 15.0]
            .iter()
            .map(|&t| simulate_stance(6.0, t, &sp).unwrap())
            .collect();
        for w in outs.windows(2) {
            assert!(w[1].liftoff_angle > w[0].liftoff_angle);
            assert!(w[1].mu_required > w[0].mu_required);
        }
    }

    #[test]
    fn maps_match_single_calls() {
        let sp = StanceParams::default();
        let thetas = [-10.0, 0.0, 10.0];
        let speeds = [4.0, 6.0];
        let m = stance_maps(&thetas, &speeds, &sp);
        assert_eq!(m.len(), 6);
        let single = simulate_stance(6.0, 10.0, &sp).unwrap();
        assert_eq!(*m[5].as_ref().unwrap(), single);
        assert_eq!(m[2].as_ref().unwrap().liftoff_angle, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let sp = StanceParams::default();
        assert!(simulate_stance(0.0, 5.0, &sp).is_err());
        assert!(simulate_stance(5.0, 50.0, &sp).is_err());
    }
}
