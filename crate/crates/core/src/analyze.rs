//! Post-processing of body-tracked hopping trajectories.
//!
//! The input is a position series `t,x,y,z` where `z` is the body height above its
//! standing height with the leg fully extended, so `z > 0` exactly when the foot is
//! airborne. Only `z` drives energetics.
//!
//! The pipeline follows a fixed order: drag losses are computed from the flight
//! arcs first, aerial control inputs are then the energy change left over after
//! drag, and the stance split between input and mechanical loss comes last.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::energy::{delta_rd, EnergyLedger};
use crate::error::{HopError, Result};
use crate::params::RobotParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub samples: Vec<RawSample>,
    /// Nominal sampling rate from the median sample spacing (Hz).
    pub source_rate: f64,
    /// Indices `i` whose spacing to sample `i - 1` exceeds three nominal periods.
    pub gaps: Vec<usize>,
}

impl RawTrajectory {
    pub fn from_samples(samples: Vec<RawSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(HopError::invalid("trajectory needs at least two samples"));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(HopError::invalid(format!(
                    "time not strictly increasing at sample {}",
                    i + 1
                )));
            }
        }
        let mut dts: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
        dts.sort_by(f64::total_cmp);
        let nominal = dts[dts.len() / 2];
        let gaps = samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].t - w[0].t > 3.0 * nominal)
            .map(|(i, _)| i + 1)
            .collect();
        Ok(RawTrajectory {
            samples,
            source_rate: 1.0 / nominal,
            gaps,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn heights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.z).collect()
    }

    /// Writes the `t,x,y,z` CSV form.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "y", "z"])?;
        for s in &self.samples {
            wr.write_record([fmt(s.t), fmt(s.x), fmt(s.y), fmt(s.z)])?;
        }
        wr.flush().map_err(|e| HopError::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.9}")
}

/// Reads a `t,x,y,z` CSV file.
pub fn parse_trajectory(path: &Path) -> Result<RawTrajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| HopError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_trajectory_str(&text, &path.display().to_string())
}

/// Parses CSV text; `origin` names the source in error messages.
pub fn parse_trajectory_str(text: &str, origin: &str) -> Result<RawTrajectory> {
    let perr = |line: usize, message: String| HopError::Parse {
        path: origin.into(),
        line,
        message,
    };
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rd.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "z"] {
        return Err(perr(
            1,
            format!(
                "expected header t,x,y,z, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut samples: Vec<RawSample> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut vals = [0.0; 4];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = rec.get(k).ok_or_else(|| perr(line, "missing field".into()))?;
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| perr(line, format!("bad number '{field}'")))?;
        }
        if let Some(prev) = samples.last() {
            if !(vals[0] > prev.t) {
                return Err(perr(line, format!("non-monotonic time {} after {}", vals[0], prev.t)));
            }
        }
        samples.push(RawSample {
            t: vals[0],
            x: vals[1],
            y: vals[2],
            z: vals[3],
        });
    }
    RawTrajectory::from_samples(samples)
}

/// Derivative at `t[i]` of the parabola through three neighbouring points.
fn three_point_slope(t: [f64; 3], z: [f64; 3], at: usize) -> f64 {
    let (t0, t1, t2) = (t[0], t[1], t[2]);
    let x = t[at];
    z[0] * (2.0 * x - t1 - t2) / ((t0 - t1) * (t0 - t2))
        + z[1] * (2.0 * x - t0 - t2) / ((t1 - t0) * (t1 - t2))
        + z[2] * (2.0 * x - t0 - t1) / ((t2 - t0) * (t2 - t1))
}

fn raw_velocity(t: &[f64], z: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| {
            if i == 0 {
                three_point_slope([t[0], t[1], t[2]], [z[0], z[1], z[2]], 0)
            } else if i == n - 1 {
                three_point_slope([t[n - 3], t[n - 2], t[n - 1]], [z[n - 3], z[n - 2], z[n - 1]], 2)
            } else {
                (z[i + 1] - z[i - 1]) / (t[i + 1] - t[i - 1])
            }
        })
        .collect()
}

/// Centered moving average whose window shrinks symmetrically at the ends.
fn centered_average(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = v.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            v[i - h..=i + h].iter().sum::<f64>() / (2 * h + 1) as f64
        })
        .collect()
}

fn velocity_of(t: &[f64], z: &[f64], window: usize) -> Result<Vec<f64>> {
    if t.len() < 3 {
        return Err(HopError::invalid("velocity estimation needs at least 3 samples"));
    }
    if window == 0 {
        return Err(HopError::invalid("velocity window must be at least 1"));
    }
    Ok(centered_average(&raw_velocity(t, z), window))
}

/// Vertical velocity: central differences smoothed by a centered moving average of
/// `window` samples. End samples use second-order one-sided differences.
pub fn estimate_velocity(rt: &RawTrajectory, window: usize) -> Result<Vec<f64>> {
    velocity_of(&rt.times(), &rt.heights(), window)
}

pub const DEFAULT_VELOCITY_WINDOW: usize = 5;

fn differentiate(t: &[f64], v: &[f64]) -> Vec<f64> {
    raw_velocity(t, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    /// Touchdown when upward acceleration exceeds this many g while descending.
    pub touchdown_g: f64,
    /// Liftoff when acceleration falls back below this many g while ascending.
    pub liftoff_g: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            touchdown_g: 3.0,
            liftoff_g: 1.5,
        }
    }
}

/// Sample indices of the cycle markers. `touchdown[k]` and `liftoff[k]` lie between
/// `apex[k]` and `apex[k + 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleMarks {
    pub apex: Vec<usize>,
    pub touchdown: Vec<usize>,
    pub liftoff: Vec<usize>,
}

/// Finds apexes, touchdowns and liftoffs from the velocity series.
pub fn segment_cycles(rt: &RawTrajectory, vel: &[f64], g: f64, opts: &SegmentOptions) -> Result<CycleMarks> {
    let n = rt.len();
    if vel.len() != n || n < 3 {
        return Err(HopError::invalid(
            "velocity series must match the trajectory and have 3+ samples",
        ));
    }
    let t = rt.times();
    let acc = differentiate(&t, vel);
    let rest = 2.0 * g / rt.source_rate;
    let mut marks = CycleMarks::default();
    let mut airborne = true;
    if vel[0] <= 0.0 && vel[0].abs() < rest {
        marks.apex.push(0);
    }
    for i in 0..n - 1 {
        if airborne {
            if acc[i] > opts.touchdown_g * g && vel[i] < 0.0 {
                if marks.apex.len() > marks.touchdown.len() {
                    marks.touchdown.push(i);
                    airborne = false;
                }
            } else if vel[i] >= 0.0 && vel[i + 1] < 0.0 && marks.liftoff.len() == marks.touchdown.len() {
                if marks.apex.len() == marks.touchdown.len() {
                    marks.apex.push(i);
                } else if let Some(last) = marks.apex.last_mut() {
                    // repeated crossing before any contact, e.g. the end of a hover
                    *last = i;
                }
            }
        } else if acc[i] < opts.liftoff_g * g && vel[i] > 0.0 {
            marks.liftoff.push(i);
            airborne = true;
        }
    }
    if airborne
        && marks.liftoff.len() == marks.touchdown.len()
        && marks.apex.len() == marks.touchdown.len()
        && !marks.touchdown.is_empty()
        && vel[n - 1] >= 0.0
        && vel[n - 1] < rest
    {
        marks.apex.push(n - 1);
    }
    if marks.touchdown.is_empty() {
        return Err(HopError::NoCycles);
    }
    // an unfinished stance at the end of the record is not a usable marker
    if marks.liftoff.len() < marks.touchdown.len() {
        marks.touchdown.pop();
    }
    if marks.touchdown.is_empty() {
        return Err(HopError::NoCycles);
    }
    Ok(marks)
}

fn lstsq(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let k = rows.first()?.len();
    if m < k {
        return None;
    }
    let a = DMatrix::from_fn(m, k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let x = a.svd(true, true).solve(&b, 1e-12).ok()?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Quadratic `z = c0 + c1 τ + c2 τ²` with `τ = t - origin`.
#[derive(Debug, Clone, Copy)]
struct Quadratic {
    origin: f64,
    c: [f64; 3],
}

impl Quadratic {
    fn fit(t: &[f64], z: &[f64]) -> Option<Self> {
        if t.len() < 3 {
            return None;
        }
        let origin = t[t.len() / 2];
        let rows: Vec<Vec<f64>> = t
            .iter()
            .map(|&ti| {
                let s = ti - origin;
                vec![1.0, s, s * s]
            })
            .collect();
        let c = lstsq(&rows, z)?;
        Some(Quadratic {
            origin,
            c: [c[0], c[1], c[2]],
        })
    }

    fn value(&self, t: f64) -> f64 {
        let s = t - self.origin;
        self.c[0] + self.c[1] * s + self.c[2] * s * s
    }

    fn slope(&self, t: f64) -> f64 {
        self.c[1] + 2.0 * self.c[2] * (t - self.origin)
    }

    /// Root of `z = 0` closest to `near`.
    fn root_near(&self, near: f64) -> Option<f64> {
        let [a, b, c] = self.c;
        let roots: Vec<f64> = if c.abs() < 1e-14 {
            if b == 0.0 {
                vec![]
            } else {
                vec![-a / b]
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let mut r = vec![q / c];
            if q != 0.0 {
                r.push(a / q);
            }
            r
        };
        roots
            .into_iter()
            .map(|s| s + self.origin)
            .min_by(|x, y| (x - near).abs().total_cmp(&(y - near).abs()))
    }
}

/// Harmonic stance model `z = c + A cos ωτ + B sin ωτ`.
#[derive(Debug, Clone, Copy)]
struct Harmonic {
    origin: f64,
    omega: f64,
    c: [f64; 3],
}

impl Harmonic {
    fn fit(t: &[f64], z: &[f64], omega: f64) -> Option<Self> {
        if t.len() < 3 {
            return None;
        }
        let origin = t[0];
        let rows: Vec<Vec<f64>> = t
            .iter()
            .map(|&ti| {
                let s = omega * (ti - origin);
                vec![1.0, s.cos(), s.sin()]
            })
            .collect();
        let c = lstsq(&rows, z)?;
        Some(Harmonic {
            origin,
            omega,
            c: [c[0], c[1], c[2]],
        })
    }

    fn value(&self, t: f64) -> f64 {
        let s = self.omega * (t - self.origin);
        self.c[0] + self.c[1] * s.cos() + self.c[2] * s.sin()
    }

    fn slope(&self, t: f64) -> f64 {
        let s = self.omega * (t - self.origin);
        self.omega * (-self.c[1] * s.sin() + self.c[2] * s.cos())
    }

    /// Upward zero crossing in `[lo, hi]`, by bisection.
    fn rising_root(&self, lo: f64, hi: f64) -> Option<f64> {
        let (mut a, mut b) = (lo, hi);
        if !(self.value(a) <= 0.0 && self.value(b) >= 0.0) {
            return None;
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if self.value(m) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub velocity_window: usize,
    /// Samples each side of an apex used to refine its height.
    pub apex_half_window: usize,
    /// Flight samples next to a contact used for the touchdown and liftoff fits.
    pub contact_fit_samples: usize,
    /// Relative deviation from the natural contact time beyond which stance energy
    /// change is attributed to stance input.
    pub contact_time_tolerance: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            velocity_window: DEFAULT_VELOCITY_WINDOW,
            apex_half_window: 3,
            contact_fit_samples: 8,
            contact_time_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopEstimate {
    pub hop_index: usize,
    pub h_d: f64,
    pub h_r: f64,
    pub v_td: f64,
    pub v_lo_minus: f64,
    pub v_lo_plus: f64,
    pub contact_time: f64,
    /// Whether the contact time deviated enough to attribute stance energy to input.
    pub stance_input_inferred: bool,
    pub ledger: EnergyLedger,
    /// Height ratio measured from the apexes.
    pub delta_measured: f64,
    /// Height ratio predicted from the extracted terms.
    pub delta_model: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedHop {
    pub hop_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub hops: Vec<HopEstimate>,
    pub skipped: Vec<SkippedHop>,
    /// Stance retention of the hops with natural contact time, when any exist.
    pub eta_mech_reference: Option<f64>,
    /// Natural stance duration of the leg spring and body mass (s).
    pub natural_contact_time: f64,
}

struct Apex {
    t: f64,
    h: f64,
}

fn refine_apex(t: &[f64], z: &[f64], i: usize, half: usize) -> Apex {
    let lo = (i.saturating_sub(half)..=i)
        .rev()
        .take_while(|&k| z[k] > 0.0)
        .last()
        .unwrap_or(i);
    let hi = (i..=(i + half).min(z.len() - 1))
        .take_while(|&k| z[k] > 0.0)
        .last()
        .unwrap_or(i);
    let fallback = Apex { t: t[i], h: z[i] };
    let Some(q) = Quadratic::fit(&t[lo..=hi], &z[lo..=hi]) else {
        return fallback;
    };
    if !(q.c[2] < 0.0) {
        return fallback;
    }
    let tv = q.origin - q.c[1] / (2.0 * q.c[2]);
    let span = t[hi] - t[lo];
    if tv < t[lo] - span || tv > t[hi] + span {
        return fallback;
    }
    Apex { t: tv, h: q.value(tv) }
}

/// Drag work over an aerial arc, integrating `F_D |v|` by the trapezoid rule.
fn drag_work(p: &RobotParams, times: &[f64], vels: &[f64]) -> f64 {
    let power: Vec<f64> = vels.iter().map(|&v| (p.drag_force(v) * v).abs()).collect();
    times
        .windows(2)
        .zip(power.windows(2))
        .map(|(t, w)| 0.5 * (w[0] + w[1]) * (t[1] - t[0]))
        .sum()
}

/// Per-hop energy terms from body motion alone.
///
/// Touchdown retention is set to `m_B / m_T` because body tracking cannot see the foot.
/// Stance input is attributed only for hops whose contact time departs from the
/// natural stance duration; those hops use the median stance retention of the others.
pub fn extract_ledgers(
    rt: &RawTrajectory,
    marks: &CycleMarks,
    p: &RobotParams,
    opts: &ExtractOptions,
) -> Result<Extraction> {
    p.ensure_valid()?;
    let t = rt.times();
    let z = rt.heights();
    let n = t.len();
    let m_t = p.m_t();
    let w = m_t * p.g;
    let eta_td = p.m_b / m_t;
    let omega = (p.k_b / p.m_b).sqrt();
    let natural = PI / omega;

    struct Partial {
        hop_index: usize,
        h_d: f64,
        h_r: f64,
        v_td: f64,
        v_lo_minus: f64,
        v_lo_plus: f64,
        contact_time: f64,
        drag_d: f64,
        drag_r: f64,
    }

    let mut partials = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..marks.touchdown.len() {
        let skip = |reason: &str| SkippedHop {
            hop_index: k,
            reason: reason.to_string(),
        };
        let (Some(&ia), Some(&ib)) = (marks.apex.get(k), marks.apex.get(k + 1)) else {
            skipped.push(skip("missing closing apex"));
            continue;
        };
        if !(ia < marks.touchdown[k] && marks.touchdown[k] < marks.liftoff[k] && marks.liftoff[k] < ib && ib < n) {
            skipped.push(skip("markers out of order"));
            continue;
        }
        // contiguous airborne runs leaving the opening apex and reaching the closing one
        let drop_end = (ia..ib).take_while(|&i| z[i] > 0.0).last();
        let rise_start = (ia..=ib).rev().take_while(|&i| z[i] > 0.0).last();
        let (Some(de), Some(rs)) = (drop_end, rise_start) else {
            skipped.push(skip("apex not airborne"));
            continue;
        };
        if rs <= de + 3 {
            skipped.push(skip("stance shorter than three samples"));
            continue;
        }
        if de < ia + 2 || ib < rs + 2 {
            skipped.push(skip("aerial arc shorter than three samples"));
            continue;
        }
        let apex_d = refine_apex(&t, &z, ia, opts.apex_half_window);
        let apex_r = refine_apex(&t, &z, ib, opts.apex_half_window);
        if !(apex_d.h > 0.0 && apex_r.h > 0.0) {
            skipped.push(skip("non-positive apex height"));
            continue;
        }

        let m = opts.contact_fit_samples.max(3);
        let d_lo = de.saturating_sub(m - 1).max(ia);
        let r_hi = (rs + m - 1).min(ib);
        let (Some(qd), Some(qr)) = (
            Quadratic::fit(&t[d_lo..=de], &z[d_lo..=de]),
            Quadratic::fit(&t[rs..=r_hi], &z[rs..=r_hi]),
        ) else {
            skipped.push(skip("contact fit failed"));
            continue;
        };
        let Some(t_td) = qd.root_near(t[de]).filter(|r| *r >= t[de] - 1e-9 && *r <= t[de + 1]) else {
            skipped.push(skip("no touchdown crossing"));
            continue;
        };
        let Some(t_lo_flight) = qr.root_near(t[rs]).filter(|r| *r >= t[rs - 1] && *r <= t[rs] + 1e-9) else {
            skipped.push(skip("no liftoff crossing"));
            continue;
        };
        let v_td = qd.slope(t_td);
        let v_lo_plus = qr.slope(t_lo_flight);
        let Some(hs) = Harmonic::fit(&t[de + 1..rs], &z[de + 1..rs], omega) else {
            skipped.push(skip("stance fit failed"));
            continue;
        };
        let t_lo = hs.rising_root(t[rs - 1], t[rs]).unwrap_or(t_lo_flight);
        let v_lo_minus = hs.slope(t_lo);
        if !(v_td < 0.0 && v_lo_plus > 0.0 && v_lo_minus > 0.0) {
            skipped.push(skip("contact velocities have the wrong sign"));
            continue;
        }

        let vd = velocity_of(&t[ia..=de], &z[ia..=de], opts.velocity_window)?;
        let mut td: Vec<f64> = vec![apex_d.t];
        let mut vdv: Vec<f64> = vec![0.0];
        for (j, &ti) in t[ia..=de].iter().enumerate() {
            if ti > apex_d.t {
                td.push(ti);
                vdv.push(vd[j]);
            }
        }
        td.push(t_td);
        vdv.push(v_td);

        let vr = velocity_of(&t[rs..=ib], &z[rs..=ib], opts.velocity_window)?;
        let mut tr: Vec<f64> = vec![t_lo_flight];
        let mut vrv: Vec<f64> = vec![v_lo_plus];
        for (j, &ti) in t[rs..=ib].iter().enumerate() {
            if ti < apex_r.t {
                tr.push(ti);
                vrv.push(vr[j]);
            }
        }
        tr.push(apex_r.t);
        vrv.push(0.0);

        partials.push(Partial {
            hop_index: k,
            h_d: apex_d.h,
            h_r: apex_r.h,
            v_td,
            v_lo_minus,
            v_lo_plus,
            contact_time: t_lo - t_td,
            drag_d: drag_work(p, &td, &vdv),
            drag_r: drag_work(p, &tr, &vrv),
        });
    }

    let stance_ratio = |q: &Partial| (0.5 * p.m_b * q.v_lo_minus.powi(2)) / (eta_td * 0.5 * m_t * q.v_td.powi(2));
    let nominal = |q: &Partial| ((q.contact_time - natural) / natural).abs() <= opts.contact_time_tolerance;
    let mut reference: Vec<f64> = partials.iter().filter(|q| nominal(q)).map(stance_ratio).collect();
    reference.sort_by(f64::total_cmp);
    let eta_mech_reference = (!reference.is_empty()).then(|| {
        let m = reference.len();
        if m % 2 == 1 {
            reference[m / 2]
        } else {
            0.5 * (reference[m / 2 - 1] + reference[m / 2])
        }
    });

    let hops = partials
        .iter()
        .map(|q| {
            let ke_td = 0.5 * m_t * q.v_td.powi(2);
            let e_s0 = eta_td * ke_td;
            let e_s1 = 0.5 * p.m_b * q.v_lo_minus.powi(2);
            let e_lo = 0.5 * m_t * q.v_lo_plus.powi(2);
            let ratio = e_s1 / e_s0;
            let inferred = !nominal(q) && eta_mech_reference.is_some();
            let (alpha_s, eta_mech) = match eta_mech_reference {
                Some(r) if inferred => (ratio - r, r),
                _ => (0.0, ratio),
            };
            let ledger = EnergyLedger {
                alpha_d: (ke_td - w * q.h_d + q.drag_d) / (w * q.h_d),
                eta_fdd: 1.0 - q.drag_d / (w * q.h_d),
                eta_td,
                alpha_s,
                eta_mech,
                eta_lo: e_lo / e_s1,
                alpha_r: (w * q.h_r - e_lo + q.drag_r) / (w * q.h_r),
                eta_fdr: 1.0 - q.drag_r / (w * q.h_r),
            };
            HopEstimate {
                hop_index: q.hop_index,
                h_d: q.h_d,
                h_r: q.h_r,
                v_td: q.v_td,
                v_lo_minus: q.v_lo_minus,
                v_lo_plus: q.v_lo_plus,
                contact_time: q.contact_time,
                stance_input_inferred: inferred,
                ledger,
                delta_measured: q.h_r / q.h_d,
                delta_model: delta_rd(&ledger).ok(),
            }
        })
        .collect();

    Ok(Extraction {
        hops,
        skipped,
        eta_mech_reference,
        natural_contact_time: natural,
    })
}

/// Straight-line drag-area fit `CdA = slope |v| + intercept` at the reference mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdaFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS drag-force residual normalized by weight.
    pub residual: f64,
    pub samples: usize,
    pub speed_span: f64,
}

pub const CDA_MIN_SPEED: f64 = 1.0;
pub const CDA_REQUIRED_SPAN: f64 = 2.0;

/// Fits the drag-area line from unpowered descents.
///
/// Samples qualify when descending at 1 to 7 m/s with every acceleration within three
/// samples between -1.5 g and +0.5 g, which keeps contact and its smoothing halo out.
/// The fit minimizes drag-force error, so each run is weighted by its speed squared.
/// Runs at other masses are referred back to the reference mass with the model's scaling.
pub fn fit_cda(runs: &[(RawTrajectory, f64)], p: &RobotParams) -> Result<CdaFit> {
    if !(p.rho > 0.0) {
        return Err(HopError::invalid("air density must be positive to fit a drag area"));
    }
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut speeds: Vec<f64> = Vec::new();
    for (rt, mass) in runs {
        if !(*mass > 0.0) {
            return Err(HopError::invalid("run mass must be positive"));
        }
        if rt.len() < 7 {
            continue;
        }
        let t = rt.times();
        let z = rt.heights();
        let v = raw_velocity(&t, &z);
        let a = differentiate(&t, &v);
        let factor = p.cda.mass_factor(*mass);
        let n = t.len();
        for i in 3..n - 3 {
            let speed = -v[i];
            if !(CDA_MIN_SPEED..=p.cda.v_valid_max).contains(&speed) {
                continue;
            }
            if !a[i - 3..=i + 3].iter().all(|&x| x > -1.5 * p.g && x < 0.5 * p.g) {
                continue;
            }
            // m (a + g) = 1/2 rho v^2 (c0 + c1 v) * factor
            let q = 0.5 * p.rho * speed * speed * factor;
            rows.push(vec![q, q * speed]);
            rhs.push(mass * (a[i] + p.g));
            speeds.push(speed);
        }
    }
    let span =
        speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    if speeds.is_empty() || !(span >= CDA_REQUIRED_SPAN) {
        return Err(HopError::InsufficientSpeedRange {
            span: span.max(0.0),
            required: CDA_REQUIRED_SPAN,
        });
    }
    let c = lstsq(&rows, &rhs).ok_or_else(|| HopError::invalid("degenerate drag-area fit"))?;
    let weight = runs.iter().map(|r| r.1).fold(0.0, f64::max) * p.g;
    let sse: f64 = rows
        .iter()
        .zip(&rhs)
        .map(|(r, y)| (r[0] * c[0] + r[1] * c[1] - y).powi(2))
        .sum();
    Ok(CdaFit {
        slope: c[1],
        intercept: c[0],
        residual: (sse / rows.len() as f64).sqrt() / weight,
        samples: rows.len(),
        speed_span: span,
    })
}

/// Resamples a simulated trajectory as body tracking at `rate` Hz, using cubic Hermite
/// interpolation of body position and velocity. `z` is body height above its standing
/// height, so the foot is airborne exactly when `z > 0`.
pub fn export_tracking(traj: &Trajectory, p: &RobotParams, rate: f64) -> Result<RawTrajectory> {
    if !(rate > 0.0) {
        return Err(HopError::invalid("export rate must be positive"));
    }
    let s = &traj.samples;
    if s.len() < 2 {
        return Err(HopError::invalid("trajectory too short to export"));
    }
    let t0 = s[0].t;
    let t_end = s[s.len() - 1].t;
    let count = ((t_end - t0) * rate + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let tk = t0 + k as f64 / rate;
        while j + 2 < s.len() && s[j + 1].t <= tk {
            j += 1;
        }
        let (a, b) = (&s[j], &s[j + 1]);
        let h = b.t - a.t;
        let u = ((tk - a.t) / h).clamp(0.0, 1.0);
        let (u2, u3) = (u * u, u * u * u);
        let zb = (2.0 * u3 - 3.0 * u2 + 1.0) * a.z_b
            + (u3 - 2.0 * u2 + u) * h * a.v_b
            + (-2.0 * u3 + 3.0 * u2) * b.z_b
            + (u3 - u2) * h * b.v_b;
        out.push(RawSample {
            t: tk,
            x: 0.0,
            y: 0.0,
            z: zb - p.stop_length,
        });
    }
    RawTrajectory::from_samples(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, NoThrust, SimOptions, SimState, StopCondition};
    use crate::energy::ledgers_from_trajectory;
    use crate::params::default_params;

    fn series(t: &[f64], z: &[f64]) -> RawTrajectory {
        RawTrajectory::from_samples(
            t.iter()
                .zip(z)
                .map(|(&t, &z)| RawSample { t, x: 0.0, y: 0.0, z })
                .collect(),
        )
        .unwrap()
    }

    fn simulated(h: f64, hops: usize) -> (Trajectory, RawTrajectory) {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(h, &p),
            &mut NoThrust,
            StopCondition::Hops(hops),
            &SimOptions::default(),
        )
        .unwrap();
        let rt = export_tracking(&tr, &p, 100.0).unwrap();
        (tr, rt)
    }

    #[test]
    fn parses_small_file() {
        let rt = parse_trajectory_str("t,x,y,z\n0,0,0,1\n0.01,0,0,0.99\n0.02,0,0,0.98\n", "mem").unwrap();
        assert_eq!(rt.len(), 3);
        assert!((rt.source_rate - 100.0).abs() < 1e-6);
        assert!(rt.gaps.is_empty());
    }

    #[test]
    fn shuffled_time_names_line() {
        let err = parse_trajectory_str("t,x,y,z\n0,0,0,1\n0.02,0,0,0.99\n0.01,0,0,0.98\n", "mem").unwrap_err();
        match err {
            HopError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_trajectory_str("t,x,y,z\n0,0,0,1\n0.01,0,zz,0.98\n", "mem").unwrap_err();
        assert!(matches!(err, HopError::Parse { line: 3, .. }), "{err}");
        let err = parse_trajectory_str("t,y,x,z\n0,0,0,1\n", "mem").unwrap_err();
        assert!(matches!(err, HopError::Parse { line: 1, .. }));
    }

    #[test]
    fn gaps_flagged() {
        let t = [0.0, 0.01, 0.02, 0.03, 0.08, 0.09];
        let rt = series(&t, &[0.0; 6]);
        assert_eq!(rt.gaps, vec![4]);
    }

    #[test]
    fn linear_motion_exact() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        let z: Vec<f64> = t.iter().map(|t| 2.0 - 3.0 * t).collect();
        for w in [1, 5] {
            let v = estimate_velocity(&series(&t, &z), w).unwrap();
            assert!(v.iter().all(|v| (v + 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn window_one_is_central_difference() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.01).collect();
        let z = [0.0, 1.0, 4.0, 2.0, 3.0, 3.5];
        let v = estimate_velocity(&series(&t, &z), 1).unwrap();
        assert!((v[2] - (2.0 - 1.0) / 0.02).abs() < 1e-9);
        assert!(estimate_velocity(&series(&t[..2], &z[..2]), 5).is_err());
    }

    #[test]
    fn ballistic_velocity_accurate() {
        let g = 9.81;
        let t: Vec<f64> = (0..80).map(|i| i as f64 * 0.01).collect();
        let z: Vec<f64> = t.iter().map(|t| 3.0 + 2.0 * t - 0.5 * g * t * t).collect();
        let v = estimate_velocity(&series(&t, &z), 5).unwrap();
        let err = t
            .iter()
            .zip(&v)
            .map(|(t, v)| (v - (2.0 - g * t)).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn source_rate_of_export() {
        let (_, rt) = simulated(1.0, 1);
        assert!((rt.source_rate - 100.0).abs() < 1.0);
    }

    #[test]
    fn single_hop_markers() {
        let (_, rt) = simulated(1.0, 1);
        let v = estimate_velocity(&rt, 5).unwrap();
        let m = segment_cycles(&rt, &v, 9.81, &SegmentOptions::default()).unwrap();
        assert_eq!(m.touchdown.len(), 1);
        assert_eq!(m.liftoff.len(), 1);
        assert_eq!(m.apex.len(), 2);
        assert!(m.apex[0] < m.touchdown[0] && m.touchdown[0] < m.liftoff[0] && m.liftoff[0] < m.apex[1]);
    }

    #[test]
    fn free_fall_has_no_cycles() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let z: Vec<f64> = t.iter().map(|t| 5.0 - 4.905 * t * t).collect();
        let rt = series(&t, &z);
        let v = estimate_velocity(&rt, 5).unwrap();
        assert!(matches!(
            segment_cycles(&rt, &v, 9.81, &SegmentOptions::default()),
            Err(HopError::NoCycles)
        ));
    }

    #[test]
    fn thrustless_extraction_matches_simulator() {
        let p = default_params();
        let (tr, rt) = simulated(1.5, 2);
        let truth = ledgers_from_trajectory(&tr, &p).unwrap();
        let v = estimate_velocity(&rt, 5).unwrap();
        let m = segment_cycles(&rt, &v, p.g, &SegmentOptions::default()).unwrap();
        let ex = extract_ledgers(&rt, &m, &p, &ExtractOptions::default()).unwrap();
        assert_eq!(ex.hops.len(), 2, "{:?}", ex.skipped);
        for (e, s) in ex.hops.iter().zip(&truth) {
            let (a, b) = (e.ledger, s.ledger);
            for (x, y) in [
                (a.eta_fdd, b.eta_fdd),
                (a.eta_td, b.eta_td),
                (a.eta_mech, b.eta_mech),
                (a.eta_lo, b.eta_lo),
                (a.eta_fdr, b.eta_fdr),
            ] {
                assert!((x / y - 1.0).abs() < 0.05, "{a:?} vs {b:?}");
            }
            for x in [a.alpha_d, a.alpha_s, a.alpha_r] {
                assert!(x.abs() < 0.05, "{a:?}");
            }
            assert!((e.delta_model.unwrap() / e.delta_measured - 1.0).abs() < 0.1);
            assert!((e.h_d / s.h_d - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn dragless_fit_is_zero() {
        let p = default_params();
        let q = p.without_drag();
        let tr = simulate(
            &q,
            SimState::at_rest(3.5, &q),
            &mut NoThrust,
            StopCondition::Hops(1),
            &SimOptions::default(),
        )
        .unwrap();
        let rt = export_tracking(&tr, &q, 100.0).unwrap();
        let fit = fit_cda(&[(rt, q.m_t())], &p).unwrap();
        assert!(fit.slope.abs() < 1e-3 && fit.intercept.abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn short_run_lacks_range() {
        let p = default_params();
        let (_, rt) = simulated(0.3, 1);
        assert!(matches!(
            fit_cda(&[(rt, p.m_t())], &p),
            Err(HopError::InsufficientSpeedRange { .. })
        ));
    }
}
