//! Plot-ready CSV writers. Numbers use the shortest round-trip decimal form, so
//! identical results always produce identical bytes.

use std::io::Write;

use crate::accumulation::SweepGrid;
use crate::analyze::HopEstimate;
use crate::dynamics::Trajectory;
use crate::energy::{cycle_efficiency, ledger_cycle_efficiency, EnergyLedger, HopCycleRecord};
use crate::error::{HopError, Result};
use crate::stance::StanceOutcome;

pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "z_B", "v_B", "z_F", "v_F", "phase", "U_B", "U_F"];
pub const EVENTS_HEADER: [&str; 6] = ["kind", "t", "z_B", "v_B", "z_F", "v_F"];
pub const LEDGER_HEADER: [&str; 12] = [
    "h_d", "h_r", "delta_rd", "alpha_d", "eta_FDd", "eta_TD", "alpha_s", "eta_mech", "eta_LO", "alpha_r", "eta_FDr",
    "eta_cyc",
];
pub const GRID_HEADER: [&str; 4] = ["m_T", "fraction", "alpha_crit", "F_crit"];
pub const SEQUENCE_HEADER: [&str; 2] = ["cycle", "height"];
pub const STANCE_HEADER: [&str; 8] = [
    "v_TD",
    "theta_TD",
    "liftoff_angle",
    "mu_required",
    "e_vertical",
    "e_horizontal",
    "e_rotational",
    "e_foot_loss",
];

pub fn num(x: f64) -> String {
    if x == 0.0 {
        // no negative zero in output
        "0".to_string()
    } else {
        format!("{x}")
    }
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    Ok(wr)
}

fn finish<W: Write>(mut wr: csv::Writer<W>) -> Result<()> {
    wr.flush().map_err(|e| HopError::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Samples with the thrust held over each sample's step.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = writer(w, &TRAJECTORY_HEADER)?;
    for (i, s) in traj.samples.iter().enumerate() {
        let (u_b, u_f) = traj.inputs.get(i).copied().unwrap_or((0.0, 0.0));
        wr.write_record([
            num(s.t),
            num(s.z_b),
            num(s.v_b),
            num(s.z_f),
            num(s.v_f),
            s.phase.as_str().to_string(),
            num(u_b),
            num(u_f),
        ])?;
    }
    finish(wr)
}

/// Post-transition states of every event.
pub fn write_events<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = writer(w, &EVENTS_HEADER)?;
    for e in &traj.events {
        let s = e.state_after;
        wr.write_record([
            e.kind.as_str().to_string(),
            num(e.t),
            num(s.z_b),
            num(s.v_b),
            num(s.z_f),
            num(s.v_f),
        ])?;
    }
    finish(wr)
}

fn ledger_fields(h_d: f64, h_r: f64, l: &EnergyLedger, eta_cyc: f64) -> Vec<String> {
    vec![
        num(h_d),
        num(h_r),
        num(h_r / h_d),
        num(l.alpha_d),
        num(l.eta_fdd),
        num(l.eta_td),
        num(l.alpha_s),
        num(l.eta_mech),
        num(l.eta_lo),
        num(l.alpha_r),
        num(l.eta_fdr),
        num(eta_cyc),
    ]
}

pub fn write_ledgers<W: Write>(w: W, records: &[HopCycleRecord]) -> Result<()> {
    let mut wr = writer(w, &LEDGER_HEADER)?;
    for r in records {
        wr.write_record(ledger_fields(r.h_d, r.h_r, &r.ledger, cycle_efficiency(r)))?;
    }
    finish(wr)
}

/// Extracted ledgers of several files, prefixed with `hop_index,file`.
pub fn write_extracted<W: Write>(w: W, files: &[(String, Vec<HopEstimate>)]) -> Result<()> {
    let mut header = vec!["hop_index", "file"];
    header.extend(LEDGER_HEADER);
    let mut wr = writer(w, &header)?;
    for (file, hops) in files {
        for h in hops {
            let mut row = vec![h.hop_index.to_string(), file.clone()];
            row.extend(ledger_fields(
                h.h_d,
                h.h_r,
                &h.ledger,
                ledger_cycle_efficiency(&h.ledger, h.delta_measured),
            ));
            wr.write_record(row)?;
        }
    }
    finish(wr)
}

/// Apex heights; cycle 0 is the release height.
pub fn write_sequence<W: Write>(w: W, heights: &[f64]) -> Result<()> {
    let mut wr = writer(w, &SEQUENCE_HEADER)?;
    for (i, h) in heights.iter().enumerate() {
        wr.write_record([i.to_string(), num(*h)])?;
    }
    finish(wr)
}

/// Long form, fraction varying fastest. Cells that always accumulate report 0 and
/// cells that never do report NaN.
pub fn write_grid<W: Write>(w: W, grid: &SweepGrid) -> Result<()> {
    let mut wr = writer(w, &GRID_HEADER)?;
    for (mi, m) in grid.masses.iter().enumerate() {
        for (fi, f) in grid.fractions.iter().enumerate() {
            wr.write_record([num(*m), num(*f), num(grid.alpha_crit[mi][fi]), num(grid.f_crit[mi][fi])])?;
        }
    }
    finish(wr)
}

pub fn write_stance<W: Write>(w: W, rows: &[StanceOutcome]) -> Result<()> {
    let mut wr = writer(w, &STANCE_HEADER)?;
    for o in rows {
        let p = o.partition;
        wr.write_record([
            num(o.v_td),
            num(o.theta_td),
            num(o.liftoff_angle),
            num(o.mu_required),
            num(p.vertical),
            num(p.horizontal),
            num(p.rotational),
            num(p.foot_loss),
        ])?;
    }
    finish(wr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, NoThrust, SimOptions, SimState, StopCondition};
    use crate::energy::ledgers_from_trajectory;
    use crate::params::default_params;

    #[test]
    fn headers_exact() {
        let p = default_params();
        let tr = simulate(
            &p,
            SimState::at_rest(0.5, &p),
            &mut NoThrust,
            StopCondition::Hops(1),
            &SimOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,z_B,v_B,z_F,v_F,phase,U_B,U_F\n"));
        assert_eq!(text.lines().count(), tr.samples.len() + 1);
        let mut buf = Vec::new();
        write_events(&mut buf, &tr).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("kind,t,z_B,v_B,z_F,v_F\ntouchdown,"));
        let mut buf = Vec::new();
        write_ledgers(&mut buf, &ledgers_from_trajectory(&tr, &p).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .starts_with("h_d,h_r,delta_rd,alpha_d,eta_FDd,eta_TD,alpha_s,eta_mech,eta_LO,alpha_r,eta_FDr,eta_cyc\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, -2.5e-9, 1.0 / 3.0, 12.43] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(-0.0), "0");
    }
}
