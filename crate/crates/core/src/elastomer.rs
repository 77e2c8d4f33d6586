//! Elastic energy budget of the rubber-band leg.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};

/// Assumed band density (kg/m^3), typical of natural rubber.
pub const BAND_DENSITY: f64 = 1100.0;
pub const BAND_COUNT: usize = 6;
/// Mass of all bands together (kg).
pub const BAND_MASS_TOTAL: f64 = 0.01227;
pub const ROBOT_MASS: f64 = 0.69655;
/// Strain the leg geometry allows.
pub const OPERATING_STRAIN: f64 = 2.1;
pub const OPERATING_STRESS: f64 = 1.2e6;
pub const OPERATING_SPECIFIC_ENERGY: f64 = 1307.9;
pub const FAILURE_STRAIN: f64 = 6.2;
pub const FAILURE_STRESS: f64 = 11.2e6;
pub const MAX_SPECIFIC_ENERGY: f64 = 15800.3;
/// Published stored energy at the operating strain (J).
pub const STATED_STORED_ENERGY: f64 = 16.63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressStrainCurve {
    /// (strain, stress in Pa), strain strictly increasing from zero.
    pub points: Vec<(f64, f64)>,
    pub density: f64,
}

impl StressStrainCurve {
    pub fn new(points: Vec<(f64, f64)>, density: f64) -> Result<Self> {
        let c = StressStrainCurve { points, density };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(HopError::invalid("density must be positive"));
        }
        match self.points.first() {
            Some((e, _)) if *e == 0.0 => {}
            _ => return Err(HopError::invalid("curve must start at zero strain")),
        }
        if self.points.len() < 2 {
            return Err(HopError::invalid("curve needs at least two points"));
        }
        if self.points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(HopError::invalid("strain must be strictly increasing"));
        }
        if self
            .points
            .iter()
            .any(|(e, s)| !(e.is_finite() && s.is_finite() && *s >= 0.0))
        {
            return Err(HopError::invalid("stress must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn max_strain(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    /// Reads a `strain,stress_Pa` CSV.
    pub fn from_csv(path: &Path, density: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HopError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let perr = |line: usize, message: String| HopError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rd = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rd.headers().map_err(|e| perr(1, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["strain", "stress_Pa"] {
            return Err(perr(1, "expected header strain,stress_Pa".into()));
        }
        let mut points = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |k: usize| {
                rec.get(k)
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| perr(line, format!("bad number in column {}", k + 1)))
            };
            points.push((num(0)?, num(1)?));
        }
        Self::new(points, density)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strain", "stress_Pa"])?;
        for (e, s) in &self.points {
            wr.write_record([format!("{e}"), format!("{s:.3}")])?;
        }
        wr.flush().map_err(|e| HopError::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Piecewise-linear stand-in for the measured band curve. It passes through the
/// published operating and failure points, and the two free knots at strains 0.5 and
/// 5.0 are solved so the integrated specific energy hits both published values.
/// It is synthetic: only those anchors are known.
pub fn reference_curve() -> StressStrainCurve {
    let (e1, e3) = (0.5, 5.0);
    let w_op = OPERATING_SPECIFIC_ENERGY * BAND_DENSITY;
    let w_max = MAX_SPECIFIC_ENERGY * BAND_DENSITY;
    // trapezoids 0..e1..OPERATING_STRAIN are linear in s1
    let s1 = (w_op - 0.5 * (OPERATING_STRAIN - e1) * OPERATING_STRESS) / (0.5 * e1 + 0.5 * (OPERATING_STRAIN - e1));
    let fixed = 0.5 * (e3 - OPERATING_STRAIN) * OPERATING_STRESS + 0.5 * (FAILURE_STRAIN - e3) * FAILURE_STRESS;
    let s3 = (w_max - w_op - fixed) / (0.5 * (e3 - OPERATING_STRAIN) + 0.5 * (FAILURE_STRAIN - e3));
    StressStrainCurve {
        points: vec![
            (0.0, 0.0),
            (e1, s1),
            (OPERATING_STRAIN, OPERATING_STRESS),
            (e3, s3),
            (FAILURE_STRAIN, FAILURE_STRESS),
        ],
        density: BAND_DENSITY,
    }
}

/// Strain energy per unit mass up to `strain_max` (J/kg), by the trapezoid rule.
pub fn curve_specific_energy(c: &StressStrainCurve, strain_max: f64) -> Result<f64> {
    c.validate()?;
    if !(strain_max >= 0.0 && strain_max <= c.max_strain()) {
        return Err(HopError::invalid(format!(
            "strain {strain_max} outside the curve range [0, {}]",
            c.max_strain()
        )));
    }
    let mut w = 0.0;
    for win in c.points.windows(2) {
        let ((e0, s0), (e1, s1)) = (win[0], win[1]);
        if e0 >= strain_max {
            break;
        }
        let e_hi = e1.min(strain_max);
        let s_hi = s0 + (s1 - s0) * (e_hi - e0) / (e1 - e0);
        w += 0.5 * (s0 + s_hi) * (e_hi - e0);
    }
    Ok(w / c.density)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemEnergy {
    /// Energy held by all bands (J).
    pub stored: f64,
    /// Stored energy per kilogram of robot (J/kg).
    pub system_specific: f64,
}

pub fn system_energy(specific: f64, band_mass_total: f64, robot_mass: f64) -> Result<SystemEnergy> {
    if !(robot_mass > 0.0) || !(band_mass_total >= 0.0) || !specific.is_finite() {
        return Err(HopError::invalid("masses must be non-negative, robot mass positive"));
    }
    let stored = specific * band_mass_total;
    Ok(SystemEnergy {
        stored,
        system_specific: stored / robot_mass,
    })
}

/// A published number that the published inputs do not reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub description: String,
    pub computed: f64,
    pub stated: f64,
    pub relative: f64,
}

/// The band mass times the operating specific energy gives 16.05 J, while the stated
/// stored energy is 16.63 J. Both are reported; neither is corrected.
pub fn band_energy_discrepancy() -> Discrepancy {
    let computed = OPERATING_SPECIFIC_ENERGY * BAND_MASS_TOTAL;
    Discrepancy {
        description: format!(
            "band mass {:.5} kg x {} J/kg = {:.2} J, but the stated stored energy is {} J",
            BAND_MASS_TOTAL, OPERATING_SPECIFIC_ENERGY, computed, STATED_STORED_ENERGY
        ),
        computed,
        stated: STATED_STORED_ENERGY,
        relative: computed / STATED_STORED_ENERGY - 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_curve_closed_form() {
        let c = StressStrainCurve::new(vec![(0.0, 0.0), (2.0, 4.0e6)], 1000.0).unwrap();
        let e = curve_specific_energy(&c, 1.5).unwrap();
        assert!((e - 0.5 * 2.0e6 * 1.5 * 1.5 / 1000.0).abs() < 1e-9);
    }

    #[test]
    fn reference_curve_anchors() {
        let c = reference_curve();
        c.validate().unwrap();
        let max = curve_specific_energy(&c, FAILURE_STRAIN).unwrap();
        let op = curve_specific_energy(&c, OPERATING_STRAIN).unwrap();
        assert!((max / MAX_SPECIFIC_ENERGY - 1.0).abs() < 1e-3);
        assert!((op / OPERATING_SPECIFIC_ENERGY - 1.0).abs() < 0.05);
        assert!(c.points.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn monotone_in_strain() {
        let c = reference_curve();
        let mut prev = -1.0;
        for i in 0..=62 {
            let e = curve_specific_energy(&c, i as f64 * 0.1).unwrap();
            assert!(e > prev || i == 0);
            prev = e;
        }
        assert!(curve_specific_energy(&c, 6.3).is_err());
    }

    #[test]
    fn system_specific_values() {
        let s = system_energy(STATED_STORED_ENERGY, 1.0, ROBOT_MASS).unwrap();
        assert!((s.system_specific / 23.87 - 1.0).abs() < 1e-3);
        assert!((s.system_specific - 23.875).abs() < 1e-3);
        assert_eq!(
            system_energy(1307.9, 0.0, ROBOT_MASS).unwrap(),
            SystemEnergy {
                stored: 0.0,
                system_specific: 0.0
            }
        );
        let s = system_energy(1307.9, 0.01227, ROBOT_MASS).unwrap();
        assert!((s.stored - 16.05).abs() < 0.01);
        assert_eq!(s.system_specific * ROBOT_MASS, s.stored);
    }

    #[test]
    fn discrepancy_reported() {
        let d = band_energy_discrepancy();
        assert!((d.computed - 16.048).abs() < 1e-3);
        assert!((d.relative + 0.035).abs() < 0.002);
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(StressStrainCurve::new(vec![(0.1, 0.0), (1.0, 1.0)], 1000.0).is_err());
        assert!(StressStrainCurve::new(vec![(0.0, 0.0), (0.0, 1.0)], 1000.0).is_err());
        assert!(StressStrainCurve::new(vec![(0.0, 0.0), (1.0, -1.0)], 1000.0).is_err());
    }
}
