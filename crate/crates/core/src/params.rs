//! Physical parameter records and the drag-area model.

use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};

/// Leg spring constant. Chosen so a 5.9 m/s touchdown peaks near 134 N of body force.
pub const K_B_DEFAULT: f64 = 880.0;
/// Leg damping. Zero by default; see [`crate::energy::calibrate_leg_damping`].
pub const B_B_DEFAULT: f64 = 0.0;
/// Spring free length. A placeholder: hop energetics do not depend on leg geometry.
pub const R_0_DEFAULT: f64 = 0.20;
/// Hard-stop extension, equal to the free length (no preload).
pub const STOP_LENGTH_DEFAULT: f64 = 0.20;
/// Foot-ground stiffness fitted to the 0.3 mm / 1055 g contact pair at 5.9 m/s.
pub const K_F_DEFAULT: f64 = 2.048625e6;
/// Foot-ground damping from the same fit.
pub const B_F_DEFAULT: f64 = 471.722;

pub const M_B_PROTOTYPE: f64 = 0.58793;
pub const M_F_PROTOTYPE: f64 = 0.10862;
pub const CDA_INTERCEPT: f64 = 0.072122;
pub const CDA_SLOPE: f64 = -0.001893;
pub const CDA_V_VALID_MAX: f64 = 7.0;
pub const CDA_MIN_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DragMode {
    Constant,
    LinearInSpeed,
}

/// C_D*A as a function of speed, scaled across designs by total mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DragAreaModel {
    pub mode: DragMode,
    pub intercept: f64,
    pub slope: f64,
    pub v_valid_max: f64,
    pub reference_mass: f64,
    pub scaling_exponent: f64,
}

impl DragAreaModel {
    pub fn linear_prototype() -> Self {
        DragAreaModel {
            mode: DragMode::LinearInSpeed,
            intercept: CDA_INTERCEPT,
            slope: CDA_SLOPE,
            v_valid_max: CDA_V_VALID_MAX,
            reference_mass: M_B_PROTOTYPE + M_F_PROTOTYPE,
            scaling_exponent: 2.0 / 3.0,
        }
    }

    /// The conservative constant-area estimate used for design sweeps.
    pub fn constant_prototype() -> Self {
        DragAreaModel {
            mode: DragMode::Constant,
            slope: 0.0,
            ..Self::linear_prototype()
        }
    }

    /// Multiplier applied to the area for a design of total mass `mass`.
    pub fn mass_factor(&self, mass: f64) -> f64 {
        (mass / self.reference_mass).powf(self.scaling_exponent)
    }

    /// Area at the reference mass, before clamping.
    fn base_area(&self, v: f64) -> f64 {
        match self.mode {
            DragMode::Constant => self.intercept,
            DragMode::LinearInSpeed => self.intercept + self.slope * v.min(self.v_valid_max),
        }
    }

    /// Evaluates the area with a precomputed mass factor. Used in the integrator's inner loop.
    #[inline]
    pub fn area_scaled(&self, v: f64, factor: f64) -> f64 {
        (self.base_area(v) * factor).max(CDA_MIN_AREA)
    }
}

/// Effective drag area (m^2) at speed `v` for a design of total mass `mass`.
pub fn effective_drag_area(v: f64, mass: f64, model: &DragAreaModel) -> f64 {
    model.area_scaled(v.abs(), model.mass_factor(mass))
}

/// Two-mass vertical hopper parameters, SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    #[serde(rename = "m_B")]
    pub m_b: f64,
    #[serde(rename = "m_F")]
    pub m_f: f64,
    #[serde(rename = "k_B")]
    pub k_b: f64,
    #[serde(rename = "b_B")]
    pub b_b: f64,
    #[serde(rename = "k_F")]
    pub k_f: f64,
    #[serde(rename = "b_F")]
    pub b_f: f64,
    pub r_0: f64,
    pub stop_length: f64,
    pub g: f64,
    pub rho: f64,
    pub cda: DragAreaModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedMasses {
    pub m_t: f64,
    pub body_fraction: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        default_params()
    }
}

/// The MultiMo-MHR prototype.
pub fn default_params() -> RobotParams {
    RobotParams {
        m_b: M_B_PROTOTYPE,
        m_f: M_F_PROTOTYPE,
        k_b: K_B_DEFAULT,
        b_b: B_B_DEFAULT,
        k_f: K_F_DEFAULT,
        b_f: B_F_DEFAULT,
        r_0: R_0_DEFAULT,
        stop_length: STOP_LENGTH_DEFAULT,
        g: 9.81,
        rho: 1.225,
        cda: DragAreaModel::linear_prototype(),
    }
}

impl RobotParams {
    pub fn masses(&self) -> DerivedMasses {
        let m_t = self.m_b + self.m_f;
        DerivedMasses {
            m_t,
            body_fraction: self.m_b / m_t,
        }
    }

    pub fn m_t(&self) -> f64 {
        self.m_b + self.m_f
    }

    pub fn weight(&self) -> f64 {
        self.m_t() * self.g
    }

    /// Drag area at speed `v` for this design's total mass.
    pub fn drag_area(&self, v: f64) -> f64 {
        effective_drag_area(v, self.m_t(), &self.cda)
    }

    /// Drag force on the body (N), opposing `v`.
    pub fn drag_force(&self, v: f64) -> f64 {
        -0.5 * self.rho * self.drag_area(v.abs()) * v * v.abs()
    }

    /// Copy with air density zeroed, which removes drag entirely.
    pub fn without_drag(&self) -> Self {
        RobotParams { rho: 0.0, ..*self }
    }

    /// Rescales the design to new masses. Leg constants follow the body mass and ground
    /// constants follow the foot mass, so natural frequencies and damping ratios stay fixed;
    /// the drag area follows total mass through the drag model's own scaling.
    pub fn with_masses(&self, m_b: f64, m_f: f64) -> Self {
        let sb = m_b / self.m_b;
        let sf = m_f / self.m_f;
        RobotParams {
            m_b,
            m_f,
            k_b: self.k_b * sb,
            b_b: self.b_b * sb,
            k_f: self.k_f * sf,
            b_f: self.b_f * sf,
            ..*self
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    /// Fails with every violation joined if the record is unusable.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate(self);
        if report.is_ok() {
            Ok(())
        } else {
            Err(HopError::invalid(report.violations.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: RobotParams = serde_json::from_str(text)?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every violated invariant. Never fails.
pub fn validate(p: &RobotParams) -> ValidationReport {
    let mut v = Vec::new();
    let mut positive = |x: f64, what: &str| {
        if !(x.is_finite() && x > 0.0) {
            v.push(format!("{what} must be positive"));
        }
    };
    positive(p.m_b, "body mass");
    positive(p.m_f, "foot mass");
    positive(p.k_b, "leg stiffness");
    positive(p.k_f, "ground stiffness");
    positive(p.r_0, "spring free length");
    positive(p.stop_length, "stop length");
    positive(p.g, "gravity");
    positive(p.cda.intercept, "drag-area intercept");
    positive(p.cda.reference_mass, "drag reference mass");
    positive(p.cda.v_valid_max, "drag validity speed");

    for (x, what) in [(p.b_b, "leg"), (p.b_f, "ground")] {
        if !(x.is_finite() && x >= 0.0) {
            v.push(format!("{what} damping non-negative"));
        }
    }
    if !(p.rho.is_finite() && p.rho >= 0.0) {
        v.push("air density non-negative".into());
    }
    if !p.cda.slope.is_finite() {
        v.push("drag-area slope must be finite".into());
    }
    if !(0.0..=1.0).contains(&p.cda.scaling_exponent) {
        v.push("drag scaling exponent must lie in [0, 1]".into());
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn prototype_masses() {
        let p = default_params();
        assert_eq!(p.m_b, 0.58793);
        let m = p.masses();
        assert_relative_eq!(m.m_t, 0.69655, epsilon = 1e-12);
        assert_relative_eq!(m.body_fraction, 0.84406, epsilon = 5e-6);
        assert_eq!(m.m_t, p.m_b + p.m_f);
    }

    #[test]
    fn defaults_validate() {
        assert!(validate(&default_params()).is_ok());
    }

    #[test]
    fn zero_foot_mass_is_reported() {
        let p = RobotParams {
            m_f: 0.0,
            ..default_params()
        };
        let r = validate(&p);
        assert!(r.violations.iter().any(|s| s == "foot mass must be positive"));
    }

    #[test]
    fn negative_damping_is_reported() {
        let p = RobotParams {
            b_b: -1.0,
            ..default_params()
        };
        let r = validate(&p);
        assert!(r.violations.iter().any(|s| s.contains("damping non-negative")));
    }

    #[test]
    fn drag_area_fit_values() {
        let m = DragAreaModel::linear_prototype();
        let r = m.reference_mass;
        assert_relative_eq!(effective_drag_area(0.0, r, &m), 0.072122, epsilon = 1e-12);
        assert_relative_eq!(effective_drag_area(1.0, r, &m), 0.070229, epsilon = 1e-12);
        assert_relative_eq!(
            effective_drag_area(5.0, 8.0 * r, &m),
            4.0 * effective_drag_area(5.0, r, &m),
            max_relative = 1e-12
        );
    }

    #[test]
    fn drag_area_held_beyond_validity() {
        let m = DragAreaModel::linear_prototype();
        let r = m.reference_mass;
        assert_eq!(effective_drag_area(7.0, r, &m), effective_drag_area(30.0, r, &m));
    }

    #[test]
    fn drag_area_clamped_positive() {
        let m = DragAreaModel {
            slope: -1.0,
            v_valid_max: 1e3,
            ..DragAreaModel::linear_prototype()
        };
        assert_eq!(effective_drag_area(500.0, 1.0, &m), CDA_MIN_AREA);
    }

    #[test]
    fn json_keys_round_trip() {
        let p = default_params();
        let s = p.to_json();
        for key in [
            "\"m_B\"",
            "\"m_F\"",
            "\"k_B\"",
            "\"b_B\"",
            "\"k_F\"",
            "\"b_F\"",
            "\"r_0\"",
            "\"stop_length\"",
            "\"cda\"",
            "\"scaling_exponent\"",
        ] {
            assert!(s.contains(key), "missing {key}");
        }
        assert_eq!(RobotParams::from_json(&s).unwrap(), p);
    }

    #[test]
    fn mass_rescaling_keeps_frequencies() {
        let p = default_params();
        let q = p.with_masses(2.0 * p.m_b, 3.0 * p.m_f);
        assert_relative_eq!(q.k_b / q.m_b, p.k_b / p.m_b, max_relative = 1e-12);
        assert_relative_eq!(q.k_f / q.m_f, p.k_f / p.m_f, max_relative = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn drag_area_monotone(v1 in 0.0..20.0f64, dv in 0.0..5.0f64, m in 0.01..100.0f64, dm in 0.0..10.0f64) {
            let model = DragAreaModel::linear_prototype();
            let a = effective_drag_area(v1, m, &model);
            proptest::prop_assert!(a > 0.0);
            proptest::prop_assert!(effective_drag_area(v1 + dv, m, &model) <= a);
            proptest::prop_assert!(effective_drag_area(v1, m + dm, &model) >= a);
        }
    }
}
