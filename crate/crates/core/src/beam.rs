//! Constant-curvature beam statics for a silicone limb bent by an SMA muscle.
//!
//! The muscle runs parallel to the neutral axis at a moment arm `w`, so its
//! tension produces a uniform bending moment and the limb bends as a
//! circular arc. Bend angle `θ` (radians) and muscle force are related by
//!
//! ```text
//! F_SMA = ζ · sin²θ / θ,   ζ = 4·E·I / (L·w)
//! ```
//!
//! and the lateral tip displacement of the same arc is `L · sin²θ / θ`.
//!
//! `sin²θ/θ` rises from 0 to a peak at `tan θ = 2θ` (about 66.8°) and then
//! falls. Every inverse here works on the rising branch `[0, PEAK_ANGLE]`,
//! which covers all reachable equilibria.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Angle where `sin²θ/θ` peaks: the root of `tan θ = 2θ` in `(0, π/2)`.
pub const PEAK_ANGLE: f64 = 1.165_561_185_207_211_2;

/// `sin²θ/θ` evaluated at [`PEAK_ANGLE`].
pub const PEAK_SHAPE: f64 = 0.724_611_353_776_708_6;

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITER: usize = 200;

/// Geometry and material of the rectangular-section limb.
///
/// Units are N and mm throughout. The derived area moment and stiffness
/// constant are computed on construction and are never set directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LimbGeometry", into = "LimbGeometry")]
pub struct LimbParams {
    elastic_modulus: f64,
    width: f64,
    thickness: f64,
    length: f64,
    moment_arm: f64,
    area_moment: f64,
    zeta: f64,
}

/// Serialized form of [`LimbParams`]: only the independent quantities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimbGeometry {
    pub elastic_modulus_n_per_mm2: f64,
    pub width_mm: f64,
    pub thickness_mm: f64,
    pub length_mm: f64,
    pub moment_arm_mm: f64,
}

impl TryFrom<LimbGeometry> for LimbParams {
    type Error = Error;

    fn try_from(g: LimbGeometry) -> Result<Self> {
        LimbParams::new(
            g.elastic_modulus_n_per_mm2,
            g.width_mm,
            g.thickness_mm,
            g.length_mm,
            g.moment_arm_mm,
        )
    }
}

impl Default for LimbGeometry {
    fn default() -> Self {
        LimbParams::prototype().into()
    }
}

impl From<LimbParams> for LimbGeometry {
    fn from(p: LimbParams) -> Self {
        LimbGeometry {
            elastic_modulus_n_per_mm2: p.elastic_modulus,
            width_mm: p.width,
            thickness_mm: p.thickness,
            length_mm: p.length,
            moment_arm_mm: p.moment_arm,
        }
    }
}

impl LimbParams {
    pub fn new(
        elastic_modulus: f64,
        width: f64,
        thickness: f64,
        length: f64,
        moment_arm: f64,
    ) -> Result<Self> {
        let zeta = zeta_from_geometry(elastic_modulus, width, thickness, length, moment_arm)?;
        Ok(LimbParams {
            elastic_modulus,
            width,
            thickness,
            length,
            moment_arm,
            area_moment: area_moment(width, thickness),
            zeta,
        })
    }

    /// The cast Smooth-Sil 945 limb: E = 1.79 N/mm², 60 × 3.5 mm section,
    /// 105 mm long, muscle 3.5 mm off the neutral axis.
    pub fn prototype() -> Self {
        LimbParams::new(1.79, 60.0, 3.5, 105.0, 3.5).expect("prototype geometry is valid")
    }

    pub fn elastic_modulus(&self) -> f64 {
        self.elastic_modulus
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn moment_arm(&self) -> f64 {
        self.moment_arm
    }

    /// Second moment of area `b·h³/12`, mm⁴.
    pub fn area_moment(&self) -> f64 {
        self.area_moment
    }

    /// Angle-to-force stiffness constant ζ, N.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Tip displacement per unit tip point load, `L³/(3·E·I)`, mm/N.
    pub fn tip_compliance(&self) -> f64 {
        self.length.powi(3) / (3.0 * self.elastic_modulus * self.area_moment)
    }

    /// Largest muscle force with a static equilibrium on the rising branch.
    pub fn max_reachable_force(&self) -> f64 {
        self.zeta * PEAK_SHAPE
    }
}

fn area_moment(width: f64, thickness: f64) -> f64 {
    width * thickness.powi(3) / 12.0
}

/// `4·E·(b·h³/12)/(L·w)`.
pub fn zeta_from_geometry(e: f64, b: f64, h: f64, l: f64, w: f64) -> Result<f64> {
    for (name, v) in [("E", e), ("b", b), ("h", h), ("L", l), ("w", w)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(format!("limb parameter {name} must be positive, got {v}")));
        }
    }
    Ok(4.0 * e * area_moment(b, h) / (l * w))
}

/// `sin²θ/θ`, with the removable singularity at 0 filled in.
pub fn arc_shape(theta: f64) -> f64 {
    if theta == 0.0 {
        0.0
    } else {
        let s = theta.sin();
        s * s / theta
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if (0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
        Ok(())
    } else {
        Err(domain(format!("bend angle {theta} rad outside [0, π/2]")))
    }
}

/// Lateral tip displacement `L·sin²θ/θ` of a constant-curvature arc, mm.
pub fn tip_displacement(theta: f64, length: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok(length * arc_shape(theta))
}

/// Muscle force holding the limb at bend angle `theta` with no contact.
pub fn sma_force_from_angle(theta: f64, zeta: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok(zeta * arc_shape(theta))
}

/// Solve `arc_shape(θ) = shape` on the rising branch.
fn invert_shape(shape: f64) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    if shape >= PEAK_SHAPE {
        return PEAK_ANGLE;
    }
    let (mut lo, mut hi) = (0.0_f64, PEAK_ANGLE);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo < BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if arc_shape(mid) < shape {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inverse of [`sma_force_from_angle`] on the rising branch.
pub fn angle_from_force(force: f64, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(domain(format!("ζ must be positive, got {zeta}")));
    }
    let reach = zeta * PEAK_SHAPE;
    if !(0.0..=reach).contains(&force) {
        return Err(Error::Range(format!(
            "muscle force {force} N outside reachable range [0, {reach}] N"
        )));
    }
    Ok(invert_shape(force / zeta))
}

/// Inverse of [`tip_displacement`] on the rising branch.
pub fn angle_from_displacement(displacement: f64, length: f64) -> Result<f64> {
    let reach = length * PEAK_SHAPE;
    if !(0.0..=reach).contains(&displacement) {
        return Err(Error::Range(format!(
            "tip displacement {displacement} mm outside reachable range [0, {reach}] mm"
        )));
    }
    Ok(invert_shape(displacement / length))
}

/// Static equilibrium of the limb, optionally pressed against a plate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSolution {
    pub theta: f64,
    pub tip_displacement: f64,
    pub external_force: f64,
}

/// Resolve the limb pose and plate reaction for a given muscle force.
///
/// Without contact the tip travels `δ_free = (L/ζ)·F_SMA`. When that would
/// pass the plate at distance `plate_dist`, the tip stops at the plate and
/// the interference is carried by a tip point load through the cantilever
/// compliance `L³/(3EI)`.
pub fn contact_statics(
    force: f64,
    plate_dist: f64,
    params: &LimbParams,
) -> Result<ContactSolution> {
    if !(force >= 0.0) {
        return Err(domain(format!("muscle force must be non-negative, got {force}")));
    }
    if !(plate_dist > 0.0) {
        return Err(domain(format!("plate distance must be positive, got {plate_dist}")));
    }
    let theta_free = angle_from_force(force, params.zeta())?;
    let free = params.length() / params.zeta() * force;
    if free <= plate_dist {
        return Ok(ContactSolution {
            theta: theta_free,
            tip_displacement: free,
            external_force: 0.0,
        });
    }
    Ok(ContactSolution {
        theta: angle_from_displacement(plate_dist, params.length())?,
        tip_displacement: plate_dist,
        external_force: (free - plate_dist) / params.tip_compliance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zeta_matches_prototype_value() {
        let z = zeta_from_geometry(1.79, 60.0, 3.5, 105.0, 3.5).unwrap();
        assert_relative_eq!(z, 4.1767, max_relative = 1e-3);
        assert_relative_eq!(LimbParams::prototype().area_moment(), 214.375);
    }

    #[test]
    fn zeta_hand_values() {
        assert_relative_eq!(zeta_from_geometry(1.0, 12.0, 1.0, 10.0, 1.0).unwrap(), 0.4);
        let z1 = zeta_from_geometry(1.79, 60.0, 3.5, 105.0, 3.5).unwrap();
        let z2 = zeta_from_geometry(1.79, 120.0, 3.5, 105.0, 3.5).unwrap();
        assert_relative_eq!(z2, 2.0 * z1);
    }

    #[test]
    fn zeta_rejects_non_positive() {
        assert!(matches!(zeta_from_geometry(0.0, 1.0, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(zeta_from_geometry(1.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(zeta_from_geometry(1.0, 1.0, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn tip_displacement_values() {
        assert_eq!(tip_displacement(0.0, 105.0).unwrap(), 0.0);
        assert_relative_eq!(
            tip_displacement(15f64.to_radians(), 105.0).unwrap(),
            26.866_626_237_923_62,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            tip_displacement(std::f64::consts::FRAC_PI_2, 105.0).unwrap(),
            66.845_076_098_596_04,
            max_relative = 1e-12
        );
        assert!(tip_displacement(-0.1, 105.0).is_err());
        assert!(tip_displacement(1.6, 105.0).is_err());
    }

    #[test]
    fn force_from_angle_values() {
        let z = LimbParams::prototype().zeta();
        let f15 = sma_force_from_angle(15f64.to_radians(), z).unwrap();
        assert_relative_eq!(f15, 1.068_694_688_130_74, max_relative = 1e-12);
        assert!((f15 - 1.06).abs() / 1.06 < 0.10);
        assert_eq!(sma_force_from_angle(0.0, z).unwrap(), 0.0);
        assert_relative_eq!(
            sma_force_from_angle(30f64.to_radians(), z).unwrap(),
            1.994_211_436_941_448,
            max_relative = 1e-12
        );
    }

    #[test]
    fn peak_constants_are_consistent() {
        assert!((PEAK_ANGLE.tan() - 2.0 * PEAK_ANGLE).abs() < 1e-12);
        assert_relative_eq!(arc_shape(PEAK_ANGLE), PEAK_SHAPE, max_relative = 1e-15);
        // Past the peak the map turns over.
        assert!(arc_shape(std::f64::consts::FRAC_PI_2) < PEAK_SHAPE);
    }

    #[test]
    fn angle_from_force_values() {
        let z = LimbParams::prototype().zeta();
        assert_eq!(angle_from_force(0.0, z).unwrap(), 0.0);
        let t = angle_from_force(1.069, z).unwrap();
        assert!((t.to_degrees() - 15.0).abs() < 0.01, "{}", t.to_degrees());
        assert!(matches!(angle_from_force(-0.1, z), Err(Error::Range(_))));
        assert!(matches!(angle_from_force(3.1, z), Err(Error::Range(_))));
    }

    #[test]
    fn contact_worked_example() {
        let p = LimbParams::prototype();
        let sol = contact_statics(2.0, 20.0, &p).unwrap();
        assert_eq!(sol.tip_displacement, 20.0);
        assert_relative_eq!(sol.external_force, 0.030_111_111_111_111_11, max_relative = 1e-9);
        assert_relative_eq!(tip_displacement(sol.theta, 105.0).unwrap(), 20.0, max_relative = 1e-8);
    }

    /// Tip deflection under a unit tip load, by double numeric integration of
    /// `EI·y'' = (L − x)` from the clamped root.
    fn numeric_tip_compliance(p: &LimbParams) -> f64 {
        let n = 20_000;
        let l = p.length();
        let ei = p.elastic_modulus() * p.area_moment();
        let dx = l / n as f64;
        let (mut slope, mut defl) = (0.0, 0.0);
        for i in 0..n {
            let x0 = i as f64 * dx;
            let k0 = (l - x0) / ei;
            let k1 = (l - x0 - dx) / ei;
            let new_slope = slope + 0.5 * (k0 + k1) * dx;
            defl += 0.5 * (slope + new_slope) * dx;
            slope = new_slope;
        }
        defl
    }

    #[test]
    fn compliance_matches_numeric_superposition() {
        let p = LimbParams::prototype();
        let numeric = numeric_tip_compliance(&p);
        assert_relative_eq!(p.tip_compliance(), numeric, max_relative = 1e-6);
        // Superposed tip load cancels the interference exactly.
        let sol = contact_statics(2.0, 20.0, &p).unwrap();
        let free = p.length() / p.zeta() * 2.0;
        assert_relative_eq!(free - numeric * sol.external_force, 20.0, max_relative = 1e-6);
    }

    #[test]
    fn contact_boundary_is_continuous() {
        let p = LimbParams::prototype();
        let d = 20.0;
        let onset = d * p.zeta() / p.length();
        let at = contact_statics(onset, d, &p).unwrap();
        assert_eq!(at.external_force, 0.0);
        let below = contact_statics(onset * 0.5, d, &p).unwrap();
        assert_eq!(below.external_force, 0.0);
        let just_above = contact_statics(onset + 1e-9, d, &p).unwrap();
        assert!(just_above.external_force < 1e-9);
        assert!(contact_statics(-1.0, d, &p).is_err());
        assert!(contact_statics(1.0, 0.0, &p).is_err());
    }

    #[test]
    fn far_plate_returns_free_solution() {
        let p = LimbParams::prototype();
        let sol = contact_statics(2.0, 500.0, &p).unwrap();
        assert_eq!(sol.external_force, 0.0);
        assert_relative_eq!(sol.theta, angle_from_force(2.0, p.zeta()).unwrap());
    }

    #[test]
    fn serde_keeps_derived_fields_consistent() {
        let p = LimbParams::prototype();
        let json = serde_json::to_string(&p).unwrap();
        assert!(!json.contains("zeta"));
        let back: LimbParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let bad = json.replace("\"width_mm\":60.0", "\"width_mm\":-60.0");
        assert!(serde_json::from_str::<LimbParams>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn force_increasing_on_rising_branch(mut a in 1e-6..PEAK_ANGLE, mut b in 1e-6..PEAK_ANGLE) {
            if a > b { std::mem::swap(&mut a, &mut b); }
            prop_assume!(b - a > 1e-9);
            let z = LimbParams::prototype().zeta();
            prop_assert!(sma_force_from_angle(a, z).unwrap() < sma_force_from_angle(b, z).unwrap());
        }

        #[test]
        fn angle_round_trip(theta in 0.0..PEAK_ANGLE) {
            let z = LimbParams::prototype().zeta();
            let back = angle_from_force(sma_force_from_angle(theta, z).unwrap(), z).unwrap();
            prop_assert!((back - theta).abs() < 1e-9);
        }

        #[test]
        fn free_displacement_is_linear_in_force(theta in 0.0..PEAK_ANGLE) {
            let p = LimbParams::prototype();
            let f = sma_force_from_angle(theta, p.zeta()).unwrap();
            let d = tip_displacement(theta, p.length()).unwrap();
            prop_assert!((d - p.length() / p.zeta() * f).abs() < 1e-9);
        }

        #[test]
        fn external_force_non_negative_and_monotone(
            f1 in 0.0..3.0f64, f2 in 0.0..3.0f64, d in 1.0..80.0f64,
        ) {
            let p = LimbParams::prototype();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = contact_statics(lo, d, &p).unwrap();
            let b = contact_statics(hi, d, &p).unwrap();
            prop_assert!(a.external_force >= 0.0);
            prop_assert!(b.external_force >= a.external_force);
        }
    }
}
