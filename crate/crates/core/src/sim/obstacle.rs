use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitingFactor {
    None,
    Geometry,
    Traction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traversal {
    pub traversable: bool,
    pub limiting_factor: LimitingFactor,
    /// Rim traction needed at the climb pose over what friction allows.
    pub traction_ratio: f64,
}

/// Whether one wheel can climb a vertical step while the other three push.
///
/// Geometry: the edge must be reachable with the hub, `height ≤ radius +
/// travel` (above the hub the suspension lifts the wheel onto the edge). At the
/// climb pose the wheel carries a quarter of the weight and the others push with
/// `μ` times their load; the edge force must stay inside the friction cone.
pub fn obstacle_traversal_check(radius: f64, step_height: f64, travel: f64, mu: f64) -> Traversal {
    debug_assert!(radius > 0.0 && travel >= 0.0 && mu >= 0.0);
    if step_height <= 0.0 {
        return Traversal { traversable: true, limiting_factor: LimitingFactor::None, traction_ratio: 0.0 };
    }
    if step_height > radius + travel {
        return Traversal {
            traversable: false,
            limiting_factor: LimitingFactor::Geometry,
            traction_ratio: f64::INFINITY,
        };
    }
    // Contact angle of the edge from the bottom of the wheel.
    let h = step_height.min(radius);
    let alpha = math::acos((radius - h) / radius);
    let (s, c) = (math::sin(alpha), math::cos(alpha));
    // Loads normalised by the quarter weight; push from the other three wheels.
    let push = 3.0 * mu;
    let tangential = s - push * c;
    let normal = c + push * s;
    let ratio = if normal > 0.0 { tangential.max(0.0) / (mu * normal) } else { f64::INFINITY };
    let ok = tangential <= mu * normal;
    Traversal {
        traversable: ok,
        limiting_factor: if ok { LimitingFactor::None } else { LimitingFactor::Traction },
        traction_ratio: if ratio.is_nan() { f64::INFINITY } else { ratio },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_cm_passes() {
        let t = obstacle_traversal_check(0.306, 0.30, 0.10, 0.8);
        assert!(t.traversable);
        assert_eq!(t.limiting_factor, LimitingFactor::None);
    }

    #[test]
    fn forty_five_cm_geometry_limited() {
        let t = obstacle_traversal_check(0.306, 0.45, 0.10, 0.8);
        assert!(!t.traversable);
        assert_eq!(t.limiting_factor, LimitingFactor::Geometry);
    }

    #[test]
    fn zero_step_trivial() {
        assert!(obstacle_traversal_check(0.306, 0.0, 0.10, 0.0).traversable);
    }

    #[test]
    fn low_friction_traction_limited() {
        let t = obstacle_traversal_check(0.306, 0.30, 0.10, 0.3);
        assert!(!t.traversable);
        assert_eq!(t.limiting_factor, LimitingFactor::Traction);
    }

    #[test]
    fn threshold_friction_for_full_height_edge() {
        // Edge at hub height: need 3·μ² ≥ 1.
        let mu = (1.0f64 / 3.0).sqrt();
        assert!(obstacle_traversal_check(0.3, 0.3, 0.1, mu + 1e-6).traversable);
        assert!(!obstacle_traversal_check(0.3, 0.3, 0.1, mu - 1e-6).traversable);
    }
}
