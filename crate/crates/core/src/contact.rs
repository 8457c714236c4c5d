//! Quasi-static wheel load distribution.
//!
//! Each wheel is a vertical spring of stiffness `k` between the ground height
//! under it and a rigid body plane `z = h + a·x + b·y`. The plane is chosen so
//! the loads balance the normal weight and its moments about the projected
//! centre of gravity. Wheels that would pull are dropped from the active set.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::WHEEL_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSolution {
    /// N, never negative.
    pub normal: [f64; WHEEL_COUNT],
    pub in_contact: [bool; WHEEL_COUNT],
    /// Gap between a lifted wheel and the ground, m (0 when in contact).
    pub hang: [f64; WHEEL_COUNT],
    /// Body plane `(h, a, b)`.
    pub plane: [f64; 3],
    /// No non-negative distribution exists for the requested CoG.
    pub unsupported: bool,
}

fn row(p: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(1.0, p.x, p.y)
}

/// Least-squares plane `z = h + a·x + b·y` through the points.
pub fn fit_plane(positions: &[Vector2<f64>; WHEEL_COUNT], heights: &[f64; WHEEL_COUNT]) -> [f64; 3] {
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (p, z) in positions.iter().zip(heights.iter()) {
        let r = row(p);
        m += r * r.transpose();
        rhs += r * *z;
    }
    let q = m.lu().solve(&rhs).unwrap_or_else(Vector3::zeros);
    [q.x, q.y, q.z]
}

/// Distributes `total` newtons over the wheels so that the centre of pressure
/// sits at `cop`. `fixed[i] = Some(n)` prescribes a wheel's load.
pub fn solve_loads(
    positions: &[Vector2<f64>; WHEEL_COUNT],
    ground: &[f64; WHEEL_COUNT],
    stiffness: f64,
    total: f64,
    cop: Vector2<f64>,
    fixed: &[Option<f64>; WHEEL_COUNT],
) -> LoadSolution {
    debug_assert!(stiffness > 0.0);
    let mut force = Vector3::new(total, total * cop.x, total * cop.y);
    for (p, f) in positions.iter().zip(fixed.iter()) {
        if let Some(n) = f {
            force -= row(p) * *n;
        }
    }
    let mut active: [bool; WHEEL_COUNT] = std::array::from_fn(|i| fixed[i].is_none());
    let mut normal = [0.0; WHEEL_COUNT];
    let mut plane = Vector3::zeros();
    let mut unsupported = false;
    loop {
        let count = active.iter().filter(|a| **a).count();
        let mut m = Matrix3::zeros();
        let mut rhs = -force / stiffness;
        for i in 0..WHEEL_COUNT {
            if active[i] {
                let r = row(&positions[i]);
                m += r * r.transpose();
                rhs += r * ground[i];
            }
        }
        let solved = if count >= 3 { m.lu().solve(&rhs) } else { None };
        let Some(q) = solved else {
            unsupported = true;
            break;
        };
        plane = q;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..WHEEL_COUNT {
            normal[i] = if active[i] { stiffness * (ground[i] - row(&positions[i]).dot(&q)) } else { 0.0 };
            if active[i] && normal[i] < 0.0 && worst.is_none_or(|(_, w)| normal[i] < w) {
                worst = Some((i, normal[i]));
            }
        }
        match worst {
            None => break,
            Some((i, _)) if count > 3 => active[i] = false,
            Some(_) => {
                unsupported = true;
                break;
            }
        }
    }
    let mut hang = [0.0; WHEEL_COUNT];
    let mut in_contact = [false; WHEEL_COUNT];
    for i in 0..WHEEL_COUNT {
        if let Some(n) = fixed[i] {
            normal[i] = n.max(0.0);
            in_contact[i] = n > 0.0;
        } else {
            normal[i] = normal[i].max(0.0);
            in_contact[i] = active[i] && !unsupported;
            if !active[i] {
                hang[i] = (row(&positions[i]).dot(&plane) - ground[i]).max(0.0);
            }
        }
    }
    LoadSolution { normal, in_contact, hang, plane: [plane.x, plane.y, plane.z], unsupported }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect() -> [Vector2<f64>; 4] {
        [
            Vector2::new(0.8875, 0.642),
            Vector2::new(0.8875, -0.642),
            Vector2::new(-0.8875, 0.642),
            Vector2::new(-0.8875, -0.642),
        ]
    }

    #[test]
    fn symmetric_flat_equal_loads() {
        let s = solve_loads(&rect(), &[0.0; 4], 1500.0, 400.0, Vector2::zeros(), &[None; 4]);
        for n in s.normal {
            assert!((n - 100.0).abs() < 1e-9);
        }
        assert!(!s.unsupported);
    }

    #[test]
    fn balance_holds_with_offset_cop() {
        let cop = Vector2::new(-0.2, 0.1);
        let ground = [0.01, -0.02, 0.0, 0.03];
        let s = solve_loads(&rect(), &ground, 1500.0, 400.0, cop, &[None; 4]);
        let p = rect();
        let sum: f64 = s.normal.iter().sum();
        let mx: f64 = s.normal.iter().zip(p.iter()).map(|(n, q)| n * q.x).sum();
        let my: f64 = s.normal.iter().zip(p.iter()).map(|(n, q)| n * q.y).sum();
        assert!((sum - 400.0).abs() < 1e-9);
        assert!((mx - 400.0 * cop.x).abs() < 1e-9);
        assert!((my - 400.0 * cop.y).abs() < 1e-9);
    }

    #[test]
    fn twisted_ground_lifts_a_diagonal_wheel() {
        let ground = [0.3, 0.0, 0.0, 0.0];
        let s = solve_loads(&rect(), &ground, 1500.0, 200.0, Vector2::new(0.05, -0.05), &[None; 4]);
        assert_eq!(s.in_contact.iter().filter(|c| **c).count(), 3);
        assert!(s.normal.iter().all(|n| *n >= 0.0));
        let lifted = s.in_contact.iter().position(|c| !c).unwrap();
        assert!(s.hang[lifted] > 0.0);
    }

    #[test]
    fn fixed_load_respected() {
        let fixed = [Some(10.0), None, None, None];
        let s = solve_loads(&rect(), &[0.0; 4], 1500.0, 400.0, Vector2::new(-0.1, -0.1), &fixed);
        assert_eq!(s.normal[0], 10.0);
        assert!((s.normal.iter().sum::<f64>() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn cop_outside_support_is_unsupported() {
        let s = solve_loads(&rect(), &[0.0; 4], 1500.0, 400.0, Vector2::new(0.0, 1.0), &[None; 4]);
        assert!(s.unsupported);
    }

    #[test]
    fn plane_fit_recovers_plane() {
        let p = rect();
        let z = p.map(|q| 0.1 + 0.2 * q.x - 0.3 * q.y);
        let f = fit_plane(&p, &z);
        assert!((f[0] - 0.1).abs() < 1e-12 && (f[1] - 0.2).abs() < 1e-12 && (f[2] + 0.3).abs() < 1e-12);
    }
}
