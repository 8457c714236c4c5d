//! Height fields: analytic primitives and bilinear heightmaps.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

use crate::math;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("heightmap {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("heightmap header: {0}")]
    Header(String),
    #[error("heightmap {path}: expected {expected} bytes, found {found}")]
    Size { path: PathBuf, expected: usize, found: usize },
}

/// Sampled grid, row-major (`y` rows of `x` samples), bilinear between nodes
/// and clamped to the edge outside.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub heights: Vec<f32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    resolution: f64,
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    data: String,
}

impl HeightGrid {
    /// Reads a JSON header and the little-endian `f32` file it names
    /// (relative to the header).
    pub fn load(header_path: &Path) -> Result<Self, TerrainError> {
        let io = |path: &Path, source| TerrainError::Io { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(header_path).map_err(|e| io(header_path, e))?;
        let h: GridHeader =
            serde_json::from_str(&text).map_err(|e| TerrainError::Header(e.to_string()))?;
        if !(h.resolution > 0.0) || h.nx < 2 || h.ny < 2 {
            return Err(TerrainError::Header("need resolution > 0 and at least 2x2 nodes".into()));
        }
        let data_path = header_path.parent().unwrap_or(Path::new(".")).join(&h.data);
        let bytes = std::fs::read(&data_path).map_err(|e| io(&data_path, e))?;
        let expected = h.nx * h.ny * 4;
        if bytes.len() != expected {
            return Err(TerrainError::Size { path: data_path, expected, found: bytes.len() });
        }
        let heights = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { origin: h.origin, resolution: h.resolution, nx: h.nx, ny: h.ny, heights })
    }

    fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i] as f64
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let gx = ((x - self.origin[0]) / self.resolution).clamp(0.0, (self.nx - 1) as f64);
        let gy = ((y - self.origin[1]) / self.resolution).clamp(0.0, (self.ny - 1) as f64);
        let i = (gx.floor() as usize).min(self.nx - 2);
        let j = (gy.floor() as usize).min(self.ny - 2);
        let (fx, fy) = (gx - i as f64, gy - j as f64);
        let h00 = self.node(i, j);
        let h10 = self.node(i + 1, j);
        let h01 = self.node(i, j + 1);
        let h11 = self.node(i + 1, j + 1);
        (h00 * (1.0 - fx) + h10 * fx) * (1.0 - fy) + (h01 * (1.0 - fx) + h11 * fx) * fy
    }
}

fn default_run() -> f64 {
    0.02
}

/// Terrain description. Angles in degrees; azimuths point uphill (plane) or
/// towards the raised side (step), measured from world +x.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Terrain {
    Flat,
    Plane {
        slope_deg: f64,
        #[serde(default)]
        azimuth_deg: f64,
    },
    /// Ramp of length `run` starting `distance` m from the origin along the
    /// azimuth, rising by `height`.
    Step {
        height: f64,
        distance: f64,
        #[serde(default)]
        azimuth_deg: f64,
        #[serde(default = "default_run")]
        run: f64,
    },
    /// Sum of the parts' heights.
    Composite { parts: Vec<Terrain> },
    Heightmap {
        header: PathBuf,
        #[serde(skip)]
        grid: Option<Arc<HeightGrid>>,
    },
}

impl PartialEq for Terrain {
    fn eq(&self, other: &Self) -> bool {
        use Terrain::*;
        match (self, other) {
            (Flat, Flat) => true,
            (Plane { slope_deg: a, azimuth_deg: b }, Plane { slope_deg: c, azimuth_deg: d }) => {
                a == c && b == d
            }
            (
                Step { height: a, distance: b, azimuth_deg: c, run: d },
                Step { height: e, distance: f, azimuth_deg: g, run: h },
            ) => a == e && b == f && c == g && d == h,
            (Composite { parts: a }, Composite { parts: b }) => a == b,
            (Heightmap { header: a, .. }, Heightmap { header: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl Terrain {
    /// Loads heightmap data; header paths resolve against `base_dir`.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<(), TerrainError> {
        match self {
            Terrain::Heightmap { header, grid } => {
                let path = if header.is_absolute() { header.clone() } else { base_dir.join(&*header) };
                *grid = Some(Arc::new(HeightGrid::load(&path)?));
            }
            Terrain::Composite { parts } => {
                for p in parts {
                    p.resolve(base_dir)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Terrain::Flat => Ok(()),
            Terrain::Plane { slope_deg, azimuth_deg } => {
                if !(slope_deg.abs() < 90.0) || !azimuth_deg.is_finite() {
                    return Err(format!("plane slope must be within (-90, 90) deg, got {slope_deg}"));
                }
                Ok(())
            }
            Terrain::Step { height, distance, azimuth_deg, run } => {
                if !height.is_finite() || !distance.is_finite() || !azimuth_deg.is_finite() {
                    return Err("step fields must be finite".into());
                }
                if !(*run > 0.0) {
                    return Err(format!("step run must be positive, got {run}"));
                }
                Ok(())
            }
            Terrain::Composite { parts } => parts.iter().try_for_each(|p| p.validate()),
            Terrain::Heightmap { grid, header } => match grid {
                Some(_) => Ok(()),
                None => Err(format!("heightmap {} not loaded", header.display())),
            },
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Terrain::Flat => 0.0,
            Terrain::Plane { slope_deg, azimuth_deg } => {
                let az = azimuth_deg.to_radians();
                let s = x * math::cos(az) + y * math::sin(az);
                s * math::tan(slope_deg.to_radians())
            }
            Terrain::Step { height, distance, azimuth_deg, run } => {
                let az = azimuth_deg.to_radians();
                let s = x * math::cos(az) + y * math::sin(az);
                height * ((s - distance) / run).clamp(0.0, 1.0)
            }
            Terrain::Composite { parts } => parts.iter().map(|p| p.height(x, y)).sum(),
            Terrain::Heightmap { grid, .. } => grid.as_ref().map_or(0.0, |g| g.height(x, y)),
        }
    }

    /// Hub height of a rigid wheel of `radius` resting on the terrain at
    /// `center`, rolling in `direction` (unit, world frame): the upper
    /// envelope of the profile under the wheel's vertical section.
    pub fn wheel_hub_height(&self, center: Vector2<f64>, direction: Vector2<f64>, radius: f64) -> f64 {
        const SAMPLES: usize = 41;
        let mut best = f64::NEG_INFINITY;
        for k in 0..SAMPLES {
            let s = radius * (2.0 * k as f64 / (SAMPLES - 1) as f64 - 1.0);
            let p = center + direction * s;
            let lift = (radius * radius - s * s).max(0.0).sqrt();
            best = best.max(self.height(p.x, p.y) + lift);
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_rises_uphill() {
        let t = Terrain::Plane { slope_deg: 25.0, azimuth_deg: 0.0 };
        assert!((t.height(1.0, 5.0) - 25f64.to_radians().tan()).abs() < 1e-12);
        assert_eq!(t.height(0.0, 3.0), 0.0);
    }

    #[test]
    fn step_ramp() {
        let t = Terrain::Step { height: 0.3, distance: 2.0, azimuth_deg: 0.0, run: 0.02 };
        assert_eq!(t.height(1.99, 0.0), 0.0);
        assert!((t.height(2.01, 0.0) - 0.15).abs() < 1e-12);
        assert_eq!(t.height(2.5, 0.0), 0.3);
    }

    #[test]
    fn flat_hub_height_is_radius() {
        let h = Terrain::Flat.wheel_hub_height(Vector2::new(0.3, 0.1), Vector2::x(), 0.306);
        assert_eq!(h, 0.306);
    }

    #[test]
    fn hub_climbs_step_edge() {
        let t = Terrain::Step { height: 0.3, distance: 2.0, azimuth_deg: 0.0, run: 0.02 };
        let r = 0.306;
        let far = t.wheel_hub_height(Vector2::new(1.0, 0.0), Vector2::x(), r);
        assert_eq!(far, r);
        // Top corner (end of the ramp) 0.12 m ahead of the hub.
        let near = t.wheel_hub_height(Vector2::new(1.9, 0.0), Vector2::x(), r);
        let expected = 0.3 + (r * r - 0.12f64 * 0.12).sqrt();
        assert!((near - expected).abs() < 5e-3, "{near} vs {expected}");
        let on_top = t.wheel_hub_height(Vector2::new(2.5, 0.0), Vector2::x(), r);
        assert!((on_top - (0.3 + r)).abs() < 1e-12);
    }

    #[test]
    fn composite_sums() {
        let t = Terrain::Composite {
            parts: vec![
                Terrain::Plane { slope_deg: 10.0, azimuth_deg: 90.0 },
                Terrain::Step { height: 0.1, distance: 0.0, azimuth_deg: 0.0, run: 0.02 },
            ],
        };
        let expected = 2.0 * 10f64.to_radians().tan() + 0.1;
        assert!((t.height(1.0, 2.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn heightmap_bilinear_and_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = vec![0.0, 1.0, 2.0, 3.0];
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.path().join("g.bin"), bytes).unwrap();
        std::fs::write(
            dir.path().join("g.json"),
            r#"{"resolution":1.0,"origin":[0,0],"nx":2,"ny":2,"data":"g.bin"}"#,
        )
        .unwrap();
        let mut t = Terrain::Heightmap { header: "g.json".into(), grid: None };
        assert!(t.validate().is_err());
        t.resolve(dir.path()).unwrap();
        assert!((t.height(0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(t.height(-3.0, -3.0), 0.0);
        assert_eq!(t.height(9.0, 9.0), 3.0);
    }

    #[test]
    fn heightmap_size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("g.bin"), [0u8; 12]).unwrap();
        std::fs::write(
            dir.path().join("g.json"),
            r#"{"resolution":1.0,"origin":[0,0],"nx":2,"ny":2,"data":"g.bin"}"#,
        )
        .unwrap();
        let mut t = Terrain::Heightmap { header: "g.json".into(), grid: None };
        assert!(matches!(t.resolve(dir.path()), Err(TerrainError::Size { .. })));
    }
}
