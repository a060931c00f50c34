use serde::{Deserialize, Serialize};

/// An ordered set of 3D points tagged with its category and provenance seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub category_id: usize,
    pub seed: u64,
}

pub(crate) fn sq_dist(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn norm(p: &[f32; 3]) -> f32 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, category_id: usize, seed: u64) -> Self {
        Self {
            points,
            category_id,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k] as f64;
            }
        }
        let n = self.points.len().max(1) as f64;
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f32 {
        self.points.iter().map(norm).fold(0.0, f32::max)
    }

    /// Centers on the centroid and scales the farthest point to the unit
    /// sphere. A degenerate cloud (all points coincident) is only centered.
    pub fn normalize(&mut self) {
        let c = self.centroid();
        let mut max = 0.0f64;
        for p in &self.points {
            let d: f64 = (0..3).map(|k| (p[k] as f64 - c[k]).powi(2)).sum();
            max = max.max(d.sqrt());
        }
        // Slight shrink keeps the recomputed f32 norm from rounding above 1.
        let scale = if max > 0.0 {
            1.0 / (max * (1.0 + 1e-6))
        } else {
            1.0
        };
        for p in &mut self.points {
            for k in 0..3 {
                p[k] = ((p[k] as f64 - c[k]) * scale) as f32;
            }
        }
    }

    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.normalize();
        out
    }

    pub fn translated(&self, offset: [f32; 3]) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            for k in 0..3 {
                p[k] += offset[k];
            }
        }
        out
    }

    /// New cloud holding the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize], seed: u64) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            category_id: self.category_id,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lumpy() -> PointCloud {
        let points = (0..50)
            .map(|i| {
                let t = i as f32 * 0.37;
                [3.0 + t.sin() * 2.0, -1.0 + (t * 1.3).cos(), 0.5 * t]
            })
            .collect();
        PointCloud::new(points, 0, 1)
    }

    #[test]
    fn normalize_centers_and_scales() {
        let pc = lumpy().normalized();
        let c = pc.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-5), "{c:?}");
        let m = pc.max_norm();
        assert!((1.0 - 1e-4..=1.0).contains(&m), "{m}");
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = lumpy().normalized();
        let twice = once.normalized();
        for (a, b) in once.points.iter().zip(&twice.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_point_normalizes_to_origin() {
        let pc = PointCloud::new(vec![[2.0, 3.0, 4.0]], 0, 0).normalized();
        assert_eq!(pc.points, vec![[0.0, 0.0, 0.0]]);
    }
}
