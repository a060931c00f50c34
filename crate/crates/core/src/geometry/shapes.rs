//! Procedural shape families used as the synthetic corpus.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    Disk,
    Helix,
    Cross,
}

impl ShapeFamily {
    /// All families; a family's position here is its category id.
    pub const ALL: [ShapeFamily; 10] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
        ShapeFamily::Torus,
        ShapeFamily::Pyramid,
        ShapeFamily::Ellipsoid,
        ShapeFamily::Disk,
        ShapeFamily::Helix,
        ShapeFamily::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Pyramid => "pyramid",
            ShapeFamily::Ellipsoid => "ellipsoid",
            ShapeFamily::Disk => "disk",
            ShapeFamily::Helix => "helix",
            ShapeFamily::Cross => "cross",
        }
    }

    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).expect("listed")
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    /// Each axis is scaled by a factor drawn from `[1 - jitter, 1 + jitter]`.
    pub scale_jitter: f32,
    /// Standard deviation of isotropic per-point Gaussian noise.
    pub noise_sigma: f32,
}

impl ShapeSpec {
    pub fn new(category: &str, scale_jitter: f32, noise_sigma: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&scale_jitter) || noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(invalid(format!(
                "jitter must lie in [0, 1) and sigma be nonnegative (got {scale_jitter}, {noise_sigma})"
            )));
        }
        Ok(Self {
            family: category.parse()?,
            scale_jitter,
            noise_sigma,
        })
    }
}

fn disk_point(rng: &mut RngStream, radius: f32) -> (f32, f32) {
    let r = radius * rng.gen::<f32>().sqrt();
    let phi = rng.gen_range(0.0..2.0 * PI);
    (r * phi.cos(), r * phi.sin())
}

fn box_surface(rng: &mut RngStream, half: [f32; 3]) -> [f32; 3] {
    let [a, b, c] = half;
    // Pairs of faces normal to x, y, z, weighted by area.
    let areas = [b * c, a * c, a * b];
    let total: f32 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut axis = 2;
    for (k, &area) in areas.iter().enumerate() {
        if pick < area {
            axis = k;
            break;
        }
        pick -= area;
    }
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = if k == axis {
            sign * half[k]
        } else {
            rng.gen_range(-half[k]..=half[k])
        };
    }
    p
}

fn triangle_point(rng: &mut RngStream, a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> [f32; 3] {
    let r1 = rng.gen::<f32>().sqrt();
    let r2 = rng.gen::<f32>();
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
}

fn sphere_point(rng: &mut RngStream) -> [f32; 3] {
    let z: f32 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn surface_point(family: ShapeFamily, rng: &mut RngStream) -> [f32; 3] {
    match family {
        ShapeFamily::Sphere => sphere_point(rng),
        ShapeFamily::Cube => {
            let face = rng.gen_range(0..6);
            let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
            let mut p = [0.0; 3];
            for (k, v) in p.iter_mut().enumerate() {
                *v = if k == axis {
                    sign
                } else {
                    rng.gen_range(-1.0..=1.0)
                };
            }
            p
        }
        ShapeFamily::Cylinder => {
            // radius 0.5, height 2: lateral 80% of the area, each cap 10%.
            let part: f32 = rng.gen();
            if part < 0.8 {
                let phi = rng.gen_range(0.0..2.0 * PI);
                [0.5 * phi.cos(), 0.5 * phi.sin(), rng.gen_range(-1.0..=1.0)]
            } else {
                let (x, y) = disk_point(rng, 0.5);
                [x, y, if part < 0.9 { 1.0 } else { -1.0 }]
            }
        }
        ShapeFamily::Cone => {
            // base radius 0.8 at z = -1, apex at z = 1.
            let slant = (0.8f32 * 0.8 + 4.0).sqrt();
            let lateral = 0.8 * slant;
            let base = 0.8 * 0.8;
            if rng.gen_range(0.0..lateral + base) < lateral {
                let t = rng.gen::<f32>().sqrt();
                let phi = rng.gen_range(0.0..2.0 * PI);
                [0.8 * t * phi.cos(), 0.8 * t * phi.sin(), 1.0 - 2.0 * t]
            } else {
                let (x, y) = disk_point(rng, 0.8);
                [x, y, -1.0]
            }
        }
        ShapeFamily::Torus => {
            let u = rng.gen_range(0.0..2.0 * PI);
            let v = rng.gen_range(0.0..2.0 * PI);
            let ring = 1.0 + 0.35 * v.cos();
            [ring * u.cos(), ring * u.sin(), 0.35 * v.sin()]
        }
        ShapeFamily::Pyramid => {
            let apex = [0.0, 0.0, 1.0];
            let corners = [
                [-1.0, -1.0, -1.0],
                [1.0, -1.0, -1.0],
                [1.0, 1.0, -1.0],
                [-1.0, 1.0, -1.0],
            ];
            let side = 5.0f32.sqrt();
            let base = 4.0;
            let pick = rng.gen_range(0.0..base + 4.0 * side);
            if pick < base {
                [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), -1.0]
            } else {
                let face = (((pick - base) / side) as usize).min(3);
                triangle_point(rng, apex, corners[face], corners[(face + 1) % 4])
            }
        }
        ShapeFamily::Ellipsoid => {
            let p = sphere_point(rng);
            [p[0], 0.6 * p[1], 0.35 * p[2]]
        }
        ShapeFamily::Disk => {
            let (x, y) = disk_point(rng, 1.0);
            [x, y, 0.0]
        }
        ShapeFamily::Helix => {
            // Tube of radius 0.12 around three turns of a helix.
            let turns = 3.0;
            let t = rng.gen_range(0.0..2.0 * PI * turns);
            let alpha = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = t.sin_cos();
            let centre = [0.8 * c, 0.8 * s, -1.0 + t / (PI * turns)];
            let tangent = {
                let v = [-0.8 * s, 0.8 * c, 1.0 / (PI * turns)];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|x| x / n)
            };
            let normal = [-c, -s, 0.0];
            let binormal = [
                tangent[1] * normal[2] - tangent[2] * normal[1],
                tangent[2] * normal[0] - tangent[0] * normal[2],
                tangent[0] * normal[1] - tangent[1] * normal[0],
            ];
            let (sa, ca) = alpha.sin_cos();
            [0, 1, 2].map(|k| centre[k] + 0.12 * (ca * normal[k] + sa * binormal[k]))
        }
        ShapeFamily::Cross => {
            let half = if rng.gen::<bool>() {
                [1.0, 0.25, 0.25]
            } else {
                [0.25, 1.0, 0.25]
            };
            box_surface(rng, half)
        }
    }
}

/// Samples `n` surface points of `spec` with per-axis scale jitter and
/// Gaussian noise, in the family's own frame (not normalized).
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(invalid(format!(
            "sample_shape needs at least 8 points, got {n}"
        )));
    }
    let mut rng = RngStream::new(seed, "shape");
    let j = spec.scale_jitter;
    let scale: [f32; 3] = [0, 1, 2].map(|_| {
        if j > 0.0 {
            rng.gen_range(1.0 - j..=1.0 + j)
        } else {
            1.0
        }
    });
    let noise = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let points = (0..n)
        .map(|_| {
            let p = surface_point(spec.family, &mut rng);
            [0, 1, 2].map(|k| p[k] * scale[k] + noise.sample(&mut rng))
        })
        .collect();
    Ok(PointCloud::new(points, spec.family.id(), seed))
}

/// [`sample_surface`] followed by normalization. Pure in `(spec, n, seed)`.
pub fn sample_shape(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    let mut pc = sample_surface(spec, n, seed)?;
    pc.normalize();
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_category_is_rejected() {
        assert!(matches!(
            ShapeSpec::new("teapot", 0.0, 0.0),
            Err(Error::UnknownCategory(_))
        ));
        assert!(ShapeSpec::new("cube", -0.1, 0.0).is_err());
    }

    #[test]
    fn ids_follow_listing_order() {
        for (i, f) in ShapeFamily::ALL.iter().enumerate() {
            assert_eq!(f.id(), i);
            assert_eq!(f.name().parse::<ShapeFamily>().unwrap(), *f);
        }
    }

    #[test]
    fn noiseless_sphere_lies_on_unit_sphere() {
        let spec = ShapeSpec::new("sphere", 0.0, 0.0).unwrap();
        for n in [8, 9, 100, 777] {
            let raw = sample_surface(&spec, n, n as u64).unwrap();
            for p in &raw.points {
                assert!((super::super::cloud::norm(p) - 1.0).abs() < 1e-4);
            }
            // Centring on the sample centroid moves the sphere centre by |c|,
            // so normalized norms spread by at most 2|c| / (1 + |c|).
            let c = raw.centroid();
            let offset = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() as f32;
            let pc = sample_shape(&spec, n, n as u64).unwrap();
            let lo = pc
                .points
                .iter()
                .map(super::super::cloud::norm)
                .fold(f32::MAX, f32::min);
            assert!(
                lo >= 1.0 - 2.0 * offset / (1.0 + offset) - 1e-4,
                "n={n} lo={lo} offset={offset}"
            );
            assert!(pc.max_norm() <= 1.0);
        }
    }

    #[test]
    fn cube_faces_are_equally_likely() {
        // Binomial(10000, 1/6): sd = sqrt(10000 * 1/6 * 5/6) = 37.27; 3 sd = 111.8.
        let spec = ShapeSpec::new("cube", 0.0, 0.0).unwrap();
        let pc = sample_shape(&spec, 10_000, 2024).unwrap();
        let mut lo = [f32::MAX; 3];
        let mut hi = [f32::MIN; 3];
        for p in &pc.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut counts = [0usize; 6];
        for p in &pc.points {
            for k in 0..3 {
                if (p[k] - hi[k]).abs() < 1e-5 {
                    counts[2 * k] += 1;
                    break;
                }
                if (p[k] - lo[k]).abs() < 1e-5 {
                    counts[2 * k + 1] += 1;
                    break;
                }
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 10_000);
        let expected = 10_000.0 / 6.0;
        let band = 3.0 * (10_000.0f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= band, "{counts:?}");
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        let spec = ShapeSpec::new("torus", 0.1, 0.01).unwrap();
        assert!(sample_shape(&spec, 7, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        for family in ShapeFamily::ALL {
            let spec = ShapeSpec {
                family,
                scale_jitter: 0.2,
                noise_sigma: 0.02,
            };
            let a = sample_shape(&spec, 64, 99).unwrap();
            let b = sample_shape(&spec, 64, 99).unwrap();
            let c = sample_shape(&spec, 64, 100).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.points, c.points);
            assert_eq!(a.category_id, family.id());
        }
    }
}
