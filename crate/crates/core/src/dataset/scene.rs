use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box; seen from above only its top face is visible.
    Cuboid { min: Vec3, max: Vec3 },
    /// Horizontal plane `z = height` covering the whole view.
    Ground { height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub primitive: Primitive,
    pub albedo: Vec3,
}

/// A scene viewed by an orthographic camera looking straight down.
///
/// The camera plane sits at `z = camera_height` and sees the square
/// `[-extent/2, extent/2]^2`; depth is the vertical distance to that plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<Object>,
    pub light: Vec3,
    pub camera_height: f64,
    pub extent: f64,
}

pub const CAMERA_HEIGHT: f64 = 2.0;
pub const EXTENT: f64 = 2.0;
pub const GROUND_ALBEDO: Vec3 = [0.5, 0.5, 0.5];

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene: {m}")));
        if self.objects.is_empty() {
            return bad("no primitives".into());
        }
        let norm = self.light.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("light direction has norm {norm}"));
        }
        if !(self.extent > 0.0 && self.camera_height.is_finite()) {
            return bad("non-positive extent".into());
        }
        for o in &self.objects {
            match o.primitive {
                Primitive::Sphere { radius, .. } if !(radius > 0.0) => return bad(format!("radius {radius}")),
                Primitive::Cuboid { min, max } if (0..3).any(|i| !(max[i] > min[i])) => {
                    return bad(format!("empty box {min:?}..{max:?}"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Objects other than the ground plane.
    pub fn object_count(&self) -> usize {
        self.objects
            .iter()
            .filter(|o| !matches!(o.primitive, Primitive::Ground { .. }))
            .count()
    }
}

/// 1 to 5 spheres and boxes above a gray ground plane, lit mostly from above.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R) -> SceneSpec {
    let count = rng.random_range(1..=5);
    let mut objects = Vec::with_capacity(count + 1);
    objects.push(Object {
        primitive: Primitive::Ground { height: 0.0 },
        albedo: GROUND_ALBEDO,
    });
    for _ in 0..count {
        let primitive = if rng.random_bool(0.5) {
            let radius = rng.random_range(0.15..0.45);
            let center = [
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                radius * rng.random_range(0.5..1.5),
            ];
            Primitive::Sphere { center, radius }
        } else {
            let hx = rng.random_range(0.1..0.35);
            let hy = rng.random_range(0.1..0.35);
            let top = rng.random_range(0.2..1.2);
            let cx = rng.random_range(-0.8..0.8);
            let cy = rng.random_range(-0.8..0.8);
            Primitive::Cuboid {
                min: [cx - hx, cy - hy, 0.0],
                max: [cx + hx, cy + hy, top],
            }
        };
        let albedo = [
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
        ];
        objects.push(Object { primitive, albedo });
    }
    let mut light = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0];
    let n = light.iter().map(|v| v * v).sum::<f64>().sqrt();
    light.iter_mut().for_each(|v| *v /= n);
    SceneSpec {
        objects,
        light,
        camera_height: CAMERA_HEIGHT,
        extent: EXTENT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&mut ChaCha8Rng::seed_from_u64(3));
        let b = generate_scene(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn thousand_draws_cover_all_counts_and_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen = [0usize; 6];
        for _ in 0..1000 {
            let s = generate_scene(&mut rng);
            s.validate().unwrap();
            seen[s.object_count()] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1..].iter().all(|&n| n > 0), "{seen:?}");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = generate_scene(&mut ChaCha8Rng::seed_from_u64(5));
        s.light = [0.0, 0.0, 2.0];
        assert!(s.validate().is_err());
        s.light = [0.0, 0.0, 1.0];
        s.objects.push(Object {
            primitive: Primitive::Sphere { center: [0.0; 3], radius: 0.0 },
            albedo: [1.0; 3],
        });
        assert!(s.validate().is_err());
        s.objects.clear();
        assert!(s.validate().is_err());
    }
}
