use crate::raster::{quantize_rgb, to_f32_precision};
use crate::tensor::{ImageTensor, Shape};

use super::scene::{Primitive, SceneSpec, Vec3};

/// Raw render output; depth is the unnormalized distance to the camera plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub rgb: ImageTensor,
    pub depth: ImageTensor,
    pub normal: ImageTensor,
    /// `+1` on objects, `-1` on ground and empty background.
    pub mask: ImageTensor,
    pub valid: Vec<bool>,
    /// Index into `SceneSpec::objects` of the visible surface, `-1` for a miss.
    pub ids: Vec<i32>,
}

/// World `(x, y)` of the center of pixel `(row, col)`; row 0 is the top (`+y`) edge.
pub fn pixel_center(spec: &SceneSpec, height: usize, width: usize, row: usize, col: usize) -> (f64, f64) {
    let x = ((col as f64 + 0.5) / width as f64 - 0.5) * spec.extent;
    let y = (0.5 - (row as f64 + 0.5) / height as f64) * spec.extent;
    (x, y)
}

/// Height and normal of the topmost surface above `(x, y)`.
fn cast(spec: &SceneSpec, x: f64, y: f64) -> Option<(usize, f64, Vec3)> {
    let mut best: Option<(usize, f64, Vec3)> = None;
    for (i, o) in spec.objects.iter().enumerate() {
        let hit = match o.primitive {
            Primitive::Sphere { center, radius } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let d2 = dx * dx + dy * dy;
                let r2 = radius * radius;
                (d2 < r2).then(|| {
                    let dz = (r2 - d2).sqrt();
                    (center[2] + dz, [dx / radius, dy / radius, dz / radius])
                })
            }
            Primitive::Cuboid { min, max } => {
                (x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1]).then_some((max[2], [0.0, 0.0, 1.0]))
            }
            Primitive::Ground { height } => Some((height, [0.0, 0.0, 1.0])),
        };
        if let Some((z, n)) = hit {
            if best.is_none_or(|(_, bz, _)| z > bz) {
                best = Some((i, z, n));
            }
        }
    }
    best
}

/// Casts one vertical ray per pixel center.
///
/// RGB is Lambertian shading `albedo * max(0, n . l)` mapped to `[-1, 1]` and
/// snapped to 8-bit levels; depth and normals are rounded to `f32`. Both
/// roundings make the rendering exactly representable in the on-disk formats.
pub fn render(spec: &SceneSpec, height: usize, width: usize) -> Rendering {
    let px = Shape::new(height, width, 1);
    let mut rgb = ImageTensor::filled(Shape::new(height, width, 3), -1.0);
    let mut depth = ImageTensor::zeros(px);
    let mut normal = ImageTensor::zeros(Shape::new(height, width, 3));
    let mut mask = ImageTensor::filled(px, -1.0);
    let mut valid = vec![false; height * width];
    let mut ids = vec![-1; height * width];
    for row in 0..height {
        for col in 0..width {
            let (x, y) = pixel_center(spec, height, width, row, col);
            let Some((id, z, n)) = cast(spec, x, y) else {
                continue;
            };
            let o = &spec.objects[id];
            let shade = (n[0] * spec.light[0] + n[1] * spec.light[1] + n[2] * spec.light[2]).max(0.0);
            for (c, a) in rgb.pixel_mut(row, col).iter_mut().zip(o.albedo) {
                *c = quantize_rgb(a * shade * 2.0 - 1.0);
            }
            depth.pixel_mut(row, col)[0] = to_f32_precision(spec.camera_height - z);
            for (dst, v) in normal.pixel_mut(row, col).iter_mut().zip(n) {
                *dst = to_f32_precision(v);
            }
            if !matches!(o.primitive, Primitive::Ground { .. }) {
                mask.pixel_mut(row, col)[0] = 1.0;
            }
            valid[row * width + col] = true;
            ids[row * width + col] = id as i32;
        }
    }
    Rendering {
        rgb,
        depth,
        normal,
        mask,
        valid,
        ids,
    }
}
