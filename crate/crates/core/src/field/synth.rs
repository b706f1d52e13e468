//! Analytic scenes voxelized into fields.

use serde::{Deserialize, Serialize};

use super::{logit, softplus_inv, FieldError, RadianceField, EMPTY_DENSITY_PARAM};
use crate::geom::{Aabb, Vec3};

/// Density inside synthesized solids, in scene-units⁻¹.
pub const SOLID_DENSITY: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Sphere,
    Box,
    Plate,
    Composite,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "box" => Ok(Self::Box),
            "plate" => Ok(Self::Plate),
            "composite" => Ok(Self::Composite),
            other => Err(format!("unknown scene kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Shape {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - Vec3::from(center)).norm() - radius,
            Shape::Box { center, half } => {
                let q = (p - Vec3::from(center)).abs() - Vec3::from(half);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Shape::Sphere { center, radius } => {
                Aabb::new(center.map(|c| c - radius), center.map(|c| c + radius))
            }
            Shape::Box { center, half } => Aabb::new(
                std::array::from_fn(|a| center[a] - half[a]),
                std::array::from_fn(|a| center[a] + half[a]),
            ),
        }
    }
}

/// A solid with constant albedo.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

/// Voxelizes a union of primitives. Density falls off over one lattice
/// spacing around each surface; every node takes the albedo of the nearest
/// primitive so interpolation never blends toward an unrelated color.
pub fn synth_primitives(
    primitives: &[Primitive],
    resolution: [usize; 3],
    bbox: Aabb,
) -> Result<RadianceField, FieldError> {
    let mut field = RadianceField::new(resolution, bbox, EMPTY_DENSITY_PARAM, 0.0)?;
    let band = field.spacing().max();
    let inside = softplus_inv(SOLID_DENSITY);
    let outside = EMPTY_DENSITY_PARAM as f64;
    for n in 0..field.node_count() {
        let p = field.node_position(n);
        let nearest = primitives
            .iter()
            .map(|prim| (prim.shape.sdf(&p), prim))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((sdf, prim)) = nearest else { continue };
        let t = (0.5 - 0.5 * sdf / band).clamp(0.0, 1.0);
        field.density_params_mut()[n] = (outside + t * (inside - outside)) as f32;
        for ch in 0..3 {
            field.color_params_mut()[3 * n + ch] = logit(prim.albedo[ch]) as f32;
        }
    }
    field.rebuild_occupancy();
    field.metadata.insert(
        "source".into(),
        serde_json::json!({ "synth": primitives }),
    );
    Ok(field)
}

/// Adds a solid to an existing field. Nodes where the primitive is denser than
/// the field take its density and albedo; everything else is left alone.
pub fn stamp_primitive(field: &mut RadianceField, primitive: &Primitive) {
    let band = field.spacing().max();
    let inside = softplus_inv(SOLID_DENSITY);
    let outside = EMPTY_DENSITY_PARAM as f64;
    for n in 0..field.node_count() {
        let sdf = primitive.shape.sdf(&field.node_position(n));
        let t = (0.5 - 0.5 * sdf / band).clamp(0.0, 1.0);
        let d = (outside + t * (inside - outside)) as f32;
        if d > field.density_params()[n] {
            field.density_params_mut()[n] = d;
            for ch in 0..3 {
                field.color_params_mut()[3 * n + ch] = logit(primitive.albedo[ch]) as f32;
            }
        }
    }
    field.rebuild_occupancy();
}

pub fn scene_primitives(kind: SceneKind, bbox: &Aabb) -> Vec<Primitive> {
    let c = bbox.center();
    let h = bbox.size().min() * 0.5;
    let at = |dy: f64| [c.x, c.y + dy, c.z];
    let sphere = |radius: f64, dy: f64, albedo: [f64; 3]| Primitive {
        shape: Shape::Sphere { center: at(dy), radius },
        albedo,
    };
    let plate = Primitive {
        shape: Shape::Box { center: at(-0.55 * h), half: [0.8 * h, 0.06 * h, 0.8 * h] },
        albedo: [0.6, 0.6, 0.6],
    };
    match kind {
        SceneKind::Sphere => vec![sphere(0.5 * h, 0.0, [0.25, 0.45, 0.85])],
        SceneKind::Box => vec![Primitive {
            shape: Shape::Box { center: at(0.0), half: [0.4 * h; 3] },
            albedo: [0.85, 0.55, 0.2],
        }],
        SceneKind::Plate => vec![plate],
        SceneKind::Composite => vec![sphere(0.35 * h, -0.14 * h, [0.85, 0.3, 0.25]), plate],
    }
}

pub fn synth_scene(kind: SceneKind, resolution: usize, bbox: Aabb) -> Result<RadianceField, FieldError> {
    let mut field = synth_primitives(&scene_primitives(kind, &bbox), [resolution; 3], bbox)?;
    field.metadata.insert("scene".into(), serde_json::to_value(kind).unwrap());
    Ok(field)
}
