use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("image size must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("fov_y must lie in (0, pi), got {0}")]
    BadFov(f64),
    #[error("clip planes must satisfy 0 < near < far, got near={0} far={1}")]
    BadClip(f64, f64),
    #[error("pose rotation is not a proper rotation (det {0})")]
    NotRigid(f64),
    #[error("pose must have 16 finite entries with last row [0, 0, 0, 1]")]
    BadPose,
}

/// Pinhole camera. Camera space is x right, y down, z forward; image pixel
/// `(i, j)` covers `[i, i+1) x [j, j+1)` in continuous image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    width: usize,
    height: usize,
    fov_y: f64,
    pose: Matrix4<f64>,
    rotation: Matrix3<f64>,
    eye: Vec3,
    focal: f64,
    near: f64,
    far: f64,
}

/// A projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Continuous image coordinates.
    pub uv: [f64; 2],
    /// The pixel the point lands in, i.e. the pixel-center coordinate rounded with `floor(x + 1/2)`.
    pub pixel: [i64; 2],
    /// Depth along the optical axis.
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("point is behind the camera")]
pub struct BehindCamera;

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fov_y: f64,
        pose: Matrix4<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        if width == 0 || height == 0 {
            return Err(CameraError::EmptyImage(width, height));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(CameraError::BadFov(fov_y));
        }
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(CameraError::BadClip(near, far));
        }
        if pose.iter().any(|v| !v.is_finite())
            || pose[(3, 0)] != 0.0
            || pose[(3, 1)] != 0.0
            || pose[(3, 2)] != 0.0
            || pose[(3, 3)] != 1.0
        {
            return Err(CameraError::BadPose);
        }
        let rotation: Matrix3<f64> = pose.fixed_view::<3, 3>(0, 0).into_owned();
        let det = rotation.determinant();
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if (det - 1.0).abs() > 1e-6 || ortho > 1e-6 {
            return Err(CameraError::NotRigid(det));
        }
        let eye = Vec3::new(pose[(0, 3)], pose[(1, 3)], pose[(2, 3)]);
        let focal = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Ok(Self { width, height, fov_y, pose, rotation, eye, focal, near, far })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly the image's upward direction.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: usize,
        height: usize,
        fov_y: f64,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // looking straight along `up`; pick any perpendicular
            right = forward.cross(&Vec3::new(0.0, 0.0, 1.0));
            if right.norm() < 1e-9 {
                right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let mut pose = Matrix4::identity();
        for r in 0..3 {
            pose[(r, 0)] = right[r];
            pose[(r, 1)] = down[r];
            pose[(r, 2)] = forward[r];
            pose[(r, 3)] = eye[r];
        }
        Self::new(width, height, fov_y, pose, near, far)
    }

    /// Orbit pose around `target`. Azimuth 0 looks from +z, azimuth 90 from +x; elevation is
    /// measured up from the xz plane. Angles in degrees.
    #[allow(clippy::too_many_arguments)]
    pub fn orbit(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        target: Vec3,
        width: usize,
        height: usize,
        fov_y: f64,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = target + radius * Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        Self::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0), width, height, fov_y, near, far)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn pose(&self) -> &Matrix4<f64> {
        &self.pose
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    /// Same pose, different image size (focal length follows the fixed field of view).
    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self::new(width, height, self.fov_y, self.pose, self.near, self.far).expect("valid camera")
    }

    pub fn to_camera_space(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.eye)
    }

    pub fn project(&self, p: &Vec3) -> Result<Projection, BehindCamera> {
        let q = self.to_camera_space(p);
        if !(q.z > 0.0) {
            return Err(BehindCamera);
        }
        let u = self.focal * q.x / q.z + 0.5 * self.width as f64;
        let v = self.focal * q.y / q.z + 0.5 * self.height as f64;
        Ok(Projection { uv: [u, v], pixel: [u.floor() as i64, v.floor() as i64], depth: q.z })
    }

    /// Whether `p` lies inside the view frustum, between the clip planes.
    pub fn in_frustum(&self, p: &Vec3) -> bool {
        match self.project(p) {
            Ok(pr) => {
                pr.depth >= self.near
                    && pr.depth <= self.far
                    && (0.0..=self.width as f64).contains(&pr.uv[0])
                    && (0.0..=self.height as f64).contains(&pr.uv[1])
            }
            Err(_) => false,
        }
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn ray(&self, i: usize, j: usize) -> Ray {
        let x = (i as f64 + 0.5 - 0.5 * self.width as f64) / self.focal;
        let y = (j as f64 + 0.5 - 0.5 * self.height as f64) / self.focal;
        let dir = (self.rotation * Vec3::new(x, y, 1.0)).normalize();
        Ray { origin: self.eye, dir }
    }

    /// One ray per requested pixel (row-major index), or per pixel of the whole image.
    pub fn generate_rays(&self, pixels: Option<&[usize]>) -> Vec<Ray> {
        match pixels {
            Some(ps) => ps.iter().map(|&p| self.ray(p % self.width, p / self.width)).collect(),
            None => (0..self.pixel_count()).map(|p| self.ray(p % self.width, p / self.width)).collect(),
        }
    }

    /// Azimuth and elevation (degrees) of the camera position seen from `center`.
    pub fn orbit_angles(&self, center: &Vec3) -> (f64, f64) {
        let d = self.eye - center;
        let r = d.norm().max(1e-12);
        let elevation = (d.y / r).clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth = d.x.atan2(d.z).to_degrees();
        (azimuth, elevation)
    }
}

/// JSON form: `{"width","height","fov_y_deg","pose_world_from_camera": [16 row-major], "near","far"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraJson {
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    pub pose_world_from_camera: Vec<f64>,
    pub near: f64,
    pub far: f64,
}

impl TryFrom<CameraJson> for Camera {
    type Error = CameraError;

    fn try_from(j: CameraJson) -> Result<Self, Self::Error> {
        if j.pose_world_from_camera.len() != 16 {
            return Err(CameraError::BadPose);
        }
        let pose = Matrix4::from_row_slice(&j.pose_world_from_camera);
        Camera::new(j.width, j.height, j.fov_y_deg.to_radians(), pose, j.near, j.far)
    }
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        let mut pose = Vec::with_capacity(16);
        for r in 0..4 {
            for col in 0..4 {
                pose.push(c.pose[(r, col)]);
            }
        }
        Self {
            width: c.width,
            height: c.height,
            fov_y_deg: c.fov_y.to_degrees(),
            pose_world_from_camera: pose,
            near: c.near,
            far: c.far,
        }
    }
}

impl Serialize for Camera {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CameraJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Camera {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = CameraJson::deserialize(d)?;
        Camera::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn front(w: usize, h: usize) -> Camera {
        Camera::orbit(0.0, 0.0, 3.0, Vec3::zeros(), w, h, 40f64.to_radians(), 0.1, 10.0).unwrap()
    }

    #[test]
    fn center_ray_is_forward_axis() {
        let c = front(5, 5);
        let r = c.ray(2, 2);
        assert!((r.dir - c.forward()).norm() < 1e-12);
        assert!((c.forward() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn corner_rays_are_symmetric() {
        let c = front(6, 4);
        let a = c.ray(0, 0).dir;
        let b = c.ray(5, 3).dir;
        let f = c.forward();
        assert!((a.dot(&f) - b.dot(&f)).abs() < 1e-12);
        assert!(((a - f * a.dot(&f)) + (b - f * b.dot(&f))).norm() < 1e-12);
    }

    #[test]
    fn rays_are_unit_and_counted() {
        let c = front(4, 4);
        let rays = c.generate_rays(None);
        assert_eq!(rays.len(), 16);
        assert!(rays.iter().all(|r| (r.dir.norm() - 1.0).abs() < 1e-6));
        assert_eq!(c.generate_rays(Some(&[0, 5])).len(), 2);
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let c = front(64, 48);
        let p = c.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((p.uv[0] - 32.0).abs() < 1e-9 && (p.uv[1] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_reported() {
        let c = front(8, 8);
        assert_eq!(c.project(&Vec3::new(0.0, 0.0, 4.0)), Err(BehindCamera));
    }

    #[test]
    fn frustum_corner_projects_to_pixel_zero() {
        let c = front(32, 32);
        // invert the projection of image point (0, 0) at depth 2
        let d = 2.0;
        let q = Vec3::new(-16.0 / c.focal() * d, -16.0 / c.focal() * d, d);
        let p = c.pose().fixed_view::<3, 3>(0, 0) * q + c.eye();
        let pr = c.project(&(p + Vec3::new(1e-9, -1e-9, 0.0))).unwrap();
        assert_eq!(pr.pixel, [0, 0]);
    }

    #[test]
    fn json_round_trip() {
        let c = Camera::orbit(30.0, 20.0, 2.5, Vec3::new(0.1, 0.2, 0.0), 16, 12, 0.7, 0.1, 9.0).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert!((back.pose() - c.pose()).abs().max() < 1e-12);
        assert_eq!(back.width(), 16);
    }

    #[test]
    fn rejects_non_rigid_pose() {
        let mut pose = Matrix4::identity();
        pose[(0, 0)] = 2.0;
        assert!(matches!(Camera::new(4, 4, 1.0, pose, 0.1, 1.0), Err(CameraError::NotRigid(_))));
        assert!(matches!(
            Camera::new(4, 4, 1.0, Matrix4::identity(), 1.0, 0.5),
            Err(CameraError::BadClip(..))
        ));
    }
}
