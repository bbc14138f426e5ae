use crate::error::{Error, Result};
use crate::geometry::Point3;

/// A ring of `views` pinhole cameras at fixed elevation, evenly spaced in
/// azimuth and aimed at the origin. World y is up.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub views: usize,
    pub elevation_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
    pub image_size: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            views: 12,
            elevation_deg: 30.0,
            distance: 2.5,
            fov_deg: 40.0,
            image_size: 64,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.image_size == 0 {
            return Err(Error::Config("camera rig needs at least one view and one pixel".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.distance > 1.0) {
            return Err(Error::Config(format!(
                "camera fov {} must be in (0, 180) and distance {} must exceed the unit sphere",
                self.fov_deg, self.distance
            )));
        }
        if self.elevation_deg.abs() >= 90.0 {
            return Err(Error::Config("camera elevation must be inside (-90, 90)".into()));
        }
        Ok(())
    }

    pub fn azimuth_step_deg(&self) -> f64 {
        360.0 / self.views as f64
    }

    pub fn azimuth_deg(&self, view: usize) -> f64 {
        view as f64 * self.azimuth_step_deg()
    }

    pub fn camera(&self, view: usize) -> Camera {
        Camera::look_at_origin(
            self.azimuth_deg(view),
            self.elevation_deg,
            self.distance,
            self.fov_deg,
            self.image_size,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Camera {
    pub eye: Point3,
    pub right: Point3,
    pub up: Point3,
    /// Unit viewing direction.
    pub forward: Point3,
    /// Focal length in pixels.
    pub focal: f64,
    pub size: usize,
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    /// Eye at `distance * (cos el sin az, sin el, cos el cos az)`.
    pub fn look_at_origin(azimuth_deg: f64, elevation_deg: f64, distance: f64, fov_deg: f64, size: usize) -> Camera {
        let (sa, ca) = azimuth_deg.to_radians().sin_cos();
        let (se, ce) = elevation_deg.to_radians().sin_cos();
        let eye = [distance * ce * sa, distance * se, distance * ce * ca];
        let forward = normalize([-eye[0], -eye[1], -eye[2]]);
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        let focal = size as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        Camera {
            eye,
            right,
            up,
            forward,
            focal,
            size,
        }
    }

    /// Pixel coordinates (x right, y down, origin at the image's top-left
    /// corner) and view depth. `None` behind the near plane.
    pub fn project(&self, p: Point3) -> Option<(f64, f64, f64)> {
        let rel = sub(p, self.eye);
        let z = dot(rel, self.forward);
        if z < 1e-3 {
            return None;
        }
        let half = self.size as f64 / 2.0;
        Some((
            half + self.focal * dot(rel, self.right) / z,
            half - self.focal * dot(rel, self.up) / z,
            z,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_projects_to_image_centre() {
        let rig = CameraRig::default();
        for v in 0..rig.views {
            let (x, y, z) = rig.camera(v).project([0.0; 3]).unwrap();
            assert!((x - 32.0).abs() < 1e-12 && (y - 32.0).abs() < 1e-12);
            assert!((z - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn up_is_up_on_screen() {
        let cam = CameraRig::default().camera(0);
        let (_, y_hi, _) = cam.project([0.0, 0.5, 0.0]).unwrap();
        assert!(y_hi < 32.0);
        let (x_r, _, _) = cam.project([0.5, 0.0, 0.0]).unwrap();
        assert!(x_r > 32.0, "+x appears right from the +z side");
    }

    #[test]
    fn invalid_rigs() {
        let bad = CameraRig { views: 0, ..CameraRig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = CameraRig { fov_deg: 180.0, ..CameraRig::default() };
        assert!(bad.validate().is_err());
    }
}
