//! Z-buffered triangle rasterization at pixel centres.

use crate::geometry::Mesh;

use super::camera::{cross, dot, normalize, sub, Camera};

/// Sentinel for background pixels in a [`FaceBuffer`].
pub const NO_FACE: u32 = u32::MAX;

/// Index of the nearest face at each pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceBuffer {
    pub size: usize,
    pub faces: Vec<u32>,
}

impl FaceBuffer {
    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.faces[y * self.size + x];
        (f != NO_FACE).then_some(f as usize)
    }
}

/// Rasterizes every triangle, keeping the nearest one per pixel. A pixel is
/// covered when its centre lies inside or on the triangle's edges; on equal
/// depth the earlier face wins. Triangles with a vertex behind the camera
/// are skipped.
pub fn rasterize(mesh: &Mesh, cam: &Camera) -> FaceBuffer {
    let n = cam.size;
    let mut inv_depth = vec![0.0f64; n * n];
    let mut faces = vec![NO_FACE; n * n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let Some(p) = project_triangle(mesh, cam, f) else { continue };
        let area = edge(p[0], p[1], p[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let xmin = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
        let xmax = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
        let ymin = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
        let ymax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
        let Some((x0, x1)) = pixel_span(xmin, xmax, n) else { continue };
        let Some((y0, y1)) = pixel_span(ymin, ymax, n) else { continue };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = (x as f64 + 0.5, y as f64 + 0.5, 0.0);
                let w0 = edge(p[1], p[2], c) / area;
                let w1 = edge(p[2], p[0], c) / area;
                let w2 = edge(p[0], p[1], c) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // 1/z is affine in screen space
                let iz = w0 / p[0].2 + w1 / p[1].2 + w2 / p[2].2;
                let i = y * n + x;
                if iz > inv_depth[i] {
                    inv_depth[i] = iz;
                    faces[i] = fi as u32;
                }
            }
        }
    }
    FaceBuffer { size: n, faces }
}

fn project_triangle(mesh: &Mesh, cam: &Camera, f: &[usize; 3]) -> Option<[(f64, f64, f64); 3]> {
    Some([
        cam.project(mesh.vertices[f[0]])?,
        cam.project(mesh.vertices[f[1]])?,
        cam.project(mesh.vertices[f[2]])?,
    ])
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), c: (f64, f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Pixels whose centres can fall in `[lo, hi]`, clipped to the image.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).floor().min(n as f64 - 1.0);
    (a <= b).then(|| (a as usize, b as usize))
}

/// Headlight brightness `|normal · view|` of a face.
pub fn face_brightness(mesh: &Mesh, face: usize, cam: &Camera) -> f64 {
    let [a, b, c] = mesh.faces[face].map(|i| mesh.vertices[i]);
    let n = cross(sub(b, a), sub(c, a));
    if dot(n, n) == 0.0 {
        return 0.0;
    }
    dot(normalize(n), cam.forward).abs()
}
