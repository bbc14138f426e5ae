use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Triangle mesh with one part label per face.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Vec<u32>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>, part_labels: Vec<u32>) -> Result<Self> {
        let m = Mesh {
            vertices,
            faces,
            part_labels,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::Geometry("mesh has no faces".into()));
        }
        if self.part_labels.len() != self.faces.len() {
            return Err(Error::Data(format!(
                "{} part labels for {} faces",
                self.part_labels.len(),
                self.faces.len()
            )));
        }
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Geometry(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    /// Distinct part labels in ascending order.
    pub fn labels(&self) -> Vec<u32> {
        let mut l = self.part_labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Appends another mesh, offsetting its face indices.
    pub fn append(&mut self, other: &Mesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        self.part_labels.extend_from_slice(&other.part_labels);
    }

    /// Rotation about the vertical (y) axis by `degrees`, counter-clockwise
    /// seen from above.
    pub fn rotated_y(&self, degrees: f64) -> Mesh {
        let (s, c) = degrees.to_radians().sin_cos();
        let mut m = self.clone();
        for v in &mut m.vertices {
            let (x, z) = (v[0], v[2]);
            v[0] = c * x + s * z;
            v[2] = -s * x + c * z;
        }
        m
    }
}

/// Axis-aligned box of 8 vertices and 12 outward-facing triangles, all
/// carrying `label`.
pub fn cuboid(center: Point3, size: Point3, label: u32) -> Mesh {
    let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
    let vertices = (0..8)
        .map(|i| {
            [
                center[0] + if i & 1 == 0 { -h[0] } else { h[0] },
                center[1] + if i & 2 == 0 { -h[1] } else { h[1] },
                center[2] + if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    #[rustfmt::skip]
    let faces = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
    ];
    Mesh {
        vertices,
        faces,
        part_labels: vec![label; 12],
    }
}

/// Centers the bounding box at the origin and scales uniformly so the
/// bounding sphere (about the box center) has radius 1.
pub fn normalize_mesh(m: &Mesh) -> Result<Mesh> {
    m.validate()?;
    let (lo, hi) = m.bounds();
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let radius = m
        .vertices
        .iter()
        .map(|v| {
            let d = [v[0] - center[0], v[1] - center[1], v[2] - center[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .fold(0.0, f64::max);
    if !(radius > 1e-12) || !radius.is_finite() {
        return Err(Error::Geometry("mesh has zero extent".into()));
    }
    let mut out = m.clone();
    for v in &mut out.vertices {
        for a in 0..3 {
            v[a] = (v[a] - center[a]) / radius;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_normalizes_to_radius_one() {
        let m = cuboid([3.0, -1.0, 7.5], [1.0, 1.0, 1.0], 0);
        let n = normalize_mesh(&m).unwrap();
        let f = 1.0 / (3f64.sqrt() / 2.0);
        for v in &n.vertices {
            for a in 0..3 {
                assert!((v[a].abs() - 0.5 * f).abs() < 1e-12);
            }
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut m = cuboid([0.2, 0.1, 0.0], [1.0, 2.0, 0.5], 0);
        m.append(&cuboid([1.0, -0.5, 0.3], [0.2, 0.3, 0.4], 1));
        let once = normalize_mesh(&m).unwrap();
        let twice = normalize_mesh(&once).unwrap();
        for (a, b) in once.vertices.iter().zip(&twice.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_vertex_is_degenerate() {
        let m = Mesh::new(vec![[1.0, 2.0, 3.0]; 3], vec![[0, 1, 2]], vec![0]).unwrap();
        assert!(matches!(normalize_mesh(&m), Err(Error::Geometry(_))));
    }

    #[test]
    fn cuboid_faces_point_outward() {
        let m = cuboid([0.0; 3], [2.0, 2.0, 2.0], 0);
        for f in &m.faces {
            let [a, b, c] = f.map(|i| m.vertices[i]);
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let n = [
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0];
            let dot = n[0] * centroid[0] + n[1] * centroid[1] + n[2] * centroid[2];
            assert!(dot > 0.0, "face {f:?} points inward");
        }
    }
}
