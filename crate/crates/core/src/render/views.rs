use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::tensor::Tensor;

use super::camera::CameraRig;
use super::image::{Rgb, RgbImage, WHITE};
use super::raster::{face_brightness, rasterize};

/// The ordered view sequence of one shape, one image per rig azimuth.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub images: Vec<RgbImage>,
    pub rig: CameraRig,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One 3×S×S tensor per view.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.images.iter().map(RgbImage::to_tensor).collect()
    }
}

pub const PALETTE_SIZE: usize = 64;

const LEVELS: [u8; 4] = [0, 80, 160, 240];

/// Flat colour of part label `label`: the label's base-4 digits pick the
/// red, green and blue levels. No entry is white.
pub fn palette_color(label: u32) -> Option<Rgb> {
    let i = label as usize;
    (i < PALETTE_SIZE).then(|| [LEVELS[(i >> 4) & 3], LEVELS[(i >> 2) & 3], LEVELS[i & 3]])
}

/// Inverse of [`palette_color`].
pub fn palette_label(c: Rgb) -> Option<u32> {
    let level = |v: u8| LEVELS.iter().position(|&l| l == v);
    Some(((level(c[0])? << 4) | (level(c[1])? << 2) | level(c[2])?) as u32)
}

fn check_renderable(m: &Mesh, rig: &CameraRig) -> Result<()> {
    rig.validate()?;
    m.validate()?;
    let (lo, hi) = m.bounds();
    if (0..3).all(|a| hi[a] - lo[a] <= 1e-12) {
        return Err(Error::Geometry("mesh bounding box is a point".into()));
    }
    Ok(())
}

/// Flat-shaded grey renders replicated to three channels on a white
/// background. Grey levels are 8-bit, so images survive PPM exactly.
pub fn render_views(m: &Mesh, rig: &CameraRig) -> Result<ViewSet> {
    check_renderable(m, rig)?;
    let images = (0..rig.views)
        .map(|v| {
            let cam = rig.camera(v);
            let fb = rasterize(m, &cam);
            let mut shade = vec![None; m.faces.len()];
            let pixels = fb
                .faces
                .iter()
                .map(|&f| {
                    if f == super::raster::NO_FACE {
                        return WHITE;
                    }
                    let g = *shade[f as usize]
                        .get_or_insert_with(|| (face_brightness(m, f as usize, &cam) * 255.0).round() as u8);
                    [g, g, g]
                })
                .collect();
            RgbImage {
                width: rig.image_size,
                height: rig.image_size,
                pixels,
            }
        })
        .collect();
    Ok(ViewSet {
        images,
        rig: rig.clone(),
    })
}

/// Renders each part label in its palette colour without shading, sharing
/// one z-buffer across parts.
pub fn render_part_colored(m: &Mesh, rig: &CameraRig) -> Result<ViewSet> {
    check_renderable(m, rig)?;
    if let Some(&bad) = m.part_labels.iter().find(|&&l| palette_color(l).is_none()) {
        return Err(Error::Config(format!(
            "part label {bad} exceeds the {PALETTE_SIZE}-entry colour palette"
        )));
    }
    let images = (0..rig.views)
        .map(|v| {
            let fb = rasterize(m, &rig.camera(v));
            let pixels = fb
                .faces
                .iter()
                .map(|&f| {
                    if f == super::raster::NO_FACE {
                        WHITE
                    } else {
                        palette_color(m.part_labels[f as usize]).expect("checked above")
                    }
                })
                .collect();
            RgbImage {
                width: rig.image_size,
                height: rig.image_size,
                pixels,
            }
        })
        .collect();
    Ok(ViewSet {
        images,
        rig: rig.clone(),
    })
}
