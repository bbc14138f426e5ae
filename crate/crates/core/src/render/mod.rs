//! Multi-view rendering and ground-truth part boxes.

mod camera;
pub mod gsp;
pub mod image;
pub mod raster;
mod views;

pub use camera::{Camera, CameraRig};
pub use gsp::{
    build_gsp_ground_truth, clean_small_parts, extract_part_bboxes, gsp_boxes, gt_path, read_gt_csv, CLEAN_RATIO,
};
pub use image::{GrayImage, Rgb, RgbImage, WHITE};
pub use raster::{rasterize, FaceBuffer};
pub use views::{palette_color, palette_label, render_part_colored, render_views, ViewSet, PALETTE_SIZE};
