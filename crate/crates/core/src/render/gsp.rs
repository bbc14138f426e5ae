//! Ground-truth part boxes from part-coloured renders.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::geometry::{normalize_mesh, part_category, Dataset, Mesh};

use super::camera::CameraRig;
use super::image::{RgbImage, WHITE};
use super::views::{palette_label, render_part_colored};

/// Boxes below this fraction of the largest same-category box in a view are
/// dropped.
pub const CLEAN_RATIO: f64 = 0.45;

/// Tight box around each palette colour present, ordered by label.
pub fn extract_part_bboxes(img: &RgbImage) -> Result<Vec<(u32, BBox)>> {
    let mut spans: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
    for y in 0..img.height {
        for x in 0..img.width {
            let c = img.get(x, y);
            if c == WHITE {
                continue;
            }
            let label = palette_label(c)
                .ok_or_else(|| Error::Data(format!("pixel ({x}, {y}) has off-palette colour {c:?}")))?;
            let s = spans.entry(label).or_insert([x, y, x, y]);
            s[0] = s[0].min(x);
            s[1] = s[1].min(y);
            s[2] = s[2].max(x);
            s[3] = s[3].max(y);
        }
    }
    Ok(spans
        .into_iter()
        .map(|(l, [x0, y0, x1, y1])| {
            let b = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).expect("non-empty span");
            (l, b)
        })
        .collect())
}

/// Drops each box whose area is below [`CLEAN_RATIO`] times the largest
/// area among boxes of the same part category.
pub fn clean_small_parts(boxes: &[(u32, BBox)]) -> Vec<(u32, BBox)> {
    let mut max_area: BTreeMap<u32, f64> = BTreeMap::new();
    for (l, b) in boxes {
        let m = max_area.entry(part_category(*l)).or_insert(0.0);
        *m = m.max(b.area());
    }
    boxes
        .iter()
        .filter(|(l, b)| b.area() >= CLEAN_RATIO * max_area[&part_category(*l)])
        .copied()
        .collect()
}

/// Cleaned ground-truth boxes of one normalized shape, per view.
pub fn gsp_boxes(m: &Mesh, rig: &CameraRig) -> Result<Vec<Vec<BBox>>> {
    render_part_colored(m, rig)?
        .images
        .iter()
        .map(|img| Ok(clean_small_parts(&extract_part_bboxes(img)?).into_iter().map(|(_, b)| b).collect()))
        .collect()
}

pub fn gt_csv_string(per_view: &[Vec<BBox>]) -> String {
    let mut s = String::from("view_index,x_min,y_min,x_max,y_max\n");
    for (v, boxes) in per_view.iter().enumerate() {
        for b in boxes {
            writeln!(s, "{v},{},{},{},{}", b.x_min, b.y_min, b.x_max, b.y_max).unwrap();
        }
    }
    s
}

/// Reads a ground-truth CSV back into per-view box lists.
pub fn read_gt_csv(path: &Path, views: usize) -> Result<Vec<Vec<BBox>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![Vec::new(); views];
    for (i, line) in text.lines().enumerate().skip(1) {
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(perr(format!("expected 5 fields, found {}", f.len())));
        }
        let v: usize = f[0].parse().map_err(|_| perr(format!("bad view index `{}`", f[0])))?;
        if v >= views {
            return Err(perr(format!("view {v} out of range for {views} views")));
        }
        let mut c = [0.0; 4];
        for (dst, s) in c.iter_mut().zip(&f[1..]) {
            *dst = s.parse().map_err(|_| perr(format!("bad coordinate `{s}`")))?;
        }
        out[v].push(BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}

/// Location of a shape's ground-truth CSV under `out_dir`.
pub fn gt_path(out_dir: &Path, shape_id: &str) -> PathBuf {
    out_dir.join(format!("{shape_id}.csv"))
}

/// Writes one ground-truth CSV per shape of both splits. Returns the number
/// of files written.
pub fn build_gsp_ground_truth(dataset: &Dataset, rig: &CameraRig, out_dir: &Path) -> Result<usize> {
    let mut n = 0;
    for entry in dataset.all() {
        let mesh = normalize_mesh(&entry.load_mesh()?)?;
        let boxes = gsp_boxes(&mesh, rig)?;
        let path = gt_path(out_dir, &entry.id);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, gt_csv_string(&boxes)).map_err(|e| Error::io(&path, e))?;
        n += 1;
    }
    Ok(n)
}
