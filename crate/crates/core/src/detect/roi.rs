use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var, Window};

/// Output side of RoI pooling.
pub const ROI_BINS: usize = 7;

/// Feature-map cells `[y0, y1) × [x0, x1)` touched by a pixel box: edges
/// map through `floor(min / stride)` and `ceil(max / stride)`, clamped to
/// the map.
pub fn box_cells(b: &BBox, stride: f64, s: usize) -> Result<Window> {
    let lo = |v: f64| ((v / stride).floor().max(0.0) as usize).min(s);
    let hi = |v: f64| ((v / stride).ceil().max(0.0) as usize).min(s);
    let w = Window {
        y0: lo(b.y_min),
        y1: hi(b.y_max),
        x0: lo(b.x_min),
        x1: hi(b.x_max),
    };
    if w.y0 >= w.y1 || w.x0 >= w.x1 {
        return Err(Error::Geometry(format!("box {b:?} covers no feature cell")));
    }
    Ok(w)
}

/// The `ROI_BINS`² sub-windows of a cell window, row-major. Bin `i` of a
/// span of length `n` covers `[floor(i n / 7), ceil((i + 1) n / 7))`, so
/// every bin holds at least one cell.
pub fn roi_windows(cells: Window) -> [Window; ROI_BINS * ROI_BINS] {
    let split = |lo: usize, hi: usize, i: usize| {
        let n = hi - lo;
        (lo + i * n / ROI_BINS, lo + ((i + 1) * n).div_ceil(ROI_BINS))
    };
    std::array::from_fn(|k| {
        let (by, bx) = (k / ROI_BINS, k % ROI_BINS);
        let (y0, y1) = split(cells.y0, cells.y1, by);
        let (x0, x1) = split(cells.x0, cells.x1, bx);
        Window { y0, y1, x0, x1 }
    })
}

/// RoI max-pooling of `fm` (C×S×S) over each box: `[boxes, C, 7·7]`.
pub fn roi_pool_graph(g: &mut Graph, fm: Var, boxes: &[Window]) -> Result<Var> {
    let windows: Vec<Window> = boxes.iter().flat_map(|&c| roi_windows(c)).collect();
    g.window_max(fm, &windows, ROI_BINS * ROI_BINS)
}

/// RoI pooling of a single box into a C×7×7 tensor.
pub fn roi_pool(fm: &Tensor, b: &BBox, stride: f64) -> Result<Tensor> {
    let s = fm.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::Shape(format!("feature map must be C×S×S, got {s:?}")));
    }
    let cells = box_cells(b, stride, s[1])?;
    let mut g = Graph::new();
    let x = g.constant(fm.clone());
    let y = roi_pool_graph(&mut g, x, &[cells])?;
    g.value(y).clone().reshape(&[s[0], ROI_BINS, ROI_BINS])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_seven_map_is_identity() {
        let data: Vec<f64> = (0..2 * 49).map(|i| i as f64 * 0.5 - 7.0).collect();
        let fm = Tensor::new(&[2, 7, 7], data).unwrap();
        let out = roi_pool(&fm, &BBox::new(0.0, 0.0, 7.0, 7.0).unwrap(), 1.0).unwrap();
        assert_eq!(out, fm);
    }

    #[test]
    fn constant_map_gives_constant_output() {
        let fm = Tensor::full(&[3, 8, 8], 2.5);
        let out = roi_pool(&fm, &BBox::new(3.0, 9.0, 30.0, 20.0).unwrap(), 8.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));
        assert_eq!(out.shape(), &[3, 7, 7]);
    }

    #[test]
    fn cell_mapping() {
        let w = box_cells(&BBox::new(7.9, 8.0, 8.1, 64.0).unwrap(), 8.0, 8).unwrap();
        assert_eq!(w, Window { y0: 1, y1: 8, x0: 0, x1: 2 });
        let outside = BBox::new(70.0, 0.0, 80.0, 5.0).unwrap();
        assert!(matches!(box_cells(&outside, 8.0, 8), Err(Error::Geometry(_))));
    }

    #[test]
    fn bins_cover_span_and_are_nonempty() {
        for n in 1..20 {
            let bins = roi_windows(Window { y0: 2, y1: 2 + n, x0: 0, x1: n });
            for b in &bins {
                assert!(b.y0 < b.y1 && b.x0 < b.x1 && b.y1 <= 2 + n);
            }
            assert_eq!((bins[0].y0, bins[48].y1), (2, 2 + n));
        }
    }
}
