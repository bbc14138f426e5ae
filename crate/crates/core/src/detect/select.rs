use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::render::RgbImage;

use super::net::Proposal;

/// Score descending, then anchor index ascending.
fn rank(a: &Proposal, b: &Proposal) -> Ordering {
    b.score.total_cmp(&a.score).then(a.anchor_index.cmp(&b.anchor_index))
}

/// Proposals of one view in rank order.
pub fn ranked(proposals: &[Proposal]) -> Vec<Proposal> {
    let mut v = proposals.to_vec();
    v.sort_by(rank);
    v
}

/// Greedy non-maximum suppression over ranked proposals.
pub fn nms(ranked: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let mut kept: Vec<Proposal> = Vec::new();
    for p in ranked {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= threshold) {
            kept.push(*p);
        }
    }
    kept
}

/// The `k` best proposals; when fewer exist the best one is repeated to
/// fill the list.
pub fn select_top_k(proposals: &[Proposal], k: usize, nms_threshold: Option<f64>) -> Result<Vec<Proposal>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut r = ranked(proposals);
    if let Some(t) = nms_threshold {
        r = nms(&r, t);
    }
    let best = *r
        .first()
        .ok_or_else(|| Error::Detection("view has no valid proposals".into()))?;
    r.truncate(k);
    r.resize(k, best);
    Ok(r)
}

/// Fraction of ground-truth boxes matched at IoU ≥ `threshold` by one of
/// the `top_n` best proposals of their view. Returns (matched, total).
pub fn recall_counts(proposals: &[Proposal], gt: &[BBox], top_n: usize, threshold: f64) -> (usize, usize) {
    let top: Vec<Proposal> = ranked(proposals).into_iter().take(top_n).collect();
    let hit = gt
        .iter()
        .filter(|g| top.iter().any(|p| iou(&p.bbox, g) >= threshold))
        .count();
    (hit, gt.len())
}

/// CSV rows `shape_id,view_index,score,x_min,y_min,x_max,y_max`.
pub fn detections_csv(rows: &[(String, Proposal)]) -> String {
    let mut s = String::from("shape_id,view_index,score,x_min,y_min,x_max,y_max\n");
    for (id, p) in rows {
        let b = p.bbox;
        writeln!(s, "{id},{},{},{},{},{},{}", p.view, p.score, b.x_min, b.y_min, b.x_max, b.y_max).unwrap();
    }
    s
}

/// Score above which a detection is drawn.
pub const DRAW_THRESHOLD: f64 = 0.8;

/// Draws red outlines of the proposals scoring above [`DRAW_THRESHOLD`].
/// Returns how many were drawn.
pub fn draw_detections(img: &mut RgbImage, proposals: &[Proposal]) -> usize {
    let mut n = 0;
    for p in proposals.iter().filter(|p| p.score > DRAW_THRESHOLD) {
        let b = p.bbox;
        img.draw_rect(
            b.x_min.floor() as usize,
            b.y_min.floor() as usize,
            b.x_max.ceil() as usize,
            b.y_max.ceil() as usize,
            [255, 0, 0],
        );
        n += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: usize, score: f64) -> Proposal {
        let x = i as f64;
        Proposal {
            view: 0,
            anchor_index: i,
            score,
            t: [0.0; 4],
            bbox: BBox::new(x, 0.0, x + 4.0, 4.0).unwrap(),
        }
    }

    #[test]
    fn top_k_examples() {
        let ps = [p(0, 0.9), p(1, 0.8), p(2, 0.7)];
        let two = select_top_k(&ps, 2, None).unwrap();
        assert_eq!(two.iter().map(|q| q.anchor_index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(select_top_k(&ps, 1, None).unwrap()[0].anchor_index, 0);
        let padded = select_top_k(&ps[1..], 4, None).unwrap();
        assert_eq!(padded.iter().map(|q| q.anchor_index).collect::<Vec<_>>(), vec![1, 2, 1, 1]);
        assert!(matches!(select_top_k(&[], 3, None), Err(Error::Detection(_))));
    }

    #[test]
    fn ties_prefer_lower_anchor_and_ignore_input_order() {
        let a = [p(5, 0.5), p(2, 0.5), p(9, 0.7), p(1, 0.1)];
        let mut b = a;
        b.reverse();
        let ka = select_top_k(&a, 3, None).unwrap();
        assert_eq!(ka, select_top_k(&b, 3, None).unwrap());
        assert_eq!(ka.iter().map(|q| q.anchor_index).collect::<Vec<_>>(), vec![9, 2, 5]);
    }

    #[test]
    fn nms_drops_overlaps() {
        let ps = [p(0, 0.9), p(1, 0.8), p(10, 0.7)];
        let kept = select_top_k(&ps, 2, Some(0.5)).unwrap();
        assert_eq!(kept.iter().map(|q| q.anchor_index).collect::<Vec<_>>(), vec![0, 10]);
    }

    #[test]
    fn recall_uses_only_top_n() {
        let ps = [p(0, 0.9), p(20, 0.1)];
        let gt = [BBox::new(20.0, 0.0, 24.0, 4.0).unwrap(), BBox::new(0.0, 0.0, 4.0, 4.0).unwrap()];
        assert_eq!(recall_counts(&ps, &gt, 1, 0.5), (1, 2));
        assert_eq!(recall_counts(&ps, &gt, 2, 0.5), (2, 2));
    }

    #[test]
    fn draws_only_confident_boxes() {
        let mut img = RgbImage::filled(16, 16, crate::render::WHITE);
        assert_eq!(draw_detections(&mut img, &[p(0, 0.81), p(1, 0.8)]), 1);
        assert_eq!(img.get(0, 0), [255, 0, 0]);
        assert_eq!(img.get(2, 2), crate::render::WHITE);
    }
}
