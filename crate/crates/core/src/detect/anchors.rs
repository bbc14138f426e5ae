use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};

/// Aspect ratio `a:b`, meaning width/height = a/b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub a: f64,
    pub b: f64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.a / self.b
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("anchor ratio `{s}` is not of the form a:b with positive a, b"));
        let (a, b) = s.trim().split_once(':').ok_or_else(bad)?;
        let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(bad());
        }
        Ok(Ratio { a, b })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.a, self.b)
    }
}

/// Reference box centred on a feature-map cell, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    /// The anchor as a box; it may extend past the image.
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h).expect("anchors have positive size")
    }
}

/// One anchor per (cell, scale, ratio), ordered by row, column, scale and
/// then ratio. The base side of scale `s` is `s * stride`.
pub fn generate_anchors(s: usize, scales: &[f64], ratios: &[Ratio], stride: f64) -> Vec<Anchor> {
    let mut out = Vec::with_capacity(s * s * scales.len() * ratios.len());
    for y in 0..s {
        for x in 0..s {
            for &scale in scales {
                for r in ratios {
                    let base = scale * stride;
                    let q = r.value().sqrt();
                    out.push(Anchor {
                        cx: (x as f64 + 0.5) * stride,
                        cy: (y as f64 + 0.5) * stride,
                        w: base * q,
                        h: base / q,
                    });
                }
            }
        }
    }
    out
}

/// Regression target `(dx/w, dy/h, ln(gw/w), ln(gh/h))` of `gt` relative to
/// `anchor`.
pub fn encode_bbox(anchor: &Anchor, gt: &BBox) -> Result<[f64; 4]> {
    let (gw, gh) = (gt.width(), gt.height());
    if !(gw > 0.0 && gh > 0.0 && anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::Geometry(format!("cannot encode {gt:?} against {anchor:?}")));
    }
    let (gx, gy) = gt.center();
    Ok([
        (gx - anchor.cx) / anchor.w,
        (gy - anchor.cy) / anchor.h,
        (gw / anchor.w).ln(),
        (gh / anchor.h).ln(),
    ])
}

/// Log-size deltas are clamped to this magnitude before exponentiation.
const MAX_LOG_DELTA: f64 = 10.0;

/// Inverse of [`encode_bbox`], without clipping.
pub fn decode_unclipped(anchor: &Anchor, t: &[f64; 4]) -> Result<BBox> {
    let w = anchor.w * t[2].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp();
    let h = anchor.h * t[3].clamp(-MAX_LOG_DELTA, MAX_LOG_DELTA).exp();
    BBox::from_center(anchor.cx + t[0] * anchor.w, anchor.cy + t[1] * anchor.h, w, h)
}

/// Decoded box clipped to the `size`×`size` image; `None` when nothing of
/// it lies inside.
pub fn decode_bbox(anchor: &Anchor, t: &[f64; 4], size: f64) -> Option<BBox> {
    decode_unclipped(anchor, t).ok()?.clip(size)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
}

impl AnchorLabel {
    pub fn is_positive(self) -> bool {
        matches!(self, AnchorLabel::Positive(_))
    }
}

/// An anchor is positive when its best IoU with any ground-truth box exceeds
/// `s_d`. Each ground-truth box also claims its single best anchor (lowest
/// index on ties) provided they overlap at all.
pub fn assign_labels(anchors: &[Anchor], gt: &[BBox], s_d: f64) -> Vec<AnchorLabel> {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gt.is_empty() {
        return labels;
    }
    let mut best_for_gt = vec![(0.0f64, usize::MAX); gt.len()];
    for (i, a) in anchors.iter().enumerate() {
        let ab = a.bbox();
        let mut best = (0.0f64, 0usize);
        for (j, g) in gt.iter().enumerate() {
            let v = iou(&ab, g);
            if v > best.0 {
                best = (v, j);
            }
            if v > best_for_gt[j].0 {
                best_for_gt[j] = (v, i);
            }
        }
        if best.0 > s_d {
            labels[i] = AnchorLabel::Positive(best.1);
        }
    }
    for (j, &(v, i)) in best_for_gt.iter().enumerate() {
        if v > 0.0 && !labels[i].is_positive() {
            labels[i] = AnchorLabel::Positive(j);
        }
    }
    labels
}

/// Up to `per_view` anchor indices, at most `per_view / 2` of them positive,
/// drawn uniformly without replacement and returned in ascending order.
pub fn sample_anchors<R: Rng>(labels: &[AnchorLabel], per_view: usize, rng: &mut R) -> Vec<usize> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i].is_positive());
    let n_pos = pos.len().min(per_view / 2);
    let n_neg = neg.len().min(per_view - n_pos);
    let mut out: Vec<usize> = sample(rng, pos.len(), n_pos).into_iter().map(|i| pos[i]).collect();
    out.extend(sample(rng, neg.len(), n_neg).into_iter().map(|i| neg[i]));
    out.sort_unstable();
    out
}
