use rand::Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

use super::anchors::{encode_bbox, sample_anchors, AnchorLabel};
use super::net::Detector;
use super::roi::roi_pool_graph;

/// `L_sem + lambda * L_reg` over a minibatch of anchors.
///
/// `probs` is `[n, 2]` with the GSP class in column 0 and `reg` is `[n, 4]`.
/// `L_sem` is the mean binary cross-entropy against `positive`. `L_reg`
/// averages the summed per-coordinate L1 (or smooth-L1) distance to
/// `targets` over positive rows, and is 0 without positives. Target rows of
/// negatives are ignored.
pub fn detection_loss(
    g: &mut Graph,
    probs: Var,
    reg: Var,
    positive: &[bool],
    targets: &[[f64; 4]],
    lambda: f64,
    smooth_l1: bool,
) -> Result<Var> {
    let n = positive.len();
    if g.shape(probs) != [n, 2] || g.shape(reg) != [n, 4] || targets.len() != n || n == 0 {
        return Err(Error::dim("detection_loss", g.shape(probs), g.shape(reg)));
    }
    let onehot: Vec<f64> = positive.iter().flat_map(|&p| if p { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
    let onehot = g.constant(Tensor::new(&[n, 2], onehot)?);
    let ce = g.cross_entropy(probs, onehot)?;
    let sem = g.scale(ce, 1.0 / n as f64);
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        // keep the regression head on the tape so it receives a zero gradient
        let zero = g.scale(reg, 0.0);
        let zero = g.sum_all(zero);
        return g.add(sem, zero);
    }
    let mask: Vec<f64> = positive.iter().flat_map(|&p| [f64::from(u8::from(p)); 4]).collect();
    let tgt: Vec<f64> = positive
        .iter()
        .zip(targets)
        .flat_map(|(&p, t)| if p { *t } else { [0.0; 4] })
        .collect();
    let mask = g.constant(Tensor::new(&[n, 4], mask)?);
    let tgt = g.constant(Tensor::new(&[n, 4], tgt)?);
    let diff = g.sub(reg, tgt)?;
    let diff = g.mul(diff, mask)?;
    let dist = if smooth_l1 { g.smooth_l1(diff) } else { g.abs(diff) };
    let dist = g.sum_all(dist);
    let reg_loss = g.scale(dist, lambda / n_pos as f64);
    g.add(sem, reg_loss)
}

/// Per-view anchor labels and regression targets of one shape.
#[derive(Clone, Debug)]
pub struct ViewTargets {
    pub labels: Vec<AnchorLabel>,
    /// Encoded target of each anchor's matched box; zeros for negatives.
    pub targets: Vec<[f64; 4]>,
}

impl ViewTargets {
    pub fn new(det: &Detector, gt: &[BBox]) -> Result<Self> {
        let labels = super::anchors::assign_labels(&det.anchors, gt, det.cfg.s_d);
        let targets = labels
            .iter()
            .zip(&det.anchors)
            .map(|(l, a)| match l {
                AnchorLabel::Positive(j) => encode_bbox(a, &gt[*j]),
                AnchorLabel::Negative => Ok([0.0; 4]),
            })
            .collect::<Result<_>>()?;
        Ok(ViewTargets { labels, targets })
    }
}

/// Detection loss of one shape: anchors are sampled per view, pooled from
/// that view's feature map, and scored together as one minibatch.
pub fn shape_detection_loss<R: Rng>(
    det: &Detector,
    g: &mut Graph,
    store: &ParamStore,
    views: &[Tensor],
    targets: &[ViewTargets],
    rng: &mut R,
) -> Result<Var> {
    if views.len() != targets.len() || views.is_empty() {
        return Err(Error::Contract(format!("{} views but {} target sets", views.len(), targets.len())));
    }
    let mut pooled = Vec::with_capacity(views.len());
    let mut positive = Vec::new();
    let mut tgt = Vec::new();
    for (img, vt) in views.iter().zip(targets) {
        let picked = sample_anchors(&vt.labels, det.cfg.anchors_per_view, rng);
        let x = g.constant(img.clone());
        let fm = det.backbone(g, store, x)?;
        let cells: Vec<_> = picked.iter().map(|&i| det.anchor_cells[i]).collect();
        pooled.push(roi_pool_graph(g, fm, &cells)?);
        positive.extend(picked.iter().map(|&i| vt.labels[i].is_positive()));
        tgt.extend(picked.iter().map(|&i| vt.targets[i]));
    }
    let n = positive.len();
    let rois = g.stack(&pooled)?;
    let rois = g.reshape(rois, &[n, det.channels, super::roi::ROI_BINS * super::roi::ROI_BINS])?;
    let (probs, reg) = det.heads(g, store, rois)?;
    detection_loss(g, probs, reg, &positive, &tgt, det.cfg.lambda, det.cfg.smooth_l1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_value(p: &[f64], pos: &[bool], t: &[[f64; 4]], ts: &[[f64; 4]], lambda: f64) -> f64 {
        let n = pos.len();
        let mut g = Graph::new();
        let probs: Vec<f64> = p.iter().flat_map(|&q| [q, 1.0 - q]).collect();
        let probs = g.variable(Tensor::new(&[n, 2], probs).unwrap());
        let reg = g.variable(Tensor::new(&[n, 4], t.concat()).unwrap());
        let l = detection_loss(&mut g, probs, reg, pos, ts, lambda, false).unwrap();
        g.value(l).item()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let t = [[0.1, -0.2, 0.3, 0.0], [0.0; 4]];
        assert_eq!(loss_value(&[1.0, 0.0], &[true, false], &t, &t, 1.0), 0.0);
    }

    #[test]
    fn half_scores_give_ln2() {
        let z = [[0.0; 4]; 3];
        let l = loss_value(&[0.5; 3], &[true, false, false], &z, &z, 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula() {
        let p = [0.9, 0.2, 0.6, 0.35];
        let pos = [true, false, true, false];
        let t = [[0.1, 0.2, -0.3, 0.4], [1.0; 4], [0.0, -0.5, 0.25, 0.1], [2.0; 4]];
        let ts = [[0.0, 0.3, -0.1, 0.4], [9.0; 4], [0.2, -0.5, 0.0, -0.1], [9.0; 4]];
        let sem: f64 = p
            .iter()
            .zip(&pos)
            .map(|(&q, &y): (&f64, &bool)| if y { -q.ln() } else { -(1.0 - q).ln() })
            .sum::<f64>()
            / 4.0;
        let l1 = |a: &[f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let reg = (l1(&t[0], &ts[0]) + l1(&t[2], &ts[2])) / 2.0;
        let got = loss_value(&p, &pos, &t, &ts, 0.5);
        assert!((got - (sem + 0.5 * reg)).abs() < 1e-12);
    }

    #[test]
    fn no_positives_means_no_regression_term() {
        let t = [[5.0; 4]; 2];
        let l = loss_value(&[0.3, 0.3], &[false, false], &t, &[[0.0; 4]; 2], 1.0);
        assert!((l - -(0.7f64).ln()).abs() < 1e-15);
    }
}
