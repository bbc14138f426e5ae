use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var, Window};

use super::anchors::{decode_bbox, generate_anchors, Anchor, Ratio};
use super::roi::{box_cells, roi_pool_graph, roi_windows, ROI_BINS};
use crate::tensor::kernels::gemm;

/// Prefix of every detector parameter name.
pub const DET_PREFIX: &str = "det.";

/// One backbone stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// 3×3 convolution, padding 1, then relu.
    Conv(usize),
    /// 3×3 convolution without padding, then relu.
    ValidConv(usize),
    /// 2×2 max-pool, stride 2.
    Pool,
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let channels = |rest: &str| {
            rest.parse::<usize>()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::Config(format!("bad backbone layer `{s}`")))
        };
        if s == "pool" {
            Ok(Layer::Pool)
        } else if let Some(rest) = s.strip_prefix("vconv") {
            Ok(Layer::ValidConv(channels(rest)?))
        } else if let Some(rest) = s.strip_prefix("conv") {
            Ok(Layer::Conv(channels(rest)?))
        } else {
            Err(Error::Config(format!("bad backbone layer `{s}` (expected convN, vconvN or pool)")))
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv(c) => write!(f, "conv{c}"),
            Layer::ValidConv(c) => write!(f, "vconv{c}"),
            Layer::Pool => f.write_str("pool"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub layers: Vec<Layer>,
    pub scales: Vec<f64>,
    pub ratios: Vec<Ratio>,
    pub s_d: f64,
    pub lambda: f64,
    pub smooth_l1: bool,
    pub head_hidden: usize,
    pub anchors_per_view: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 64,
            layers: vec![Layer::Conv(16), Layer::Pool, Layer::Conv(32), Layer::Pool, Layer::Conv(64), Layer::Pool],
            scales: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            ratios: ["1:1", "1:2", "2:1"].iter().map(|r| r.parse().expect("literal")).collect(),
            s_d: 0.7,
            lambda: 1.0,
            smooth_l1: false,
            head_hidden: 512,
            anchors_per_view: 64,
        }
    }
}

/// A scored, regressed anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub view: usize,
    pub anchor_index: usize,
    /// Probability of the GSP class.
    pub score: f64,
    pub t: [f64; 4],
    /// Decoded box clipped to the image.
    pub bbox: BBox,
}

/// Backbone geometry and the anchor grid derived from a [`DetectorConfig`].
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    /// Side S of the feature map.
    pub fm_size: usize,
    pub channels: usize,
    /// Image pixels per feature cell.
    pub stride: f64,
    pub anchors: Vec<Anchor>,
    /// Feature cells under each anchor.
    pub anchor_cells: Vec<Window>,
    pub unique_cells: Vec<Window>,
    anchor_to_unique: Vec<usize>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        if cfg.scales.is_empty() || cfg.ratios.is_empty() || cfg.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("anchor scales and ratios must be nonempty and positive".into()));
        }
        if !(cfg.s_d > 0.0 && cfg.s_d < 1.0) || !(cfg.lambda >= 0.0) {
            return Err(Error::Config(format!("need 0 < s_d < 1 and lambda >= 0, got {} and {}", cfg.s_d, cfg.lambda)));
        }
        if cfg.head_hidden == 0 || cfg.anchors_per_view < 2 {
            return Err(Error::Config("head width must be positive and at least 2 anchors sampled per view".into()));
        }
        let (mut size, mut channels) = (cfg.image_size, 3);
        for l in &cfg.layers {
            match *l {
                Layer::Conv(c) => channels = c,
                Layer::ValidConv(c) => {
                    if size < 3 {
                        return Err(Error::Config(format!("valid convolution on a {size}-pixel map")));
                    }
                    size -= 2;
                    channels = c;
                }
                Layer::Pool => {
                    if size % 2 != 0 || size == 0 {
                        return Err(Error::Config(format!(
                            "image size {} is not divisible by the backbone stride",
                            cfg.image_size
                        )));
                    }
                    size /= 2;
                }
            }
        }
        if channels == 3 && !cfg.layers.iter().any(|l| *l != Layer::Pool) {
            return Err(Error::Config("backbone needs at least one convolution".into()));
        }
        if size == 0 {
            return Err(Error::Config("backbone reduces the image to nothing".into()));
        }
        let stride = cfg.image_size as f64 / size as f64;
        let anchors = generate_anchors(size, &cfg.scales, &cfg.ratios, stride);
        let anchor_cells = anchors
            .iter()
            .map(|a| box_cells(&a.bbox(), stride, size))
            .collect::<Result<Vec<_>>>()?;
        let mut unique_cells: Vec<Window> = Vec::new();
        let mut lookup = std::collections::HashMap::new();
        let anchor_to_unique = anchor_cells
            .iter()
            .map(|w| {
                *lookup.entry((w.y0, w.y1, w.x0, w.x1)).or_insert_with(|| {
                    unique_cells.push(*w);
                    unique_cells.len() - 1
                })
            })
            .collect();
        Ok(Detector {
            cfg,
            fm_size: size,
            channels,
            stride,
            anchors,
            anchor_cells,
            unique_cells,
            anchor_to_unique,
        })
    }

    /// Adds freshly initialised detector parameters: relu layers draw from
    /// U[±√(6/fan_in)], output layers from U[±1/√fan_in]; biases start at 0.
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let mut uniform = |shape: &[usize], bound: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("shape")
        };
        let mut c_in = 3;
        for (i, l) in self.cfg.layers.iter().enumerate() {
            if let Layer::Conv(c) | Layer::ValidConv(c) = *l {
                let fan_in = (c_in * 9) as f64;
                store.insert(format!("det.conv{i}.w"), uniform(&[c, c_in, 3, 3], (6.0 / fan_in).sqrt()));
                store.insert(format!("det.conv{i}.b"), Tensor::zeros(&[c]));
                c_in = c;
            }
        }
        let (d, h) = (self.channels * ROI_BINS * ROI_BINS, self.cfg.head_hidden);
        store.insert("det.fc1.w", uniform(&[d, h], (6.0 / d as f64).sqrt()));
        store.insert("det.fc1.b", Tensor::zeros(&[h]));
        store.insert("det.fc2.w", uniform(&[h, h], (6.0 / h as f64).sqrt()));
        store.insert("det.fc2.b", Tensor::zeros(&[h]));
        store.insert("det.score.w", uniform(&[h, 2], 1.0 / (h as f64).sqrt()));
        store.insert("det.score.b", Tensor::zeros(&[2]));
        store.insert("det.reg.w", uniform(&[h, 4], 1.0 / (h as f64).sqrt()));
        store.insert("det.reg.b", Tensor::zeros(&[4]));
    }

    /// Feature map C×S×S of one 3×size×size view.
    pub fn backbone(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        let n = self.cfg.image_size;
        if g.shape(image) != [3, n, n] {
            return Err(Error::dim("backbone input", g.shape(image), &[3, n, n]));
        }
        let mut x = image;
        for (i, l) in self.cfg.layers.iter().enumerate() {
            x = match *l {
                Layer::Conv(_) | Layer::ValidConv(_) => {
                    let w = g.param(store, &format!("det.conv{i}.w"))?;
                    let b = g.param(store, &format!("det.conv{i}.b"))?;
                    let pad = usize::from(matches!(l, Layer::Conv(_)));
                    let y = g.conv2d(x, w, 1, pad)?;
                    let y = g.add_bias(y, b, 0)?;
                    g.relu(y)
                }
                Layer::Pool => g.max_pool2d(x, 2, 2)?,
            };
        }
        Ok(x)
    }

    /// Score probabilities `[n, 2]` (column 0 is the GSP class) and
    /// regression outputs `[n, 4]` for RoI features `[n, C, 49]`.
    pub fn heads(&self, g: &mut Graph, store: &ParamStore, rois: Var) -> Result<(Var, Var)> {
        let n = g.shape(rois)[0];
        let x = g.reshape(rois, &[n, self.channels * ROI_BINS * ROI_BINS])?;
        let mut h = x;
        for layer in ["fc1", "fc2"] {
            let w = g.param(store, &format!("det.{layer}.w"))?;
            let b = g.param(store, &format!("det.{layer}.b"))?;
            let y = g.matmul(h, w)?;
            let y = g.add_bias(y, b, 1)?;
            h = g.relu(y);
        }
        let (sw, sb) = (g.param(store, "det.score.w")?, g.param(store, "det.score.b")?);
        let logits = g.matmul(h, sw)?;
        let logits = g.add_bias(logits, sb, 1)?;
        let probs = g.softmax(logits, 1)?;
        let (rw, rb) = (g.param(store, "det.reg.w")?, g.param(store, "det.reg.b")?);
        let reg = g.matmul(h, rw)?;
        let reg = g.add_bias(reg, rb, 1)?;
        Ok((probs, reg))
    }

    /// Feature map of one view, without recording gradients.
    pub fn feature_map(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let fm = self.backbone(&mut g, store, x)?;
        Ok(g.value(fm).clone())
    }

    /// Head outputs (GSP probability, regression) for RoI windows of a
    /// fixed feature map. Same arithmetic as [`Detector::heads`] but with
    /// no tape, in small reusable buffers.
    pub fn score_cells(&self, store: &ParamStore, fm: &Tensor, cells: &[Window]) -> Result<Vec<(f64, [f64; 4])>> {
        const CHUNK: usize = 512;
        let (c, s) = (self.channels, self.fm_size);
        if fm.shape() != [c, s, s] {
            return Err(Error::dim("score_cells", fm.shape(), &[c, s, s]));
        }
        let bins = ROI_BINS * ROI_BINS;
        let (d, h) = (c * bins, self.cfg.head_hidden);
        let p = |name: &str| store.value(name).map(Tensor::data);
        let (w1, b1, w2, b2) = (p("det.fc1.w")?, p("det.fc1.b")?, p("det.fc2.w")?, p("det.fc2.b")?);
        let (ws, bs, wr, br) = (p("det.score.w")?, p("det.score.b")?, p("det.reg.w")?, p("det.reg.b")?);
        if w1.len() != d * h {
            return Err(Error::dim("score_cells fc1", &[w1.len()], &[d, h]));
        }
        // channel-last copy so a cell's channels are contiguous
        let mut hwc = vec![0.0; c * s * s];
        for (ch, plane) in fm.data().chunks_exact(s * s).enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                hwc[i * c + ch] = v;
            }
        }
        // fc1 rows reordered from (channel, bin) to (bin, channel)
        let mut w1p = vec![0.0; d * h];
        for ch in 0..c {
            for bin in 0..bins {
                let (from, to) = ((ch * bins + bin) * h, (bin * c + ch) * h);
                w1p[to..to + h].copy_from_slice(&w1[from..from + h]);
            }
        }
        let w1 = &w1p;
        let rows = cells.len().min(CHUNK);
        let mut x = vec![0.0; rows * d];
        let mut h1 = vec![0.0; rows * h];
        let mut h2 = vec![0.0; rows * h];
        let mut out = Vec::with_capacity(cells.len());
        for chunk in cells.chunks(CHUNK) {
            let n = chunk.len();
            for (r, &cell) in chunk.iter().enumerate() {
                for (bin, win) in roi_windows(cell).iter().enumerate() {
                    let dst = &mut x[r * d + bin * c..r * d + (bin + 1) * c];
                    let first = (win.y0 * s + win.x0) * c;
                    dst.copy_from_slice(&hwc[first..first + c]);
                    for y in win.y0..win.y1 {
                        for xx in win.x0..win.x1 {
                            let at = (y * s + xx) * c;
                            for (m, &v) in dst.iter_mut().zip(&hwc[at..at + c]) {
                                if v > *m {
                                    *m = v;
                                }
                            }
                        }
                    }
                }
            }
            dense_relu(n, d, h, &x, w1, b1, &mut h1);
            dense_relu(n, h, h, &h1, w2, b2, &mut h2);
            for r in 0..n {
                let row = &h2[r * h..(r + 1) * h];
                let affine = |w: &[f64], b: &[f64], j: usize, k: usize| -> f64 {
                    b[j] + row.iter().enumerate().map(|(i, &v)| v * w[i * k + j]).sum::<f64>()
                };
                let (l0, l1) = (affine(ws, bs, 0, 2), affine(ws, bs, 1, 2));
                let m = l0.max(l1);
                let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
                let t = std::array::from_fn(|j| affine(wr, br, j, 4));
                out.push((e0 / (e0 + e1), t));
            }
        }
        Ok(out)
    }

    /// Scores every anchor of one view and decodes its box. Anchors whose
    /// decoded box leaves the image are dropped. Returns the feature map and
    /// the proposals in anchor order.
    pub fn propose(&self, store: &ParamStore, image: &Tensor, view: usize) -> Result<(Tensor, Vec<Proposal>)> {
        let fm = self.feature_map(store, image)?;
        let scored = self.score_cells(store, &fm, &self.unique_cells)?;
        let size = self.cfg.image_size as f64;
        let proposals = self
            .anchors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let (score, t) = scored[self.anchor_to_unique[i]];
                let bbox = decode_bbox(a, &t, size)?;
                box_cells(&bbox, self.stride, self.fm_size).ok()?;
                Some(Proposal { view, anchor_index: i, score, t, bbox })
            })
            .collect();
        Ok((fm, proposals))
    }

    /// GSP features `[boxes.len(), C]`: the per-channel maximum of each
    /// box's 7×7 RoI-pooled feature.
    pub fn gsp_features(&self, g: &mut Graph, fm: Var, boxes: &[BBox]) -> Result<Var> {
        let cells = boxes
            .iter()
            .map(|b| box_cells(b, self.stride, self.fm_size))
            .collect::<Result<Vec<_>>>()?;
        let pooled = roi_pool_graph(g, fm, &cells)?;
        g.reduce_max(pooled, 2)
    }
}

/// `out = relu(x · w + b)` for `n` rows.
fn dense_relu(n: usize, k: usize, m: usize, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let out = &mut out[..n * m];
    gemm(n, k, m, &x[..n * k], false, w, false, out, 0.0);
    for row in out.chunks_exact_mut(m) {
        for (v, &bj) in row.iter_mut().zip(b) {
            *v = (*v + bj).max(0.0);
        }
    }
}
