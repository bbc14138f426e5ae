//! Hierarchical part-view attention and the shape classifier.
//!
//! Per view, the K part features attend to each other through a bilinear
//! form `f S_p fᵀ` and are summed into a view feature. The V view features
//! attend to each other through `S_v` in the same way and are summed into a
//! global feature `f`. Each view feature is then shifted by `f`, fed through
//! a GRU in view order, projected by `W_a`, and max-pooled over the sequence
//! into `g`, which a softmax layer classifies.
//!
//! Features are row vectors. Weight matrices are stored transposed with
//! respect to the column-vector notation `W x`, so that `x · W` is the
//! product on the tape: `att.w_z` is `[D, H]`, `att.u_z` is `[H, H]`,
//! `att.w_a` is `[H, D]` and `att.w_c` is `[D, C]`.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::render::GrayImage;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Name prefix of every attention-branch parameter.
pub const ATT_PREFIX: &str = "att.";

/// Which attention stages are learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Full,
    /// Only part attention; view weights fixed at 1/V.
    Opa,
    /// Only view attention; part weights fixed at 1/K.
    Ova,
    /// No attention; both weights constant.
    Na,
    /// No recurrent stage: `g = f`.
    Nr,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 5] = [
        AttentionMode::Full,
        AttentionMode::Opa,
        AttentionMode::Ova,
        AttentionMode::Na,
        AttentionMode::Nr,
    ];

    fn learned_parts(self) -> bool {
        matches!(self, AttentionMode::Full | AttentionMode::Opa | AttentionMode::Nr)
    }

    fn learned_views(self) -> bool {
        matches!(self, AttentionMode::Full | AttentionMode::Ova | AttentionMode::Nr)
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(AttentionMode::Full),
            "opa" => Ok(AttentionMode::Opa),
            "ova" => Ok(AttentionMode::Ova),
            "na" => Ok(AttentionMode::Na),
            "nr" => Ok(AttentionMode::Nr),
            _ => Err(Error::Config(format!("unknown attention mode `{s}`"))),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Full => "full",
            AttentionMode::Opa => "opa",
            AttentionMode::Ova => "ova",
            AttentionMode::Na => "na",
            AttentionMode::Nr => "nr",
        })
    }
}

/// Feature width `d`, GRU hidden width `h`, class count `classes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub d: usize,
    pub h: usize,
    pub classes: usize,
}

fn name(s: &str) -> String {
    format!("{ATT_PREFIX}{s}")
}

/// Adds the attention-branch parameters to `store`: `S_p`, `S_v` start at
/// the identity plus U(±0.01) noise, other weights are U(±1/√fan_in) and
/// biases are zero.
pub fn init_params<R: Rng>(store: &mut ParamStore, dims: AttentionDims, rng: &mut R) -> Result<()> {
    let AttentionDims { d, h, classes } = dims;
    if d == 0 || h == 0 || classes < 2 {
        return Err(Error::Config(format!("invalid attention dims {dims:?}")));
    }
    let mut uniform = |shape: &[usize], bound: f64| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("sized")
    };
    for s in ["s_p", "s_v"] {
        let mut m = uniform(&[d, d], 0.01);
        for i in 0..d {
            m.data_mut()[i * d + i] += 1.0;
        }
        store.insert(name(s), m);
    }
    for gate in ["z", "r", "h"] {
        store.insert(name(&format!("w_{gate}")), uniform(&[d, h], 1.0 / (d as f64).sqrt()));
        store.insert(name(&format!("u_{gate}")), uniform(&[h, h], 1.0 / (h as f64).sqrt()));
        store.insert(name(&format!("b_{gate}")), Tensor::zeros(&[h]));
    }
    store.insert(name("w_a"), uniform(&[h, d], 1.0 / (h as f64).sqrt()));
    store.insert(name("w_c"), uniform(&[d, classes], 1.0 / (d as f64).sqrt()));
    store.insert(name("a_c"), Tensor::zeros(&[classes]));
    Ok(())
}

/// Bilinear self-attention over the rows of `x` (`[n, D]`): returns the
/// summed attended rows `[D]` and the row-softmax weights `[n, n]`. With
/// `learned == false` the weights used are the constant `1/n`; the returned
/// matrix is still the learned one.
fn bilinear_pool(g: &mut Graph, x: Var, s: Var, learned: bool) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    let ss = g.shape(s).to_vec();
    if shape.len() != 2 || ss != [shape[1], shape[1]] || shape[0] == 0 {
        return Err(Error::dim("bilinear attention", &shape, &ss));
    }
    let n = shape[0];
    let xs = g.matmul(x, s)?;
    let xt = g.transpose(x)?;
    let scores = g.matmul(xs, xt)?;
    let w = g.softmax(scores, 1)?;
    let used = if learned {
        w
    } else {
        g.constant(Tensor::full(&[n, n], 1.0 / n as f64))
    };
    let e = g.matmul(used, x)?;
    Ok((g.reduce_sum(e, 0)?, w))
}

/// View feature from the `[K, D]` part features of one view, and the part
/// attention `q`.
pub fn part_attention(g: &mut Graph, parts: Var, s_p: Var, mode: AttentionMode) -> Result<(Var, Var)> {
    bilinear_pool(g, parts, s_p, mode.learned_parts())
}

/// Global feature from the `[V, D]` view features, and the view attention
/// `θ`.
pub fn view_attention(g: &mut Graph, views: Var, s_v: Var, mode: AttentionMode) -> Result<(Var, Var)> {
    bilinear_pool(g, views, s_v, mode.learned_views())
}

/// GRU weights recorded on one graph.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn record(g: &mut Graph, store: &ParamStore) -> Result<Self> {
        let mut p = |s: &str| g.param(store, &name(s));
        Ok(GruVars {
            w_z: p("w_z")?,
            u_z: p("u_z")?,
            b_z: p("b_z")?,
            w_r: p("w_r")?,
            u_r: p("u_r")?,
            b_r: p("b_r")?,
            w_h: p("w_h")?,
            u_h: p("u_h")?,
            b_h: p("b_h")?,
        })
    }
}

fn gate(g: &mut Graph, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let a = g.matmul(x, w)?;
    let c = g.matmul(h, u)?;
    let s = g.add(a, c)?;
    g.add_bias(s, b, 1)
}

/// One GRU step on row vectors: `h_prev` is `[1, H]`, `x` is `[1, D]`.
pub fn gru_step(g: &mut Graph, gru: &GruVars, h_prev: Var, x: Var) -> Result<Var> {
    let z = gate(g, x, gru.w_z, h_prev, gru.u_z, gru.b_z)?;
    let z = g.sigmoid(z);
    let r = gate(g, x, gru.w_r, h_prev, gru.u_r, gru.b_r)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h_prev)?;
    let cand = gate(g, x, gru.w_h, rh, gru.u_h, gru.b_h)?;
    let cand = g.tanh(cand);
    // (1 - z) h_prev + z h̃  =  h_prev + z (h̃ - h_prev)
    let d = g.sub(cand, h_prev)?;
    let zd = g.mul(z, d)?;
    g.add(h_prev, zd)
}

/// Enhanced global feature `g` (`[D]`) and the per-step outputs `y_t`
/// (`[1, D]` each). `views` is `[V, D]` and `f` is `[D]`. In NR mode no
/// recurrence runs, `g` is `f` itself and the output list is empty.
pub fn view_feature_enhance(
    g: &mut Graph,
    store: &ParamStore,
    views: Var,
    f: Var,
    mode: AttentionMode,
) -> Result<(Var, Vec<Var>)> {
    if mode == AttentionMode::Nr {
        return Ok((f, Vec::new()));
    }
    let gru = GruVars::record(g, store)?;
    let w_a = g.param(store, &name("w_a"))?;
    let hidden = g.shape(gru.u_z)[0];
    let v = g.shape(views)[0];
    let shifted = g.add_bias(views, f, 1)?;
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut ys = Vec::with_capacity(v);
    for t in 0..v {
        let x = g.gather_rows(shifted, &[t])?;
        h = gru_step(g, &gru, h, x)?;
        ys.push(g.matmul(h, w_a)?);
    }
    let stacked = g.stack(&ys)?;
    let d = g.shape(views)[1];
    let stacked = g.reshape(stacked, &[v, d])?;
    Ok((g.reduce_max(stacked, 0)?, ys))
}

/// Class probabilities `softmax(g · W_c + a_c)`.
pub fn classify(g: &mut Graph, store: &ParamStore, feature: Var) -> Result<Var> {
    let w_c = g.param(store, &name("w_c"))?;
    let a_c = g.param(store, &name("a_c"))?;
    let d = g.value(feature).numel();
    let row = g.reshape(feature, &[1, d])?;
    let logits = g.matmul(row, w_c)?;
    let logits = g.add_bias(logits, a_c, 1)?;
    let c = g.shape(logits)[1];
    let logits = g.reshape(logits, &[c])?;
    g.softmax(logits, 0)
}

/// Cross-entropy of `p` against the one-hot `label`.
pub fn classification_loss(g: &mut Graph, p: Var, label: usize) -> Result<Var> {
    let c = g.value(p).numel();
    if label >= c {
        return Err(Error::Data(format!("label {label} out of range for {c} classes")));
    }
    let mut onehot = Tensor::zeros(&[c]);
    onehot.data_mut()[label] = 1.0;
    let t = g.constant(onehot);
    g.cross_entropy(p, t)
}

/// `det + psi · cls` on the tape.
pub fn total_loss(g: &mut Graph, det: Var, cls: Var, psi: f64) -> Result<Var> {
    let c = g.scale(cls, psi);
    g.add(det, c)
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub probs: Var,
    /// Per-view `[K, K]` part attention.
    pub q: Vec<Var>,
    /// `[V, V]` view attention.
    pub theta: Var,
    /// `[V, D]` view features.
    pub view_features: Var,
    /// `[D]` global feature.
    pub global: Var,
    /// `[D]` enhanced feature fed to the classifier.
    pub enhanced: Var,
}

/// Full branch from per-view `[K, D]` part features to class probabilities.
pub fn forward(g: &mut Graph, store: &ParamStore, parts: &[Var], mode: AttentionMode) -> Result<AttentionOutput> {
    if parts.is_empty() {
        return Err(Error::Shape("no views".into()));
    }
    let s_p = g.param(store, &name("s_p"))?;
    let s_v = g.param(store, &name("s_v"))?;
    let mut fs = Vec::with_capacity(parts.len());
    let mut q = Vec::with_capacity(parts.len());
    for &p in parts {
        let (fi, qi) = part_attention(g, p, s_p, mode)?;
        fs.push(fi);
        q.push(qi);
    }
    let view_features = g.stack(&fs)?;
    let (global, theta) = view_attention(g, view_features, s_v, mode)?;
    let (enhanced, _) = view_feature_enhance(g, store, view_features, global, mode)?;
    let probs = classify(g, store, enhanced)?;
    Ok(AttentionOutput {
        probs,
        q,
        theta,
        view_features,
        global,
        enhanced,
    })
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Writes `q_view{i}.pgm` for each part attention matrix and `theta.pgm`,
/// each min-max normalized on its own.
pub fn export_attention_maps(q: &[Tensor], theta: &Tensor, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let heat = |t: &Tensor| -> Result<GrayImage> {
        match t.shape() {
            [r, c] => Ok(GrayImage::heatmap(*r, *c, t.data())),
            s => Err(Error::Shape(format!("attention map must be 2-D, got {s:?}"))),
        }
    };
    for (i, qi) in q.iter().enumerate() {
        heat(qi)?.write_pgm(&dir.join(format!("q_view{i}.pgm")))?;
    }
    heat(theta)?.write_pgm(&dir.join("theta.pgm"))
}

/// CSV `shape_id,true_label,pred_label,p_1..p_C`.
pub fn probabilities_csv(rows: &[(String, usize, Vec<f64>)]) -> String {
    let c = rows.first().map_or(0, |r| r.2.len());
    let mut s = String::from("shape_id,true_label,pred_label");
    for i in 1..=c {
        write!(s, ",p_{i}").unwrap();
    }
    s.push('\n');
    for (id, truth, p) in rows {
        write!(s, "{id},{truth},{}", argmax(p)).unwrap();
        for v in p {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}
