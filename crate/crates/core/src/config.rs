//! Run configuration in a line-oriented `key = value` format.
//!
//! `#` starts a comment, lists are comma separated and every key may appear
//! at most once. Keys not listed in [`Config`] are rejected, and missing
//! keys keep their defaults.
//!
//! ```
//! use fgpv::config::Config;
//!
//! let cfg = Config::parse("views = 6\nk_parts = 3  # per view\n").unwrap();
//! assert_eq!((cfg.views, cfg.k_parts, cfg.image_size), (6, 3, 64));
//! assert_eq!(Config::parse(&cfg.to_text()).unwrap(), cfg);
//! assert!(Config::parse("colour = red").is_err());
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{AttentionDims, AttentionMode};
use crate::detect::{DetectorConfig, Layer, Ratio};
use crate::error::{Error, Result};
use crate::geometry::FamilyKind;
use crate::render::CameraRig;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub views: usize,
    pub image_size: usize,
    /// Width `D` of part features; the last convolution must produce it.
    pub feature_channels: usize,
    pub k_parts: usize,
    pub s_d: f64,
    pub lambda: f64,
    pub psi: f64,
    /// GRU hidden width `H`.
    pub hidden_dim: usize,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<Ratio>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub seed: u64,
    pub attention_mode: AttentionMode,
    pub rounds: usize,
    pub epochs_per_phase: usize,
    pub dataset_root: PathBuf,
    pub out_dir: PathBuf,

    pub family: FamilyKind,
    pub shapes_per_subcategory: usize,
    pub test_fraction: f64,
    /// Fraction of each class's training shapes held out for validation.
    pub val_fraction: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub fov_deg: f64,
    pub backbone: Vec<Layer>,
    pub head_hidden: usize,
    pub anchors_per_view: usize,
    pub smooth_l1: bool,
    pub nms_threshold: Option<f64>,
    pub recall_top_n: usize,
    pub recall_iou: f64,
}

impl Default for Config {
    fn default() -> Self {
        let det = DetectorConfig::default();
        Config {
            views: 12,
            image_size: 64,
            feature_channels: 64,
            k_parts: 5,
            s_d: det.s_d,
            lambda: det.lambda,
            psi: 1.0,
            hidden_dim: 128,
            anchor_scales: det.scales,
            anchor_ratios: det.ratios,
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 1,
            seed: 0,
            attention_mode: AttentionMode::Full,
            rounds: 4,
            epochs_per_phase: 5,
            dataset_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            family: FamilyKind::Chair,
            shapes_per_subcategory: 20,
            test_fraction: 0.25,
            val_fraction: 0.0,
            elevation_deg: 30.0,
            distance: 2.5,
            fov_deg: 40.0,
            backbone: det.layers,
            head_hidden: det.head_hidden,
            anchors_per_view: det.anchors_per_view,
            smooth_l1: det.smooth_l1,
            nms_threshold: None,
            recall_top_n: 50,
            recall_iou: 0.5,
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`"))))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "views" => self.views = one(key, v)?,
            "image_size" => self.image_size = one(key, v)?,
            "feature_channels" => self.feature_channels = one(key, v)?,
            "k_parts" => self.k_parts = one(key, v)?,
            "s_d" => self.s_d = one(key, v)?,
            "lambda" => self.lambda = one(key, v)?,
            "psi" => self.psi = one(key, v)?,
            "hidden_dim" => self.hidden_dim = one(key, v)?,
            "anchor_scales" => self.anchor_scales = list(key, v)?,
            "anchor_ratios" => self.anchor_ratios = list(key, v)?,
            "lr" => self.lr = one(key, v)?,
            "beta1" => self.beta1 = one(key, v)?,
            "beta2" => self.beta2 = one(key, v)?,
            "eps" => self.eps = one(key, v)?,
            "batch" => self.batch = one(key, v)?,
            "seed" => self.seed = one(key, v)?,
            "attention_mode" => self.attention_mode = v.parse()?,
            "rounds" => self.rounds = one(key, v)?,
            "epochs_per_phase" => self.epochs_per_phase = one(key, v)?,
            "dataset_root" => self.dataset_root = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "family" => self.family = v.parse()?,
            "shapes_per_subcategory" => self.shapes_per_subcategory = one(key, v)?,
            "test_fraction" => self.test_fraction = one(key, v)?,
            "val_fraction" => self.val_fraction = one(key, v)?,
            "elevation_deg" => self.elevation_deg = one(key, v)?,
            "distance" => self.distance = one(key, v)?,
            "fov_deg" => self.fov_deg = one(key, v)?,
            "backbone" => self.backbone = list(key, v)?,
            "head_hidden" => self.head_hidden = one(key, v)?,
            "anchors_per_view" => self.anchors_per_view = one(key, v)?,
            "smooth_l1" => self.smooth_l1 = one(key, v)?,
            "nms_threshold" => {
                self.nms_threshold = if v == "none" { None } else { Some(one(key, v)?) }
            }
            "recall_top_n" => self.recall_top_n = one(key, v)?,
            "recall_iou" => self.recall_iou = one(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Serialized form; [`Config::parse`] reads it back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("views", self.views.to_string());
        kv("image_size", self.image_size.to_string());
        kv("feature_channels", self.feature_channels.to_string());
        kv("k_parts", self.k_parts.to_string());
        kv("s_d", self.s_d.to_string());
        kv("lambda", self.lambda.to_string());
        kv("psi", self.psi.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("anchor_scales", join(&self.anchor_scales));
        kv("anchor_ratios", join(&self.anchor_ratios));
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("batch", self.batch.to_string());
        kv("seed", self.seed.to_string());
        kv("attention_mode", self.attention_mode.to_string());
        kv("rounds", self.rounds.to_string());
        kv("epochs_per_phase", self.epochs_per_phase.to_string());
        kv("dataset_root", self.dataset_root.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("family", self.family.to_string());
        kv("shapes_per_subcategory", self.shapes_per_subcategory.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("val_fraction", self.val_fraction.to_string());
        kv("elevation_deg", self.elevation_deg.to_string());
        kv("distance", self.distance.to_string());
        kv("fov_deg", self.fov_deg.to_string());
        kv("backbone", join(&self.backbone));
        kv("head_hidden", self.head_hidden.to_string());
        kv("anchors_per_view", self.anchors_per_view.to_string());
        kv("smooth_l1", self.smooth_l1.to_string());
        kv("nms_threshold", self.nms_threshold.map_or("none".into(), |t| t.to_string()));
        kv("recall_top_n", self.recall_top_n.to_string());
        kv("recall_iou", self.recall_iou.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.views == 0 || self.k_parts == 0 || self.hidden_dim == 0 || self.feature_channels == 0 {
            return bad("views, k_parts, hidden_dim and feature_channels must be positive".into());
        }
        if self.batch != 1 {
            return bad(format!("only batch = 1 is supported, got {}", self.batch));
        }
        if !(unit(self.s_d) && unit(self.recall_iou)) {
            return bad("s_d and recall_iou must lie in [0, 1]".into());
        }
        if !(self.lambda >= 0.0 && self.psi >= 0.0 && self.lambda.is_finite() && self.psi.is_finite()) {
            return bad("lambda and psi must be finite and non-negative".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.eps > 0.0) {
            return bad("lr and eps must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.rounds == 0 || self.epochs_per_phase == 0 {
            return bad("rounds and epochs_per_phase must be at least 1".into());
        }
        if self.anchor_scales.is_empty() || self.anchor_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("anchor_scales must be a non-empty list of positive numbers".into());
        }
        if self.anchor_ratios.is_empty() {
            return bad("anchor_ratios must not be empty".into());
        }
        if self.shapes_per_subcategory == 0 || !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return bad("shapes_per_subcategory must be positive and test/val fractions in [0, 1)".into());
        }
        if let Some(t) = self.nms_threshold {
            if !unit(t) {
                return bad("nms_threshold must lie in [0, 1]".into());
            }
        }
        if self.recall_top_n == 0 || self.anchors_per_view == 0 || self.head_hidden == 0 {
            return bad("recall_top_n, anchors_per_view and head_hidden must be positive".into());
        }
        let last = self.backbone.iter().rev().find_map(|l| match l {
            Layer::Conv(c) | Layer::ValidConv(c) => Some(*c),
            Layer::Pool => None,
        });
        if last != Some(self.feature_channels) {
            return bad(format!(
                "the last backbone convolution must have feature_channels = {} channels",
                self.feature_channels
            ));
        }
        self.rig().validate()?;
        Ok(())
    }

    /// Whether parameters trained under `other` fit this configuration and
    /// see the same renders.
    pub fn same_architecture(&self, other: &Config) -> bool {
        self.rig() == other.rig()
            && self.detector_config() == other.detector_config()
            && (self.feature_channels, self.k_parts, self.hidden_dim) == (other.feature_channels, other.k_parts, other.hidden_dim)
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig {
            views: self.views,
            elevation_deg: self.elevation_deg,
            distance: self.distance,
            fov_deg: self.fov_deg,
            image_size: self.image_size,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            image_size: self.image_size,
            layers: self.backbone.clone(),
            scales: self.anchor_scales.clone(),
            ratios: self.anchor_ratios.clone(),
            s_d: self.s_d,
            lambda: self.lambda,
            smooth_l1: self.smooth_l1,
            head_hidden: self.head_hidden,
            anchors_per_view: self.anchors_per_view,
        }
    }

    pub fn attention_dims(&self, classes: usize) -> AttentionDims {
        AttentionDims {
            d: self.feature_channels,
            h: self.hidden_dim,
            classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!((c.views, c.image_size, c.feature_channels, c.k_parts, c.hidden_dim), (12, 64, 64, 5, 128));
        assert_eq!((c.s_d, c.lambda, c.psi, c.lr, c.batch), (0.7, 1.0, 1.0, 1e-5, 1));
        assert_eq!(c.anchor_scales, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(join(&c.anchor_ratios), "1:1, 1:2, 2:1");
        assert_eq!(c.attention_mode, AttentionMode::Full);
        c.validate().unwrap();
        assert_eq!(Config::parse("").unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "views = 0",
            "nonsense = 1",
            "views = 3\nviews = 4",
            "views 3",
            "s_d = 1.5",
            "batch = 2",
            "anchor_ratios = 1:0",
            "attention_mode = fancy",
            "feature_channels = 32",
            "lr = -1",
        ] {
            assert!(matches!(Config::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn comments_and_lists() {
        let c = Config::parse("# header\nanchor_scales = 2, 4 # two\nnms_threshold = 0.3\nbackbone = conv8, pool, conv64\n").unwrap();
        assert_eq!(c.anchor_scales, vec![2.0, 4.0]);
        assert_eq!(c.nms_threshold, Some(0.3));
        assert_eq!(c.backbone, vec![Layer::Conv(8), Layer::Pool, Layer::Conv(64)]);
    }

    #[test]
    fn error_names_line() {
        let e = Config::parse("views = 12\n\nk_parts = x").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    fn arb_config() -> impl Strategy<Value = Config> {
        (
            (1usize..30, 16usize..129, 1usize..9, 0.0f64..=1.0, 0.0f64..4.0, 0.0f64..4.0),
            (1usize..300, prop::collection::vec(0.1f64..64.0, 1..6), 1e-7f64..1.0, any::<u64>()),
            (0usize..5, 1usize..6, 1usize..9, proptest::option::of(0.0f64..=1.0), any::<bool>()),
            (1usize..100, 0.0f64..0.9, 0.0f64..0.9, 1usize..200, 0.0f64..=1.0, 0usize..3),
        )
            .prop_map(|(a, b, c, d)| Config {
                views: a.0,
                image_size: a.1,
                k_parts: a.2,
                s_d: a.3,
                lambda: a.4,
                psi: a.5,
                hidden_dim: b.0,
                anchor_scales: b.1,
                lr: b.2,
                seed: b.3,
                attention_mode: AttentionMode::ALL[c.0],
                rounds: c.1,
                epochs_per_phase: c.2,
                nms_threshold: c.3,
                smooth_l1: c.4,
                shapes_per_subcategory: d.0,
                test_fraction: d.1,
                val_fraction: d.2,
                recall_top_n: d.3,
                recall_iou: d.4,
                family: FamilyKind::ALL[d.5],
                dataset_root: PathBuf::from(format!("data/run{}", b.3 % 7)),
                ..Config::default()
            })
    }

    proptest! {
        #![proptest_config(crate::testutil::proptest_config(128))]

        #[test]
        fn text_round_trip(c in arb_config()) {
            c.validate().unwrap();
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
