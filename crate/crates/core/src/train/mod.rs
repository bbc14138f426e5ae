//! Alternating training of the detector and the attention branch.
//!
//! A round runs `epochs_per_phase` detector epochs, which update only
//! `det.*` parameters against the detection loss, then as many classifier
//! epochs, which update only `att.*` parameters against the classification
//! loss on part features pooled from the frozen detector's top-K boxes.
//! Every epoch also records the combined objective `det + psi · cls`, with
//! the loss of the phase not being optimized evaluated on the current
//! parameters.
//!
//! At the end of each round parameters and optimizer moments are rounded to
//! single precision, which is exactly what a checkpoint stores, so resuming
//! from a round checkpoint continues bit-identically.

pub mod checkpoint;
mod eval;

use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionMode, ATT_PREFIX};
use crate::bbox::BBox;
use crate::config::Config;
use crate::detect::{select_top_k, shape_detection_loss, Detector, Proposal, ViewTargets, DET_PREFIX};
use crate::error::{Error, Result};
use crate::geometry::{normalize_mesh, ShapeEntry};
use crate::render::{gt_path, read_gt_csv, render_views, CameraRig, RgbImage};
use crate::tensor::{Adam, Graph, ParamStore, Tensor};

pub use eval::{ablation_csv, EvalReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Detector,
    Classifier,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Detector => "detector",
            Phase::Classifier => "classifier",
        })
    }
}

impl Phase {
    /// Parameter prefix this phase updates.
    pub fn prefix(self) -> &'static str {
        match self {
            Phase::Detector => DET_PREFIX,
            Phase::Classifier => ATT_PREFIX,
        }
    }
}

/// One epoch's bookkeeping. `mean_loss` is the optimized phase's loss;
/// `total = det_loss + psi · cls_loss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub round: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub mean_loss: f64,
    pub det_loss: f64,
    pub cls_loss: f64,
    pub total: f64,
}

/// CSV `round,phase,epoch,mean_loss`.
pub fn metrics_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("round,phase,epoch,mean_loss\n");
    for h in history {
        s += &format!("{},{},{},{}\n", h.round, h.phase, h.epoch, h.mean_loss);
    }
    s
}

/// CSV `round,phase,epoch,det_loss,cls_loss,total`.
pub fn total_loss_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("round,phase,epoch,det_loss,cls_loss,total\n");
    for h in history {
        s += &format!("{},{},{},{},{},{}\n", h.round, h.phase, h.epoch, h.det_loss, h.cls_loss, h.total);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub rounds_done: usize,
    pub store: ParamStore,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochLog>,
}

/// Rendered views of one shape, with ground truth when training.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub class: usize,
    pub views: Vec<Tensor>,
    /// Per-view GSP boxes; empty when not loaded.
    pub gt: Vec<Vec<BBox>>,
    pub targets: Vec<ViewTargets>,
}

/// Top-K part features `[K, D]` of every view and the boxes they came from.
#[derive(Clone, Debug)]
pub struct ShapeParts {
    pub parts: Vec<Tensor>,
    pub boxes: Vec<Vec<Proposal>>,
}

pub fn views_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("views")
}

pub fn gsp_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("gsp")
}

fn cache_dir(out_dir: &Path, id: &str) -> PathBuf {
    views_dir(out_dir).join(id)
}

fn cache_key(mesh_bytes: &[u8], rig: &CameraRig) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    mesh_bytes.hash(&mut h);
    format!("{:016x} {rig:?}\n", h.finish())
}

/// Renders the shaded views of `entry` into the view cache unless a cache
/// for the same mesh bytes and rig already exists. Returns whether it
/// rendered.
pub fn render_cached(entry: &ShapeEntry, rig: &CameraRig, out_dir: &Path) -> Result<bool> {
    let bytes = fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
    let key = cache_key(&bytes, rig);
    let dir = cache_dir(out_dir, &entry.id);
    let key_path = dir.join("key.txt");
    if fs::read_to_string(&key_path).is_ok_and(|k| k == key) {
        return Ok(false);
    }
    let mesh = normalize_mesh(&entry.load_mesh()?)?;
    let views = render_views(&mesh, rig)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, img) in views.images.iter().enumerate() {
        img.write_ppm(&dir.join(format!("view_{i:02}.ppm")))?;
    }
    fs::write(&key_path, key).map_err(|e| Error::io(&key_path, e))?;
    Ok(true)
}

/// Views of `entry`, read from the view cache when it is valid and rendered
/// in memory otherwise.
pub fn load_views(entry: &ShapeEntry, rig: &CameraRig, out_dir: &Path) -> Result<Vec<RgbImage>> {
    let dir = cache_dir(out_dir, &entry.id);
    if let (Ok(key), Ok(bytes)) = (fs::read_to_string(dir.join("key.txt")), fs::read(&entry.path)) {
        if key == cache_key(&bytes, rig) {
            return (0..rig.views)
                .map(|i| RgbImage::read_ppm(&dir.join(format!("view_{i:02}.ppm"))))
                .collect();
        }
    }
    let mesh = normalize_mesh(&entry.load_mesh()?)?;
    Ok(render_views(&mesh, rig)?.images)
}

/// Splits off the last `round(n · fraction)` training shapes of each class
/// as a validation set.
pub fn validation_split(entries: &[ShapeEntry], fraction: f64) -> (Vec<ShapeEntry>, Vec<ShapeEntry>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let mut classes: Vec<usize> = entries.iter().map(|e| e.class).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let members: Vec<&ShapeEntry> = entries.iter().filter(|e| e.class == c).collect();
        let n_val = (members.len() as f64 * fraction).round() as usize;
        let cut = members.len() - n_val.min(members.len());
        train.extend(members[..cut].iter().map(|&e| e.clone()));
        val.extend(members[cut..].iter().map(|&e| e.clone()));
    }
    (train, val)
}

/// Seed of the sampler used when a phase's loss is evaluated rather than
/// optimized, so evaluation never advances the training RNG.
fn eval_seed(seed: u64, round: usize) -> u64 {
    seed ^ 0x5851_f42d_4c95_7f2d ^ ((round as u64) << 32)
}

/// Detector, class list and configuration shared by every stage.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: Config,
    pub det: Detector,
    pub classes: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: Config, classes: Vec<String>) -> Result<Self> {
        cfg.validate()?;
        if classes.len() < 2 {
            return Err(Error::Data(format!("need at least two classes, found {}", classes.len())));
        }
        let det = Detector::new(cfg.detector_config())?;
        if det.channels != cfg.feature_channels {
            return Err(Error::Config(format!(
                "backbone produces {} channels but feature_channels is {}",
                det.channels, cfg.feature_channels
            )));
        }
        Ok(Pipeline { cfg, det, classes })
    }

    fn mode(&self) -> AttentionMode {
        self.cfg.attention_mode
    }

    /// Fresh parameters and optimizer: detector first, then the attention
    /// branch, both drawn from the run's seeded generator.
    pub fn init_state(&self) -> Result<TrainState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut store = ParamStore::new();
        self.det.init_params(&mut store, &mut rng);
        attention::init_params(&mut store, self.cfg.attention_dims(self.classes.len()), &mut rng)?;
        Ok(TrainState {
            rounds_done: 0,
            store,
            adam: Adam::with_betas(self.cfg.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps),
            rng,
            history: Vec::new(),
        })
    }

    /// Loads views of each entry; with `with_gt`, also the GSP ground truth
    /// from `out_dir/gsp` and the per-anchor targets.
    pub fn load_samples(&self, entries: &[ShapeEntry], with_gt: bool) -> Result<Vec<Sample>> {
        let rig = self.cfg.rig();
        entries
            .iter()
            .map(|e| {
                let views: Vec<Tensor> = load_views(e, &rig, &self.cfg.out_dir)?.iter().map(RgbImage::to_tensor).collect();
                let (gt, targets) = if with_gt {
                    let path = gt_path(&gsp_dir(&self.cfg.out_dir), &e.id);
                    if !path.exists() {
                        return Err(Error::Data(format!(
                            "missing GSP ground truth {} (run gsp-gt first)",
                            path.display()
                        )));
                    }
                    let gt = read_gt_csv(&path, rig.views)?;
                    let targets = gt.iter().map(|b| ViewTargets::new(&self.det, b)).collect::<Result<_>>()?;
                    (gt, targets)
                } else {
                    (Vec::new(), Vec::new())
                };
                Ok(Sample {
                    id: e.id.clone(),
                    class: e.class,
                    views,
                    gt,
                    targets,
                })
            })
            .collect()
    }

    /// Detects the top-K GSPs of every view and max-pools their features.
    pub fn shape_parts(&self, store: &ParamStore, sample: &Sample) -> Result<ShapeParts> {
        let mut parts = Vec::with_capacity(sample.views.len());
        let mut boxes = Vec::with_capacity(sample.views.len());
        for (v, img) in sample.views.iter().enumerate() {
            let (fm, proposals) = self.det.propose(store, img, v)?;
            let top = select_top_k(&proposals, self.cfg.k_parts, self.cfg.nms_threshold)
                .map_err(|e| Error::Detection(format!("shape {} view {v}: {e}", sample.id)))?;
            let mut g = Graph::new();
            let fmv = g.constant(fm);
            let bb: Vec<BBox> = top.iter().map(|p| p.bbox).collect();
            let f = self.det.gsp_features(&mut g, fmv, &bb)?;
            parts.push(g.value(f).clone());
            boxes.push(top);
        }
        Ok(ShapeParts { parts, boxes })
    }

    /// Parts of every sample, computed in parallel; the result keeps sample
    /// order.
    pub fn extract_parts(&self, store: &ParamStore, samples: &[Sample]) -> Result<Vec<ShapeParts>> {
        samples.par_iter().map(|s| self.shape_parts(store, s)).collect()
    }

    /// Classification loss and probabilities of one shape from its part
    /// features.
    fn classify_parts(&self, g: &mut Graph, store: &ParamStore, parts: &ShapeParts, label: usize, mode: AttentionMode) -> Result<(crate::tensor::Var, Vec<f64>)> {
        let vars: Vec<_> = parts.parts.iter().map(|p| g.constant(p.clone())).collect();
        let out = attention::forward(g, store, &vars, mode)?;
        let probs = g.value(out.probs).data().to_vec();
        Ok((attention::classification_loss(g, out.probs, label)?, probs))
    }

    /// Class probabilities of one shape.
    pub fn predict(&self, store: &ParamStore, parts: &ShapeParts, mode: AttentionMode) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        Ok(self.classify_parts(&mut g, store, parts, 0, mode)?.1)
    }

    /// Class probabilities, per-view part attention `[K, K]` and view
    /// attention `[V, V]` of one shape.
    pub fn attention_maps(&self, store: &ParamStore, parts: &ShapeParts, mode: AttentionMode) -> Result<(Vec<f64>, Vec<Tensor>, Tensor)> {
        let mut g = Graph::new();
        let vars: Vec<_> = parts.parts.iter().map(|p| g.constant(p.clone())).collect();
        let out = attention::forward(&mut g, store, &vars, mode)?;
        let q = out.q.iter().map(|&v| g.value(v).clone()).collect();
        Ok((g.value(out.probs).data().to_vec(), q, g.value(out.theta).clone()))
    }

    fn step(state: &mut TrainState, g: &Graph, phase: Phase) -> Result<()> {
        let prefix = phase.prefix();
        state.store.clear_grads();
        state.store.zero_grads(|n| n.starts_with(prefix));
        state.store.accumulate(g);
        state.adam.step(&mut state.store, |n| n.starts_with(prefix))?;
        state.store.clear_grads();
        Ok(())
    }

    /// One shuffled pass of detector updates; returns the mean loss.
    pub fn detector_epoch(&self, state: &mut TrainState, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Data("no training shapes".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut state.rng);
        let mut sum = 0.0;
        for i in order {
            let s = &samples[i];
            if s.targets.len() != s.views.len() {
                return Err(Error::Data(format!("shape {} has no GSP ground truth loaded", s.id)));
            }
            let mut g = Graph::new();
            let loss = shape_detection_loss(&self.det, &mut g, &state.store, &s.views, &s.targets, &mut state.rng)?;
            sum += g.value(loss).item();
            g.backward(loss)?;
            Self::step(state, &g, Phase::Detector)?;
        }
        Ok(sum / samples.len() as f64)
    }

    /// One shuffled pass of attention-branch updates over precomputed part
    /// features; returns the mean loss.
    pub fn classifier_epoch(&self, state: &mut TrainState, samples: &[Sample], parts: &[ShapeParts], mode: AttentionMode) -> Result<f64> {
        if samples.is_empty() || samples.len() != parts.len() {
            return Err(Error::Data("no training shapes".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut state.rng);
        let mut sum = 0.0;
        for i in order {
            let mut g = Graph::new();
            let (loss, _) = self.classify_parts(&mut g, &state.store, &parts[i], samples[i].class, mode)?;
            sum += g.value(loss).item();
            g.backward(loss)?;
            Self::step(state, &g, Phase::Classifier)?;
        }
        Ok(sum / samples.len() as f64)
    }

    /// Mean detection loss without updates, sampling anchors from `seed`.
    pub fn detection_loss_eval(&self, store: &ParamStore, samples: &[Sample], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for s in samples {
            let mut g = Graph::new();
            let l = shape_detection_loss(&self.det, &mut g, store, &s.views, &s.targets, &mut rng)?;
            sum += g.value(l).item();
        }
        Ok(sum / samples.len() as f64)
    }

    /// Mean classification loss without updates.
    pub fn classification_loss_eval(&self, store: &ParamStore, samples: &[Sample], parts: &[ShapeParts], mode: AttentionMode) -> Result<f64> {
        let mut sum = 0.0;
        for (s, p) in samples.iter().zip(parts) {
            let mut g = Graph::new();
            let (l, _) = self.classify_parts(&mut g, store, p, s.class, mode)?;
            sum += g.value(l).item();
        }
        Ok(sum / samples.len() as f64)
    }

    /// Runs `rounds` rounds of detector then classifier phases, calling
    /// `on_round` after each completed round.
    pub fn alternate_train(
        &self,
        state: &mut TrainState,
        samples: &[Sample],
        rounds: usize,
        mut on_round: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<()> {
        if rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        let psi = self.cfg.psi;
        let mode = self.mode();
        for _ in 0..rounds {
            let round = state.rounds_done + 1;
            let mut parts = Vec::new();
            for epoch in 1..=self.cfg.epochs_per_phase {
                let det = self.detector_epoch(state, samples)?;
                parts = self.extract_parts(&state.store, samples)?;
                let cls = self.classification_loss_eval(&state.store, samples, &parts, mode)?;
                log::info!("round {round} detector epoch {epoch}: loss {det:.5}, classification {cls:.5}");
                state.history.push(EpochLog {
                    round,
                    phase: Phase::Detector,
                    epoch,
                    mean_loss: det,
                    det_loss: det,
                    cls_loss: cls,
                    total: det + psi * cls,
                });
            }
            let det = self.detection_loss_eval(&state.store, samples, eval_seed(self.cfg.seed, round))?;
            for epoch in 1..=self.cfg.epochs_per_phase {
                let cls = self.classifier_epoch(state, samples, &parts, mode)?;
                log::info!("round {round} classifier epoch {epoch}: loss {cls:.5}");
                state.history.push(EpochLog {
                    round,
                    phase: Phase::Classifier,
                    epoch,
                    mean_loss: cls,
                    det_loss: det,
                    cls_loss: cls,
                    total: det + psi * cls,
                });
            }
            state.store.round_to_f32();
            state.adam.round_to_f32();
            state.rounds_done = round;
            on_round(state)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Layer;
    use crate::geometry::{generate_dataset, FamilyKind};
    use crate::render::build_gsp_ground_truth;

    /// A 2-class, 4-shape setup with a 32-pixel, 4-view rig.
    fn tiny() -> (tempfile::TempDir, Pipeline, Vec<Sample>) {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&dir.path().join("data"), FamilyKind::Table, 3, 0.34, 3).unwrap();
        let cfg = Config {
            views: 4,
            image_size: 32,
            feature_channels: 8,
            k_parts: 3,
            hidden_dim: 6,
            backbone: vec![Layer::Conv(4), Layer::Pool, Layer::Conv(8), Layer::Pool],
            anchor_scales: vec![1.0, 2.0, 4.0],
            head_hidden: 8,
            anchors_per_view: 16,
            epochs_per_phase: 1,
            lr: 1e-3,
            out_dir: dir.path().join("out"),
            ..Config::default()
        };
        build_gsp_ground_truth(&ds, &cfg.rig(), &gsp_dir(&cfg.out_dir)).unwrap();
        let p = Pipeline::new(cfg, ds.classes.clone()).unwrap();
        let samples = p.load_samples(&ds.train, true).unwrap();
        (dir, p, samples)
    }

    fn params_with(store: &ParamStore, prefix: &str) -> Vec<(String, Vec<u64>)> {
        store
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, p)| (n.to_string(), p.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn phases_touch_only_their_parameters() {
        let (_d, p, samples) = tiny();
        let mut st = p.init_state().unwrap();
        let att = params_with(&st.store, ATT_PREFIX);
        let det = params_with(&st.store, DET_PREFIX);
        p.detector_epoch(&mut st, &samples).unwrap();
        assert_eq!(params_with(&st.store, ATT_PREFIX), att);
        assert_ne!(params_with(&st.store, DET_PREFIX), det);

        let det = params_with(&st.store, DET_PREFIX);
        let parts = p.extract_parts(&st.store, &samples).unwrap();
        p.classifier_epoch(&mut st, &samples, &parts, AttentionMode::Full).unwrap();
        assert_eq!(params_with(&st.store, DET_PREFIX), det);
        assert_ne!(params_with(&st.store, ATT_PREFIX), att);
    }

    #[test]
    fn zero_lambda_gives_regression_head_no_gradient() {
        let (_d, mut p, samples) = tiny();
        p.cfg.lambda = 0.0;
        p.det = Detector::new(p.cfg.detector_config()).unwrap();
        let st = p.init_state().unwrap();
        let s = &samples[0];
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = shape_detection_loss(&p.det, &mut g, &st.store, &s.views, &s.targets, &mut rng).unwrap();
        g.backward(l).unwrap();
        let mut store = st.store.clone();
        store.accumulate(&g);
        for n in ["det.reg.w", "det.reg.b"] {
            assert!(store.get(n).unwrap().grad.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_round_runs_both_phases_and_logs_totals() {
        let (_d, p, samples) = tiny();
        let mut st = p.init_state().unwrap();
        let mut calls = 0;
        p.alternate_train(&mut st, &samples, 1, |_| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 1);
        let phases: Vec<Phase> = st.history.iter().map(|h| h.phase).collect();
        assert_eq!(phases, vec![Phase::Detector, Phase::Classifier]);
        for h in &st.history {
            assert_eq!(h.total, h.det_loss + h.cls_loss);
        }
        assert!(metrics_csv(&st.history).starts_with("round,phase,epoch,mean_loss\n1,detector,1,"));
    }

    #[test]
    fn training_is_deterministic() {
        let (_d, p, samples) = tiny();
        let run = || {
            let mut st = p.init_state().unwrap();
            p.alternate_train(&mut st, &samples, 1, |_| Ok(())).unwrap();
            st
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_ground_truth_is_a_data_error() {
        let (d, p, _) = tiny();
        fs::remove_dir_all(gsp_dir(&p.cfg.out_dir)).unwrap();
        let ds = crate::geometry::Dataset::load(&d.path().join("data")).unwrap();
        assert!(matches!(p.load_samples(&ds.train, true), Err(Error::Data(_))));
    }

    #[test]
    fn view_cache_is_reused_and_matches_rendering() {
        let (d, p, _) = tiny();
        let ds = crate::geometry::Dataset::load(&d.path().join("data")).unwrap();
        let rig = p.cfg.rig();
        let e = &ds.train[0];
        let fresh = load_views(e, &rig, &p.cfg.out_dir).unwrap();
        assert!(render_cached(e, &rig, &p.cfg.out_dir).unwrap());
        assert!(!render_cached(e, &rig, &p.cfg.out_dir).unwrap());
        assert_eq!(load_views(e, &rig, &p.cfg.out_dir).unwrap(), fresh);
        let other = CameraRig { elevation_deg: 10.0, ..rig };
        assert!(render_cached(e, &other, &p.cfg.out_dir).unwrap());
    }

    #[test]
    fn validation_split_takes_tail_of_each_class() {
        let e = |id: &str, class| ShapeEntry { id: id.into(), path: PathBuf::from(id), class };
        let all = vec![e("a0", 0), e("a1", 0), e("a2", 0), e("a3", 0), e("b0", 1), e("b1", 1)];
        let (tr, va) = validation_split(&all, 0.25);
        let ids = |v: &[ShapeEntry]| v.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&va), vec!["a3", "b1"]);
        assert_eq!(tr.len(), 4);
        assert_eq!(validation_split(&all, 0.0).1.len(), 0);
    }
}
