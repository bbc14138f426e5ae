use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, argmax, AttentionMode, ATT_PREFIX};
use crate::detect::recall_counts;
use crate::error::{Error, Result};
use crate::tensor::{Adam, ParamStore};

use super::{Pipeline, Sample, ShapeParts, TrainState};

/// Accuracy summary of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub instance_accuracy: f64,
    /// Unweighted mean of per-class accuracies over classes present.
    pub class_accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Builds the report from `(true, predicted)` class pairs.
    pub fn from_predictions(classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for &(t, p) in pairs {
            if t >= classes || p >= classes {
                return Err(Error::Data(format!("class index out of range: ({t}, {p}) with {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<f64> = confusion
            .iter()
            .enumerate()
            .filter_map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(EvalReport {
            instance_accuracy: correct as f64 / pairs.len() as f64,
            class_accuracy: per_class.iter().sum::<f64>() / per_class.len() as f64,
            confusion,
        })
    }

    /// Header of class names, then one row of counts per true class.
    pub fn confusion_csv(&self, names: &[String]) -> String {
        let mut s = names.join(",");
        s.push('\n');
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            s += &cells.join(",");
            s.push('\n');
        }
        s
    }
}

/// CSV `mode,class_acc,instance_acc`.
pub fn ablation_csv(rows: &[(AttentionMode, EvalReport)]) -> String {
    let mut s = String::from("mode,class_acc,instance_acc\n");
    for (m, r) in rows {
        writeln!(s, "{m},{},{}", r.class_accuracy, r.instance_accuracy).unwrap();
    }
    s
}

/// Probability rows `(shape_id, true_label, probabilities)`.
pub type ProbabilityRows = Vec<(String, usize, Vec<f64>)>;

impl Pipeline {
    /// Classifies every sample from precomputed parts.
    pub fn evaluate_parts(
        &self,
        store: &ParamStore,
        samples: &[Sample],
        parts: &[ShapeParts],
        mode: AttentionMode,
    ) -> Result<(EvalReport, ProbabilityRows)> {
        let mut pairs = Vec::with_capacity(samples.len());
        let mut rows = Vec::with_capacity(samples.len());
        for (s, p) in samples.iter().zip(parts) {
            let probs = self.predict(store, p, mode)?;
            pairs.push((s.class, argmax(&probs)));
            rows.push((s.id.clone(), s.class, probs));
        }
        Ok((EvalReport::from_predictions(self.classes.len(), &pairs)?, rows))
    }

    /// Detects parts and classifies every sample with the configured mode.
    pub fn evaluate(&self, store: &ParamStore, samples: &[Sample]) -> Result<(EvalReport, ProbabilityRows)> {
        let parts = self.extract_parts(store, samples)?;
        self.evaluate_parts(store, samples, &parts, self.cfg.attention_mode)
    }

    /// Ground-truth boxes matched by one of the `recall_top_n` best
    /// proposals of their view at IoU ≥ `recall_iou`: (matched, total).
    pub fn recall(&self, store: &ParamStore, samples: &[Sample]) -> Result<(usize, usize)> {
        let (mut hit, mut total) = (0, 0);
        for s in samples {
            if s.gt.len() != s.views.len() {
                return Err(Error::Data(format!("shape {} has no GSP ground truth loaded", s.id)));
            }
            for (v, img) in s.views.iter().enumerate() {
                let (_, props) = self.det.propose(store, img, v)?;
                let (h, t) = recall_counts(&props, &s.gt[v], self.cfg.recall_top_n, self.cfg.recall_iou);
                hit += h;
                total += t;
            }
        }
        Ok((hit, total))
    }

    /// Retrains the attention branch once per mode on top of the detector
    /// in `base`, each from the same seed, for `rounds · epochs_per_phase`
    /// epochs, and evaluates on `test`.
    pub fn run_ablation(
        &self,
        base: &ParamStore,
        train: &[Sample],
        test: &[Sample],
        modes: &[AttentionMode],
    ) -> Result<Vec<(AttentionMode, EvalReport)>> {
        let train_parts = self.extract_parts(base, train)?;
        let test_parts = self.extract_parts(base, test)?;
        let epochs = self.cfg.rounds * self.cfg.epochs_per_phase;
        let mut out = Vec::with_capacity(modes.len());
        for &mode in modes {
            let mut store = ParamStore::new();
            for (name, p) in base.iter().filter(|(n, _)| !n.starts_with(ATT_PREFIX)) {
                store.insert(name, p.value.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            attention::init_params(&mut store, self.cfg.attention_dims(self.classes.len()), &mut rng)?;
            let mut state = TrainState {
                rounds_done: 0,
                store,
                adam: Adam::with_betas(self.cfg.lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps),
                rng,
                history: Vec::new(),
            };
            for epoch in 1..=epochs {
                let l = self.classifier_epoch(&mut state, train, &train_parts, mode)?;
                log::info!("ablation {mode} epoch {epoch}: loss {l:.5}");
            }
            let (report, _) = self.evaluate_parts(&state.store, test, &test_parts, mode)?;
            out.push((mode, report));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_predictions(3, &[(0, 0), (1, 1), (2, 2), (1, 1)]).unwrap();
        assert_eq!((r.instance_accuracy, r.class_accuracy), (1.0, 1.0));
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn imbalanced_case() {
        let mut pairs = vec![(0, 0); 9];
        pairs.push((1, 0));
        let r = EvalReport::from_predictions(2, &pairs).unwrap();
        assert!((r.instance_accuracy - 0.9).abs() < 1e-15);
        assert_eq!(r.class_accuracy, 0.5);
        let trace: usize = (0..2).map(|c| r.confusion[c][c]).sum();
        let all: usize = r.confusion.iter().flatten().sum();
        assert_eq!(r.instance_accuracy, trace as f64 / all as f64);
        assert_eq!(r.confusion_csv(&["a".into(), "b".into()]), "a,b\n9,0\n1,0\n");
    }

    #[test]
    fn empty_split_is_a_data_error() {
        assert!(matches!(EvalReport::from_predictions(2, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn ablation_table() {
        let r = EvalReport::from_predictions(2, &[(0, 0), (1, 0)]).unwrap();
        assert_eq!(ablation_csv(&[(AttentionMode::Opa, r)]), "mode,class_acc,instance_acc\nopa,0.5,0.5\n");
    }
}
