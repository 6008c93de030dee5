//! Minimal opaque predictor stub plus the audit path: the detection
//! procedure applied to (inputs, predictions) pairs, and the
//! feature-ablation experiment.
//!
//! The stub is a single-hidden-layer ReLU network trained by seeded
//! minibatch SGD with momentum. The auditor never looks inside it; it only
//! consumes predicted labels.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_scaling, standardize, Dataset, ScalingParams};
use crate::detect::{detect_with_target, DetectionConfig, DetectionReport};
use crate::{Error, Result};

pub const BATCH_SIZE: usize = 256;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubModel {
    pub features: Vec<String>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
    pub scaling: ScalingParams,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: 64,
            epochs: 30,
            learning_rate: 0.05,
            seed: 17,
        }
    }
}

/// Inputs paired with predictions of an opaque model.
#[derive(Debug, Clone)]
pub struct AuditDataset {
    pub inputs: Dataset,
    pub predictions: Vec<f64>,
}

impl AuditDataset {
    pub fn new(inputs: Dataset, predictions: Vec<f64>) -> Result<Self> {
        if predictions.len() != inputs.n_rows() {
            return Err(Error::Data("prediction length does not match inputs".into()));
        }
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("non-finite predictions".into()));
        }
        Ok(AuditDataset { inputs, predictions })
    }
}

fn design(d: &Dataset, features: &[String]) -> Result<DMatrix<f64>> {
    let n = d.n_rows();
    let mut x = DMatrix::zeros(n, features.len());
    for (j, name) in features.iter().enumerate() {
        let col = d
            .column(name)
            .ok_or_else(|| Error::Prediction(format!("missing feature column '{name}'")))?;
        for i in 0..n {
            x[(i, j)] = col.values[i];
        }
    }
    Ok(x)
}

/// Train the stub on raw data (standardization happens inside and the
/// parameters are kept with the model). Deterministic per seed.
pub fn train_stub(
    train_raw: &Dataset,
    features: &[String],
    opts: &TrainOptions,
) -> Result<StubModel> {
    let (train, scaling) = standardize(train_raw)?;
    let x = design(&train, features)?;
    let y = &train.labels;
    let n = y.len();
    let p = features.len();
    let h = opts.hidden;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bound1 = 1.0 / (p as f64).sqrt();
    let bound2 = 1.0 / (h as f64).sqrt();
    let mut w1 = DMatrix::from_fn(h, p, |_, _| rng.gen_range(-bound1..bound1));
    let mut b1: DVector<f64> = DVector::zeros(h);
    let mut w2 = DVector::from_fn(h, |_, _| rng.gen_range(-bound2..bound2));
    let mut b2 = 0.0f64;

    let mut v_w1 = DMatrix::zeros(h, p);
    let mut v_b1 = DVector::zeros(h);
    let mut v_w2 = DVector::zeros(h);
    let mut v_b2 = 0.0f64;

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(BATCH_SIZE) {
            let m = chunk.len();
            let mut xb = DMatrix::zeros(m, p);
            let mut yb = DVector::zeros(m);
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).copy_from(&x.row(i));
                yb[r] = y[i];
            }
            // forward
            let mut hidden: DMatrix<f64> = &xb * w1.transpose();
            for r in 0..m {
                for c in 0..h {
                    hidden[(r, c)] = (hidden[(r, c)] + b1[c]).max(0.0);
                }
            }
            let pred = &hidden * &w2 + DVector::from_element(m, b2);
            let err = &pred - &yb;
            if err.iter().any(|e| !e.is_finite()) {
                return Err(Error::Training(
                    "loss diverged (NaN); try a smaller learning rate".into(),
                ));
            }
            let scale = 2.0 / m as f64;

            // backward
            let g_w2 = hidden.transpose() * &err * scale;
            let g_b2 = err.sum() * scale;
            let mut delta = DMatrix::zeros(m, h);
            for r in 0..m {
                for c in 0..h {
                    if hidden[(r, c)] > 0.0 {
                        delta[(r, c)] = err[r] * w2[c] * scale;
                    }
                }
            }
            let g_w1 = delta.transpose() * &xb;
            let g_b1 = DVector::from_fn(h, |c, _| delta.column(c).sum());

            let lr = opts.learning_rate;
            v_w1 = v_w1 * MOMENTUM - g_w1 * lr;
            v_b1 = v_b1 * MOMENTUM - g_b1 * lr;
            v_w2 = v_w2 * MOMENTUM - g_w2 * lr;
            v_b2 = v_b2 * MOMENTUM - g_b2 * lr;
            w1 += &v_w1;
            b1 += &v_b1;
            w2 += &v_w2;
            b2 += v_b2;
        }
    }

    if w1.iter().any(|v| !v.is_finite()) || w2.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(
            "parameters diverged; try a smaller learning rate".into(),
        ));
    }

    Ok(StubModel {
        features: features.to_vec(),
        w1,
        b1,
        w2,
        b2,
        scaling,
        epochs: opts.epochs,
        learning_rate: opts.learning_rate,
        seed: opts.seed,
    })
}

impl StubModel {
    /// Forward pass on raw inputs (standardized internally).
    pub fn predict(&self, raw: &Dataset) -> Result<Vec<f64>> {
        let d = apply_scaling(raw, &self.scaling);
        let x = design(&d, &self.features)?;
        Ok(self.forward(&x))
    }

    fn forward(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let n = x.nrows();
        let h = self.w1.nrows();
        let mut hidden = x * self.w1.transpose();
        for r in 0..n {
            for c in 0..h {
                hidden[(r, c)] = (hidden[(r, c)] + self.b1[c]).max(0.0);
            }
        }
        let pred = hidden * &self.w2 + DVector::from_element(n, self.b2);
        pred.iter().copied().collect()
    }

    /// Forward pass with one standardized feature column replaced by 0
    /// (the mean of the standardized inputs). Zeroing a column the model
    /// does not read leaves the predictions unchanged.
    fn predict_ablated(&self, raw: &Dataset, feature: &str) -> Result<Vec<f64>> {
        let mut d = apply_scaling(raw, &self.scaling);
        let col = d
            .columns
            .iter_mut()
            .find(|c| c.name == feature)
            .ok_or_else(|| Error::Prediction(format!("unknown feature '{feature}'")))?;
        col.values.iter_mut().for_each(|v| *v = 0.0);
        let x = design(&d, &self.features)?;
        Ok(self.forward(&x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<StubModel> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Round a raw prediction to the nearest integer score, clamped to [0, 4].
pub fn round_score(v: f64) -> i32 {
    (v.round() as i32).clamp(0, 4)
}

pub fn rounded_accuracy(pred: &[f64], gold: &[f64]) -> f64 {
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| round_score(**p) == round_score(**g))
        .count();
    hits as f64 / gold.len() as f64
}

/// Audit black-box predictions: split the audit set by group, rank
/// candidates by |correlation with the predictions| and run the two-step
/// detection procedure against the predictions. Gold labels are never
/// consulted.
pub fn audit(
    data: &AuditDataset,
    m: usize,
    cfg: &DetectionConfig,
    split_seed: u64,
) -> Result<DetectionReport> {
    let mut with_target = data.inputs.clone();
    with_target.labels = data.predictions.clone();
    let (train, eval) = crate::dataset::split_by_group(&with_target, 0.25, split_seed)?;
    detect_with_target(&train, &eval, &train.labels.clone(), &eval.labels.clone(), m, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub feature: String,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Rounded-score counts (0..=4) of the ablated predictions.
    pub histogram: [usize; 5],
    pub mode_share: f64,
    pub majority_class_freq: f64,
}

/// Zero out one standardized input at test time and measure the damage.
pub fn ablate(model: &StubModel, test_raw: &Dataset, feature: &str) -> Result<AblationReport> {
    let before = model.predict(test_raw)?;
    let after = model.predict_ablated(test_raw, feature)?;
    let gold = &test_raw.labels;

    let mut histogram = [0usize; 5];
    for p in &after {
        histogram[round_score(*p) as usize] += 1;
    }
    let mode = *histogram.iter().max().unwrap();

    let mut gold_counts = [0usize; 5];
    for g in gold {
        gold_counts[round_score(*g) as usize] += 1;
    }
    let majority = *gold_counts.iter().max().unwrap();

    Ok(AblationReport {
        feature: feature.to_string(),
        accuracy_before: rounded_accuracy(&before, gold),
        accuracy_after: rounded_accuracy(&after, gold),
        histogram,
        mode_share: mode as f64 / after.len() as f64,
        majority_class_freq: majority as f64 / gold.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, ColumnKind};
    use approx::assert_abs_diff_eq;

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0f64)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0f64)).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 2.0 } else { 0.0 }).collect();
        Dataset {
            columns: vec![
                Column { name: "x".into(), values: x, kind: ColumnKind::Continuous },
                Column { name: "z".into(), values: z, kind: ColumnKind::Continuous },
            ],
            label_name: "y".into(),
            labels: y,
            group_ids: (0..n as u64).collect(),
        }
    }

    #[test]
    fn rounding_and_clamping() {
        assert_eq!(round_score(1.6), 2);
        assert_eq!(round_score(-0.4), 0);
        assert_eq!(round_score(7.3), 4);
    }

    #[test]
    fn zero_weight_network_outputs_bias() {
        let d = toy_data(50, 1);
        let (_, scaling) = standardize(&d).unwrap();
        let m = StubModel {
            features: vec!["x".into(), "z".into()],
            w1: DMatrix::zeros(8, 2),
            b1: DVector::zeros(8),
            w2: DVector::zeros(8),
            b2: 1.5,
            scaling,
            epochs: 0,
            learning_rate: 0.0,
            seed: 0,
        };
        let preds = m.predict(&d).unwrap();
        assert!(preds.iter().all(|&p| p == 1.5));
    }

    #[test]
    fn training_is_deterministic() {
        let d = toy_data(600, 2);
        let feats = vec!["x".to_string(), "z".to_string()];
        let opts = TrainOptions { epochs: 5, ..Default::default() };
        let m1 = train_stub(&d, &feats, &opts).unwrap();
        let m2 = train_stub(&d, &feats, &opts).unwrap();
        assert_eq!(m1.w1, m2.w1);
        assert_eq!(m1.w2, m2.w2);
        assert_eq!(m1.b2, m2.b2);
    }

    #[test]
    fn stub_learns_a_simple_step() {
        let d = toy_data(2000, 3);
        let feats = vec!["x".to_string(), "z".to_string()];
        let m = train_stub(&d, &feats, &TrainOptions::default()).unwrap();
        let test = toy_data(500, 4);
        let acc = rounded_accuracy(&m.predict(&test).unwrap(), &test.labels);
        assert!(acc > 0.9, "accuracy {acc}");
    }

    #[test]
    fn ablating_unseen_feature_changes_nothing() {
        let d = toy_data(800, 5);
        let m = train_stub(&d, &["x".to_string()], &TrainOptions { epochs: 8, ..Default::default() }).unwrap();
        let test = toy_data(300, 6);
        // "z" is a column of the dataset the stub was never trained on
        let report = ablate(&m, &test, "z").unwrap();
        assert_abs_diff_eq!(report.accuracy_before, report.accuracy_after, epsilon = 1e-12);
        // a column absent from the data entirely is an error
        assert!(ablate(&m, &test, "ghost").is_err());
    }

    #[test]
    fn divergence_reports_training_error() {
        let d = toy_data(600, 7);
        let opts = TrainOptions { learning_rate: 1e4, epochs: 5, ..Default::default() };
        match train_stub(&d, &["x".to_string(), "z".to_string()], &opts) {
            Err(Error::Training(_)) => {}
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn audit_ignores_gold_labels() {
        let d = toy_data(1200, 8);
        let feats = vec!["x".to_string(), "z".to_string()];
        let m = train_stub(&d, &feats, &TrainOptions { epochs: 10, ..Default::default() }).unwrap();
        let test = toy_data(900, 9);
        let preds = m.predict(&test).unwrap();

        let a1 = AuditDataset::new(test.clone(), preds.clone()).unwrap();
        let mut scrambled = test.clone();
        scrambled.labels.iter_mut().for_each(|v| *v = -99.0);
        let a2 = AuditDataset::new(scrambled, preds).unwrap();

        let cfg = DetectionConfig::default();
        let r1 = audit(&a1, 2, &cfg, 11).unwrap();
        let r2 = audit(&a2, 2, &cfg, 11).unwrap();
        assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
    }
}
