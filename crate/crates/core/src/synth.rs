//! Synthetic clinical-style datasets: correlated physiological features
//! labeled by composable consensus-definition rules (threshold tables,
//! maxima of sub-scores, products of conditions).
//!
//! The labels are a deterministic function of the emitted feature columns.
//! That is exactly the validity defect the detector is supposed to find.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, ColumnKind, Dataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascending,
    Descending,
}

/// Score lookup against ascending cut points. `scores[i]` is the score of
/// the half-open interval `[cuts[i-1], cuts[i])`; a value equal to a cut
/// belongs to the upper interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub cuts: Vec<f64>,
    pub scores: Vec<i32>,
    pub direction: Direction,
}

impl ThresholdTable {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.cuts.len() + 1 {
            return Err(Error::Rule(format!(
                "need {} scores for {} cuts",
                self.cuts.len() + 1,
                self.cuts.len()
            )));
        }
        if !self.cuts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Rule("cuts must be strictly ascending".into()));
        }
        if self.scores.iter().any(|&s| !(0..=4).contains(&s)) {
            return Err(Error::Rule("scores must lie in [0, 4]".into()));
        }
        let ok = match self.direction {
            Direction::Ascending => self.scores.windows(2).all(|w| w[0] <= w[1]),
            Direction::Descending => self.scores.windows(2).all(|w| w[0] >= w[1]),
        };
        if !ok {
            return Err(Error::Rule("scores do not match the declared direction".into()));
        }
        Ok(())
    }
}

/// Score of the interval containing x.
pub fn eval_step(x: f64, t: &ThresholdTable) -> i32 {
    let idx = t.cuts.iter().take_while(|&&c| x >= c).count();
    t.scores[idx]
}

/// Composable data labeling function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LabelingRule {
    Step {
        feature: String,
        table: ThresholdTable,
    },
    Max(Box<LabelingRule>, Box<LabelingRule>),
    Product(Box<LabelingRule>, Box<LabelingRule>),
    GreaterEq {
        feature: String,
        bound: f64,
    },
}

impl LabelingRule {
    pub fn referenced_features(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_features(&mut out);
        out.dedup();
        out
    }

    fn collect_features(&self, out: &mut Vec<String>) {
        match self {
            LabelingRule::Step { feature, .. } | LabelingRule::GreaterEq { feature, .. } => {
                if !out.contains(feature) {
                    out.push(feature.clone());
                }
            }
            LabelingRule::Max(a, b) | LabelingRule::Product(a, b) => {
                a.collect_features(out);
                b.collect_features(out);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LabelingRule::Step { table, .. } => table.validate(),
            LabelingRule::Max(a, b) | LabelingRule::Product(a, b) => {
                a.validate()?;
                b.validate()
            }
            LabelingRule::GreaterEq { .. } => Ok(()),
        }
    }
}

/// Recursive rule evaluation over one row of named feature values.
pub fn eval_rule(rule: &LabelingRule, get: &impl Fn(&str) -> Option<f64>) -> Result<f64> {
    match rule {
        LabelingRule::Step { feature, table } => {
            let x = get(feature)
                .ok_or_else(|| Error::Rule(format!("missing feature '{feature}' in rule")))?;
            Ok(eval_step(x, table) as f64)
        }
        LabelingRule::Max(a, b) => Ok(eval_rule(a, get)?.max(eval_rule(b, get)?)),
        LabelingRule::Product(a, b) => Ok(eval_rule(a, get)? * eval_rule(b, get)?),
        LabelingRule::GreaterEq { feature, bound } => {
            let x = get(feature)
                .ok_or_else(|| Error::Rule(format!("missing feature '{feature}' in rule")))?;
            Ok(if x >= *bound { 1.0 } else { 0.0 })
        }
    }
}

/// Component of the per-patient severity mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeverityComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSource {
    Severity,
    Infection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Lognormal,
}

/// One generated feature: `z = loading * latent + noise`, then
/// `value = T(shift + scale * z)` with optional rounding and clamping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub source: LatentSource,
    pub loading: f64,
    pub noise_sd: f64,
    pub shift: f64,
    pub scale: f64,
    pub transform: Transform,
    #[serde(default)]
    pub round: Option<f64>,
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
}

/// Per-patient infection indicator: Bernoulli with
/// `P = logistic(base_logit + severity_coef * severity)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfectionSpec {
    pub base_logit: f64,
    pub severity_coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_patients: usize,
    pub rows_per_patient: (usize, usize),
    pub severity_mixture: Vec<SeverityComponent>,
    #[serde(default)]
    pub infection: Option<InfectionSpec>,
    pub features: Vec<FeatureSpec>,
    pub rule: LabelingRule,
    pub label_name: String,
    pub seed: u64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Generation("n_patients must be positive".into()));
        }
        let (lo, hi) = self.rows_per_patient;
        if lo == 0 || hi < lo {
            return Err(Error::Generation("invalid rows_per_patient range".into()));
        }
        if self.severity_mixture.is_empty()
            || self.severity_mixture.iter().any(|c| c.weight <= 0.0 || c.sd <= 0.0)
        {
            return Err(Error::Generation("invalid severity mixture".into()));
        }
        for f in &self.features {
            if f.source == LatentSource::Severity && f.noise_sd <= 0.0 {
                return Err(Error::Generation(format!(
                    "feature '{}' needs noise_sd > 0",
                    f.name
                )));
            }
            if !f.loading.is_finite() || !f.shift.is_finite() || !f.scale.is_finite() {
                return Err(Error::Generation(format!("feature '{}' has non-finite parameters", f.name)));
            }
            if f.source == LatentSource::Infection && self.infection.is_none() {
                return Err(Error::Generation(format!(
                    "feature '{}' references the infection latent but none is configured",
                    f.name
                )));
            }
        }
        self.rule.validate()?;
        let names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        for r in self.rule.referenced_features() {
            if !names.contains(&r.as_str()) {
                return Err(Error::Generation(format!(
                    "rule references unknown feature '{r}'"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<GenConfig> {
        let cfg: GenConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_severity(mix: &[SeverityComponent], rng: &mut ChaCha8Rng) -> f64 {
    let total: f64 = mix.iter().map(|c| c.weight).sum();
    let mut u = rng.gen_range(0.0..total);
    for c in mix {
        if u < c.weight {
            let n = Normal::new(c.mean, c.sd).unwrap();
            return n.sample(rng);
        }
        u -= c.weight;
    }
    let last = mix.last().unwrap();
    Normal::new(last.mean, last.sd).unwrap().sample(rng)
}

/// Generate a dataset. Deterministic for a fixed config (including seed).
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut columns: Vec<Column> = cfg
        .features
        .iter()
        .map(|f| Column {
            name: f.name.clone(),
            values: Vec::new(),
            kind: ColumnKind::Continuous,
        })
        .collect();
    let mut labels = Vec::new();
    let mut group_ids = Vec::new();

    let (lo, hi) = cfg.rows_per_patient;
    for patient in 0..cfg.n_patients {
        let severity = draw_severity(&cfg.severity_mixture, &mut rng);
        let infection = match &cfg.infection {
            Some(spec) => {
                let p = logistic(spec.base_logit + spec.severity_coef * severity);
                if rng.gen_range(0.0..1.0) < p {
                    1.0
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        let n_rows = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        for _ in 0..n_rows {
            let mut row: Vec<f64> = Vec::with_capacity(cfg.features.len());
            for f in &cfg.features {
                let v = match f.source {
                    LatentSource::Infection => infection,
                    LatentSource::Severity => {
                        let noise: f64 = std_normal.sample(&mut rng) * f.noise_sd;
                        let z = f.loading * severity + noise;
                        let raw = f.shift + f.scale * z;
                        let mut v = match f.transform {
                            Transform::Identity => raw,
                            Transform::Lognormal => raw.exp(),
                        };
                        if let Some(prec) = f.round {
                            v = (v / prec).round() * prec;
                        }
                        if let Some((a, b)) = f.clamp {
                            v = v.clamp(a, b);
                        }
                        v
                    }
                };
                row.push(v);
            }
            let get = |name: &str| {
                cfg.features
                    .iter()
                    .position(|f| f.name == name)
                    .map(|i| row[i])
            };
            labels.push(eval_rule(&cfg.rule, &get)?);
            for (col, v) in columns.iter_mut().zip(&row) {
                col.values.push(*v);
            }
            group_ids.push(patient as u64);
        }
    }

    for col in &mut columns {
        if col.values.iter().all(|&v| v == 0.0 || v == 1.0) {
            col.kind = ColumnKind::Binary;
        }
        if col.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Generation(format!(
                "feature '{}' produced non-finite values",
                col.name
            )));
        }
    }

    Ok(Dataset {
        columns,
        label_name: cfg.label_name.clone(),
        labels,
        group_ids,
    })
}

fn severity_default() -> Vec<SeverityComponent> {
    vec![
        SeverityComponent {
            weight: 0.72,
            mean: -0.55,
            sd: 0.42,
        },
        SeverityComponent {
            weight: 0.28,
            mean: 1.25,
            sd: 0.62,
        },
    ]
}

fn feature(
    name: &str,
    loading: f64,
    noise_sd: f64,
    shift: f64,
    scale: f64,
    transform: Transform,
    round: Option<f64>,
    clamp: Option<(f64, f64)>,
) -> FeatureSpec {
    FeatureSpec {
        name: name.into(),
        source: LatentSource::Severity,
        loading,
        noise_sd,
        shift,
        scale,
        transform,
        round,
        clamp,
    }
}

/// Liver score preset: the label is a pure threshold table over bilirubin;
/// the other features track the same severity latent but never enter the
/// rule.
pub fn liver_config(n_patients: usize, seed: u64) -> GenConfig {
    // Severity modes sit inside the score bands of the bilirubin table
    // (log-scale band centers), mimicking a cohort that clusters into
    // discrete dysfunction grades; weights follow the ~76% zero-score
    // class balance.
    let severity_mixture = vec![
        SeverityComponent { weight: 0.60, mean: -1.30, sd: 0.30 },
        SeverityComponent { weight: 0.16, mean: -0.15, sd: 0.08 },
        SeverityComponent { weight: 0.17, mean: 0.43, sd: 0.05 },
        SeverityComponent { weight: 0.05, mean: 1.24, sd: 0.04 },
        SeverityComponent { weight: 0.015, mean: 2.14, sd: 0.012 },
        SeverityComponent { weight: 0.005, mean: 2.60, sd: 0.012 },
    ];
    GenConfig {
        n_patients,
        rows_per_patient: (80, 120),
        severity_mixture,
        infection: None,
        features: vec![
            feature("bilirubin", 1.0, 0.02, 0.0, 1.0, Transform::Lognormal, Some(0.01), Some((0.05, 30.0))),
            feature("asat", 0.50, 0.90, 3.60, 0.55, Transform::Lognormal, Some(1.0), Some((5.0, 4000.0))),
            feature("quick_inr", 0.45, 0.95, 1.15, 0.22, Transform::Identity, Some(0.01), Some((0.5, 5.0))),
            feature("alat", 0.45, 1.00, 3.40, 0.50, Transform::Lognormal, Some(1.0), Some((5.0, 4000.0))),
            feature("thrombocytes", -0.45, 1.00, 230.0, 70.0, Transform::Identity, Some(1.0), Some((5.0, 900.0))),
        ],
        rule: LabelingRule::Step {
            feature: "bilirubin".into(),
            table: ThresholdTable {
                cuts: vec![1.2, 2.0, 6.0, 12.0],
                scores: vec![0, 1, 2, 3, 4],
                direction: Direction::Ascending,
            },
        },
        label_name: "liver_sofa".into(),
        seed,
    }
}

/// Kidney score preset: label = max of a creatinine table and a
/// (descending) urine-output table.
pub fn kidney_config(n_patients: usize, seed: u64) -> GenConfig {
    // Creatinine modes sit inside the score bands of its table (log-scale
    // centers), as in the liver preset; urine output declines with the
    // same severity latent but carries enough independent noise that a
    // low-output/low-creatinine subgroup exists, which the max rule turns
    // into urine-driven labels.
    let severity_mixture = vec![
        SeverityComponent { weight: 0.60, mean: -0.45, sd: 0.30 },
        SeverityComponent { weight: 0.14, mean: 0.44, sd: 0.11 },
        SeverityComponent { weight: 0.10, mean: 0.97, sd: 0.12 },
        SeverityComponent { weight: 0.08, mean: 1.43, sd: 0.08 },
        SeverityComponent { weight: 0.08, mean: 1.95, sd: 0.12 },
    ];
    GenConfig {
        n_patients,
        rows_per_patient: (80, 120),
        severity_mixture,
        infection: None,
        features: vec![
            feature("creatinine", 1.0, 0.06, 0.0, 1.0, Transform::Lognormal, None, Some((0.1, 15.0))),
            feature("urine_24h", -0.35, 1.0, 1400.0, 520.0, Transform::Identity, None, Some((0.0, 4000.0))),
            feature("leukocytes", 0.45, 1.00, 2.30, 0.40, Transform::Lognormal, Some(0.1), Some((0.5, 80.0))),
            feature("crp", 0.50, 0.90, 3.20, 0.70, Transform::Lognormal, Some(1.0), Some((1.0, 600.0))),
            feature("sodium", 0.35, 1.10, 140.0, 4.5, Transform::Identity, Some(1.0), Some((110.0, 175.0))),
            feature("cardiac_output", -0.45, 1.00, 5.4, 1.0, Transform::Identity, Some(0.1), Some((1.0, 12.0))),
        ],
        rule: LabelingRule::Max(
            Box::new(LabelingRule::Step {
                feature: "creatinine".into(),
                table: ThresholdTable {
                    cuts: vec![1.2, 2.0, 3.5, 5.0],
                    scores: vec![0, 1, 2, 3, 4],
                    direction: Direction::Ascending,
                },
            }),
            Box::new(LabelingRule::Step {
                feature: "urine_24h".into(),
                table: ThresholdTable {
                    cuts: vec![200.0, 500.0],
                    scores: vec![4, 3, 0],
                    direction: Direction::Descending,
                },
            }),
        ),
        label_name: "kidney_sofa".into(),
        seed,
    }
}

/// Sepsis preset: label = 1{SOFA-24h >= 2} * 1{suspected infection}. The
/// SOFA-24h marginal is tuned so that organ dysfunction is near-certain
/// among infected patients, which reduces the definition to the infection
/// test.
pub fn sepsis_config(n_patients: usize, seed: u64) -> GenConfig {
    GenConfig {
        n_patients,
        rows_per_patient: (80, 120),
        severity_mixture: severity_default(),
        infection: Some(InfectionSpec {
            base_logit: -1.05,
            severity_coef: 0.85,
        }),
        features: vec![
            FeatureSpec {
                name: "suspected_infection".into(),
                source: LatentSource::Infection,
                loading: 1.0,
                noise_sd: 0.0,
                shift: 0.0,
                scale: 1.0,
                transform: Transform::Identity,
                round: None,
                clamp: None,
            },
            feature("sofa_24h", 1.0, 0.45, 6.2, 3.1, Transform::Identity, Some(1.0), Some((0.0, 24.0))),
            feature("leukocytes", 0.80, 0.62, 2.30, 0.45, Transform::Lognormal, Some(0.1), Some((0.5, 80.0))),
            feature("crp", 0.85, 0.55, 3.20, 0.90, Transform::Lognormal, Some(1.0), Some((1.0, 600.0))),
            feature("sodium", 0.70, 0.73, 140.0, 4.5, Transform::Identity, Some(1.0), Some((110.0, 175.0))),
            feature("cardiac_output", -0.75, 0.67, 5.4, 1.1, Transform::Identity, Some(0.1), Some((1.0, 12.0))),
        ],
        rule: LabelingRule::Product(
            Box::new(LabelingRule::GreaterEq {
                feature: "sofa_24h".into(),
                bound: 2.0,
            }),
            Box::new(LabelingRule::GreaterEq {
                feature: "suspected_infection".into(),
                bound: 1.0,
            }),
        ),
        label_name: "sepsis3".into(),
        seed,
    }
}
