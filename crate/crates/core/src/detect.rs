//! Two-step detection of defining features: exhaustive candidate-subset
//! search ranked by held-out data fit and training complexity, followed by
//! a nullification check on the extended model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_scaling, pearson_rank, standardize, CandidateSet, Dataset, MAX_CANDIDATES};
use crate::gam::{build_terms, optimize_lambdas_terms, FittedGam, GamConfig, FeatureShape, TermDesign};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Minimum held-out D² for a subset to count as defining ("close to 1").
    pub d2_threshold: f64,
    /// D² window within which subsets are tied and ranked by edf instead.
    pub d2_tie_window: f64,
    /// Shape-sd ratio below which a feature counts as nullified.
    pub nullification_threshold: f64,
    /// Cap on the candidate count (the search is exhaustive over subsets).
    pub max_candidates: usize,
    pub gam: GamConfig,
    /// Worker threads for the subset fits; 0 = all available cores.
    pub workers: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            d2_threshold: 0.95,
            d2_tie_window: 0.005,
            nullification_threshold: 0.05,
            max_candidates: MAX_CANDIDATES,
            gam: GamConfig::default(),
            workers: 0,
        }
    }
}

impl DetectionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.d2_threshold > 0.0 && self.d2_threshold <= 1.0) {
            return Err(Error::Config("d2_threshold must be in (0, 1]".into()));
        }
        if self.d2_tie_window < 0.0 || self.d2_tie_window >= self.d2_threshold {
            return Err(Error::Config("require d2_threshold > d2_tie_window >= 0".into()));
        }
        if !(self.nullification_threshold > 0.0 && self.nullification_threshold < 1.0) {
            return Err(Error::Config("nullification_threshold must be in (0, 1)".into()));
        }
        if self.max_candidates == 0 || self.max_candidates > MAX_CANDIDATES {
            return Err(Error::Config(format!(
                "max_candidates must be in 1..={MAX_CANDIDATES}"
            )));
        }
        Ok(())
    }
}

/// One row of the step-1 ranking table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedModel {
    pub subset: Vec<String>,
    pub d2: f64,
    pub edf_total: f64,
    pub rank: usize,
    /// Present when the subset's fit failed; such rows sink to the bottom.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    DefiningSetFound,
    None,
    Confirmed,
    Refuted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullificationScore {
    pub feature: String,
    pub score: f64,
    pub in_defining_set: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub candidates: CandidateSet,
    pub ranked: Vec<RankedModel>,
    pub defining_set: Option<Vec<String>>,
    pub step1_verdict: Verdict,
    /// Step-2 fields are present iff step 1 found a defining set.
    pub nullification: Option<Vec<NullificationScore>>,
    pub step2_verdict: Option<Verdict>,
    pub extended_model_d2: Option<f64>,
    pub shapes: Option<Vec<FeatureShape>>,
    pub config: DetectionConfig,
}

fn subsets(features: &[String]) -> Vec<Vec<String>> {
    let m = features.len();
    (1u32..(1 << m))
        .map(|mask| {
            (0..m)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| features[i].clone())
                .collect()
        })
        .collect()
}

fn sort_ranked(ranked: &mut [RankedModel], tie_window: f64) {
    ranked.sort_by(|a, b| {
        match (&a.failure, &b.failure) {
            (Some(_), None) => return std::cmp::Ordering::Greater,
            (None, Some(_)) => return std::cmp::Ordering::Less,
            (Some(_), Some(_)) => return a.subset.cmp(&b.subset),
            (None, None) => {}
        }
        if (a.d2 - b.d2).abs() <= tie_window {
            a.edf_total
                .partial_cmp(&b.edf_total)
                .unwrap()
                .then_with(|| a.subset.cmp(&b.subset))
        } else {
            b.d2.partial_cmp(&a.d2).unwrap().then_with(|| a.subset.cmp(&b.subset))
        }
    });
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

fn run_pool<T: Send, F: Fn() -> T>(workers: usize, f: F) -> T
where
    F: Send,
{
    if workers == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(f)
    }
}

/// Step 1: fit every non-empty candidate subset with GCV-chosen smoothing,
/// rank by held-out D² (descending) with edf tie-breaking, and pick the
/// top subset when its D² clears the threshold.
///
/// `train` and `eval` must already share one standardization. Subset fits
/// run in parallel; the result is independent of the worker count.
pub fn step1_search(
    train: &Dataset,
    eval: &Dataset,
    cand: &CandidateSet,
    cfg: &DetectionConfig,
) -> Result<(Vec<RankedModel>, Option<Vec<String>>)> {
    cfg.validate()?;
    if cand.features.len() > cfg.max_candidates {
        return Err(Error::Config(format!(
            "{} candidates exceed the limit of {}",
            cand.features.len(),
            cfg.max_candidates
        )));
    }
    let terms = build_terms(train, &cand.features, cfg.gam.basis_size)?;
    let all = subsets(&cand.features);

    let rows: Vec<RankedModel> = run_pool(cfg.workers, || {
        all.par_iter()
            .map(|subset| {
                let picked: Vec<TermDesign> = terms
                    .iter()
                    .filter(|t| subset.contains(&t.feature().to_string()))
                    .cloned()
                    .collect();
                let fit = optimize_lambdas_terms(&picked, &train.labels, &Default::default(), &cfg.gam);
                match fit.and_then(|g| g.deviance(eval).map(|m| (g, m))) {
                    Ok((g, m)) => RankedModel {
                        subset: subset.clone(),
                        d2: m.d2.unwrap_or(0.0),
                        edf_total: g.total_edf,
                        rank: 0,
                        failure: None,
                    },
                    Err(e) => RankedModel {
                        subset: subset.clone(),
                        d2: f64::NEG_INFINITY,
                        edf_total: f64::INFINITY,
                        rank: 0,
                        failure: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let mut ranked = rows;
    sort_ranked(&mut ranked, cfg.d2_tie_window);
    let top = &ranked[0];
    let chosen = if top.failure.is_none() && top.d2 >= cfg.d2_threshold {
        Some(top.subset.clone())
    } else {
        None
    };
    Ok((ranked, chosen))
}

/// Ratio of the feature's shape sd to the sd of the fitted values over the
/// training rows. Near zero means the feature contributes nothing.
pub fn nullification_score(g: &FittedGam, feature: &str) -> Result<f64> {
    let t = g
        .term(feature)
        .ok_or_else(|| Error::Prediction(format!("unknown feature '{feature}'")))?;
    if g.train_fitted_sd <= 0.0 {
        return Err(Error::Data("degenerate model: fitted values are constant".into()));
    }
    Ok(t.train_shape_sd() / g.train_fitted_sd)
}

/// Step 2: fit the extended model on the full candidate set and check that
/// every non-defining candidate is nullified while every defining feature
/// keeps a visible contribution.
pub fn step2_nullify(
    train: &Dataset,
    eval: &Dataset,
    defining: &[String],
    cand: &CandidateSet,
    cfg: &DetectionConfig,
) -> Result<(FittedGam, Vec<NullificationScore>, Verdict, f64)> {
    if defining.is_empty() {
        return Err(Error::Config("step 2 requires a non-empty defining set".into()));
    }
    let mut extended: Vec<String> = defining.to_vec();
    for f in &cand.features {
        if !extended.contains(f) {
            extended.push(f.clone());
        }
    }
    let g = crate::gam::optimize_lambdas(train, &extended, &Default::default(), &cfg.gam)?;
    let metrics = g.deviance(eval)?;

    let mut scores = Vec::new();
    let mut confirmed = true;
    for f in &extended {
        let s = nullification_score(&g, f)?;
        let in_set = defining.contains(f);
        if in_set && s < cfg.nullification_threshold {
            confirmed = false;
        }
        if !in_set && s >= cfg.nullification_threshold {
            confirmed = false;
        }
        scores.push(NullificationScore {
            feature: f.clone(),
            score: s,
            in_defining_set: in_set,
        });
    }
    let verdict = if confirmed { Verdict::Confirmed } else { Verdict::Refuted };
    Ok((g, scores, verdict, metrics.d2.unwrap_or(0.0)))
}

/// Full pipeline against an arbitrary target vector (gold labels or
/// black-box predictions): candidate ranking by |Pearson r|, subset
/// search, nullification. Inputs are raw; standardization happens here.
pub fn detect_with_target(
    train_raw: &Dataset,
    eval_raw: &Dataset,
    train_target: &[f64],
    eval_target: &[f64],
    m: usize,
    cfg: &DetectionConfig,
) -> Result<DetectionReport> {
    cfg.validate()?;
    let (mut train, scaling) = standardize(train_raw)?;
    let mut eval = apply_scaling(eval_raw, &scaling);
    train.labels = train_target.to_vec();
    eval.labels = eval_target.to_vec();

    let cand = pearson_rank(&train, train_target, m.min(cfg.max_candidates))?;
    let (ranked, chosen) = step1_search(&train, &eval, &cand, cfg)?;

    let mut report = DetectionReport {
        candidates: cand.clone(),
        ranked,
        defining_set: chosen.clone(),
        step1_verdict: if chosen.is_some() {
            Verdict::DefiningSetFound
        } else {
            Verdict::None
        },
        nullification: None,
        step2_verdict: None,
        extended_model_d2: None,
        shapes: None,
        config: cfg.clone(),
    };

    if let Some(defining) = &chosen {
        let (mut g, scores, verdict, d2) = step2_nullify(&train, &eval, defining, &cand, cfg)?;
        g.scaling = scaling;
        let shapes = g
            .terms
            .iter()
            .map(|t| g.shape(t.feature(), 200))
            .collect::<Result<Vec<_>>>()?;
        report.nullification = Some(scores);
        report.step2_verdict = Some(verdict);
        report.extended_model_d2 = Some(d2);
        report.shapes = Some(shapes);
    }
    Ok(report)
}

/// Detection against the datasets' own label columns.
pub fn detect(
    train: &Dataset,
    eval: &Dataset,
    m: usize,
    cfg: &DetectionConfig,
) -> Result<DetectionReport> {
    detect_with_target(train, eval, &train.labels, &eval.labels, m, cfg)
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Text table mirroring the step-1 ranking (subset, D², edf, rank),
    /// followed by the step-2 summary when present.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Candidate features (by |Pearson r|):\n");
        for (f, r) in self.candidates.features.iter().zip(&self.candidates.correlations) {
            out.push_str(&format!("  {f:<24} r = {r:+.4}\n"));
        }
        out.push_str("\nStep 1: candidate subsets ranked by data fit (desc) and complexity (asc)\n");
        out.push_str(&format!("{:<5} {:<48} {:>8} {:>10}\n", "rank", "features", "D2", "edf"));
        for r in &self.ranked {
            let subset = r.subset.join("+");
            match &r.failure {
                None => out.push_str(&format!(
                    "{:<5} {:<48} {:>8.4} {:>10.2}\n",
                    r.rank, subset, r.d2, r.edf_total
                )),
                Some(e) => out.push_str(&format!("{:<5} {:<48} failed: {e}\n", r.rank, subset)),
            }
        }
        match &self.defining_set {
            Some(set) => out.push_str(&format!(
                "\nStep 1 verdict: defining set found: {{{}}}\n",
                set.join(", ")
            )),
            None => out.push_str("\nStep 1 verdict: none (no subset reaches the D2 threshold)\n"),
        }
        if let (Some(scores), Some(verdict)) = (&self.nullification, &self.step2_verdict) {
            out.push_str(&format!(
                "\nStep 2: nullification scores in the extended model (D2 = {:.4})\n",
                self.extended_model_d2.unwrap_or(f64::NAN)
            ));
            for s in scores {
                let tag = if s.in_defining_set { "defining " } else { "candidate" };
                out.push_str(&format!("  {tag} {:<24} score = {:.4}\n", s.feature, s.score));
            }
            out.push_str(&format!("\nStep 2 verdict: {:?}\n", verdict));
        }
        out
    }
}
