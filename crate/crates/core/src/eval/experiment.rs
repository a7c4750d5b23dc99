use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CorpusConfig, ExperimentConfig, Mode};
use super::metrics::{
    best_pairs, ivf_failure_rate, micro_ap_from_pairs, recall_at_1_from, recall_bound_check, search_all, PrPoint,
    RecallBound, ScoredPair,
};
use crate::activation::{activate, activate_eot, LossKind, LossTarget};
use crate::extractor::{ExtractorWeights, FEATURE_DIM};
use crate::imagelab::{apply_transform, generate_image, quality, Image, TransformSpec};
use crate::index::AnyIndex;
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Seed of the procedural corpus playing `role` (`"train"`, `"reference"`
/// or `"negative"`) under the root seed.
pub fn corpus_seed(root: u64, role: &str) -> u64 {
    derive_seed(root, &format!("corpus-{role}"), 0)
}

/// Extracts the features of `n` images produced on demand, row-major.
pub fn extract_rows<F>(extractor: &ExtractorWeights, n: usize, image: F) -> Result<Vec<f32>>
where
    F: Fn(usize) -> Result<Image> + Sync,
{
    let rows: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| Ok(extractor.extract(&image(i)?)?.into_inner()))
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Training and reference features plus the query images, built once and
/// shareable between runs that differ only in index or activation settings.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub train: Vec<f32>,
    pub references: Vec<f32>,
    /// References `0..positives`.
    pub positives: Vec<Image>,
    pub negatives: Vec<Image>,
}

impl FeatureBank {
    pub fn build(config: &ExperimentConfig, extractor: &ExtractorWeights) -> Result<Self> {
        let c = &config.corpus;
        let size = c.image_size;
        let (train_seed, ref_seed, neg_seed) = (
            corpus_seed(config.seed, "train"),
            corpus_seed(config.seed, "reference"),
            corpus_seed(config.seed, "negative"),
        );
        let train = extract_rows(extractor, c.train, |i| generate_image(train_seed, i as u64, size))
            .map_err(|e| e.in_stage("train features"))?;
        let references = extract_rows(extractor, c.references, |i| generate_image(ref_seed, i as u64, size))
            .map_err(|e| e.in_stage("reference features"))?;
        let positives = (0..c.positives as u64)
            .into_par_iter()
            .map(|i| generate_image(ref_seed, i, size))
            .collect::<Result<_>>()?;
        let negatives = (0..c.negatives as u64)
            .into_par_iter()
            .map(|i| generate_image(neg_seed, i, size))
            .collect::<Result<_>>()?;
        Ok(FeatureBank {
            seed: config.seed,
            corpus: c.clone(),
            train,
            references,
            positives,
            negatives,
        })
    }

    fn check(&self, config: &ExperimentConfig) -> Result<()> {
        if self.seed != config.seed || self.corpus != config.corpus {
            return Err(Error::invalid("feature bank was built for a different corpus"));
        }
        Ok(())
    }
}

/// Trains the configured index on the bank and adds every reference under
/// its position as id.
pub fn build_index(config: &ExperimentConfig, bank: &FeatureBank) -> Result<AnyIndex> {
    let mut index = config.index.train(&bank.train, FEATURE_DIM, derive_seed(config.seed, "index", 0))?;
    for (i, x) in bank.references.chunks_exact(FEATURE_DIM).enumerate() {
        index.add(i as u32, x)?;
    }
    Ok(index)
}

/// Activates `images[i]`, stored under `ids[i]`, with the configured settings.
pub fn activate_images(
    config: &ExperimentConfig,
    extractor: &ExtractorWeights,
    index: &AnyIndex,
    ids: &[u32],
    images: &[Image],
) -> Result<Vec<Image>> {
    if ids.len() != images.len() {
        return Err(Error::invalid(format!("{} ids for {} images", ids.len(), images.len())));
    }
    ids.par_iter()
        .zip(images)
        .map(|(&id, img)| {
            let run = if config.activation.eot.is_some() {
                activate_eot
            } else {
                activate
            };
            Ok(run(img, extractor, index, id, &config.activation)?.activated)
        })
        .collect()
}

/// Queries evaluated against an index.
#[derive(Clone, Debug)]
pub struct QuerySet {
    /// Ground-truth reference id of each positive query.
    pub ids: Vec<u32>,
    /// Reference images, queried in passive mode.
    pub originals: Vec<Image>,
    /// Activated references, queried in active mode.
    pub activated: Option<Vec<Image>>,
    /// Images without a counterpart in the index.
    pub negatives: Vec<Image>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformResult {
    pub mode: Mode,
    pub transform: String,
    pub spec: TransformSpec,
    pub recall_at_1: f64,
    pub micro_ap: f64,
    /// Probability that the query lands in another coarse cell than its
    /// reference; absent for indexes without cells.
    pub p_f: Option<f64>,
    /// Present for single-probe runs on cell-based indexes.
    pub recall_bound: Option<RecallBound>,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    /// R@1 averaged over the transforms.
    pub mean_recall_at_1: f64,
    /// Micro-AP with the queries of every transform pooled.
    pub micro_ap: f64,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub images: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub linf_mean: f64,
    pub linf_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub loss: LossKind,
    pub quality: QualitySummary,
    /// Fraction of images whose feature moved closer to the index target.
    pub closer_fraction: f64,
    /// Mean distance to the target before and after activation.
    pub distance_before: f64,
    pub distance_after: f64,
    /// Mean of `1 − after / before`; point targets only.
    pub mean_reduction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub index_family: String,
    pub references: usize,
    pub positives: usize,
    pub negatives: usize,
    pub results: Vec<TransformResult>,
    pub summary: Vec<ModeSummary>,
    pub activation: Option<ActivationSummary>,
}

impl EvalReport {
    pub fn result(&self, mode: Mode, transform: &str) -> Option<&TransformResult> {
        self.results.iter().find(|r| r.mode == mode && r.transform == transform)
    }

    pub fn summary(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock time per stage, kept apart from the reproducible report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<StageTime>,
}

impl Timing {
    fn record(&mut self, stage: &str, since: Instant) {
        self.stages.push(StageTime {
            stage: stage.into(),
            seconds: since.elapsed().as_secs_f64(),
        });
        log::info!("{stage}: {:.1}s", since.elapsed().as_secs_f64());
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.seconds).sum()
    }
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub index: AnyIndex,
    /// Activated positives, when active mode was requested.
    pub activated: Option<Vec<Image>>,
    pub timing: Timing,
}

fn query_spec(spec: &TransformSpec, role: &str, i: usize) -> TransformSpec {
    spec.with_seed(derive_seed(spec.seed, role, i as u64))
}

fn transformed_rows(
    extractor: &ExtractorWeights,
    images: &[Image],
    labels: &[u32],
    spec: &TransformSpec,
    role: &str,
) -> Result<Vec<f32>> {
    extract_rows(extractor, images.len(), |i| {
        apply_transform(&images[i], &query_spec(spec, role, labels[i] as usize))
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn activation_summary(
    config: &ExperimentConfig,
    extractor: &ExtractorWeights,
    index: &AnyIndex,
    queries: &QuerySet,
    activated: &[Image],
) -> Result<ActivationSummary> {
    let kind = config.activation.loss.unwrap_or_else(|| LossKind::for_index(index));
    let rows: Vec<(f64, f64, f64, f64)> = queries
        .ids
        .par_iter()
        .zip(&queries.originals)
        .zip(activated)
        .map(|((&id, orig), act)| {
            let target = LossTarget::from_index(index, id, kind)?;
            let q = quality(orig, act)?;
            let before = target.distance(&extractor.extract(orig)?.to_f64())?;
            let after = target.distance(&extractor.extract(act)?.to_f64())?;
            Ok((q.psnr_db, q.linf, before, after))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let psnr: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (psnr_mean, psnr_std) = mean_std(&psnr);
    let point = kind != LossKind::Lsh;
    Ok(ActivationSummary {
        loss: kind,
        quality: QualitySummary {
            images: rows.len(),
            psnr_mean,
            psnr_std,
            linf_mean: rows.iter().map(|r| r.1).sum::<f64>() / n,
            linf_max: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        },
        closer_fraction: rows.iter().filter(|r| r.3 < r.2).count() as f64 / n,
        distance_before: rows.iter().map(|r| r.2).sum::<f64>() / n,
        distance_after: rows.iter().map(|r| r.3).sum::<f64>() / n,
        mean_reduction: point.then(|| {
            rows.iter()
                .map(|r| if r.2 > 0.0 { 1.0 - r.3 / r.2 } else { 0.0 })
                .sum::<f64>()
                / n
        }),
    })
}

/// Runs every transform in every configured mode against `index`.
pub fn evaluate(
    config: &ExperimentConfig,
    extractor: &ExtractorWeights,
    index: &AnyIndex,
    queries: &QuerySet,
) -> Result<EvalReport> {
    config.validate()?;
    let n = queries.ids.len();
    if n == 0 || queries.originals.len() != n {
        return Err(Error::invalid(format!(
            "{} query ids for {} original images",
            n,
            queries.originals.len()
        )));
    }
    if queries.negatives.is_empty() {
        return Err(Error::invalid("evaluation needs negative queries"));
    }
    if let Some(&id) = queries.ids.iter().find(|&&id| !index.contains(id)) {
        return Err(Error::NotFound(format!("query id {id} is not in the index")));
    }
    let activated = match (&queries.activated, config.modes.contains(&Mode::Active)) {
        (Some(a), _) if a.len() != n => {
            return Err(Error::invalid(format!("{} activated images for {n} queries", a.len())))
        }
        (None, true) => return Err(Error::invalid("active mode needs activated images")),
        (a, _) => a.as_deref(),
    };
    let (k, nprobe) = (config.retrieval.k, config.retrieval.nprobe);
    let negative_labels: Vec<u32> = (0..queries.negatives.len() as u32).collect();
    let reference = extract_rows(extractor, n, |i| Ok(queries.originals[i].clone()))?;

    let mut results = Vec::new();
    let mut pooled: Vec<Vec<Option<ScoredPair>>> = vec![Vec::new(); config.modes.len()];
    let mut recalls: Vec<Vec<f64>> = vec![Vec::new(); config.modes.len()];
    for spec in &config.transforms {
        let label = spec.label();
        let stage = |e: Error| e.in_stage(&format!("transform {label}"));
        let neg = transformed_rows(extractor, &queries.negatives, &negative_labels, spec, "negative").map_err(stage)?;
        let neg_results = search_all(index, &neg, k, nprobe).map_err(stage)?;
        let neg_pairs = best_pairs(&neg_results, &vec![None; neg_results.len()]);
        for (m, &mode) in config.modes.iter().enumerate() {
            let images = match mode {
                Mode::Passive => &queries.originals[..],
                Mode::Active => activated.unwrap_or_default(),
            };
            let feats = transformed_rows(extractor, images, &queries.ids, spec, "query").map_err(stage)?;
            let res = search_all(index, &feats, k, nprobe).map_err(stage)?;
            let recall = recall_at_1_from(&res, &queries.ids)?;
            let truth: Vec<Option<u32>> = queries.ids.iter().map(|&id| Some(id)).collect();
            let mut pairs = best_pairs(&res, &truth);
            pairs.extend_from_slice(&neg_pairs);
            let curve = micro_ap_from_pairs(&pairs, n)?;
            let p_f = match index.coarse() {
                Some(_) => Some(ivf_failure_rate(index, &reference, &feats).map_err(stage)?),
                None => None,
            };
            let recall_bound = match p_f {
                Some(p) if nprobe == 1 => Some(recall_bound_check(curve.max_recall(), p, n, 1)?),
                _ => None,
            };
            log::info!("{label} {}: R@1 {recall:.3} µAP {:.3}", mode.name(), curve.micro_ap);
            results.push(TransformResult {
                mode,
                transform: label.clone(),
                spec: *spec,
                recall_at_1: recall,
                micro_ap: curve.micro_ap,
                p_f,
                recall_bound,
                pr_curve: curve.thinned(config.retrieval.pr_points),
            });
            recalls[m].push(recall);
            pooled[m].extend(pairs);
        }
    }

    let mut summary = Vec::new();
    for (m, &mode) in config.modes.iter().enumerate() {
        let curve = micro_ap_from_pairs(&pooled[m], n * config.transforms.len())?;
        summary.push(ModeSummary {
            mode,
            mean_recall_at_1: recalls[m].iter().sum::<f64>() / recalls[m].len() as f64,
            micro_ap: curve.micro_ap,
            pr_curve: curve.thinned(config.retrieval.pr_points),
        });
    }
    let activation = match activated {
        Some(a) => Some(activation_summary(config, extractor, index, queries, a)?),
        None => None,
    };
    Ok(EvalReport {
        config: config.clone(),
        index_family: index.family().into(),
        references: index.len(),
        positives: n,
        negatives: queries.negatives.len(),
        results,
        summary,
        activation,
    })
}

/// Index training, activation and evaluation on a prepared bank.
pub fn run_with_bank(
    config: &ExperimentConfig,
    extractor: &ExtractorWeights,
    bank: &FeatureBank,
) -> Result<ExperimentOutput> {
    config.validate()?;
    bank.check(config)?;
    let mut timing = Timing::default();
    let t = Instant::now();
    let index = build_index(config, bank).map_err(|e| e.in_stage("index"))?;
    timing.record("index", t);

    let ids: Vec<u32> = (0..bank.positives.len() as u32).collect();
    let activated = if config.modes.contains(&Mode::Active) {
        let t = Instant::now();
        let a = activate_images(config, extractor, &index, &ids, &bank.positives)
            .map_err(|e| e.in_stage("activation"))?;
        timing.record("activation", t);
        Some(a)
    } else {
        None
    };

    let t = Instant::now();
    let queries = QuerySet {
        ids,
        originals: bank.positives.clone(),
        activated,
        negatives: bank.negatives.clone(),
    };
    let report = evaluate(config, extractor, &index, &queries).map_err(|e| e.in_stage("evaluation"))?;
    timing.record("evaluation", t);
    Ok(ExperimentOutput {
        report,
        index,
        activated: queries.activated,
        timing,
    })
}

/// Generates the corpora, then trains, adds, activates and evaluates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let extractor = config.extractor.build().map_err(|e| e.in_stage("extractor"))?;
    let t = Instant::now();
    let bank = FeatureBank::build(config, &extractor)?;
    let mut out = run_with_bank(config, &extractor, &bank)?;
    out.timing.stages.insert(
        0,
        StageTime {
            stage: "features".into(),
            seconds: t.elapsed().as_secs_f64() - out.timing.total(),
        },
    );
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    mode: &'a str,
    transform: &'a str,
    recall_at_1: f64,
    micro_ap: f64,
    p_f: Option<f64>,
    recall_bound: Option<f64>,
    bound_holds: Option<bool>,
    psnr_mean: Option<f64>,
    psnr_std: Option<f64>,
    linf_max: Option<f64>,
}

#[derive(Serialize)]
struct CurveRow<'a> {
    mode: &'a str,
    transform: &'a str,
    threshold: f32,
    precision: f64,
    recall: f64,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

/// Writes `report.json`, `report.csv` (one row per transform and mode) and
/// `pr_curve.csv` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;

    let quality = report.activation.as_ref().map(|a| a.quality);
    let mut w = csv::Writer::from_path(dir.join("report.csv")).map_err(csv_error)?;
    for r in &report.results {
        let q = if r.mode == Mode::Active { quality } else { None };
        w.serialize(CsvRow {
            mode: r.mode.name(),
            transform: &r.transform,
            recall_at_1: r.recall_at_1,
            micro_ap: r.micro_ap,
            p_f: r.p_f,
            recall_bound: r.recall_bound.map(|b| b.bound),
            bound_holds: r.recall_bound.map(|b| b.holds),
            psnr_mean: q.map(|q| q.psnr_mean),
            psnr_std: q.map(|q| q.psnr_std),
            linf_max: q.map(|q| q.linf_max),
        })
        .map_err(csv_error)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pr_curve.csv")).map_err(csv_error)?;
    let curves = report
        .results
        .iter()
        .map(|r| (r.mode, r.transform.as_str(), &r.pr_curve))
        .chain(report.summary.iter().map(|s| (s.mode, "pooled", &s.pr_curve)));
    for (mode, transform, curve) in curves {
        for p in curve {
            w.serialize(CurveRow {
                mode: mode.name(),
                transform,
                threshold: p.threshold,
                precision: p.precision,
                recall: p.recall,
            })
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing(dir: impl AsRef<Path>, timing: &Timing) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(timing)? + "\n")?;
    Ok(())
}
