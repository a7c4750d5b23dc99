use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use activeindex::activation::{activate, activate_eot, EotConfig, LossKind, LossTarget};
use activeindex::eval::{
    evaluate, extract_rows, run_experiment, write_report, write_timing, ExperimentConfig, Mode, QuerySet, StageTime,
    Timing,
};
use activeindex::extractor::{ExtractorWeights, FEATURE_DIM};
use activeindex::imagelab::{load_corpus_dir, read_ppm, write_corpus, write_ppm, CorpusManifest, Image, ManifestEntry};
use activeindex::index::{load_index, save_index, IndexSpec};
use activeindex::seed::derive_seed;
use activeindex::{Error, Result};
use serde::Serialize;

use crate::{ActivationArgs, ExtractorArgs};

fn extractor(config: &mut ExperimentConfig, args: &ExtractorArgs) -> Result<ExtractorWeights> {
    if let Some(w) = &args.weights {
        config.extractor.weights = Some(w.clone());
    }
    if let Some(s) = args.extractor_seed {
        config.extractor.seed = s;
    }
    if let Some(r) = args.resolution {
        config.extractor.resolution = r;
    }
    config.extractor.build()
}

fn apply_activation(config: &mut ExperimentConfig, args: &ActivationArgs) -> Result<()> {
    let a = &mut config.activation;
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    if let Some(v) = args.lambda {
        a.lambda = v;
    }
    if let Some(v) = args.lr {
        a.lr = v;
    }
    if let Some(v) = args.steps {
        a.steps = v;
    }
    if args.eot && a.eot.is_none() {
        a.eot = Some(EotConfig::default());
    }
    a.validate()
}

fn features(extractor: &ExtractorWeights, corpus: &[(u32, Image)]) -> Result<Vec<f32>> {
    extract_rows(extractor, corpus.len(), |i| Ok(corpus[i].1.clone()))
}

fn load_corpus(dir: &Path) -> Result<Vec<(u32, Image)>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(format!("corpus directory {}", dir.display())));
    }
    load_corpus_dir(dir)
}

pub fn gen(config: &ExperimentConfig, count: usize, size: usize, out: &Path) -> Result<()> {
    let manifest = write_corpus(out, config.seed, count, size)?;
    log::info!("wrote {} images to {}", manifest.count, out.display());
    Ok(())
}

pub fn train(
    mut config: ExperimentConfig,
    args: &ExtractorArgs,
    corpus: &Path,
    preset: Option<&str>,
    out: &Path,
) -> Result<()> {
    let extractor = extractor(&mut config, args)?;
    let spec = match preset {
        Some(p) => IndexSpec::preset(p)?,
        None => config.index.clone(),
    };
    let images = load_corpus(corpus)?;
    let data = features(&extractor, &images)?;
    let index = spec.train(&data, FEATURE_DIM, derive_seed(config.seed, "index", 0))?;
    save_index(&index, out)?;
    log::info!("trained {} index on {} images", index.family(), images.len());
    Ok(())
}

pub fn add(mut config: ExperimentConfig, args: &ExtractorArgs, index: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let extractor = extractor(&mut config, args)?;
    let mut ix = load_index(index)?;
    let images = load_corpus(corpus)?;
    let data = features(&extractor, &images)?;
    for ((id, _), x) in images.iter().zip(data.chunks_exact(FEATURE_DIM)) {
        ix.add(*id, x)?;
    }
    save_index(&ix, out)?;
    log::info!("index holds {} vectors", ix.len());
    Ok(())
}

#[derive(Serialize)]
struct ActivationRow {
    id: u32,
    psnr: f64,
    linf: f64,
    feature_loss_before: f64,
    feature_loss_after: f64,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Internal(format!("csv: {other:?}")),
    }
}

pub fn activate_cmd(
    mut config: ExperimentConfig,
    args: &ExtractorArgs,
    act: &ActivationArgs,
    index: &Path,
    corpus: &Path,
    count: Option<usize>,
    out: &Path,
) -> Result<()> {
    let extractor = extractor(&mut config, args)?;
    apply_activation(&mut config, act)?;
    let ix = load_index(index)?;
    let mut images = load_corpus(corpus)?;
    if let Some(n) = count {
        images.truncate(n);
    }
    let kind = config.activation.loss.unwrap_or_else(|| LossKind::for_index(&ix));
    let run = if config.activation.eot.is_some() {
        activate_eot
    } else {
        activate
    };
    let results: Vec<_> = {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|(id, img)| {
                let r = run(img, &extractor, &ix, *id, &config.activation)?;
                let target = LossTarget::from_index(&ix, *id, kind)?;
                let before = target.value_and_gradient(&r.feature_before.to_f64())?.0;
                let after = target.value_and_gradient(&r.feature_after.to_f64())?.0;
                Ok((r, before, after))
            })
            .collect::<Result<_>>()?
    };

    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(images.len());
    let mut w = csv::Writer::from_path(out.join("activation.csv")).map_err(csv_error)?;
    for ((id, _), (r, before, after)) in images.iter().zip(&results) {
        let file = format!("img_{id:06}.ppm");
        write_ppm(out.join(&file), &r.activated)?;
        entries.push(ManifestEntry {
            id: *id,
            file,
            seed: 0,
        });
        w.serialize(ActivationRow {
            id: *id,
            psnr: r.quality.psnr_db,
            linf: r.quality.linf,
            feature_loss_before: *before,
            feature_loss_after: *after,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    let manifest = CorpusManifest {
        generator: "activated".into(),
        seed: config.seed,
        count: entries.len(),
        size: images.first().map_or(0, |(_, img)| img.height()),
        images: entries,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(out.join("config.json"), config.to_json()?)?;
    log::info!("activated {} images into {}", results.len(), out.display());
    Ok(())
}

fn read_feature(path: &Path) -> Result<Vec<f32>> {
    fs::read_to_string(path)?
        .split_whitespace()
        .map(|t| {
            t.parse::<f32>()
                .map_err(|e| Error::Format {
                    offset: 0,
                    message: format!("feature value {t:?}: {e}"),
                })
        })
        .collect()
}

pub fn query(
    mut config: ExperimentConfig,
    args: &ExtractorArgs,
    index: &Path,
    image: Option<&Path>,
    feature: Option<&Path>,
    k: usize,
    nprobe: Option<usize>,
) -> Result<()> {
    let ix = load_index(index)?;
    let q = match (image, feature) {
        (Some(path), _) => extractor(&mut config, args)?.extract(&read_ppm(path)?)?.into_inner(),
        (None, Some(path)) => read_feature(path)?,
        (None, None) => return Err(Error::InvalidArgument("either --image or --feature is required".into())),
    };
    let result = match nprobe {
        Some(p) => ix.search_with(&q, k, p)?,
        None => ix.search(&q, k)?,
    };
    for hit in &result.hits {
        println!("{} {:?}", hit.id, hit.distance);
    }
    Ok(())
}

pub struct EvalArgs {
    pub out: PathBuf,
    pub preset: Option<String>,
    pub index: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub activated: Option<PathBuf>,
    pub negatives: Option<PathBuf>,
    pub k: Option<usize>,
    pub nprobe: Option<usize>,
    pub passive_only: bool,
    pub activation: ActivationArgs,
    pub extractor: ExtractorArgs,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::InvalidArgument(format!("{flag} is required with --index")))
}

pub fn eval(mut config: ExperimentConfig, args: EvalArgs) -> Result<()> {
    let extractor = extractor(&mut config, &args.extractor)?;
    apply_activation(&mut config, &args.activation)?;
    if let Some(p) = &args.preset {
        config.index = IndexSpec::preset(p)?;
    }
    if let Some(k) = args.k {
        config.retrieval.k = k;
    }
    if let Some(n) = args.nprobe {
        config.retrieval.nprobe = n;
    }
    if args.passive_only {
        config.modes = vec![Mode::Passive];
    }
    config.validate()?;

    let (report, timing) = match &args.index {
        None => {
            let out = run_experiment(&config)?;
            (out.report, out.timing)
        }
        Some(index_path) => {
            let t = Instant::now();
            let index = load_index(index_path)?;
            let positives = load_corpus(required(&args.queries, "--queries")?)?;
            let negatives = load_corpus(required(&args.negatives, "--negatives")?)?;
            let activated = match (&args.activated, args.passive_only) {
                (Some(dir), false) => {
                    let mut by_id: HashMap<u32, Image> = load_corpus(dir)?.into_iter().collect();
                    let imgs = positives
                        .iter()
                        .map(|(id, _)| {
                            by_id
                                .remove(id)
                                .ok_or_else(|| Error::NotFound(format!("no activated image for id {id}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(imgs)
                }
                _ => None,
            };
            config.modes = match activated {
                Some(_) => vec![Mode::Passive, Mode::Active],
                None => vec![Mode::Passive],
            };
            let (ids, originals) = positives.into_iter().unzip();
            let queries = QuerySet {
                ids,
                originals,
                activated,
                negatives: negatives.into_iter().map(|(_, img)| img).collect(),
            };
            let report = evaluate(&config, &extractor, &index, &queries)?;
            let timing = Timing {
                stages: vec![StageTime {
                    stage: "evaluation".into(),
                    seconds: t.elapsed().as_secs_f64(),
                }],
            };
            (report, timing)
        }
    };
    write_report(&args.out, &report)?;
    write_timing(&args.out, &timing)?;
    for s in &report.summary {
        println!(
            "{}: mean R@1 {:.4}, micro-AP {:.4}",
            s.mode.name(),
            s.mean_recall_at_1,
            s.micro_ap
        );
    }
    Ok(())
}
