use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use refseg::dataset::{load_reference, sample_references, Dataset};
use refseg::evaluation::{
    coco_map, miou, semantic_aggregate, semantic_ground_truth, variance_study, write_json_report,
    EvalImage, EvalReport, MiouReport, VarianceConfig, DEFAULT_MAX_DETS, DEFAULT_SEMANTIC_SCORE,
};
use refseg::memory_bank::{build_bank, read_bank, write_bank, MemoryBank, ReferenceImage};
use refseg::merging::{Detection, MergeConfig, MergeStrategy};
use refseg::pipeline::{
    detections_path, eval_images, infer_entries, infer_targets, read_detections, write_detections,
};
use refseg::synth::{generate, SynthSpec};
use refseg::tensor_io::{read_manifest, DatasetManifest, InstanceAnnotation, MaskRecord};

use crate::args::*;
use crate::overlay::write_overlay;

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn load_references(manifest: &DatasetManifest, base: &Path) -> Result<Vec<ReferenceImage>> {
    manifest
        .reference_images
        .iter()
        .map(|e| load_reference(e, base).with_context(|| format!("reference image {}", e.image_id)))
        .collect()
}

fn bank_from_references(
    refs: &[ReferenceImage],
    category_ids: &[u32],
    sampling: &SamplingArgs,
) -> Result<MemoryBank> {
    let Some(first) = refs.first() else {
        bail!("manifest has no reference images");
    };
    let dim = first.features.dim();
    let bank = match sampling.shots {
        Some(shots) => build_bank(&sample_references(refs, category_ids, shots, sampling.seed)?, dim)?,
        None => build_bank(refs, dim)?,
    };
    Ok(bank)
}

/// The bank to use for a run and the seconds spent obtaining it.
fn obtain_bank(source: &BankSource, manifest: &DatasetManifest, base: &Path) -> Result<(MemoryBank, f64)> {
    let start = Instant::now();
    let bank = match &source.bank {
        Some(path) => read_bank(path).with_context(|| format!("reading bank {}", path.display()))?,
        None => {
            let refs = load_references(manifest, base)?;
            bank_from_references(&refs, &manifest.category_ids(), &source.sampling)?
        }
    };
    Ok((bank, start.elapsed().as_secs_f64()))
}

pub fn bank_build(args: &BankBuildArgs) -> Result<Status> {
    let (manifest, base) = load_manifest(&args.manifest)?;
    let refs = load_references(&manifest, &base)?;
    let bank = bank_from_references(&refs, &manifest.category_ids(), &args.sampling)?;
    write_bank(&args.out, &bank).with_context(|| format!("writing bank {}", args.out.display()))?;
    println!("bank: {} categories, dim {}", bank.len(), bank.dim());
    for (category_id, p) in bank.prototypes() {
        println!("  category {category_id:>4}: {} instances", p.instance_count);
    }
    Ok(Status::Complete)
}

pub fn infer(args: &InferArgs) -> Result<Status> {
    let (manifest, base) = load_manifest(&args.manifest)?;
    let cfg = args.merge.tuning.config(args.merge.strategy.into());
    cfg.validate()?;
    let (bank, bank_s) = obtain_bank(&args.source, &manifest, &base)?;
    let det_dir = args.out.join("detections");
    create_dir(&det_dir)?;
    let overlay_dir = args.out.join("overlays");
    if args.overlay {
        create_dir(&overlay_dir)?;
    }

    let (outcomes, timings) = infer_entries(&manifest.target_images, &base, &bank, &cfg, bank_s)?;
    let mut failures = 0usize;
    for outcome in &outcomes {
        match &outcome.result {
            Ok(image) => {
                write_detections(&det_dir, image)?;
                if args.overlay {
                    let path = overlay_dir.join(format!("{}.png", image.image_id));
                    write_overlay(&path, image.height, image.width, &image.detections)?;
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("image {}: {e}", outcome.image_id);
            }
        }
    }
    write_json_report(args.out.join("timings.json"), &timings)?;
    println!(
        "inferred {} of {} images; per image: bank {:.6} s, matching {:.6} s, merging {:.6} s",
        outcomes.len() - failures,
        outcomes.len(),
        timings.bank_s,
        timings.matching_s,
        timings.merging_s
    );
    Ok(if failures == 0 { Status::Complete } else { Status::Partial })
}

fn annotations(records: &[MaskRecord]) -> Result<Vec<InstanceAnnotation>> {
    Ok(records.iter().map(MaskRecord::to_annotation).collect::<refseg::Result<_>>()?)
}

fn check_categories(known: &BTreeSet<u32>, image_id: u64, dets: &[Detection]) -> Result<()> {
    if let Some(d) = dets.iter().find(|d| !known.contains(&d.category_id)) {
        bail!(
            "image {image_id}: detection category {} is not in the manifest",
            d.category_id
        );
    }
    Ok(())
}

struct Evaluated {
    image: EvalImage,
    height: usize,
    width: usize,
}

fn semantic_report(images: &[Evaluated], score_thresh: f64) -> Result<MiouReport> {
    let mut pred = Vec::with_capacity(images.len());
    let mut gt = Vec::with_capacity(images.len());
    for e in images {
        pred.push(semantic_aggregate(&e.image.detections, e.height, e.width, score_thresh)?);
        gt.push(semantic_ground_truth(&e.image.ground_truth, e.height, e.width)?);
    }
    Ok(miou(&pred, &gt)?)
}

fn write_coco_report(out: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_json_report(out.join(format!("{stem}.json")), report)?;
    let path = out.join(format!("{stem}.csv"));
    std::fs::write(&path, report.to_csv()?).with_context(|| format!("writing {}", path.display()))
}

fn print_miou(report: &MiouReport) {
    println!("mIoU {:.1}  ({} categories)", 100.0 * report.miou, report.per_category.len());
    for (c, v) in &report.per_category {
        println!("  category {c:>4}: IoU {:5.1}", 100.0 * v);
    }
}

pub fn eval(args: &EvalArgs) -> Result<Status> {
    let (manifest, _) = load_manifest(&args.manifest)?;
    let known: BTreeSet<u32> = manifest.category_ids().into_iter().collect();
    let mut images = Vec::new();
    for entry in &manifest.target_images {
        let Some(records) = &entry.ground_truth else {
            continue;
        };
        let path = detections_path(&args.detections, entry.image_id);
        let detections =
            read_detections(&path).with_context(|| format!("reading detections {}", path.display()))?;
        check_categories(&known, entry.image_id, &detections)?;
        images.push(Evaluated {
            image: EvalImage {
                image_id: entry.image_id,
                detections,
                ground_truth: annotations(records)?,
            },
            height: entry.height,
            width: entry.width,
        });
    }
    create_dir(&args.out)?;
    match args.mode.coco() {
        Some(mode) => {
            let eval: Vec<EvalImage> = images.into_iter().map(|e| e.image).collect();
            let report = coco_map(&eval, mode, args.max_dets)?;
            write_coco_report(&args.out, &format!("eval_{}", args.mode.as_str()), &report)?;
            print!("{}", report.summary());
        }
        None => {
            let report = semantic_report(&images, args.semantic_score)?;
            write_json_report(args.out.join("eval_semantic.json"), &report)?;
            print_miou(&report);
        }
    }
    Ok(Status::Complete)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn ablate(args: &AblateArgs) -> Result<Status> {
    let (manifest, base) = load_manifest(&args.manifest)?;
    let dataset = Dataset::from_manifest(&manifest, &base)?;
    let (bank, _) = obtain_bank(&args.source, &manifest, &base)?;
    create_dir(&args.out)?;
    let strategies: Vec<MergeStrategy> = {
        let mut seen = BTreeSet::new();
        args.strategy
            .iter()
            .map(|&s| MergeStrategy::from(s))
            .filter(|s| seen.insert(s.as_str()))
            .collect()
    };
    for strategy in strategies {
        let cfg: MergeConfig = args.tuning.config(strategy);
        let (results, _) = infer_targets(&dataset.targets, &bank, &cfg)?;
        let eval = eval_images(&dataset.targets, &results)?;
        let stem = format!("ablate_{strategy}_{}", args.mode.as_str());
        match args.mode.coco() {
            Some(mode) => {
                let report = coco_map(&eval, mode, DEFAULT_MAX_DETS)?;
                write_coco_report(&args.out, &stem, &report)?;
                println!(
                    "{:<14} nAP {:.1}  nAP50 {:.1}  nAP75 {:.1}",
                    strategy.as_str(),
                    100.0 * report.mean_ap,
                    100.0 * report.mean_ap50,
                    100.0 * report.mean_ap75
                );
            }
            None => {
                let sized: BTreeMap<u64, (usize, usize)> = dataset
                    .targets
                    .iter()
                    .map(|t| (t.image_id, (t.height, t.width)))
                    .collect();
                let images: Vec<Evaluated> = eval
                    .into_iter()
                    .map(|image| {
                        let (height, width) = sized[&image.image_id];
                        Evaluated { image, height, width }
                    })
                    .collect();
                let report = semantic_report(&images, DEFAULT_SEMANTIC_SCORE)?;
                write_json_report(args.out.join(format!("{stem}.json")), &report)?;
                println!("{:<14} mIoU {:.1}", strategy.as_str(), 100.0 * report.miou);
            }
        }
    }
    Ok(Status::Complete)
}

pub fn variance(args: &VarianceArgs) -> Result<Status> {
    let Some(mode) = args.mode.coco() else {
        bail!("variance studies report nAP; use --mode bbox or --mode mask");
    };
    let dataset = load_dataset(&args.manifest)?;
    let cfg = VarianceConfig {
        shots: args.shots,
        seeds: args.seeds.clone(),
        merge: args.merge.tuning.config(args.merge.strategy.into()),
        mode,
    };
    cfg.merge.validate()?;
    let report = variance_study(&dataset, &cfg)?;
    create_dir(&args.out)?;
    write_json_report(
        args.out.join(format!("variance_{}shot_{}.json", args.shots, args.mode.as_str())),
        &report,
    )?;
    println!(
        "{}-shot {} nAP {:.1} ± {:.1} over {} seeds",
        report.shots,
        args.mode.as_str(),
        100.0 * report.mean,
        100.0 * report.std,
        report.runs
    );
    Ok(Status::Complete)
}

pub fn synth(args: &SynthArgs) -> Result<Status> {
    let spec = match args.preset {
        PresetArg::Noiseless => SynthSpec::noiseless(5, 20, args.seed),
        PresetArg::DuplicateHeavy => SynthSpec::duplicate_heavy(args.seed),
        PresetArg::Noisy => SynthSpec::noisy(args.seed),
    };
    let data = generate(&spec)?;
    create_dir(&args.out)?;
    let path = data.write(&args.out)?;
    println!(
        "wrote {} ({} references, {} targets)",
        path.display(),
        data.manifest.reference_images.len(),
        data.manifest.target_images.len()
    );
    Ok(Status::Complete)
}
