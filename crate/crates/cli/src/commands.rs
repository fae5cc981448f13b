use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hierseg_core::backends::build_backend;
use hierseg_core::backends::server::{serve, serve_listener};
use hierseg_core::io::{read_image, read_labels, write_image, write_labels, write_score_dump};
use hierseg_core::pipeline::{ComponentSource, EvalOptions, EvalScope, ImagePrediction, Variant};
use hierseg_core::sampling::plan_summary;
use hierseg_core::{
    apply_semantic_mask, build_sampling_plan, evaluate_corpus, generate_corpus, mask_labels, split_by_group,
    CorpusEntry, CorpusIndex, Image, ImageStats, LabelMap, Pipeline, RunConfig, SamplingPolicy, SceneParams,
    SegmenterBackend, Task,
};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;

use crate::config::load_config;
use crate::report::{summary_table, write_overlays, write_report_files, Report};
use crate::{Cli, CliError, Command, Stage};

type CliResult<T = ()> = Result<T, CliError>;

fn env_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::env(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| env_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| env_err(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    write_text(path, &text)
}

fn read_index(path: &Path) -> CliResult<CorpusIndex> {
    if !path.is_file() {
        return Err(CliError::config(format!("corpus index {} not found", path.display())));
    }
    Ok(CorpusIndex::read_csv(path)?)
}

pub fn dispatch(cli: &Cli) -> CliResult {
    let g = &cli.global;
    // Loaded up front so a bad --config or --set fails every command the same way.
    let cfg = load_config(g.config.as_deref(), &g.overrides)?;
    match &cli.command {
        Command::Gen { seed, count, groups, params } => gen(&g.out, *seed, *count, *groups, params.as_deref()),
        Command::Split { index, ratio, seed } => split(&cfg, &g.out, index, *ratio, *seed),
        Command::SamplePlan { index, task } => sample_plan(&cfg, &g.out, index, *task),
        Command::Mask { index } => mask(&cfg, &g.out, index),
        Command::Infer { index, image, stage, dump_scores } => {
            infer(cfg, &g.out, index.as_deref(), image.as_deref(), *stage, *dump_scores)
        }
        Command::Eval { index, variants, all_images, no_overlays } => {
            let scope = if *all_images { EvalScope::All } else { EvalScope::Validation };
            eval(cfg, &g.out, index, variants, scope, !no_overlays)
        }
        Command::Report { from } => report(from.as_deref().unwrap_or(&g.out), &g.out),
        Command::Serve { backend, task, listen, max_tile, connections } => {
            serve_backend(&cfg, backend, *task, listen.as_deref(), *max_tile, *connections)
        }
    }
}

fn gen(out: &Path, seed: u64, count: usize, groups: Option<usize>, params: Option<&Path>) -> CliResult {
    let params: SceneParams = match params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SceneParams::default(),
    };
    let groups = groups.unwrap_or(count.min(10));
    create_dir(out)?;
    let index = generate_corpus(out, seed, count, groups, &params)?;
    write_json(
        &out.join("corpus.json"),
        &json!({"seed": seed, "count": count, "groups": groups, "params": params}),
    )?;
    println!("wrote {} scenes in {} groups to {}", index.len(), groups, out.display());
    Ok(())
}

fn split(cfg: &RunConfig, out: &Path, index: &Path, ratio: Option<f64>, seed: Option<u64>) -> CliResult {
    let index = read_index(index)?;
    let ratio = ratio.unwrap_or(cfg.split.ratio);
    let seed = seed.unwrap_or(cfg.split.seed);
    let split = split_by_group(&index, ratio, seed)?;
    create_dir(out)?;
    write_json(
        &out.join("split.json"),
        &json!({"ratio": ratio, "seed": seed, "split": split}),
    )?;
    println!(
        "train: {} images in {} groups; val: {} images in {} groups",
        split.train_ids.len(),
        split.train_groups.len(),
        split.val_ids.len(),
        split.val_groups.len()
    );
    Ok(())
}

fn sample_plan(cfg: &RunConfig, out: &Path, index_path: &Path, task: Task) -> CliResult {
    let index = read_index(index_path)?;
    let split = split_by_group(&index, cfg.split.ratio, cfg.split.seed)?;
    let train = index.subset(&split.train_ids);
    let policy = if cfg.ablation.use_importance_sampling {
        cfg.sampling_policy(task).clone()
    } else {
        info!("importance sampling disabled; exporting the identity plan");
        SamplingPolicy::identity()
    };
    let tax = cfg.taxonomy(task);
    let stats = train
        .entries()
        .par_iter()
        .filter_map(|e| {
            let gt = match task {
                Task::Component => &e.component_gt,
                Task::Damage => &e.damage_gt,
            };
            match gt {
                Some(p) => Some(
                    read_labels(&index.resolve(p), tax.task_name()).map(|m| ImageStats::from_labels(e.image_id.clone(), &m)),
                ),
                None => {
                    warn!("{}: no {task} ground truth, left out of the plan", e.image_id);
                    None
                }
            }
        })
        .collect::<hierseg_core::Result<Vec<_>>>()?;
    let plan = build_sampling_plan(&stats, &policy);
    let summary = plan_summary(&plan, &stats, &policy);
    create_dir(out)?;
    write_text(&out.join(format!("plan_{task}.txt")), &plan.to_text())?;
    write_json(&out.join(format!("plan_{task}_summary.json")), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn mask(cfg: &RunConfig, out: &Path, index_path: &Path) -> CliResult {
    let index = read_index(index_path)?;
    let root = out.join("masked");
    for sub in ["images", "labels_dmg"] {
        create_dir(&root.join(sub))?;
    }
    let entries = index
        .entries()
        .par_iter()
        .map(|e| -> CliResult<Option<CorpusEntry>> {
            let Some(cgt) = &e.component_gt else {
                warn!("{}: no component ground truth, not masked", e.image_id);
                return Ok(None);
            };
            let comp = read_labels(&index.resolve(cgt), cfg.component_taxonomy.task_name())?;
            let img = read_image(&index.resolve(&e.image))?;
            let rel_img = PathBuf::from("images").join(format!("{}.png", e.image_id));
            write_image(&root.join(&rel_img), &apply_semantic_mask(&img, &comp, &cfg.mask)?)?;
            let damage_gt = match &e.damage_gt {
                Some(p) => {
                    let dgt = read_labels(&index.resolve(p), cfg.damage_taxonomy.task_name())?;
                    let rel = PathBuf::from("labels_dmg").join(format!("{}.png", e.image_id));
                    write_labels(&root.join(&rel), &mask_labels(&dgt, &comp, &cfg.mask, &cfg.damage_taxonomy)?)?;
                    Some(rel)
                }
                None => None,
            };
            Ok(Some(CorpusEntry {
                image_id: e.image_id.clone(),
                group_id: e.group_id.clone(),
                image: rel_img,
                component_gt: None,
                damage_gt,
            }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let entries: Vec<CorpusEntry> = entries.into_iter().flatten().collect();
    let n = entries.len();
    CorpusIndex::new(entries)?.write_csv(&root.join("index.csv"))?;
    println!("masked {n} of {} images into {}", index.len(), root.display());
    Ok(())
}

fn write_scores(pipe: &Pipeline, out: &Path, task: Task, stem: &str, img: &Image, multiscale: bool) -> CliResult {
    let dir = out.join("scores").join(task.as_str());
    create_dir(&dir)?;
    for (backend, scores) in pipe.stage_scores(task, img, multiscale)? {
        write_score_dump(&dir, &format!("{stem}.{backend}"), &scores)?;
    }
    Ok(())
}

fn infer_one(
    pipe: &Pipeline,
    out: &Path,
    stem: &str,
    img: &Image,
    component_gt: Option<LabelMap>,
    stage: Stage,
    dump_scores: bool,
) -> CliResult {
    let cfg = pipe.config();
    let ablation = cfg.ablation;
    let comp = pipe.run_component_stage(img, ablation)?;
    if stage != Stage::Damage {
        write_labels(&out.join("predictions/component").join(format!("{stem}.png")), &comp)?;
        if dump_scores {
            write_scores(pipe, out, Task::Component, stem, img, ablation.use_multiscale)?;
        }
    }
    if stage == Stage::Component {
        return Ok(());
    }
    let gate = match cfg.component_source {
        ComponentSource::Predicted => comp,
        ComponentSource::GroundTruth => component_gt.ok_or_else(|| {
            CliError::config(format!("{stem}: component_source is ground_truth but no component map is available"))
        })?,
    };
    let dmg = pipe.run_damage_stage(img, &gate, ablation)?;
    write_labels(&out.join("predictions/damage").join(format!("{stem}.png")), &dmg)?;
    if dump_scores {
        let input = pipe.damage_input(img, &gate, ablation)?;
        write_scores(pipe, out, Task::Damage, stem, &input, ablation.use_multiscale)?;
    }
    Ok(())
}

fn infer(
    cfg: RunConfig,
    out: &Path,
    index: Option<&Path>,
    image: Option<&Path>,
    stage: Stage,
    dump_scores: bool,
) -> CliResult {
    let pipe = Pipeline::new(cfg)?;
    for sub in ["predictions/component", "predictions/damage"] {
        create_dir(&out.join(sub))?;
    }
    if let Some(path) = image {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        infer_one(&pipe, out, &stem, &read_image(path)?, None, stage, dump_scores)?;
        println!("wrote predictions for {stem} to {}", out.display());
        return Ok(());
    }
    let index = read_index(index.expect("clap requires --index or --image"))?;
    let needs_gt = pipe.config().component_source == ComponentSource::GroundTruth && stage != Stage::Component;
    index.entries().par_iter().try_for_each(|e| -> CliResult {
        let img = read_image(&index.resolve(&e.image))?;
        let gt = match (&e.component_gt, needs_gt) {
            (Some(p), true) => Some(read_labels(&index.resolve(p), pipe.config().component_taxonomy.task_name())?),
            _ => None,
        };
        infer_one(&pipe, out, &e.image_id, &img, gt, stage, dump_scores)
    })?;
    println!("wrote predictions for {} images to {}", index.len(), out.display());
    Ok(())
}

pub fn parse_variants(list: &str) -> CliResult<Vec<Variant>> {
    let mut out: Vec<Variant> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: Variant = part.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(CliError::config("no variants selected"));
    }
    out.sort_by_key(|v| Variant::ALL.iter().position(|a| a == v));
    Ok(out)
}

fn eval(cfg: RunConfig, out: &Path, index_path: &Path, variants: &str, scope: EvalScope, overlays: bool) -> CliResult {
    let variants = parse_variants(variants)?;
    let index = read_index(index_path)?;
    let corpus = match fs::read_to_string(index.root().join("corpus.json")) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| CliError::data(format!("corpus.json: {e}")))?),
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(env_err(&index.root().join("corpus.json"), e)),
    };
    let pipe = Pipeline::new(cfg.clone())?;
    let opts = EvalOptions {
        jobs: 0,
        keep_predictions: overlays,
        scope,
    };
    let mut runs = Vec::new();
    let mut predictions: Vec<(Variant, Vec<ImagePrediction>)> = Vec::new();
    for v in variants {
        let (evaluation, preds) = evaluate_corpus(&pipe, &index, v, opts)?;
        runs.push(evaluation);
        if overlays {
            predictions.push((v, preds));
        }
    }
    let report = Report {
        config_hash: cfg.hash(),
        split_seed: cfg.split.seed,
        config: cfg,
        corpus,
        scope,
        runs,
    };
    write_report_files(&report, out)?;
    if overlays {
        write_overlays(&index, &predictions, out)?;
    }
    print!("{}", summary_table(&report));
    Ok(())
}

fn report(from: &Path, out: &Path) -> CliResult {
    let path = from.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    write_report_files(&report, out)?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn serve_backend(
    cfg: &RunConfig,
    name: &str,
    task: Task,
    listen: Option<&str>,
    max_tile: u32,
    connections: Option<usize>,
) -> CliResult {
    let spec = cfg
        .backends
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| CliError::config(format!("no backend named `{name}` in the roster")))?;
    let backend: Arc<dyn SegmenterBackend> = build_backend(spec, cfg.taxonomy(task), task, &cfg.palette, cfg.max_tile)?;
    match listen {
        None => {
            let (stdin, stdout) = (io::stdin(), io::stdout());
            serve(backend.as_ref(), max_tile, stdin.lock(), stdout.lock())
                .map_err(|e| CliError::backend(e.to_string()))
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| CliError::env(format!("cannot listen on {addr}: {e}")))?;
            let local = listener.local_addr().map_err(|e| CliError::env(e.to_string()))?;
            eprintln!("serving `{name}` ({task}) on {local}");
            serve_listener(listener, backend, max_tile, connections).map_err(|e| CliError::backend(e.to_string()))
        }
    }
}
