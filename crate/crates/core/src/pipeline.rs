//! The hierarchical orchestrator: component stage, damage stage gated by component
//! predictions, and corpus-level IoU evaluation across the ablation variants.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{build_backend, BackendKind, BackendSpec, SegmenterBackend};
use crate::corpus::{split_by_group, CorpusEntry, CorpusIndex};
use crate::error::{Error, Result};
use crate::io::{read_image, read_labels};
use crate::masking::{align_labels, apply_semantic_mask, MaskSpec};
use crate::metrics::{iou_from_confusion, ConfusionMatrix, IouReport};
use crate::raster::{Image, LabelMap, ScoreMap};
use crate::sampling::{build_sampling_plan, ImageStats, RareClass, SamplingPlan, SamplingPolicy};
use crate::scenegen::ScenePalette;
use crate::taxonomy::{ClassTaxonomy, Task};
use crate::tta::{argmax_labels, infer_multiscale, majority_vote, ScaleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// Names from the backend roster; their votes are combined per pixel.
    pub backends: Vec<String>,
    #[serde(default)]
    pub scales: ScaleSet,
    #[serde(default = "default_crop")]
    pub crop: u32,
    #[serde(default = "default_stride")]
    pub stride: u32,
}

fn default_crop() -> u32 {
    64
}

fn default_stride() -> u32 {
    48
}

impl StageConfig {
    fn with_backend(name: &str) -> Self {
        StageConfig {
            backends: vec![name.to_string()],
            scales: ScaleSet::default(),
            crop: default_crop(),
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_component_policy")]
    pub component: SamplingPolicy,
    #[serde(default)]
    pub damage: SamplingPolicy,
}

/// Sleeper images with more than 50 sleeper pixels appear ten times.
fn default_component_policy() -> SamplingPolicy {
    SamplingPolicy {
        rare_classes: vec![RareClass {
            class: crate::taxonomy::component::SLEEPER,
            min_pixels: 50,
            repeat: 10,
        }],
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            component: default_component_policy(),
            damage: SamplingPolicy::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    0.9
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: default_ratio(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default = "yes")]
    pub use_importance_sampling: bool,
    #[serde(default = "yes")]
    pub use_multiscale: bool,
    #[serde(default = "yes")]
    pub use_sgm: bool,
}

fn yes() -> bool {
    true
}

impl Default for Ablation {
    fn default() -> Self {
        Variant::IsMsSgm.ablation()
    }
}

/// Which component map gates the damage stage during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentSource {
    #[default]
    Predicted,
    GroundTruth,
}

/// The four rows of the ablation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Ens,
    Is,
    IsMs,
    IsMsSgm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ens, Variant::Is, Variant::IsMs, Variant::IsMsSgm];

    pub fn ablation(self) -> Ablation {
        let (is, ms, sgm) = match self {
            Variant::Ens => (false, false, false),
            Variant::Is => (true, false, false),
            Variant::IsMs => (true, true, false),
            Variant::IsMsSgm => (true, true, true),
        };
        Ablation {
            use_importance_sampling: is,
            use_multiscale: ms,
            use_sgm: sgm,
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Ens => "ENS",
            Variant::Is => "ENS+I.S.",
            Variant::IsMs => "ENS+I.S.+M.S.",
            Variant::IsMsSgm => "ENS+I.S.+M.S.+S.G.M.",
        }
    }

    /// Short name accepted on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Ens => "ens",
            Variant::Is => "is",
            Variant::IsMs => "is+ms",
            Variant::IsMsSgm => "is+ms+sgm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key().eq_ignore_ascii_case(s.trim()) || v.label() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of ens, is, is+ms, is+ms+sgm)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ClassTaxonomy::bridge_components")]
    pub component_taxonomy: ClassTaxonomy,
    #[serde(default = "ClassTaxonomy::bridge_damage")]
    pub damage_taxonomy: ClassTaxonomy,
    #[serde(default = "default_roster")]
    pub backends: Vec<BackendSpec>,
    #[serde(default = "default_component_stage")]
    pub component: StageConfig,
    #[serde(default = "default_damage_stage")]
    pub damage: StageConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub mask: MaskSpec,
    #[serde(default = "yes")]
    pub hierarchy_enforce: bool,
    #[serde(default)]
    pub component_source: ComponentSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub ablation: Ablation,
    /// Colours assumed by `color_rule` backends using the scene palette preset.
    #[serde(default)]
    pub palette: ScenePalette,
    /// Largest tile announced to remote backends (0 = unbounded).
    #[serde(default)]
    pub max_tile: u32,
}

fn default_roster() -> Vec<BackendSpec> {
    vec![
        BackendSpec {
            name: "palette".into(),
            kind: BackendKind::ColorRule,
            params: Some(serde_json::json!({"preset": "scene_palette", "tolerance": 24})),
            endpoint: None,
            pool: None,
        },
        BackendSpec {
            name: "darkness".into(),
            kind: BackendKind::Darkness,
            params: None,
            endpoint: None,
            pool: None,
        },
    ]
}

fn default_component_stage() -> StageConfig {
    StageConfig::with_backend("palette")
}

fn default_damage_stage() -> StageConfig {
    StageConfig::with_backend("darkness")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Static checks; backends are only contacted by [`Pipeline::new`].
    pub fn validate(&self) -> Result<()> {
        if self.component_taxonomy.task_name() != Task::Component.as_str() {
            return Err(Error::Config(format!(
                "component_taxonomy must be named `component`, got `{}`",
                self.component_taxonomy.task_name()
            )));
        }
        if self.damage_taxonomy.task_name() != Task::Damage.as_str() {
            return Err(Error::Config(format!(
                "damage_taxonomy must be named `damage`, got `{}`",
                self.damage_taxonomy.task_name()
            )));
        }
        let mut names = HashSet::new();
        for b in &self.backends {
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("backend `{}` is defined twice", b.name)));
            }
        }
        for (stage, sc) in [("component", &self.component), ("damage", &self.damage)] {
            if sc.backends.is_empty() {
                return Err(Error::Config(format!("{stage}.backends is empty")));
            }
            if let Some(missing) = sc.backends.iter().find(|n| !names.contains(n.as_str())) {
                return Err(Error::Config(format!(
                    "{stage}.backends refers to unknown backend `{missing}`"
                )));
            }
            if sc.crop == 0 || sc.stride == 0 || sc.stride > sc.crop {
                return Err(Error::Config(format!(
                    "{stage}: need 1 <= stride ({}) <= crop ({})",
                    sc.stride, sc.crop
                )));
            }
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::Config(format!(
                "split.ratio {} must lie in (0, 1)",
                self.split.ratio
            )));
        }
        self.sampling
            .component
            .validate(Some(self.component_taxonomy.num_classes()))
            .map_err(|e| Error::Config(format!("sampling.component: {e}")))?;
        self.sampling
            .damage
            .validate(Some(self.damage_taxonomy.num_classes()))
            .map_err(|e| Error::Config(format!("sampling.damage: {e}")))?;
        self.mask.validate(&self.component_taxonomy)?;
        if !self.damage_taxonomy.is_class(0) {
            return Err(Error::Config("damage taxonomy lacks a background class 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn taxonomy(&self, task: Task) -> &ClassTaxonomy {
        match task {
            Task::Component => &self.component_taxonomy,
            Task::Damage => &self.damage_taxonomy,
        }
    }

    pub fn stage(&self, task: Task) -> &StageConfig {
        match task {
            Task::Component => &self.component,
            Task::Damage => &self.damage,
        }
    }

    pub fn sampling_policy(&self, task: Task) -> &SamplingPolicy {
        match task {
            Task::Component => &self.sampling.component,
            Task::Damage => &self.sampling.damage,
        }
    }
}

/// A validated config with its backends instantiated.
pub struct Pipeline {
    cfg: RunConfig,
    component: Vec<Arc<dyn SegmenterBackend>>,
    damage: Vec<Arc<dyn SegmenterBackend>>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = |v: &[Arc<dyn SegmenterBackend>]| v.iter().map(|b| b.name().to_string()).collect::<Vec<_>>();
        f.debug_struct("Pipeline")
            .field("component", &names(&self.component))
            .field("damage", &names(&self.damage))
            .finish()
    }
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let build = |task: Task| -> Result<Vec<Arc<dyn SegmenterBackend>>> {
            cfg.stage(task)
                .backends
                .iter()
                .map(|name| {
                    let spec = cfg.backends.iter().find(|b| &b.name == name).expect("validated");
                    build_backend(spec, cfg.taxonomy(task), task, &cfg.palette, cfg.max_tile)
                })
                .collect()
        };
        let component = build(Task::Component)?;
        let damage = build(Task::Damage)?;
        Ok(Pipeline { cfg, component, damage })
    }

    /// Uses caller-built backends instead of the roster, e.g. for tests.
    pub fn with_backends(
        cfg: RunConfig,
        component: Vec<Arc<dyn SegmenterBackend>>,
        damage: Vec<Arc<dyn SegmenterBackend>>,
    ) -> Result<Self> {
        cfg.validate()?;
        for (task, list) in [(Task::Component, &component), (Task::Damage, &damage)] {
            if list.is_empty() {
                return Err(Error::Config(format!("no {task} backends")));
            }
            for b in list {
                if b.task() != task || b.num_classes() != cfg.taxonomy(task).num_classes() {
                    return Err(Error::Config(format!(
                        "backend `{}` serves {} with {} classes, stage needs {task} with {}",
                        b.name(),
                        b.task(),
                        b.num_classes(),
                        cfg.taxonomy(task).num_classes()
                    )));
                }
            }
        }
        Ok(Pipeline { cfg, component, damage })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    /// Fused multi-scale scores of every backend of a stage, in roster order.
    pub fn stage_scores(&self, task: Task, img: &Image, multiscale: bool) -> Result<Vec<(String, ScoreMap)>> {
        let stage = self.cfg.stage(task);
        let single = ScaleSet::single();
        let scales = if multiscale { &stage.scales } else { &single };
        let backends = match task {
            Task::Component => &self.component,
            Task::Damage => &self.damage,
        };
        backends
            .iter()
            .map(|b| {
                let scores = infer_multiscale(img, b.as_ref(), scales, stage.crop, stage.stride)?;
                Ok((b.name().to_string(), scores))
            })
            .collect()
    }

    fn ensemble(&self, task: Task, img: &Image, multiscale: bool) -> Result<LabelMap> {
        let tax = self.cfg.taxonomy(task);
        let preds = self
            .stage_scores(task, img, multiscale)?
            .iter()
            .map(|(name, scores)| argmax_labels(scores, tax).map_err(|e| e.in_backend(name, "decoding")))
            .collect::<Result<Vec<_>>>()?;
        majority_vote(&preds)
    }

    /// Input the damage backends see: masked by `comp` when S.G.M. is on.
    pub fn damage_input(&self, img: &Image, comp: &LabelMap, ablation: Ablation) -> Result<Image> {
        if ablation.use_sgm {
            apply_semantic_mask(img, comp, &self.cfg.mask)
        } else {
            Ok(img.clone())
        }
    }

    pub fn run_component_stage(&self, img: &Image, ablation: Ablation) -> Result<LabelMap> {
        self.ensemble(Task::Component, img, ablation.use_multiscale)
    }

    /// Damage labels for `img`. With S.G.M. on, the input is masked by `comp` and, when
    /// `hierarchy_enforce` is set, pixels outside the keep set are forced to non-damage.
    pub fn run_damage_stage(&self, img: &Image, comp: &LabelMap, ablation: Ablation) -> Result<LabelMap> {
        if !ablation.use_sgm {
            return self.ensemble(Task::Damage, img, ablation.use_multiscale);
        }
        let masked = apply_semantic_mask(img, comp, &self.cfg.mask)?;
        let mut out = self.ensemble(Task::Damage, &masked, ablation.use_multiscale)?;
        if self.cfg.hierarchy_enforce {
            let comp = align_labels(comp, out.width, out.height)?;
            for (d, &c) in out.data.iter_mut().zip(&comp.data) {
                if !self.cfg.mask.keeps(c) {
                    *d = 0;
                }
            }
        }
        Ok(out)
    }

    pub fn hierarchy_enforced(&self, ablation: Ablation) -> bool {
        ablation.use_sgm && self.cfg.hierarchy_enforce
    }
}

/// Damage pixels lying where the component map is outside the keep set.
pub fn hierarchy_violations(damage: &LabelMap, comp: &LabelMap, spec: &MaskSpec) -> Result<u64> {
    let comp = align_labels(comp, damage.width, damage.height)?;
    Ok(damage
        .data
        .iter()
        .zip(&comp.data)
        .filter(|(&d, &c)| d != 0 && !spec.keeps(c))
        .count() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub variant: String,
    pub scope: EvalScope,
    pub ablation: Ablation,
    pub hierarchy_enforced: bool,
    pub component_source: ComponentSource,
    pub config_hash: String,
    pub split_seed: u64,
    pub train_groups: usize,
    pub val_groups: usize,
    pub scored_images: usize,
    pub evaluated_images: usize,
    pub skipped_missing_gt: Vec<String>,
    /// Length of the exported training plan per task (identity when I.S. is off).
    pub train_plan_len: PlanLengths,
    /// Predicted damage pixels outside the keep set of the gating component map.
    pub hierarchy_violations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLengths {
    pub component: usize,
    pub damage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub component: IouReport,
    pub damage: IouReport,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub image_id: String,
    pub component: LabelMap,
    pub damage: LabelMap,
}

/// Which images are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// The validation side of the grouped split.
    #[default]
    Validation,
    /// Every image in the index; useful for synthetic corpora where nothing is trained.
    All,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; 0 uses the global rayon pool.
    pub jobs: usize,
    pub keep_predictions: bool,
    pub scope: EvalScope,
}

struct ImageResult {
    component: ConfusionMatrix,
    damage: ConfusionMatrix,
    violations: u64,
    prediction: Option<ImagePrediction>,
}

fn load_gt(index: &CorpusIndex, tax: &ClassTaxonomy, path: &std::path::Path) -> Result<LabelMap> {
    read_labels(&index.resolve(path), tax.task_name())
}

fn evaluate_entry(
    pipe: &Pipeline,
    index: &CorpusIndex,
    e: &CorpusEntry,
    ablation: Ablation,
    keep: bool,
) -> Result<ImageResult> {
    let cfg = &pipe.cfg;
    let (ctax, dtax) = (&cfg.component_taxonomy, &cfg.damage_taxonomy);
    let img = read_image(&index.resolve(&e.image))?;
    let cgt = load_gt(index, ctax, e.component_gt.as_ref().expect("filtered"))?;
    let dgt = load_gt(index, dtax, e.damage_gt.as_ref().expect("filtered"))?;
    for (name, gt) in [("component", &cgt), ("damage", &dgt)] {
        if !gt.same_dims(img.width, img.height) {
            return Err(Error::Data(format!(
                "{}: {name} ground truth is {}x{}, image is {}x{}",
                e.image_id, gt.width, gt.height, img.width, img.height
            )));
        }
    }
    let comp = pipe.run_component_stage(&img, ablation)?;
    let gate = match cfg.component_source {
        ComponentSource::Predicted => &comp,
        ComponentSource::GroundTruth => &cgt,
    };
    let dmg = pipe.run_damage_stage(&img, gate, ablation)?;
    let mut cm = ConfusionMatrix::for_taxonomy(ctax);
    cm.accumulate(&comp, &cgt, ctax)
        .map_err(|err| Error::Data(format!("{}: {err}", e.image_id)))?;
    let mut dm = ConfusionMatrix::for_taxonomy(dtax);
    dm.accumulate(&dmg, &dgt, dtax)
        .map_err(|err| Error::Data(format!("{}: {err}", e.image_id)))?;
    let violations = hierarchy_violations(&dmg, gate, &cfg.mask)?;
    Ok(ImageResult {
        component: cm,
        damage: dm,
        violations,
        prediction: keep.then(|| ImagePrediction {
            image_id: e.image_id.clone(),
            component: comp,
            damage: dmg,
        }),
    })
}

/// Training plan lengths for both tasks over the train split.
fn train_plans(pipe: &Pipeline, index: &CorpusIndex, train: &CorpusIndex, ablation: Ablation) -> Result<PlanLengths> {
    let plan = |task: Task| -> Result<SamplingPlan> {
        let tax = pipe.cfg.taxonomy(task);
        let policy = if ablation.use_importance_sampling {
            pipe.cfg.sampling_policy(task).clone()
        } else {
            SamplingPolicy::identity()
        };
        let stats = train
            .entries()
            .par_iter()
            .map(|e| {
                let gt = match task {
                    Task::Component => &e.component_gt,
                    Task::Damage => &e.damage_gt,
                };
                Ok(match gt {
                    Some(p) if !policy.rare_classes.is_empty() => {
                        ImageStats::from_labels(e.image_id.clone(), &read_labels(&index.resolve(p), tax.task_name())?)
                    }
                    _ => ImageStats {
                        image_id: e.image_id.clone(),
                        histogram: Default::default(),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(build_sampling_plan(&stats, &policy))
    };
    Ok(PlanLengths {
        component: plan(Task::Component)?.len(),
        damage: plan(Task::Damage)?.len(),
    })
}

/// Evaluates one ablation variant over the validation split of `index`.
///
/// Images are processed in parallel; confusion matrices are merged in index order, so the
/// result does not depend on the thread count.
pub fn evaluate_corpus(
    pipe: &Pipeline,
    index: &CorpusIndex,
    variant: Variant,
    opts: EvalOptions,
) -> Result<(Evaluation, Vec<ImagePrediction>)> {
    let ablation = variant.ablation();
    let cfg = &pipe.cfg;
    let split = split_by_group(index, cfg.split.ratio, cfg.split.seed)?;
    if split.val_ids.is_empty() && opts.scope == EvalScope::Validation {
        return Err(Error::invalid("validation split is empty"));
    }
    let val = match opts.scope {
        EvalScope::Validation => index.subset(&split.val_ids),
        EvalScope::All => index.clone(),
    };
    let train = index.subset(&split.train_ids);
    let mut skipped = Vec::new();
    let usable: Vec<&CorpusEntry> = val
        .entries()
        .iter()
        .filter(|e| {
            let ok = e.component_gt.is_some() && e.damage_gt.is_some();
            if !ok {
                warn!("{}: missing ground truth, skipped", e.image_id);
                skipped.push(e.image_id.clone());
            }
            ok
        })
        .collect();
    info!(
        "{variant}: evaluating {} of {} validation images",
        usable.len(),
        val.len()
    );
    let work = || -> Result<(Vec<ImageResult>, PlanLengths)> {
        let results = usable
            .par_iter()
            .map(|e| evaluate_entry(pipe, index, e, ablation, opts.keep_predictions))
            .collect::<Result<Vec<_>>>()?;
        let plans = train_plans(pipe, index, &train, ablation)?;
        Ok((results, plans))
    };
    let (results, plans) = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {} workers: {e}", opts.jobs)))?
            .install(work)?
    } else {
        work()?
    };

    let mut cm = ConfusionMatrix::for_taxonomy(&cfg.component_taxonomy);
    let mut dm = ConfusionMatrix::for_taxonomy(&cfg.damage_taxonomy);
    let mut violations = 0;
    let mut predictions = Vec::new();
    for r in results {
        cm.merge(&r.component)?;
        dm.merge(&r.damage)?;
        violations += r.violations;
        predictions.extend(r.prediction);
    }
    let metadata = RunMetadata {
        variant: variant.label().to_string(),
        scope: opts.scope,
        ablation,
        hierarchy_enforced: pipe.hierarchy_enforced(ablation),
        component_source: cfg.component_source,
        config_hash: cfg.hash(),
        split_seed: cfg.split.seed,
        train_groups: split.train_groups.len(),
        val_groups: split.val_groups.len(),
        scored_images: val.len(),
        evaluated_images: usable.len(),
        skipped_missing_gt: skipped,
        train_plan_len: plans,
        hierarchy_violations: violations,
    };
    Ok((
        Evaluation {
            component: iou_from_confusion(&cm, &cfg.component_taxonomy)?,
            damage: iou_from_confusion(&dm, &cfg.damage_taxonomy)?,
            metadata,
        },
        predictions,
    ))
}
