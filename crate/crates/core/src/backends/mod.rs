//! The segmenter abstraction and its implementations.
//!
//! Built-in rule-based backends make the whole pipeline runnable without any model; the
//! [`remote`] backend reaches trained networks running in another process through the
//! [`protocol`].

pub mod builtin;
pub mod protocol;
pub mod remote;
pub mod server;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use builtin::{
    color_rule_segment, darkness_damage_segment, luma, ColorRule, ColorRuleBackend, ColorRuleSet,
    CellPooling, ConstantBackend, DarknessBackend, DarknessParams, EchoBackend, StridedDarknessBackend,
    StridedDarknessParams,
};
pub use remote::{remote_infer, Endpoint, RemoteBackend, RemoteConnection};

use crate::error::{Error, Result};
use crate::raster::{Image, ScoreMap};
use crate::scenegen::ScenePalette;
use crate::taxonomy::{component, damage, ClassTaxonomy, Task};

/// Whether a backend may serve several tile requests at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concurrency {
    Exclusive,
    Parallel,
}

/// A per-tile segmenter. Implementations must be deterministic: identical tiles give
/// identical scores.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;

    fn task(&self) -> Task;

    fn num_classes(&self) -> usize;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }

    /// Largest tile side the backend accepts, if bounded.
    fn max_tile(&self) -> Option<u32> {
        None
    }

    /// Scores for every pixel of `tile`, `tile.width x tile.height x num_classes()`.
    fn infer(&self, tile: &Image) -> Result<ScoreMap>;
}

impl std::fmt::Debug for dyn SegmenterBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmenterBackend")
            .field("name", &self.name())
            .field("task", &self.task())
            .field("num_classes", &self.num_classes())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ColorRule,
    Darkness,
    StridedDarkness,
    Constant,
    Remote,
}

/// One entry of the backend roster in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Number of pooled connections for remote backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
}

/// Colour-rule parameters: either an explicit rule list or a preset derived from the
/// synthetic scene palette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ColorRuleParams {
    Explicit {
        rules: Vec<ColorRule>,
        #[serde(default)]
        default_class: u8,
    },
    Preset {
        preset: ColorPreset,
        #[serde(default)]
        tolerance: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorPreset {
    ScenePalette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    #[serde(default)]
    class: usize,
}

fn parse_params<T: serde::de::DeserializeOwned>(spec: &BackendSpec) -> Result<T> {
    let value = spec.params.clone().unwrap_or(serde_json::Value::Object(Default::default()));
    serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("backend `{}` params: {e}", spec.name)))
}

/// Colour rules recognising the synthetic scene palette for `task`.
pub fn palette_rules(palette: &ScenePalette, task: Task, tolerance: u8) -> ColorRuleSet {
    let tol = [tolerance; 3];
    let rule = |color: [u8; 3], class: u8| ColorRule {
        color,
        tolerance: tol,
        class,
    };
    match task {
        Task::Component => {
            let mut rules: Vec<ColorRule> = palette
                .components
                .iter()
                .enumerate()
                .map(|(c, &color)| rule(color, c as u8))
                .collect();
            // Damage is painted on columns.
            rules.push(rule(palette.crack, component::COLUMN));
            rules.push(rule(palette.rebar, component::COLUMN));
            ColorRuleSet {
                rules,
                default_class: component::NON_BRIDGE,
                num_classes: component::NUM_CLASSES,
            }
        }
        Task::Damage => ColorRuleSet {
            rules: vec![
                rule(palette.crack, damage::CONCRETE_DAMAGE),
                rule(palette.rebar, damage::EXPOSED_REBAR),
            ],
            default_class: damage::NON_DAMAGE,
            num_classes: damage::NUM_CLASSES,
        },
    }
}

/// Instantiates a roster entry for a stage of the given task.
pub fn build_backend(
    spec: &BackendSpec,
    tax: &ClassTaxonomy,
    task: Task,
    palette: &ScenePalette,
    max_tile: u32,
) -> Result<Arc<dyn SegmenterBackend>> {
    let k = tax.num_classes();
    let needs_damage = |kind: &str| -> Result<()> {
        if task != Task::Damage || k != damage::NUM_CLASSES {
            return Err(Error::Config(format!(
                "backend `{}` ({kind}) only serves the 3-class damage task",
                spec.name
            )));
        }
        Ok(())
    };
    let backend: Arc<dyn SegmenterBackend> = match spec.kind {
        BackendKind::ColorRule => {
            let rules = match parse_params::<ColorRuleParams>(spec)? {
                ColorRuleParams::Explicit {
                    rules,
                    default_class,
                } => ColorRuleSet {
                    rules,
                    default_class,
                    num_classes: k,
                },
                ColorRuleParams::Preset {
                    preset: ColorPreset::ScenePalette,
                    tolerance,
                } => palette_rules(palette, task, tolerance),
            };
            if rules.num_classes != k {
                return Err(Error::Config(format!(
                    "backend `{}` yields {} classes, taxonomy `{}` has {k}",
                    spec.name,
                    rules.num_classes,
                    tax.task_name()
                )));
            }
            Arc::new(
                ColorRuleBackend::new(&spec.name, task, rules)
                    .map_err(|e| Error::Config(format!("backend `{}`: {e}", spec.name)))?,
            )
        }
        BackendKind::Darkness => {
            needs_damage("darkness")?;
            Arc::new(DarknessBackend::new(&spec.name, parse_params(spec)?))
        }
        BackendKind::StridedDarkness => {
            needs_damage("strided_darkness")?;
            let params: StridedDarknessParams = parse_params(spec)?;
            Arc::new(
                StridedDarknessBackend::new(&spec.name, params)
                    .map_err(|e| Error::Config(format!("backend `{}`: {e}", spec.name)))?,
            )
        }
        BackendKind::Constant => {
            let p: ConstantParams = parse_params(spec)?;
            if p.class >= k {
                return Err(Error::Config(format!(
                    "backend `{}`: class {} outside {k} classes",
                    spec.name, p.class
                )));
            }
            Arc::new(ConstantBackend::new(&spec.name, task, k, p.class))
        }
        BackendKind::Remote => {
            let endpoint: Endpoint = spec
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config(format!("remote backend `{}` needs an endpoint", spec.name)))?
                .parse()?;
            Arc::new(RemoteBackend::connect(
                &spec.name,
                &endpoint,
                task,
                k,
                max_tile,
                spec.pool.unwrap_or(1),
            )?)
        }
    };
    Ok(backend)
}
