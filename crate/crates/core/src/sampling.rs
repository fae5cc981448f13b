//! Importance sampling: a training index in which images containing enough pixels of a
//! rare class are repeated.
//!
//! An image is repeated `r` times in total when its pixel count `n` for a rare class
//! exceeds that class's threshold `n_m` (strictly). When several rare classes qualify the
//! largest `r` wins. The plan is a static expansion of the input order with copies
//! adjacent, so identical inputs always give an identical plan.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{class_histogram, ClassHistogram, LabelMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RareClass {
    pub class: u8,
    /// Pixel-count threshold `n_m`; an image qualifies when its count is strictly greater.
    pub min_pixels: u64,
    /// Total number of times a qualifying image appears in the plan.
    pub repeat: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPolicy {
    pub rare_classes: Vec<RareClass>,
}

impl SamplingPolicy {
    pub fn new(rare_classes: Vec<RareClass>) -> Result<Self> {
        let policy = SamplingPolicy { rare_classes };
        policy.validate(None)?;
        Ok(policy)
    }

    /// Identity policy: every image appears once.
    pub fn identity() -> Self {
        SamplingPolicy::default()
    }

    /// Checks `repeat >= 1` and, when `num_classes` is given, that every class exists.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        for rc in &self.rare_classes {
            if rc.repeat == 0 {
                return Err(Error::Config(format!(
                    "sampling policy: class {} has repeat 0 (must be >= 1)",
                    rc.class
                )));
            }
            if let Some(k) = num_classes {
                if usize::from(rc.class) >= k {
                    return Err(Error::Config(format!(
                        "sampling policy: class {} is not in a {k}-class taxonomy",
                        rc.class
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn multiplicity(&self, hist: &ClassHistogram) -> u32 {
        self.rare_classes
            .iter()
            .map(|rc| if hist.count(rc.class) > rc.min_pixels { rc.repeat } else { 1 })
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageStats {
    pub image_id: String,
    pub histogram: ClassHistogram,
}

impl ImageStats {
    pub fn from_labels(image_id: impl Into<String>, labels: &LabelMap) -> Self {
        ImageStats {
            image_id: image_id.into(),
            histogram: class_histogram(labels),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplingPlan {
    pub entries: Vec<String>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One image id per line, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for id in &self.entries {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        SamplingPlan {
            entries: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        }
    }
}

pub fn build_sampling_plan(stats: &[ImageStats], policy: &SamplingPolicy) -> SamplingPlan {
    let mut entries = Vec::new();
    for s in stats {
        let m = policy.multiplicity(&s.histogram);
        entries.extend(std::iter::repeat_n(s.image_id.clone(), m as usize));
    }
    SamplingPlan { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFraction {
    pub class: u8,
    /// Fraction of distinct images that qualify for this class.
    pub before: f64,
    /// Fraction of plan entries whose image qualifies.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub images: usize,
    pub plan_len: usize,
    pub classes: Vec<ClassFraction>,
}

pub fn plan_summary(plan: &SamplingPlan, stats: &[ImageStats], policy: &SamplingPolicy) -> PlanSummary {
    let by_id: HashMap<&str, &ClassHistogram> = stats
        .iter()
        .map(|s| (s.image_id.as_str(), &s.histogram))
        .collect();
    let fraction = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let classes = policy
        .rare_classes
        .iter()
        .map(|rc| {
            let before = stats
                .iter()
                .filter(|s| s.histogram.count(rc.class) > rc.min_pixels)
                .count();
            let after = plan
                .entries
                .iter()
                .filter(|id| by_id.get(id.as_str()).is_some_and(|h| h.count(rc.class) > rc.min_pixels))
                .count();
            ClassFraction {
                class: rc.class,
                before: fraction(before, stats.len()),
                after: fraction(after, plan.len()),
            }
        })
        .collect();
    PlanSummary {
        images: stats.len(),
        plan_len: plan.len(),
        classes,
    }
}
