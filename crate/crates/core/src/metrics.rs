//! Confusion-matrix accumulation and per-class IoU.
//!
//! Matrices are accumulated globally over a corpus; the mean IoU averages the defined
//! per-class IoUs of the taxonomy's evaluated classes. A class whose union is empty has
//! no IoU and is left out of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMap;
use crate::taxonomy::ClassTaxonomy;

/// `cells[g * k + p]` counts pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            cells: vec![0; k * k],
        }
    }

    pub fn for_taxonomy(tax: &ClassTaxonomy) -> Self {
        ConfusionMatrix::new(tax.num_classes())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.cells[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.cells[gt * self.k..(gt + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, pred)).sum()
    }

    /// Adds one prediction/ground-truth pair. Ground-truth pixels equal to the ignore index
    /// are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, tax: &ClassTaxonomy) -> Result<()> {
        if self.k != tax.num_classes() {
            return Err(Error::invalid(format!(
                "confusion matrix has {} classes, taxonomy `{}` has {}",
                self.k,
                tax.task_name(),
                tax.num_classes()
            )));
        }
        pred.check_shape()?;
        gt.check_shape()?;
        if pred.width != gt.width || pred.height != gt.height {
            return Err(Error::invalid(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        let ignore = tax.ignore_index();
        let k = self.k;
        for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
            if g == ignore {
                continue;
            }
            let (g, p) = (usize::from(g), usize::from(p));
            if g >= k || p >= k {
                return Err(Error::Data(format!(
                    "pixel {i}: gt {g} / pred {p} outside the {k}-class taxonomy `{}`",
                    tax.task_name()
                )));
            }
            self.cells[g * k + p] += 1;
        }
        Ok(())
    }

    /// Cell-wise addition; associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(Error::invalid(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a += b;
        }
        Ok(())
    }

    pub fn iou(&self, class: usize) -> Option<f64> {
        let inter = self.get(class, class);
        let union = self.row_sum(class) + self.col_sum(class) - inter;
        (union > 0).then(|| inter as f64 / union as f64)
    }
}

/// Accumulates `pred` against `gt` into a copy of `acc`.
pub fn accumulate_confusion(
    pred: &LabelMap,
    gt: &LabelMap,
    tax: &ClassTaxonomy,
    acc: &ConfusionMatrix,
) -> Result<ConfusionMatrix> {
    let mut out = acc.clone();
    out.accumulate(pred, gt, tax)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub index: u8,
    pub name: String,
    /// `None` when the class has an empty union.
    pub iou: Option<f64>,
    pub evaluated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub task: String,
    pub per_class: Vec<ClassIou>,
    /// Mean over the defined IoUs of evaluated classes; `None` if none is defined.
    pub mean_iou: Option<f64>,
    pub evaluated_classes: Vec<u8>,
}

impl IouReport {
    pub fn class_iou(&self, index: u8) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.index == index)
            .and_then(|c| c.iou)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut header = vec!["variant".to_string()];
        header.extend(
            self.per_class
                .iter()
                .filter(|c| c.evaluated)
                .map(|c| c.name.clone()),
        );
        header.push("Average".into());
        header
    }

    /// One table row: the variant label, each evaluated class, then the average.
    pub fn csv_row(&self, variant: &str) -> Vec<String> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let mut row = vec![variant.to_string()];
        row.extend(self.per_class.iter().filter(|c| c.evaluated).map(|c| fmt(c.iou)));
        row.push(fmt(self.mean_iou));
        row
    }
}

pub fn iou_from_confusion(m: &ConfusionMatrix, tax: &ClassTaxonomy) -> Result<IouReport> {
    if tax.eval_classes().is_empty() {
        return Err(Error::invalid(format!(
            "taxonomy `{}` evaluates no classes",
            tax.task_name()
        )));
    }
    if m.num_classes() != tax.num_classes() {
        return Err(Error::invalid(format!(
            "confusion matrix has {} classes, taxonomy `{}` has {}",
            m.num_classes(),
            tax.task_name(),
            tax.num_classes()
        )));
    }
    let per_class: Vec<ClassIou> = tax
        .classes()
        .iter()
        .map(|c| ClassIou {
            index: c.index,
            name: c.name.clone(),
            iou: m.iou(usize::from(c.index)),
            evaluated: tax.eval_classes().contains(&c.index),
        })
        .collect();
    let defined: Vec<f64> = per_class
        .iter()
        .filter(|c| c.evaluated)
        .filter_map(|c| c.iou)
        .collect();
    let mean_iou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(IouReport {
        task: tax.task_name().to_string(),
        per_class,
        mean_iou,
        evaluated_classes: tax.eval_classes().iter().copied().collect(),
    })
}
