//! Classification of scored flows by κ threshold or learned decision
//! tree, plus the evaluation metrics. All probabilities are exact
//! rationals; floats only appear at the display boundary and inside the
//! tree learner's entropy arithmetic.

pub mod tree;

pub use tree::{cross_validate, train_tree, CrossValReport, TreeHyperparams};

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Label, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("need both a positive and a negative class")]
    DegenerateLabels,
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("empty population")]
    EmptyPopulation,
    #[error("not a decimal threshold: {0}")]
    BadThreshold(String),
    #[error("malformed model: {0}")]
    BadModel(String),
}

/// Parses a non-negative decimal literal into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Ratio<u64>, DetectError> {
    let bad = || DetectError::BadThreshold(s.to_string());
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let int: u64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    if frac_part.len() > 18 {
        return Err(bad());
    }
    let frac: u64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let denom = 10u64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
    let numer = int.checked_mul(denom).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
    Ok(Ratio::new(numer, denom))
}

/// The thresholds of the published sweep, in ascending order.
pub const PAPER_THRESHOLD_STRS: [&str; 32] = [
    "2", "2.5", "2.75", "3", "3.25", "3.5", "3.75", "3.9", "4", "4.025", "4.05", "4.075", "4.1",
    "4.15", "4.2", "4.25", "4.3", "4.4", "4.5", "4.6", "4.7", "4.8", "4.9", "5", "5.5", "6", "7",
    "8", "9", "10", "11", "12",
];

pub fn paper_thresholds() -> Vec<Ratio<u64>> {
    PAPER_THRESHOLD_STRS.iter().map(|s| parse_decimal(s).expect("static decimals")).collect()
}

/// Named thresholds from the study, per covert-channel group size.
pub mod named_thresholds {
    /// Best hand-picked threshold for 2-PDU channels.
    pub const TWO_PDU: &str = "4.6";
    /// Best hand-picked threshold for 3-PDU channels.
    pub const THREE_PDU: &str = "3";
    /// Best hand-picked threshold for 4-PDU channels.
    pub const FOUR_PDU: &str = "2.75";
    /// Best threshold for a mixed-channel population.
    pub const MIXTURE: &str = "4.5";
    /// C4.5-refined threshold for 3-PDU channels.
    pub const C45_THREE_PDU: &str = "2.88659";
    /// C4.5-refined threshold for 4-PDU channels.
    pub const C45_FOUR_PDU: &str = "2.59047";
}

/// Single-threshold rule: covert iff κ < θ; a tie is legitimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdModel {
    theta: Ratio<u64>,
    repr: String,
}

impl ThresholdModel {
    pub fn from_decimal(s: &str) -> Result<Self, DetectError> {
        Ok(ThresholdModel { theta: parse_decimal(s)?, repr: s.to_string() })
    }

    pub fn from_ratio(theta: Ratio<u64>) -> Self {
        let repr = format!("{}/{}", theta.numer(), theta.denom());
        ThresholdModel { theta, repr }
    }

    pub fn theta(&self) -> Ratio<u64> {
        self.theta
    }

    pub fn verdict(&self, kappa: Ratio<u64>) -> Verdict {
        if kappa < self.theta {
            Verdict::Covert
        } else {
            Verdict::Legitimate
        }
    }
}

/// Binary decision tree over the single feature κ. Children always sit at
/// larger indices than their parent, so descent terminates.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { split: f64, left: usize, right: usize },
    Leaf { verdict: Verdict },
}

impl TreeModel {
    pub fn verdict(&self, kappa: f64) -> Verdict {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { verdict } => return *verdict,
                TreeNode::Split { split, left, right } => {
                    i = if kappa < *split { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }

    /// The split of a depth-1 tree, if that is what this is.
    pub fn single_split(&self) -> Option<f64> {
        match self.nodes.first() {
            Some(TreeNode::Split { split, left, right })
                if matches!(self.nodes.get(*left), Some(TreeNode::Leaf { .. }))
                    && matches!(self.nodes.get(*right), Some(TreeNode::Leaf { .. })) =>
            {
                Some(*split)
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), DetectError> {
        if self.nodes.is_empty() {
            return Err(DetectError::BadModel("empty tree".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let TreeNode::Split { left, right, .. } = n {
                if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                    return Err(DetectError::BadModel(format!("node {i} has bad children")));
                }
            }
        }
        Ok(())
    }
}

/// Either classifier behind one verdict interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Threshold(ThresholdModel),
    Tree(TreeModel),
}

impl Model {
    pub fn verdict(&self, kappa: Ratio<u64>) -> Verdict {
        match self {
            Model::Threshold(t) => t.verdict(kappa),
            Model::Tree(t) => t.verdict(*kappa.numer() as f64 / *kappa.denom() as f64),
        }
    }
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeJson>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub training_meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeJson {
    Split { split: f64, left: usize, right: usize },
    Leaf { verdict: String },
}

pub const MODEL_FILE_VERSION: u32 = 1;

impl Model {
    pub fn to_file(&self, training_meta: serde_json::Value) -> ModelFile {
        match self {
            Model::Threshold(t) => ModelFile {
                version: MODEL_FILE_VERSION,
                kind: "threshold".into(),
                theta: Some(t.repr.clone()),
                nodes: None,
                training_meta,
            },
            Model::Tree(t) => ModelFile {
                version: MODEL_FILE_VERSION,
                kind: "tree".into(),
                theta: None,
                nodes: Some(
                    t.nodes
                        .iter()
                        .map(|n| match n {
                            TreeNode::Split { split, left, right } => {
                                NodeJson::Split { split: *split, left: *left, right: *right }
                            }
                            TreeNode::Leaf { verdict } => NodeJson::Leaf { verdict: verdict.as_str().into() },
                        })
                        .collect(),
                ),
                training_meta,
            },
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Model, DetectError> {
        if file.version != MODEL_FILE_VERSION {
            return Err(DetectError::BadModel(format!("unsupported version {}", file.version)));
        }
        match file.kind.as_str() {
            "threshold" => {
                let theta = file.theta.as_deref().ok_or_else(|| DetectError::BadModel("missing theta".into()))?;
                Ok(Model::Threshold(ThresholdModel::from_decimal(theta)?))
            }
            "tree" => {
                let nodes = file.nodes.as_ref().ok_or_else(|| DetectError::BadModel("missing nodes".into()))?;
                let nodes = nodes
                    .iter()
                    .map(|n| match n {
                        NodeJson::Split { split, left, right } => {
                            Ok(TreeNode::Split { split: *split, left: *left, right: *right })
                        }
                        NodeJson::Leaf { verdict } => match verdict.as_str() {
                            "covert" => Ok(TreeNode::Leaf { verdict: Verdict::Covert }),
                            "legitimate" => Ok(TreeNode::Leaf { verdict: Verdict::Legitimate }),
                            other => Err(DetectError::BadModel(format!("unknown verdict {other}"))),
                        },
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let model = TreeModel { nodes };
                model.validate()?;
                Ok(Model::Tree(model))
            }
            other => Err(DetectError::BadModel(format!("unknown kind {other}"))),
        }
    }
}

/// Classification outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: Verdict, truth: Label) {
        match (predicted, truth.is_covert()) {
            (Verdict::Covert, true) => self.tp += 1,
            (Verdict::Covert, false) => self.fp += 1,
            (Verdict::Legitimate, false) => self.tn += 1,
            (Verdict::Legitimate, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts plus the derived rates. Rates whose denominator is
/// zero are absent rather than zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub cm: ConfusionMatrix,
    pub precision: Option<Ratio<u64>>,
    pub recall: Option<Ratio<u64>>,
    pub accuracy: Ratio<u64>,
    /// Harmonic mean of precision and recall; pinned to 0 when there are
    /// no true positives, matching how degenerate rows are reported.
    pub f1: Option<Ratio<u64>>,
    pub fpr: Option<Ratio<u64>>,
}

/// Derives all rates from a confusion matrix.
pub fn metrics(cm: ConfusionMatrix) -> Result<MetricsReport, DetectError> {
    let total = cm.total();
    if total == 0 {
        return Err(DetectError::EmptyPopulation);
    }
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(Ratio::new(num, den)) };
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let accuracy = Ratio::new(cm.tp + cm.tn, total);
    let f1 = if cm.tp == 0 {
        Some(Ratio::zero())
    } else {
        // tp > 0 implies both denominators are positive
        let p = precision.expect("tp > 0");
        let r = recall.expect("tp > 0");
        Some(Ratio::from_integer(2) * p * r / (p + r))
    };
    let fpr = ratio(cm.fp, cm.fp + cm.tn);
    Ok(MetricsReport { cm, precision, recall, accuracy, f1, fpr })
}

/// Applies one model to a labeled population.
pub fn evaluate(scored: &[(Ratio<u64>, Label)], model: &Model) -> Result<MetricsReport, DetectError> {
    let mut cm = ConfusionMatrix::default();
    for (kappa, label) in scored {
        cm.record(model.verdict(*kappa), *label);
    }
    metrics(cm)
}

/// One row of a threshold sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub theta: Ratio<u64>,
    pub report: MetricsReport,
}

/// Measures detectability at every threshold. The population must contain
/// both classes.
pub fn sweep(scored: &[(Ratio<u64>, Label)], thresholds: &[Ratio<u64>]) -> Result<Vec<SweepRow>, DetectError> {
    let positives = scored.iter().filter(|(_, l)| l.is_covert()).count();
    if positives == 0 || positives == scored.len() {
        return Err(DetectError::DegenerateLabels);
    }
    thresholds
        .iter()
        .map(|&theta| {
            let model = Model::Threshold(ThresholdModel::from_ratio(theta));
            Ok(SweepRow { theta, report: evaluate(scored, &model)? })
        })
        .collect()
}

/// Renders a rate as a percentage with three decimals, half-up.
pub fn percent_3dp(r: Ratio<u64>) -> String {
    percent_3dp_wide(Ratio::new(u128::from(*r.numer()), u128::from(*r.denom())))
}

pub fn percent_3dp_wide(r: Ratio<u128>) -> String {
    let numer = *r.numer() * 100_000;
    let denom = *r.denom();
    let scaled = (numer * 2 + denom) / (denom * 2); // round half-up
    format!("{}.{:03}", scaled / 1000, scaled % 1000)
}
