//! Single-feature C4.5-style decision tree learner with optional
//! reduced-error pruning, and stratified k-fold cross-validation.
//!
//! Split thresholds are candidate midpoints between adjacent distinct
//! sorted κ values of differing class, scored by information gain (with a
//! single continuous feature the gain-ratio denominator only arbitrates
//! ties). Recursion stops at `max_depth`, `min_leaf`, or when no candidate
//! improves on the parent.

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{metrics, ConfusionMatrix, DetectError, MetricsReport, TreeModel, TreeNode};
use crate::flow::{Label, Verdict};

#[derive(Debug, Clone)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub prune: bool,
    pub seed: u64,
}

impl Default for TreeHyperparams {
    fn default() -> Self {
        TreeHyperparams { max_depth: 12, min_leaf: 2, prune: true, seed: 0 }
    }
}

enum Grow {
    Leaf { verdict: Verdict },
    Split { split: f64, majority: Verdict, left: Box<Grow>, right: Box<Grow> },
}

fn entropy2(a: u64, b: u64) -> f64 {
    if a == 0 || b == 0 {
        return 0.0;
    }
    let t = (a + b) as f64;
    let pa = a as f64 / t;
    let pb = b as f64 / t;
    -(pa * pa.log2() + pb * pb.log2())
}

fn counts(samples: &[(f64, Label)]) -> (u64, u64) {
    let covert = samples.iter().filter(|(_, l)| l.is_covert()).count() as u64;
    (covert, samples.len() as u64 - covert)
}

fn majority(samples: &[(f64, Label)]) -> Verdict {
    let (covert, legit) = counts(samples);
    if covert > legit {
        Verdict::Covert
    } else {
        Verdict::Legitimate
    }
}

/// Best split of a sorted range: (split value, index where the right side
/// starts, gain). None when nothing passes the constraints.
fn best_split(sorted: &[(f64, Label)], min_leaf: usize) -> Option<(f64, usize, f64)> {
    let (covert, legit) = counts(sorted);
    if covert == 0 || legit == 0 {
        return None;
    }
    let n = sorted.len() as f64;
    let base = entropy2(covert, legit);

    let mut best: Option<(f64, usize, f64, f64)> = None; // split, idx, gain, gain_ratio
    let mut left_covert = 0u64;
    let mut left_legit = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        // consume the group of equal values starting at i
        let value = sorted[i].0;
        let mut group_covert = 0u64;
        let mut group_legit = 0u64;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == value {
            if sorted[j].1.is_covert() {
                group_covert += 1;
            } else {
                group_legit += 1;
            }
            j += 1;
        }
        if j < sorted.len() {
            // candidate between this group and the next, unless both are
            // pure and of the same class
            let next_value = sorted[j].0;
            let (next_covert, next_legit) = {
                let mut c = 0u64;
                let mut l = 0u64;
                let mut k = j;
                while k < sorted.len() && sorted[k].0 == next_value {
                    if sorted[k].1.is_covert() {
                        c += 1;
                    } else {
                        l += 1;
                    }
                    k += 1;
                }
                (c, l)
            };
            // skip only when both value groups are pure and of the same class
            let same_pure_class = (group_covert == 0 && next_covert == 0)
                || (group_legit == 0 && next_legit == 0);
            let lc = left_covert + group_covert;
            let ll = left_legit + group_legit;
            let left_n = (lc + ll) as usize;
            let right_n = sorted.len() - left_n;
            if !same_pure_class && left_n >= min_leaf && right_n >= min_leaf {
                let rc = covert - lc;
                let rl = legit - ll;
                let remainder = (left_n as f64 / n) * entropy2(lc, ll)
                    + (right_n as f64 / n) * entropy2(rc, rl);
                let gain = base - remainder;
                if gain > 0.0 {
                    let split = (value + next_value) / 2.0;
                    let split_info = entropy2(left_n as u64, right_n as u64);
                    let ratio = if split_info > 0.0 { gain / split_info } else { 0.0 };
                    let better = match best {
                        None => true,
                        Some((bs, _, bg, br)) => {
                            gain > bg || (gain == bg && (ratio > br || (ratio == br && split < bs)))
                        }
                    };
                    if better {
                        best = Some((split, left_n, gain, ratio));
                    }
                }
            }
        }
        left_covert += group_covert;
        left_legit += group_legit;
        i = j;
    }
    best.map(|(split, idx, gain, _)| (split, idx, gain))
}

fn grow(sorted: &[(f64, Label)], depth_left: usize, min_leaf: usize) -> Grow {
    if depth_left == 0 {
        return Grow::Leaf { verdict: majority(sorted) };
    }
    match best_split(sorted, min_leaf) {
        None => Grow::Leaf { verdict: majority(sorted) },
        Some((split, idx, _)) => Grow::Split {
            split,
            majority: majority(sorted),
            left: Box::new(grow(&sorted[..idx], depth_left - 1, min_leaf)),
            right: Box::new(grow(&sorted[idx..], depth_left - 1, min_leaf)),
        },
    }
}

fn subtree_errors(node: &Grow, val: &[(f64, Label)]) -> u64 {
    val.iter()
        .filter(|(kappa, label)| grow_verdict(node, *kappa) != label.verdict())
        .count() as u64
}

fn grow_verdict(node: &Grow, kappa: f64) -> Verdict {
    match node {
        Grow::Leaf { verdict } => *verdict,
        Grow::Split { split, left, right, .. } => {
            if kappa < *split {
                grow_verdict(left, kappa)
            } else {
                grow_verdict(right, kappa)
            }
        }
    }
}

/// Reduced-error pruning: bottom-up, collapse a subtree to its training
/// majority whenever that does not increase held-out errors.
fn prune(node: Grow, val: &[(f64, Label)]) -> Grow {
    match node {
        leaf @ Grow::Leaf { .. } => leaf,
        Grow::Split { split, majority, left, right } => {
            let (val_left, val_right): (Vec<_>, Vec<_>) = val.iter().partition(|(k, _)| *k < split);
            let left = prune(*left, &val_left);
            let right = prune(*right, &val_right);
            let node = Grow::Split { split, majority, left: Box::new(left), right: Box::new(right) };
            let as_leaf = Grow::Leaf { verdict: majority };
            if subtree_errors(&as_leaf, val) <= subtree_errors(&node, val) {
                as_leaf
            } else {
                node
            }
        }
    }
}

fn flatten(node: &Grow, nodes: &mut Vec<TreeNode>) -> usize {
    match node {
        Grow::Leaf { verdict } => {
            nodes.push(TreeNode::Leaf { verdict: *verdict });
            nodes.len() - 1
        }
        Grow::Split { split, left, right, .. } => {
            let idx = nodes.len();
            nodes.push(TreeNode::Split { split: *split, left: usize::MAX, right: usize::MAX });
            let l = flatten(left, nodes);
            let r = flatten(right, nodes);
            if let TreeNode::Split { left, right, .. } = &mut nodes[idx] {
                *left = l;
                *right = r;
            }
            idx
        }
    }
}

/// Trains a tree over labeled κ values.
pub fn train_tree(samples: &[(f64, Label)], hp: &TreeHyperparams) -> Result<TreeModel, DetectError> {
    if samples.iter().any(|(k, _)| !k.is_finite()) {
        return Err(DetectError::BadModel("non-finite kappa in training data".into()));
    }
    let (covert, legit) = counts(samples);
    if covert == 0 || legit == 0 {
        return Err(DetectError::DegenerateLabels);
    }
    if samples.len() < hp.min_leaf * 2 {
        return Err(DetectError::TooFewSamples(format!(
            "{} samples, need at least {}",
            samples.len(),
            hp.min_leaf * 2
        )));
    }

    let mut sorted: Vec<(f64, Label)> = samples.to_vec();
    sorted.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).expect("finite").then_with(|| a.1.is_covert().cmp(&b.1.is_covert()))
    });

    let root = if hp.prune && samples.len() >= 6 {
        // hold out a stratified third for reduced-error pruning
        let mut rng = ChaCha12Rng::seed_from_u64(hp.seed);
        let mut covert_set: Vec<(f64, Label)> =
            sorted.iter().copied().filter(|(_, l)| l.is_covert()).collect();
        let mut legit_set: Vec<(f64, Label)> =
            sorted.iter().copied().filter(|(_, l)| !l.is_covert()).collect();
        covert_set.shuffle(&mut rng);
        legit_set.shuffle(&mut rng);
        let cut_c = covert_set.len() / 3;
        let cut_l = legit_set.len() / 3;
        let val: Vec<(f64, Label)> =
            covert_set[..cut_c].iter().chain(legit_set[..cut_l].iter()).copied().collect();
        let mut train: Vec<(f64, Label)> =
            covert_set[cut_c..].iter().chain(legit_set[cut_l..].iter()).copied().collect();
        train.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).expect("finite").then_with(|| a.1.is_covert().cmp(&b.1.is_covert()))
        });
        let grown = grow(&train, hp.max_depth, hp.min_leaf);
        prune(grown, &val)
    } else {
        grow(&sorted, hp.max_depth, hp.min_leaf)
    };

    let mut nodes = Vec::new();
    flatten(&root, &mut nodes);
    Ok(TreeModel { nodes })
}

/// Mean metrics over stratified folds.
#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub fold_reports: Vec<MetricsReport>,
    pub mean_accuracy: Ratio<u128>,
    pub mean_precision: Option<Ratio<u128>>,
    pub mean_recall: Option<Ratio<u128>>,
    pub mean_f1: Option<Ratio<u128>>,
    pub mean_fpr: Option<Ratio<u128>>,
}

fn widen(r: Ratio<u64>) -> Ratio<u128> {
    Ratio::new(u128::from(*r.numer()), u128::from(*r.denom()))
}

fn mean_of(values: Vec<Ratio<u64>>) -> Option<Ratio<u128>> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as u128;
    let sum: Ratio<u128> = values.into_iter().map(widen).sum();
    Some(sum / Ratio::from_integer(n))
}

/// Stratified k-fold cross-validation of the tree learner. Fold
/// assignment is deterministic under `hp.seed`.
pub fn cross_validate(
    samples: &[(f64, Label)],
    folds: usize,
    hp: &TreeHyperparams,
) -> Result<CrossValReport, DetectError> {
    if folds < 2 {
        return Err(DetectError::TooFewSamples("need at least 2 folds".into()));
    }
    let covert: Vec<(f64, Label)> = samples.iter().copied().filter(|(_, l)| l.is_covert()).collect();
    let legit: Vec<(f64, Label)> = samples.iter().copied().filter(|(_, l)| !l.is_covert()).collect();
    if covert.len() < folds || legit.len() < folds {
        return Err(DetectError::TooFewSamples(format!(
            "every class needs at least {folds} samples for {folds} folds"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(hp.seed);
    let mut covert = covert;
    let mut legit = legit;
    covert.shuffle(&mut rng);
    legit.shuffle(&mut rng);

    let fold_of = |i: usize| i % folds;
    let mut fold_reports = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in covert.iter().enumerate() {
            if fold_of(i) == fold {
                test.push(*s);
            } else {
                train.push(*s);
            }
        }
        for (i, s) in legit.iter().enumerate() {
            if fold_of(i) == fold {
                test.push(*s);
            } else {
                train.push(*s);
            }
        }
        let model = train_tree(&train, &TreeHyperparams { seed: hp.seed ^ fold as u64, ..hp.clone() })?;
        let mut cm = ConfusionMatrix::default();
        for (kappa, label) in &test {
            cm.record(model.verdict(*kappa), *label);
        }
        fold_reports.push(metrics(cm)?);
    }

    let mean_accuracy = mean_of(fold_reports.iter().map(|r| r.accuracy).collect()).expect("folds >= 2");
    let mean_precision = mean_of(fold_reports.iter().filter_map(|r| r.precision).collect());
    let mean_recall = mean_of(fold_reports.iter().filter_map(|r| r.recall).collect());
    let mean_f1 = mean_of(fold_reports.iter().filter_map(|r| r.f1).collect());
    let mean_fpr = mean_of(fold_reports.iter().filter_map(|r| r.fpr).collect());
    Ok(CrossValReport { fold_reports, mean_accuracy, mean_precision, mean_recall, mean_f1, mean_fpr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{Model, ThresholdModel};

    fn hp_depth1() -> TreeHyperparams {
        TreeHyperparams { max_depth: 1, min_leaf: 1, prune: false, seed: 0 }
    }

    #[test]
    fn four_point_example_splits_at_midpoint() {
        let samples = vec![
            (2.0, Label::Covert3),
            (2.5, Label::Covert3),
            (10.0, Label::Legitimate),
            (12.0, Label::Legitimate),
        ];
        let tree = train_tree(&samples, &hp_depth1()).unwrap();
        assert_eq!(tree.single_split(), Some(6.25));
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn separated_data_trains_to_perfect_accuracy() {
        let samples: Vec<(f64, Label)> = (0..20)
            .map(|i| {
                if i < 10 {
                    (2.0 + i as f64 * 0.05, Label::Covert4)
                } else {
                    (9.0 + i as f64 * 0.05, Label::Legitimate)
                }
            })
            .collect();
        let tree = train_tree(&samples, &TreeHyperparams { prune: false, ..Default::default() }).unwrap();
        let errors = samples.iter().filter(|(k, l)| tree.verdict(*k) != l.verdict()).count();
        assert_eq!(errors, 0);
    }

    #[test]
    fn depth_one_tree_equals_threshold_model() {
        let samples = vec![
            (2.0, Label::Covert3),
            (2.5, Label::Covert3),
            (3.0, Label::Legitimate),
            (4.5, Label::Covert3),
            (10.0, Label::Legitimate),
            (12.0, Label::Legitimate),
        ];
        let tree = train_tree(&samples, &hp_depth1()).unwrap();
        let split = tree.single_split().unwrap();
        // exact binary fraction, so the rational model sees the same value
        let theta = ThresholdModel::from_ratio(Ratio::new((split * 4.0) as u64, 4));
        assert_eq!(split * 4.0, (split * 4.0).trunc());
        for num in 1..64u64 {
            let kappa = Ratio::new(num, 4);
            let tree_v = Model::Tree(tree.clone()).verdict(kappa);
            let thr_v = theta.verdict(kappa);
            assert_eq!(tree_v, thr_v, "kappa {kappa}");
        }
    }

    #[test]
    fn tie_between_equal_gains_picks_smaller_split() {
        // symmetric pattern: splits at 1.5 and 3.5 have identical gain
        let samples = vec![
            (1.0, Label::Legitimate),
            (2.0, Label::Covert2),
            (3.0, Label::Covert2),
            (4.0, Label::Legitimate),
        ];
        let tree = train_tree(&samples, &hp_depth1()).unwrap();
        assert_eq!(tree.single_split(), Some(1.5));
    }

    #[test]
    fn mixed_value_groups_still_produce_candidates() {
        // duplicate kappa with both classes adjacent to a pure group
        let samples = vec![
            (2.0, Label::Covert2),
            (2.0, Label::Legitimate),
            (3.0, Label::Legitimate),
            (3.0, Label::Legitimate),
        ];
        let tree = train_tree(&samples, &hp_depth1()).unwrap();
        assert_eq!(tree.single_split(), Some(2.5));
    }

    #[test]
    fn degenerate_and_tiny_inputs_error() {
        let one_class = vec![(1.0, Label::Covert2), (2.0, Label::Covert2)];
        assert_eq!(train_tree(&one_class, &hp_depth1()), Err(DetectError::DegenerateLabels));

        let tiny = vec![(1.0, Label::Covert2), (2.0, Label::Legitimate)];
        let hp = TreeHyperparams { min_leaf: 2, ..hp_depth1() };
        assert!(matches!(train_tree(&tiny, &hp), Err(DetectError::TooFewSamples(_))));
    }

    #[test]
    fn pruning_collapses_noise_splits() {
        // one mislabeled straggler deep in the legitimate region: the
        // unpruned tree carves an island for it, pruning removes it
        let mut samples: Vec<(f64, Label)> = Vec::new();
        for i in 0..30 {
            samples.push((2.0 + i as f64 * 0.01, Label::Covert3));
            samples.push((10.0 + i as f64 * 0.01, Label::Legitimate));
        }
        samples.push((10.155, Label::Covert3));
        let unpruned =
            train_tree(&samples, &TreeHyperparams { prune: false, seed: 3, ..Default::default() }).unwrap();
        let pruned =
            train_tree(&samples, &TreeHyperparams { prune: true, seed: 3, ..Default::default() }).unwrap();
        assert!(pruned.depth() <= unpruned.depth());
        assert!(unpruned.depth() > 1);
        assert_eq!(pruned.verdict(10.155), Verdict::Legitimate);
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<(f64, Label)> = (0..40)
            .map(|i| {
                let k = 1.0 + (i as f64 * 0.37) % 12.0;
                let l = if k < 5.0 { Label::Covert2 } else { Label::Legitimate };
                (k, l)
            })
            .collect();
        let hp = TreeHyperparams::default();
        assert_eq!(train_tree(&samples, &hp).unwrap(), train_tree(&samples, &hp).unwrap());
    }

    #[test]
    fn cross_validation_folds_are_stratified() {
        let mut samples = Vec::new();
        for i in 0..660 {
            samples.push((2.0 + (i % 97) as f64 * 0.01, Label::Covert3));
            samples.push((8.0 + (i % 89) as f64 * 0.07, Label::Legitimate));
        }
        let report = cross_validate(&samples, 10, &TreeHyperparams::default()).unwrap();
        assert_eq!(report.fold_reports.len(), 10);
        for r in &report.fold_reports {
            assert_eq!(r.cm.total(), 132);
            assert_eq!(r.cm.tp + r.cm.fn_, 66);
            assert_eq!(r.cm.fp + r.cm.tn, 66);
        }
        assert!(report.mean_accuracy > Ratio::new(9u128, 10));
    }

    #[test]
    fn ten_per_class_ten_folds_is_leave_one_out_per_class() {
        let samples: Vec<(f64, Label)> = (0..10)
            .map(|i| (2.0 + i as f64 * 0.01, Label::Covert2))
            .chain((0..10).map(|i| (9.0 + i as f64 * 0.01, Label::Legitimate)))
            .collect();
        let report = cross_validate(&samples, 10, &TreeHyperparams::default()).unwrap();
        for r in &report.fold_reports {
            assert_eq!(r.cm.total(), 2);
        }

        let too_few: Vec<(f64, Label)> = samples.iter().copied().take(15).collect();
        assert!(matches!(
            cross_validate(&too_few, 10, &TreeHyperparams::default()),
            Err(DetectError::TooFewSamples(_))
        ));
    }

    #[test]
    fn cross_validation_is_deterministic_under_seed() {
        let samples: Vec<(f64, Label)> = (0..50)
            .map(|i| {
                let k = 1.0 + (i as f64 * 0.53) % 13.0;
                let l = if k < 6.0 { Label::Covert4 } else { Label::Legitimate };
                (k, l)
            })
            .collect();
        let hp = TreeHyperparams::default();
        let a = cross_validate(&samples, 5, &hp).unwrap();
        let b = cross_validate(&samples, 5, &hp).unwrap();
        assert_eq!(a.mean_accuracy, b.mean_accuracy);
        for (x, y) in a.fold_reports.iter().zip(&b.fold_reports) {
            assert_eq!(x.cm, y.cm);
        }
    }
}
