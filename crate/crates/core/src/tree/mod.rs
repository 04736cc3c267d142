//! Survival trees: growth, Kaplan-Meier leaves, pruning and model files.

mod km;
mod logrank;
mod prune;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{label_dipoles, validate_zetas, Dataset, Standardization, DEFAULT_ZETA1, DEFAULT_ZETA2};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::splitter::{fit_split, SplitModel, SplitParams};

pub use km::KaplanMeier;
pub use logrank::logrank_statistic;
pub use prune::{
    bootstrap_optimism, node_logranks, prune_sequence, select_subtree, split_complexity, PruneSequence,
    PruneStep, Selection, SubtreeChoice,
};

pub const MODEL_VERSION: &str = "dipole-tree/1";
pub const DEFAULT_MIN_NODE: usize = 15;
pub const DEFAULT_MIN_CHILD: usize = 5;
/// Decision-value spread, relative to epsilon, below which a split is refused.
pub const FLAT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub kernel: KernelSpec,
    pub split: SplitParams,
    pub zeta1: f64,
    pub zeta2: f64,
    pub min_node: usize,
    pub min_child: usize,
}

impl TreeConfig {
    pub fn new(kernel: KernelSpec, kappa: f64) -> Self {
        Self {
            kernel,
            split: SplitParams::new(kappa),
            zeta1: DEFAULT_ZETA1,
            zeta2: DEFAULT_ZETA2,
            min_node: DEFAULT_MIN_NODE,
            min_child: DEFAULT_MIN_CHILD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.split.validate()?;
        validate_zetas(self.zeta1, self.zeta2)?;
        if self.min_child == 0 {
            return Err(Error::InvalidParameter("min_child must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Preorder index in the fully grown tree; kept stable under pruning.
    pub id: usize,
    pub depth: usize,
    pub n_samples: usize,
    pub km: KaplanMeier,
    pub median: f64,
    /// The curve never reached 0.5 and `median` is the largest observed time.
    pub median_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Box<Split>>,
}

/// `f(x) <= 0` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub model: SplitModel,
    /// Training log-rank statistic between the two children.
    pub logrank: f64,
    pub left: TreeNode,
    pub right: TreeNode,
}

impl TreeNode {
    fn leaf(obs: &[(f64, bool)], depth: usize) -> Self {
        let km = KaplanMeier::fit(obs);
        let (median, median_fallback) = km.median();
        TreeNode {
            id: 0,
            depth,
            n_samples: obs.len(),
            km,
            median,
            median_fallback,
            split: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Visits nodes in preorder.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let Some(s) = &self.split {
            s.left.walk(f);
            s.right.walk(f);
        }
    }

    fn walk_mut(&mut self, f: &mut impl FnMut(&mut TreeNode)) {
        f(self);
        if let Some(s) = &mut self.split {
            s.left.walk_mut(f);
            s.right.walk_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub version: String,
    pub config: TreeConfig,
    pub standardization: Standardization,
    pub root: TreeNode,
}

impl SurvivalTree {
    pub fn node_count(&self) -> usize {
        let mut k = 0;
        self.root.walk(&mut |_| k += 1);
        k
    }

    pub fn internal_count(&self) -> usize {
        let mut k = 0;
        self.root.walk(&mut |n| k += !n.is_leaf() as usize);
        k
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| {
            if n.is_leaf() {
                out.push(n)
            }
        });
        out
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        self.root.walk(&mut |n| d = d.max(n.depth));
        d
    }

    /// Leaf reached by standardized covariates `x`.
    pub fn leaf_for(&self, x: &[f64]) -> Result<&TreeNode> {
        if x.len() != self.standardization.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.standardization.dim(),
                got: x.len(),
            });
        }
        let mut node = &self.root;
        while let Some(s) = &node.split {
            node = if s.model.decision_value(x)? <= 0.0 { &s.left } else { &s.right };
        }
        Ok(node)
    }

    pub fn predict_median(&self, x: &[f64]) -> Result<f64> {
        Ok(self.leaf_for(x)?.median)
    }

    /// Median for raw, unstandardized covariates.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64> {
        self.predict_median(&self.standardization.apply(raw)?)
    }

    /// Leaf of every row of `d`, which must share this tree's standardization.
    pub fn route<'a>(&'a self, d: &Dataset) -> Result<Vec<&'a TreeNode>> {
        (0..d.n()).map(|i| self.leaf_for(d.covariates(i))).collect()
    }

    /// Copy with the listed internal nodes turned into leaves.
    pub fn collapsed(&self, ids: &BTreeSet<usize>) -> SurvivalTree {
        let mut out = self.clone();
        out.root.walk_mut(&mut |n| {
            if ids.contains(&n.id) {
                n.split = None;
            }
        });
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("version").and_then(|x| x.as_str()) {
            Some(MODEL_VERSION) => {}
            Some(other) => return Err(Error::Model(format!("unsupported model version `{other}`"))),
            None => return Err(Error::Model("missing version field".into())),
        }
        let tree: SurvivalTree = serde_json::from_value(v)?;
        tree.config.validate().map_err(|e| Error::Model(e.to_string()))?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn outcomes(d: &Dataset, idx: &[usize]) -> Vec<(f64, bool)> {
    idx.iter().map(|&i| (d.get(i).time, d.get(i).event)).collect()
}

fn grow_node(d: &Dataset, idx: &[usize], depth: usize, cfg: &TreeConfig) -> Result<TreeNode> {
    let obs = outcomes(d, idx);
    let leaf = TreeNode::leaf(&obs, depth);
    if idx.len() < cfg.min_node || idx.len() < 2 {
        return Ok(leaf);
    }
    let node = d.subset(idx);
    let labels = match label_dipoles(&node, cfg.zeta1, cfg.zeta2) {
        Ok(l) => l,
        Err(Error::EmptyLabels) => return Ok(leaf),
        Err(e) => return Err(e),
    };
    if labels.mixed.is_empty() {
        return Ok(leaf);
    }
    let fit = match fit_split(&node, &labels, &cfg.kernel, &cfg.split) {
        Ok(f) => f,
        Err(Error::EmptyLabels | Error::DegenerateSplit) => return Ok(leaf),
        Err(e) => return Err(e),
    };
    let values = (0..idx.len())
        .map(|local| fit.model.decision_value(node.covariates(local)))
        .collect::<Result<Vec<f64>>>()?;
    // a surface flat to solver precision orders the node by rounding noise
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= FLAT_TOL * fit.model.epsilon {
        return Ok(leaf);
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (&i, &v) in idx.iter().zip(&values) {
        if v <= 0.0 {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.len() < cfg.min_child || right.len() < cfg.min_child {
        return Ok(leaf);
    }
    let logrank = logrank_statistic(&outcomes(d, &left), &outcomes(d, &right));
    let (l, r) = rayon::join(
        || grow_node(d, &left, depth + 1, cfg),
        || grow_node(d, &right, depth + 1, cfg),
    );
    Ok(TreeNode {
        split: Some(Box::new(Split {
            model: fit.model,
            logrank,
            left: l?,
            right: r?,
        })),
        ..leaf
    })
}

/// Grows a tree on standardized data until nodes are small, hold no mixed
/// dipoles, or cannot be split into children of at least `min_child`.
pub fn grow(d: &Dataset, cfg: &TreeConfig) -> Result<SurvivalTree> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InvalidData("cannot grow a tree on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..d.n()).collect();
    let mut root = grow_node(d, &idx, 0, cfg)?;
    let mut next = 0;
    root.walk_mut(&mut |n| {
        n.id = next;
        next += 1;
    });
    Ok(SurvivalTree {
        version: MODEL_VERSION.to_string(),
        config: cfg.clone(),
        standardization: d.standardization().clone(),
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn two_groups() -> Dataset {
        // x < 0 dies early, x > 0 late
        let mut obs = Vec::new();
        for i in 0..20 {
            let x = -2.0 - 0.05 * i as f64;
            obs.push(Observation::new(vec![x], 1.0 + 0.1 * i as f64, true));
            let x = 2.0 + 0.05 * i as f64;
            obs.push(Observation::new(vec![x], 10.0 + 0.1 * i as f64, true));
        }
        Dataset::new(obs).unwrap()
    }

    #[test]
    fn small_node_is_leaf() {
        let d = Dataset::new(
            (0..5).map(|i| Observation::new(vec![i as f64], 1.0 + i as f64, true)).collect(),
        )
        .unwrap();
        let t = grow(&d, &TreeConfig::new(KernelSpec::Linear, 1.0)).unwrap();
        assert!(t.root.is_leaf());
        assert_eq!(t.root.n_samples, 5);
    }

    #[test]
    fn separated_groups_split_once_at_root() {
        let d = two_groups();
        let mut cfg = TreeConfig::new(KernelSpec::Linear, 1.0);
        cfg.min_node = 30;
        let t = grow(&d, &cfg).unwrap();
        assert_eq!(t.internal_count(), 1);
        let s = t.root.split.as_ref().unwrap();
        let (lo, hi) = if s.left.median < s.right.median { (&s.left, &s.right) } else { (&s.right, &s.left) };
        let early = KaplanMeier::fit(&(0..20).map(|i| (1.0 + 0.1 * i as f64, true)).collect::<Vec<_>>());
        let late = KaplanMeier::fit(&(0..20).map(|i| (10.0 + 0.1 * i as f64, true)).collect::<Vec<_>>());
        assert_eq!(lo.median, early.median().0);
        assert_eq!(hi.median, late.median().0);
        assert!(s.logrank > 20.0);
    }

    #[test]
    fn no_comparable_pairs_is_leaf() {
        // the earliest time is censored and every later one too
        let d = Dataset::new(
            (0..20).map(|i| Observation::new(vec![i as f64], 1.0 + i as f64, false)).collect(),
        )
        .unwrap();
        let mut cfg = TreeConfig::new(KernelSpec::Linear, 1.0);
        cfg.min_node = 2;
        let t = grow(&d, &cfg).unwrap();
        assert!(t.root.is_leaf());
        assert!(t.root.median_fallback);
    }

    #[test]
    fn largest_gap_is_always_mixed() {
        let d = Dataset::new(
            (0..20).map(|i| Observation::new(vec![i as f64], 5.0 + 1e-3 * i as f64, i % 3 != 0)).collect(),
        )
        .unwrap();
        let labels = label_dipoles(&d, DEFAULT_ZETA1, DEFAULT_ZETA2).unwrap();
        assert!(!labels.mixed.is_empty());
    }

    #[test]
    fn routing_partitions_training_rows() {
        let d = two_groups();
        let mut cfg = TreeConfig::new(KernelSpec::quadratic(), 1.0);
        cfg.min_node = 10;
        let t = grow(&d, &cfg).unwrap();
        let total: usize = t.leaves().iter().map(|l| l.n_samples).sum();
        assert_eq!(total, d.n());
        // replay: every leaf's KM matches the rows routed to it
        let routed = t.route(&d).unwrap();
        for leaf in t.leaves() {
            let obs: Vec<(f64, bool)> = routed
                .iter()
                .enumerate()
                .filter(|(_, n)| n.id == leaf.id)
                .map(|(i, _)| (d.get(i).time, d.get(i).event))
                .collect();
            assert_eq!(KaplanMeier::fit(&obs), leaf.km);
        }
    }

    #[test]
    fn prediction_routes_by_sign() {
        let d = two_groups();
        let mut cfg = TreeConfig::new(KernelSpec::Linear, 1.0);
        cfg.min_node = 30;
        let t = grow(&d, &cfg).unwrap();
        let s = t.root.split.as_ref().unwrap();
        for x in [-3.0, -0.5, 0.5, 3.0] {
            let f = s.model.decision_value(&[x]).unwrap();
            let want = if f <= 0.0 { s.left.median } else { s.right.median };
            assert_eq!(t.predict_median(&[x]).unwrap(), want);
        }
        assert!(t.predict_median(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_leaf_predicts_its_median() {
        let d = Dataset::new(
            [(9.0, true), (9.0, true), (12.0, false)]
                .iter()
                .map(|&(t, e)| Observation::new(vec![0.0], t, e))
                .collect(),
        )
        .unwrap();
        let t = grow(&d, &TreeConfig::new(KernelSpec::Linear, 1.0)).unwrap();
        assert_eq!(t.predict_median(&[42.0]).unwrap(), 9.0);
    }

    #[test]
    fn json_round_trip() {
        let d = two_groups();
        let mut cfg = TreeConfig::new(KernelSpec::Gaussian { variance: 2.0 }, 1.0);
        cfg.min_node = 30;
        let t = grow(&d, &cfg).unwrap();
        let s = t.to_json().unwrap();
        assert!(s.contains("\"version\": \"dipole-tree/1\""));
        let back = SurvivalTree::from_json(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), s);
        let bad = s.replace("dipole-tree/1", "dipole-tree/9");
        assert!(matches!(SurvivalTree::from_json(&bad), Err(Error::Model(_))));
    }
}
