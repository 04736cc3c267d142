//! End-to-end fitting, evaluation, cross-validation and kappa tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DEFAULT_ZETA1, DEFAULT_ZETA2};
use crate::error::{Error, Result};
use crate::kernel::{KernelChoice, KernelSpec};
use crate::metrics::{self, EvalReport};
use crate::qp::SolverConfig;
use crate::splitter::{SplitParams, DEFAULT_EPSILON};
use crate::tree::{
    grow, node_logranks, prune_sequence, select_subtree, Selection, SurvivalTree, TreeConfig,
    DEFAULT_MIN_CHILD, DEFAULT_MIN_NODE,
};

pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_ALPHA_C: f64 = 3.0;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.25;
pub const DEFAULT_BOOTSTRAP: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub kernel: KernelChoice,
    pub kappa: f64,
    pub epsilon: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub min_node: usize,
    pub alpha_c: f64,
    /// Held-out share for subtree selection; 0 selects by bootstrap.
    pub validation_fraction: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub qp: SolverConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::Fixed(KernelSpec::quadratic()),
            kappa: DEFAULT_KAPPA,
            epsilon: DEFAULT_EPSILON,
            zeta1: DEFAULT_ZETA1,
            zeta2: DEFAULT_ZETA2,
            min_node: DEFAULT_MIN_NODE,
            alpha_c: DEFAULT_ALPHA_C,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
            qp: SolverConfig::default(),
        }
    }
}

impl FitOptions {
    pub fn tree_config(&self, train: &Dataset) -> TreeConfig {
        let mut cfg = TreeConfig::new(self.kernel.resolve(train), self.kappa);
        cfg.split = SplitParams { epsilon: self.epsilon, qp: self.qp, ..SplitParams::new(self.kappa) };
        cfg.zeta1 = self.zeta1;
        cfg.zeta2 = self.zeta2;
        cfg.min_node = self.min_node;
        cfg.min_child = DEFAULT_MIN_CHILD.min(self.min_node.max(1));
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidParameter(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.alpha_c >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_c must be >= 0, got {}", self.alpha_c)));
        }
        if !(2.0..=4.0).contains(&self.alpha_c) {
            log::warn!("alpha_c = {} is outside the usual range [2, 4]", self.alpha_c);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: usize,
    pub depth: usize,
    pub n_samples: usize,
    /// Training log-rank of the split; absent for leaves of the grown tree.
    pub logrank: Option<f64>,
    pub validation_logrank: Option<f64>,
    /// Whether the node survives pruning.
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kernel: String,
    pub n_train: usize,
    pub n_grow: usize,
    pub n_validation: usize,
    pub selection: String,
    pub nodes_grown: usize,
    pub internal_grown: usize,
    pub nodes_pruned: usize,
    pub internal_pruned: usize,
    pub alphas: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: usize,
    pub nodes: Vec<NodeSummary>,
}

/// Row indices split into `k` groups, each status stratum dealt round-robin
/// after a seeded shuffle.
pub fn stratified_folds(d: &Dataset, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for event in [true, false] {
        let mut idx: Vec<usize> = (0..d.n()).filter(|&i| d.get(i).event == event).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// `(grow, validation)` indices with `fraction` of each status stratum held out.
pub fn stratified_holdout(d: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut grow_idx, mut valid) = (Vec::new(), Vec::new());
    for event in [true, false] {
        let mut idx: Vec<usize> = (0..d.n()).filter(|&i| d.get(i).event == event).collect();
        idx.shuffle(&mut rng);
        let cut = (fraction * idx.len() as f64).round() as usize;
        valid.extend_from_slice(&idx[..cut]);
        grow_idx.extend_from_slice(&idx[cut..]);
    }
    grow_idx.sort_unstable();
    valid.sort_unstable();
    (grow_idx, valid)
}

/// Grows, prunes and selects a subtree.
pub fn fit(train: &Dataset, opts: &FitOptions) -> Result<(SurvivalTree, FitReport)> {
    opts.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidData("training set is empty".into()));
    }
    let cfg = opts.tree_config(train);
    let (grow_idx, valid_idx) = if opts.validation_fraction > 0.0 {
        stratified_holdout(train, opts.validation_fraction, opts.seed)
    } else {
        ((0..train.n()).collect(), Vec::new())
    };
    // validation needs rows on both sides; fall back to bootstrap otherwise
    let use_validation = !valid_idx.is_empty() && !grow_idx.is_empty();
    let (grow_set, valid_set) = if use_validation {
        (train.subset(&grow_idx), Some(train.subset(&valid_idx)))
    } else {
        (train.clone(), None)
    };

    let full = grow(&grow_set, &cfg)?;
    let seq = prune_sequence(&full);
    let selection = match &valid_set {
        Some(v) => Selection::Validation(v),
        None => Selection::Bootstrap { train: &grow_set, replicates: opts.bootstrap, seed: opts.seed },
    };
    let choice = select_subtree(&full, &seq, opts.alpha_c, selection)?;
    let pruned = seq.subtree(&full, choice.index);
    let collapsed = seq.collapsed_in(choice.index);

    let valid_lr = valid_set.as_ref().map(|v| node_logranks(&full, v)).transpose()?;
    let mut nodes = Vec::new();
    let mut dead = std::collections::BTreeSet::new();
    full.root.walk(&mut |n| {
        let kept = !dead.contains(&n.id);
        if !kept || collapsed.contains(&n.id) {
            if let Some(s) = &n.split {
                dead.insert(s.left.id);
                dead.insert(s.right.id);
            }
        }
        nodes.push(NodeSummary {
            id: n.id,
            depth: n.depth,
            n_samples: n.n_samples,
            logrank: n.split.as_ref().map(|s| s.logrank),
            validation_logrank: valid_lr.as_ref().and_then(|m| m.get(&n.id).copied()),
            kept,
        });
    });

    let report = FitReport {
        kernel: cfg.kernel.to_string(),
        n_train: train.n(),
        n_grow: grow_set.n(),
        n_validation: valid_set.as_ref().map_or(0, Dataset::n),
        selection: if use_validation { "validation".into() } else { format!("bootstrap:{}", opts.bootstrap) },
        nodes_grown: full.node_count(),
        internal_grown: full.internal_count(),
        nodes_pruned: pruned.node_count(),
        internal_pruned: pruned.internal_count(),
        alphas: seq.alphas(),
        scores: choice.scores,
        chosen: choice.index,
        nodes,
    };
    Ok((pruned, report))
}

/// Routes standardized test rows and scores the leaf curves.
pub fn evaluate_tree(tree: &SurvivalTree, test: &Dataset) -> Result<EvalReport> {
    let leaves = tree.route(test)?;
    let curves: Vec<_> = leaves.iter().map(|l| &l.km).collect();
    let medians: Vec<f64> = leaves.iter().map(|l| l.median).collect();
    metrics::evaluate(&curves, &medians, &test.times(), &test.events())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub nodes: Option<usize>,
    pub ci: Option<f64>,
    pub ibs: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean over folds where the value is defined.
    pub mean_ci: Option<f64>,
    pub mean_ibs: Option<f64>,
    pub mean_nodes: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn run_fold(d: &Dataset, folds: &[Vec<usize>], k: usize, opts: &FitOptions) -> FoldResult {
    let test_idx = &folds[k];
    let train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    let mut train_idx = train_idx;
    train_idx.sort_unstable();
    let outcome = (|| -> Result<(usize, EvalReport)> {
        let (tree, _) = fit(&d.subset(&train_idx), opts)?;
        Ok((tree.node_count(), evaluate_tree(&tree, &d.subset(test_idx))?))
    })();
    match outcome {
        Ok((nodes, r)) => FoldResult {
            fold: k,
            n_test: test_idx.len(),
            nodes: Some(nodes),
            ci: r.ci,
            ibs: Some(r.ibs),
            error: None,
        },
        Err(e) => {
            log::warn!("fold {k}: {e}");
            FoldResult { fold: k, n_test: test_idx.len(), nodes: None, ci: None, ibs: None, error: Some(e.to_string()) }
        }
    }
}

fn summarize(folds: Vec<FoldResult>) -> CvReport {
    CvReport {
        mean_ci: mean(folds.iter().filter_map(|f| f.ci)),
        mean_ibs: mean(folds.iter().filter_map(|f| f.ibs)),
        mean_nodes: mean(folds.iter().filter_map(|f| f.nodes.map(|n| n as f64))),
        folds,
    }
}

fn check_folds(d: &Dataset, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("folds must be at least 2, got {k}")));
    }
    if d.n() < k {
        return Err(Error::InvalidData(format!("{} rows cannot fill {k} folds", d.n())));
    }
    Ok(())
}

/// k-fold cross-validated CI and IBS. Folds run concurrently and are
/// reported in fold order.
pub fn cross_validate(d: &Dataset, k: usize, opts: &FitOptions) -> Result<CvReport> {
    check_folds(d, k)?;
    opts.validate()?;
    let folds = stratified_folds(d, k, opts.seed);
    let results = (0..k).into_par_iter().map(|j| run_fold(d, &folds, j, opts)).collect();
    Ok(summarize(results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub eta: f64,
    pub kappa: f64,
    pub cv: CvReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub best_eta: f64,
    pub best_kappa: f64,
    pub rows: Vec<TuneRow>,
}

pub fn default_eta_grid() -> Vec<f64> {
    (-4..=4).map(f64::from).collect()
}

/// Cross-validates every `kappa = exp(eta)` on shared folds and picks the
/// largest mean CI; ties and undefined CIs favor the smaller eta.
pub fn tune(d: &Dataset, etas: &[f64], k: usize, opts: &FitOptions) -> Result<TuneReport> {
    check_folds(d, k)?;
    opts.validate()?;
    if etas.is_empty() || etas.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParameter("eta grid must be nonempty and finite".into()));
    }
    let mut etas = etas.to_vec();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let folds = stratified_folds(d, k, opts.seed);
    let cells: Vec<(usize, usize)> = (0..etas.len()).flat_map(|e| (0..k).map(move |j| (e, j))).collect();
    let results: Vec<FoldResult> = cells
        .par_iter()
        .map(|&(e, j)| {
            let o = FitOptions { kappa: etas[e].exp(), ..opts.clone() };
            run_fold(d, &folds, j, &o)
        })
        .collect();
    let mut rows = Vec::new();
    for (e, chunk) in results.chunks(k).enumerate() {
        rows.push(TuneRow { eta: etas[e], kappa: etas[e].exp(), cv: summarize(chunk.to_vec()) });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        let better = match (r.cv.mean_ci, rows[best].cv.mean_ci) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = i;
        }
    }
    Ok(TuneReport { best_eta: rows[best].eta, best_kappa: rows[best].kappa, rows })
}
