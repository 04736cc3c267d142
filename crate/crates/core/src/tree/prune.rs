use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::logrank::logrank_statistic;
use super::{grow, SurvivalTree, TreeConfig, TreeNode};

/// One weakest-link step: every branch whose ratio equals `alpha` collapses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub alpha: f64,
    /// Internal nodes turned into leaves by this step.
    pub collapsed: Vec<usize>,
    /// Internal nodes left after the step.
    pub internal: usize,
    /// Training `G` of the subtree after the step.
    pub g: f64,
}

/// Nested subtrees `T_0` (the full tree) through `T_m` (root only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSequence {
    pub full_internal: usize,
    pub full_g: f64,
    pub steps: Vec<PruneStep>,
}

impl PruneSequence {
    /// Number of subtrees, `m + 1`.
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.alpha).collect()
    }

    /// Internal nodes collapsed in `T_k`.
    pub fn collapsed_in(&self, k: usize) -> BTreeSet<usize> {
        self.steps[..k].iter().flat_map(|s| s.collapsed.iter().copied()).collect()
    }

    pub fn subtree(&self, tree: &SurvivalTree, k: usize) -> SurvivalTree {
        tree.collapsed(&self.collapsed_in(k))
    }

    /// `(G, |S|)` of `T_k` on the training data.
    pub fn train_stats(&self, k: usize) -> (f64, usize) {
        if k == 0 {
            (self.full_g, self.full_internal)
        } else {
            let s = &self.steps[k - 1];
            (s.g, s.internal)
        }
    }

    /// Index of the subtree maximizing training `G_alpha`: the `k` with
    /// `alpha_k <= alpha < alpha_{k+1}`.
    pub fn index_for(&self, alpha: f64) -> usize {
        self.steps.iter().take_while(|s| s.alpha <= alpha).count()
    }
}

struct Flat {
    id: usize,
    depth: usize,
    parent: Option<usize>,
    logrank: f64,
}

fn flatten(root: &TreeNode) -> Vec<Flat> {
    fn go(n: &TreeNode, parent: Option<usize>, out: &mut Vec<Flat>) {
        if let Some(s) = &n.split {
            let me = out.len();
            out.push(Flat {
                id: n.id,
                depth: n.depth,
                parent,
                logrank: s.logrank,
            });
            go(&s.left, Some(me), out);
            go(&s.right, Some(me), out);
        }
    }
    let mut out = Vec::new();
    go(root, None, &mut out);
    out
}

fn same_alpha(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Weakest-link pruning on the training log-ranks stored in the tree.
///
/// Branches are collapsed in order of `g(h) = G(T_h) / |S_h|`, deeper first and
/// then by node id on ties. All branches reaching the current minimum within
/// a step collapse together, so the recorded alphas are strictly increasing.
pub fn prune_sequence(tree: &SurvivalTree) -> PruneSequence {
    let flat = flatten(&tree.root);
    let m = flat.len();
    let mut alive = vec![true; m];
    let full_g: f64 = flat.iter().map(|f| f.logrank).sum();

    let is_desc = |mut i: usize, anc: usize| -> bool {
        while let Some(p) = flat[i].parent {
            if p == anc {
                return true;
            }
            i = p;
        }
        false
    };
    // (G, |S|) for every alive internal node
    let branch_stats = |alive: &[bool]| -> Vec<(f64, usize)> {
        let mut st = vec![(0.0, 0usize); m];
        for i in (0..m).rev() {
            if alive[i] {
                st[i].0 += flat[i].logrank;
                st[i].1 += 1;
                if let Some(p) = flat[i].parent {
                    st[p].0 += st[i].0;
                    st[p].1 += st[i].1;
                }
            }
        }
        st
    };

    let mut steps = Vec::new();
    while alive.iter().any(|&a| a) {
        let mut step_alpha: Option<f64> = None;
        let mut collapsed = Vec::new();
        loop {
            let st = branch_stats(&alive);
            let best = (0..m)
                .filter(|&i| alive[i])
                .map(|i| (st[i].0 / st[i].1 as f64, i))
                .min_by(|a, b| {
                    a.0.total_cmp(&b.0)
                        .then(flat[b.1].depth.cmp(&flat[a.1].depth))
                        .then(flat[a.1].id.cmp(&flat[b.1].id))
                });
            let Some((g, i)) = best else { break };
            match step_alpha {
                None => step_alpha = Some(g),
                Some(a) if !same_alpha(g, a) => break,
                Some(_) => {}
            }
            for j in 0..m {
                if alive[j] && (j == i || is_desc(j, i)) {
                    alive[j] = false;
                }
            }
            collapsed.push(flat[i].id);
        }
        let internal = alive.iter().filter(|&&a| a).count();
        let g = (0..m).filter(|&i| alive[i]).map(|i| flat[i].logrank).sum();
        steps.push(PruneStep {
            alpha: step_alpha.expect("an alive node exists"),
            collapsed,
            internal,
            g,
        });
    }
    PruneSequence {
        full_internal: m,
        full_g,
        steps,
    }
}

/// Log-rank statistic at every internal node of the full tree when `data` is
/// sent down it; a side that receives no rows contributes 0.
pub fn node_logranks(tree: &SurvivalTree, data: &Dataset) -> Result<BTreeMap<usize, f64>> {
    if data.p() != tree.standardization.dim() {
        return Err(Error::DimensionMismatch {
            expected: tree.standardization.dim(),
            got: data.p(),
        });
    }
    fn go(n: &TreeNode, data: &Dataset, idx: Vec<usize>, out: &mut BTreeMap<usize, f64>) -> Result<()> {
        let Some(s) = &n.split else { return Ok(()) };
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for i in idx {
            if s.model.decision_value(data.covariates(i))? <= 0.0 {
                l.push(i);
            } else {
                r.push(i);
            }
        }
        let obs = |v: &[usize]| -> Vec<(f64, bool)> {
            v.iter().map(|&i| (data.get(i).time, data.get(i).event)).collect()
        };
        out.insert(n.id, logrank_statistic(&obs(&l), &obs(&r)));
        go(&s.left, data, l, out)?;
        go(&s.right, data, r, out)
    }
    let mut out = BTreeMap::new();
    go(&tree.root, data, (0..data.n()).collect(), &mut out)?;
    Ok(out)
}

/// `G(T') - alpha |S'|` with `G` recomputed from `data` sent down `T'`.
pub fn split_complexity(subtree: &SurvivalTree, alpha: f64, data: &Dataset) -> Result<f64> {
    let lr = node_logranks(subtree, data)?;
    Ok(lr.values().sum::<f64>() - alpha * lr.len() as f64)
}

/// Subtree selection by held-out data or bootstrap bias correction.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    Validation(&'a Dataset),
    Bootstrap {
        train: &'a Dataset,
        replicates: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtreeChoice {
    pub index: usize,
    /// `G_alpha_c` score of every subtree in the chain.
    pub scores: Vec<f64>,
    pub internal: Vec<usize>,
}

/// Per-subtree mean optimism `G_{L_b}(T^b(alpha')) - G_L(T^b(alpha'))` over
/// bootstrap replicates, at the geometric midpoints `alpha'_k` of the chain.
pub fn bootstrap_optimism(
    seq: &PruneSequence,
    cfg: &TreeConfig,
    train: &Dataset,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let alphas = seq.alphas();
    let mids: Vec<f64> = (0..seq.len())
        .map(|k| {
            let lo = if k == 0 { 0.0 } else { alphas[k - 1] };
            match alphas.get(k) {
                Some(&hi) => (lo.max(0.0) * hi.max(0.0)).sqrt(),
                None => f64::INFINITY,
            }
        })
        .collect();
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
            let idx: Vec<usize> = (0..train.n()).map(|_| rng.random_range(0..train.n())).collect();
            let boot = train.subset(&idx);
            let tb = grow(&boot, cfg)?;
            let sb = prune_sequence(&tb);
            let on_orig = node_logranks(&tb, train)?;
            Ok(mids
                .iter()
                .map(|&a| {
                    let j = sb.index_for(a);
                    let alive = internal_ids(&sb.subtree(&tb, j));
                    let g_orig: f64 = alive.iter().map(|id| on_orig[id]).sum();
                    let (g_boot, _) = sb.train_stats(j);
                    g_boot - g_orig
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; seq.len()];
    for rep in &per_rep {
        for (m, o) in mean.iter_mut().zip(rep) {
            *m += o / replicates as f64;
        }
    }
    Ok(mean)
}

/// Ids of the internal nodes of `tree`.
fn internal_ids(tree: &SurvivalTree) -> Vec<usize> {
    let mut out = Vec::new();
    tree.root.walk(&mut |n| {
        if !n.is_leaf() {
            out.push(n.id)
        }
    });
    out
}

/// Picks the subtree maximizing `G_alpha_c`; ties go to the larger subtree.
pub fn select_subtree(
    tree: &SurvivalTree,
    seq: &PruneSequence,
    alpha_c: f64,
    selection: Selection<'_>,
) -> Result<SubtreeChoice> {
    if !(alpha_c >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha_c must be >= 0, got {alpha_c}")));
    }
    let internal: Vec<usize> = (0..seq.len()).map(|k| seq.train_stats(k).1).collect();
    let scores: Vec<f64> = match selection {
        Selection::Validation(valid) => {
            let lr = node_logranks(tree, valid)?;
            (0..seq.len())
                .map(|k| {
                    let g: f64 = internal_ids(&seq.subtree(tree, k)).iter().map(|id| lr[id]).sum();
                    g - alpha_c * internal[k] as f64
                })
                .collect()
        }
        Selection::Bootstrap { train, replicates, seed } => {
            let optimism = if replicates == 0 {
                vec![0.0; seq.len()]
            } else {
                bootstrap_optimism(seq, &tree.config, train, replicates, seed)?
            };
            (0..seq.len())
                .map(|k| seq.train_stats(k).0 - optimism[k] - alpha_c * internal[k] as f64)
                .collect()
        }
    };
    let mut index = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[index] {
            index = k;
        }
    }
    Ok(SubtreeChoice { index, scores, internal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Observation, Standardization};
    use crate::kernel::KernelSpec;
    use crate::splitter::{SplitModel, SupportPoint};
    use crate::tree::{KaplanMeier, Split, MODEL_VERSION};

    fn leaf(id: usize, depth: usize) -> TreeNode {
        let km = KaplanMeier::fit(&[(1.0, true)]);
        TreeNode {
            id,
            depth,
            n_samples: 1,
            km,
            median: 1.0,
            median_fallback: false,
            split: None,
        }
    }

    /// Splits at `x <= threshold` in one dimension.
    fn internal(id: usize, depth: usize, threshold: f64, logrank: f64, l: TreeNode, r: TreeNode) -> TreeNode {
        let model = SplitModel {
            support: vec![
                SupportPoint { x: vec![1.0], coef: 0.5 },
                SupportPoint { x: vec![-1.0], coef: -0.5 },
            ],
            intercept: -threshold,
            kernel: KernelSpec::Linear,
            kappa: 1.0,
            epsilon: 1.0,
            objective: 0.0,
        };
        TreeNode {
            split: Some(Box::new(Split { model, logrank, left: l, right: r })),
            ..leaf(id, depth)
        }
    }

    fn tree(root: TreeNode) -> SurvivalTree {
        SurvivalTree {
            version: MODEL_VERSION.into(),
            config: TreeConfig::new(KernelSpec::Linear, 1.0),
            standardization: Standardization::identity(vec!["x".into()]),
            root,
        }
    }

    #[test]
    fn depth_one_chain() {
        let t = tree(internal(0, 0, 0.0, 5.0, leaf(1, 1), leaf(2, 1)));
        let seq = prune_sequence(&t);
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.alphas(), vec![5.0]);
        assert!(seq.subtree(&t, 1).root.is_leaf());
        assert_eq!(seq.subtree(&t, 0), t);
    }

    #[test]
    fn weakest_subtree_collapses_first() {
        // root 10, left child 1 with its own child 1
        let deep = internal(2, 2, -2.0, 1.0, leaf(3, 3), leaf(4, 3));
        let mid = internal(1, 1, -1.0, 1.0, deep, leaf(5, 2));
        let t = tree(internal(0, 0, 0.0, 10.0, mid, leaf(6, 1)));
        let seq = prune_sequence(&t);
        // branch 1: (1+1)/2 = 1, branch 2: 1 -> tie, both collapse together
        assert_eq!(seq.steps[0].alpha, 1.0);
        assert_eq!(seq.steps[0].collapsed, vec![2, 1]);
        assert_eq!(seq.steps[1].alpha, 10.0);
        assert_eq!(seq.steps[1].internal, 0);
    }

    #[test]
    fn alphas_strictly_increase() {
        let a = internal(2, 1, -1.0, 3.0, leaf(3, 2), leaf(4, 2));
        let b = internal(5, 1, 1.0, 0.5, leaf(6, 2), leaf(7, 2));
        let t = tree(internal(0, 0, 0.0, 2.0, a, b));
        let seq = prune_sequence(&t);
        let al = seq.alphas();
        assert!(al.windows(2).all(|w| w[0] < w[1]), "{al:?}");
        assert_eq!(seq.steps.last().unwrap().internal, 0);
    }

    fn valid(rows: &[(f64, f64, bool)]) -> Dataset {
        Dataset::new(rows.iter().map(|&(x, t, e)| Observation::new(vec![x], t, e)).collect()).unwrap()
    }

    #[test]
    fn split_complexity_cases() {
        let stump = tree(internal(0, 0, 0.0, 5.0, leaf(1, 1), leaf(2, 1)));
        let v = valid(&[(-1.0, 1.0, true), (-2.0, 2.0, true), (1.0, 3.0, true), (2.0, 4.0, true)]);
        let g = node_logranks(&stump, &v).unwrap()[&0];
        assert!((g - 2.882).abs() < 1e-3);
        assert_eq!(split_complexity(&stump, 0.0, &v).unwrap(), g);
        assert!((split_complexity(&stump, 4.0, &v).unwrap() - (g - 4.0)).abs() < 1e-12);
        let root = tree(leaf(0, 0));
        assert_eq!(split_complexity(&root, 3.0, &v).unwrap(), 0.0);
    }

    #[test]
    fn selection_by_validation() {
        let stump = tree(internal(0, 0, 0.0, 5.0, leaf(1, 1), leaf(2, 1)));
        let seq = prune_sequence(&stump);
        let v = valid(&[(-1.0, 1.0, true), (-2.0, 2.0, true), (1.0, 3.0, true), (2.0, 4.0, true)]);
        // G = 2.882 per internal node: alpha_c = 2 keeps it, 4 drops it, 0 keeps the largest
        let pick = |a| select_subtree(&stump, &seq, a, Selection::Validation(&v)).unwrap().index;
        assert_eq!(pick(2.0), 0);
        assert_eq!(pick(4.0), 1);
        assert_eq!(pick(0.0), 0);
    }

    #[test]
    fn empty_side_contributes_zero() {
        let stump = tree(internal(0, 0, 0.0, 5.0, leaf(1, 1), leaf(2, 1)));
        let v = valid(&[(1.0, 1.0, true), (2.0, 2.0, true)]);
        assert_eq!(node_logranks(&stump, &v).unwrap()[&0], 0.0);
    }
}
