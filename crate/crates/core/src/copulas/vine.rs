//! Regular vine copulas: greedy maximum-spanning-tree structure selection,
//! AIC-based pair families, and simulation by sequential inverse
//! h-functions.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;

use super::pair::{clamp_unit, select_pair, PairCopula, UNIT_CLAMP};
use crate::stats::kendall_tau;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VineEdge {
    /// 1-based tree level.
    pub tree: usize,
    /// Conditioned pair; the copula's first argument is `conditioned.0`.
    pub conditioned: (usize, usize),
    /// Sorted conditioning set.
    pub conditioning: Vec<usize>,
    pub copula: PairCopula,
}

impl VineEdge {
    fn all_mask(&self) -> u64 {
        mask_of(&self.conditioning) | bit(self.conditioned.0) | bit(self.conditioned.1)
    }

    fn cond_mask(&self) -> u64 {
        mask_of(&self.conditioning)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vine {
    pub dim: usize,
    pub edges: Vec<VineEdge>,
    pub loglik: f64,
    /// Number of conditional values clamped into the unit interval during
    /// fitting.
    pub clamped: usize,
}

fn bit(i: usize) -> u64 {
    1u64 << i
}

fn mask_of(vars: &[usize]) -> u64 {
    vars.iter().fold(0, |m, &v| m | bit(v))
}

fn vars_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|&i| mask & bit(i) != 0).collect()
}

/// Conditional pseudo-observations keyed by (variable, conditioning mask).
type Memo = HashMap<(usize, u64), Vec<f64>>;

/// Maximum spanning tree (Prim) over `n` nodes given candidate weighted
/// edges. Ties are broken by candidate order, which is deterministic.
fn max_spanning_tree(n: usize, cands: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<(usize, f64)> = None;
        for (ci, &(a, b, w)) in cands.iter().enumerate() {
            if in_tree[a] != in_tree[b] && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((ci, w));
            }
        }
        let (ci, _) = best.expect("candidate graph is connected");
        let (a, b, _) = cands[ci];
        in_tree[a] = true;
        in_tree[b] = true;
        chosen.push(ci);
    }
    chosen
}

fn count_clamped(xs: &[f64]) -> usize {
    xs.iter().filter(|&&x| x <= UNIT_CLAMP || x >= 1.0 - UNIT_CLAMP).count()
}

/// Fits a regular vine to pseudo-observations `u` (T x K, K >= 2).
pub fn fit_vine(u: &DMatrix<f64>) -> Result<Vine> {
    let k = u.ncols();
    if k < 2 {
        return Err(Error::invalid("vine needs at least two variables"));
    }
    if k > 25 {
        return Err(Error::invalid("vine dimension above 25 not supported"));
    }
    let mut memo: Memo = HashMap::new();
    for j in 0..k {
        memo.insert((j, 0), u.column(j).iter().map(|&x| clamp_unit(x)).collect());
    }
    let mut edges: Vec<VineEdge> = Vec::new();
    let mut loglik = 0.0;
    let mut clamped = 0;

    // nodes of the current tree: for tree 1 the variables, afterwards the
    // edges of the previous tree (as all-masks plus their edge index)
    let mut nodes: Vec<u64> = (0..k).map(bit).collect();
    for tree in 1..k {
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        let mut specs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let common = nodes[i] & nodes[j];
                if common.count_ones() as usize != tree - 1 {
                    continue;
                }
                let a = (nodes[i] & !common).trailing_zeros() as usize;
                let b = (nodes[j] & !common).trailing_zeros() as usize;
                let (ua, ub) = (&memo[&(a, common)], &memo[&(b, common)]);
                cands.push((i, j, kendall_tau(ua, ub).abs()));
                specs.push((a, b, vars_of(common)));
            }
        }
        let chosen = max_spanning_tree(nodes.len(), &cands);
        let mut next_nodes = Vec::with_capacity(chosen.len());
        for ci in chosen {
            let (a, b, cond) = specs[ci].clone();
            let cm = mask_of(&cond);
            let (copula, ll) = {
                let (ua, ub) = (&memo[&(a, cm)], &memo[&(b, cm)]);
                select_pair(ua, ub)
            };
            loglik += ll;
            let (ua, ub) = (memo[&(a, cm)].clone(), memo[&(b, cm)].clone());
            let a_given: Vec<f64> = ua.iter().zip(&ub).map(|(&x, &y)| copula.h1(x, y)).collect();
            let b_given: Vec<f64> = ua.iter().zip(&ub).map(|(&x, &y)| copula.h2(x, y)).collect();
            clamped += count_clamped(&a_given) + count_clamped(&b_given);
            memo.insert((a, cm | bit(b)), a_given);
            memo.insert((b, cm | bit(a)), b_given);
            let edge = VineEdge { tree, conditioned: (a, b), conditioning: cond, copula };
            next_nodes.push(edge.all_mask());
            edges.push(edge);
        }
        nodes = next_nodes;
    }
    Ok(Vine { dim: k, edges, loglik, clamped })
}

impl Vine {
    pub fn n_params(&self) -> usize {
        self.edges.iter().map(|e| e.copula.n_params()).sum()
    }

    /// Sampling order and, for each variable, its edges from the highest
    /// tree down to tree 1.
    fn sampling_plan(&self) -> Vec<(usize, Vec<usize>)> {
        let mut remaining: u64 = (0..self.dim).fold(0, |m, i| m | bit(i));
        let mut used = vec![false; self.edges.len()];
        let mut plan = Vec::with_capacity(self.dim);
        while remaining.count_ones() > 1 {
            let top = (0..self.edges.len())
                .filter(|&i| !used[i] && self.edges[i].all_mask() & !remaining == 0)
                .max_by_key(|&i| (self.edges[i].tree, std::cmp::Reverse(i)))
                .expect("vine has an edge on the remaining variables");
            let var = self.edges[top].conditioned.0;
            let mut chain = Vec::new();
            let mut cur = top;
            loop {
                used[cur] = true;
                chain.push(cur);
                let cm = self.edges[cur].cond_mask();
                if cm == 0 {
                    break;
                }
                cur = (0..self.edges.len())
                    .find(|&i| {
                        let e = &self.edges[i];
                        (e.conditioned.0 == var || e.conditioned.1 == var) && e.all_mask() == cm | bit(var)
                    })
                    .expect("proximity condition guarantees the lower edge");
            }
            plan.push((var, chain));
            remaining &= !bit(var);
        }
        plan.push((remaining.trailing_zeros() as usize, Vec::new()));
        plan.reverse();
        plan
    }

    pub fn simulate<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let plan = self.sampling_plan();
        let mut memo: Memo = HashMap::new();
        for (var, chain) in &plan {
            let w: Vec<f64> = (0..n).map(|_| clamp_unit(rng.random())).collect();
            let mut val = w;
            // invert from the top tree down to the unconditional value
            for &ei in chain {
                let e = &self.edges[ei];
                let cm = e.cond_mask();
                let other = if e.conditioned.0 == *var { e.conditioned.1 } else { e.conditioned.0 };
                let partner = &memo[&(other, cm)];
                val = if e.conditioned.0 == *var {
                    val.iter().zip(partner).map(|(&x, &y)| e.copula.h1_inv(x, y)).collect()
                } else {
                    val.iter().zip(partner).map(|(&x, &y)| e.copula.h2_inv(x, y)).collect()
                };
                memo.insert((*var, cm), val.clone());
            }
            memo.insert((*var, 0), val);
            // propagate conditional values needed by later variables
            for &ei in chain.iter().rev() {
                let e = &self.edges[ei];
                let cm = e.cond_mask();
                let (a, b) = e.conditioned;
                let (ua, ub) = (&memo[&(a, cm)], &memo[&(b, cm)]);
                let a_given: Vec<f64> = ua.iter().zip(ub).map(|(&x, &y)| e.copula.h1(x, y)).collect();
                let b_given: Vec<f64> = ua.iter().zip(ub).map(|(&x, &y)| e.copula.h2(x, y)).collect();
                memo.insert((a, cm | bit(b)), a_given);
                memo.insert((b, cm | bit(a)), b_given);
            }
        }
        DMatrix::from_fn(n, self.dim, |i, j| memo[&(j, 0)][i])
    }

    /// Log-density of the vine at the rows of `u`.
    pub fn loglik_at(&self, u: &DMatrix<f64>) -> f64 {
        let mut memo: Memo = HashMap::new();
        for j in 0..self.dim {
            memo.insert((j, 0), u.column(j).iter().map(|&x| clamp_unit(x)).collect());
        }
        let mut ll = 0.0;
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.sort_by_key(|&i| self.edges[i].tree);
        for i in order {
            let e = &self.edges[i];
            let cm = e.cond_mask();
            let (a, b) = e.conditioned;
            let (ua, ub) = (&memo[&(a, cm)], &memo[&(b, cm)]);
            ll += e.copula.loglik(ua, ub);
            let a_given: Vec<f64> = ua.iter().zip(ub).map(|(&x, &y)| e.copula.h1(x, y)).collect();
            let b_given: Vec<f64> = ua.iter().zip(ub).map(|(&x, &y)| e.copula.h2(x, y)).collect();
            memo.insert((a, cm | bit(b)), a_given);
            memo.insert((b, cm | bit(a)), b_given);
        }
        ll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copulas::pair::PairFamily;
    use crate::rng::rng_from_seed;

    fn sample_vine() -> Vine {
        let pc = |f, r, p, p2| PairCopula::new(f, r, p, p2).unwrap();
        Vine {
            dim: 4,
            edges: vec![
                VineEdge { tree: 1, conditioned: (0, 1), conditioning: vec![], copula: pc(PairFamily::Clayton, 0, 2.0, 0.0) },
                VineEdge { tree: 1, conditioned: (1, 2), conditioning: vec![], copula: pc(PairFamily::Gumbel, 0, 1.8, 0.0) },
                VineEdge { tree: 1, conditioned: (1, 3), conditioning: vec![], copula: pc(PairFamily::Gaussian, 0, 0.5, 0.0) },
                VineEdge { tree: 2, conditioned: (0, 2), conditioning: vec![1], copula: pc(PairFamily::Frank, 0, 3.0, 0.0) },
                VineEdge { tree: 2, conditioned: (2, 3), conditioning: vec![1], copula: pc(PairFamily::Joe, 90, 1.5, 0.0) },
                VineEdge { tree: 3, conditioned: (0, 3), conditioning: vec![1, 2], copula: pc(PairFamily::Gaussian, 0, 0.3, 0.0) },
            ],
            loglik: 0.0,
            clamped: 0,
        }
    }

    #[test]
    fn simulation_reproduces_pairwise_tau() {
        let v = sample_vine();
        let mut rng = rng_from_seed(1);
        let u = v.simulate(6000, &mut rng);
        let col = |j: usize| u.column(j).iter().copied().collect::<Vec<_>>();
        for e in v.edges.iter().filter(|e| e.tree == 1) {
            let t = kendall_tau(&col(e.conditioned.0), &col(e.conditioned.1));
            assert!((t - e.copula.tau()).abs() < 0.03, "{e:?}: {t}");
        }
    }

    #[test]
    fn first_tree_maximizes_dependence() {
        let v = sample_vine();
        let mut rng = rng_from_seed(2);
        let u = v.simulate(3000, &mut rng);
        let fit = fit_vine(&u).unwrap();
        assert_eq!(fit.edges.len(), 6);
        let col = |j: usize| u.column(j).iter().copied().collect::<Vec<_>>();
        let weight = |es: &[VineEdge]| -> f64 {
            es.iter()
                .filter(|e| e.tree == 1)
                .map(|e| kendall_tau(&col(e.conditioned.0), &col(e.conditioned.1)).abs())
                .sum()
        };
        assert!(weight(&fit.edges) >= weight(&v.edges) - 1e-12);
        assert!((fit.loglik - fit.loglik_at(&u)).abs() < 1e-6 * fit.loglik.abs());
    }

    #[test]
    fn dominant_path_structure_is_recovered() {
        let pc = |f, r, p, p2| PairCopula::new(f, r, p, p2).unwrap();
        let truth = Vine {
            dim: 4,
            edges: vec![
                VineEdge { tree: 1, conditioned: (0, 1), conditioning: vec![], copula: pc(PairFamily::Gumbel, 0, 3.3, 0.0) },
                VineEdge { tree: 1, conditioned: (1, 2), conditioning: vec![], copula: pc(PairFamily::Clayton, 0, 3.7, 0.0) },
                VineEdge { tree: 1, conditioned: (2, 3), conditioning: vec![], copula: pc(PairFamily::Gaussian, 0, 0.8, 0.0) },
                VineEdge { tree: 2, conditioned: (0, 2), conditioning: vec![1], copula: pc(PairFamily::Frank, 0, 1.0, 0.0) },
                VineEdge { tree: 2, conditioned: (1, 3), conditioning: vec![2], copula: pc(PairFamily::Gaussian, 0, -0.2, 0.0) },
                VineEdge { tree: 3, conditioned: (0, 3), conditioning: vec![1, 2], copula: pc(PairFamily::Gaussian, 0, 0.1, 0.0) },
            ],
            loglik: 0.0,
            clamped: 0,
        };
        let u = truth.simulate(3000, &mut rng_from_seed(8));
        let fit = fit_vine(&u).unwrap();
        let mut got: Vec<_> = fit
            .edges
            .iter()
            .map(|e| {
                let (a, b) = e.conditioned;
                (e.tree, a.min(b), a.max(b), e.conditioning.clone())
            })
            .collect();
        got.sort();
        let mut want: Vec<_> = truth
            .edges
            .iter()
            .map(|e| (e.tree, e.conditioned.0, e.conditioned.1, e.conditioning.clone()))
            .collect();
        want.sort();
        assert_eq!(got, want);
        // same structure: the fit can only beat the truth, by a few units per parameter
        let ll_true = truth.loglik_at(&u);
        assert!(fit.loglik >= ll_true - 2.0 * fit.edges.len() as f64, "{} vs {ll_true}", fit.loglik);
        assert!(fit.loglik <= ll_true + 30.0, "{} vs {ll_true}", fit.loglik);
    }

    #[test]
    fn bivariate_vine_is_a_single_pair() {
        let pc = PairCopula::new(PairFamily::Gumbel, 0, 2.0, 0.0).unwrap();
        let mut rng = rng_from_seed(4);
        let (a, b) = pc.simulate(2000, &mut rng);
        let u = DMatrix::from_fn(2000, 2, |i, j| if j == 0 { a[i] } else { b[i] });
        let fit = fit_vine(&u).unwrap();
        assert_eq!(fit.edges.len(), 1);
        let (best, ll) = select_pair(&a, &b);
        assert_eq!(fit.edges[0].copula, best);
        assert!((fit.loglik - ll).abs() < 1e-9);
    }
}
