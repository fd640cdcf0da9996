//! Enumeration of small single-sink DAGs with read/write labels, one
//! representative per isomorphism class.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sfr::AnalysisGraph;

/// Index of the edge slot `(a, b)`, `a < b`, in an `n`-node bitmask.
fn slot(n: usize, a: usize, b: usize) -> usize {
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

fn slots(n: usize) -> usize {
    n * (n - 1) / 2
}

fn edges_of(n: usize, mask: u32) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if mask >> slot(n, a, b) & 1 == 1 {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Every node but the last has a child; the last has none by construction.
fn single_sink(n: usize, mask: u32) -> bool {
    (0..n.saturating_sub(1)).all(|a| (a + 1..n).any(|b| mask >> slot(n, a, b) & 1 == 1))
}

/// All orders of the nodes consistent with the edges. `order[k]` is the
/// node placed at position `k`.
pub fn linear_extensions(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut preds = vec![0u32; n];
    for &(a, b) in edges {
        preds[b] |= 1 << a;
    }
    let mut out = Vec::new();
    let mut order = Vec::with_capacity(n);
    fn go(n: usize, preds: &[u32], placed: u32, order: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if order.len() == n {
            out.push(order.clone());
            return;
        }
        for v in 0..n {
            if placed >> v & 1 == 0 && preds[v] & !placed == 0 {
                order.push(v);
                go(n, preds, placed | 1 << v, order, out);
                order.pop();
            }
        }
    }
    go(n, &preds, 0, &mut order, &mut out);
    out
}

fn relabel(n: usize, edges: &[(usize, usize)], order: &[usize]) -> u32 {
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    edges.iter().fold(0, |m, &(a, b)| m | 1 << slot(n, pos[a], pos[b]))
}

fn permute_labels(order: &[usize], labels: u32) -> u32 {
    order.iter().enumerate().fold(0, |acc, (k, &v)| acc | (labels >> v & 1) << k)
}

/// Edge masks of the single-sink DAG shapes on `n` nodes, one per class.
pub fn shapes(n: usize) -> Vec<u32> {
    assert!((1..=6).contains(&n), "shape enumeration supports 1..=6 nodes");
    (0..1u32 << slots(n))
        .filter(|&mask| single_sink(n, mask))
        .filter(|&mask| {
            let edges = edges_of(n, mask);
            linear_extensions(n, &edges).iter().all(|o| relabel(n, &edges, o) >= mask)
        })
        .collect()
}

/// Labeled graphs on `n` nodes up to isomorphism; bit `i` of the label
/// marks node `i` as a writer.
pub fn labeled_graphs(n: usize) -> Vec<AnalysisGraph> {
    let mut out = Vec::new();
    for mask in shapes(n) {
        let edges = edges_of(n, mask);
        let automorphisms: Vec<Vec<usize>> =
            linear_extensions(n, &edges).into_iter().filter(|o| relabel(n, &edges, o) == mask).collect();
        for labels in 0..1u32 << n {
            if automorphisms.iter().all(|o| permute_labels(o, labels) >= labels) {
                let writes = (0..n).map(|i| labels >> i & 1 == 1).collect();
                out.push(AnalysisGraph::numbered(n, &edges, writes).expect("enumerated graphs are valid"));
            }
        }
    }
    out
}

/// Every labeled graph with up to `max_n` units, at most `cap` in total.
/// Smaller sizes are taken whole; the first size that does not fit is
/// sampled uniformly with `seed` to fill the cap.
pub fn enumerate_capped(max_n: usize, cap: usize, seed: u64) -> Vec<AnalysisGraph> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        let mut all = labeled_graphs(n);
        let room = cap - out.len();
        if all.len() > room {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.shuffle(&mut rng);
            all.truncate(room);
            out.extend(all);
            break;
        }
        out.extend(all);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Canonical form over every permutation of the node names, not just
    /// topological ones.
    fn brute_canonical(n: usize, edges: &[(usize, usize)], writes: &[bool]) -> (Vec<bool>, Vec<bool>) {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best: Option<(Vec<bool>, Vec<bool>)> = None;
        loop {
            let mut adj = vec![false; n * n];
            for &(a, b) in edges {
                adj[perm[a] * n + perm[b]] = true;
            }
            let mut w = vec![false; n];
            for i in 0..n {
                w[perm[i]] = writes[i];
            }
            let cand = (adj, w);
            if best.as_ref().map_or(true, |b| cand < *b) {
                best = Some(cand);
            }
            // next permutation
            let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else { break };
            let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
            perm.swap(i, j);
            perm[i + 1..].reverse();
        }
        best.unwrap()
    }

    fn brute_count(n: usize) -> usize {
        let mut seen = BTreeSet::new();
        for mask in 0..1u32 << slots(n) {
            if !single_sink(n, mask) {
                continue;
            }
            let edges = edges_of(n, mask);
            for labels in 0..1u32 << n {
                let writes: Vec<bool> = (0..n).map(|i| labels >> i & 1 == 1).collect();
                seen.insert(brute_canonical(n, &edges, &writes));
            }
        }
        seen.len()
    }

    #[test]
    fn counts_match_brute_force() {
        for n in 1..=4 {
            assert_eq!(labeled_graphs(n).len(), brute_count(n), "n = {n}");
        }
    }

    #[test]
    fn known_counts() {
        let shape_counts: Vec<usize> = (1..=5).map(|n| shapes(n).len()).collect();
        assert_eq!(shape_counts, [1, 1, 3, 16, 164]);
        let labeled: Vec<usize> = (1..=5).map(|n| labeled_graphs(n).len()).collect();
        assert_eq!(labeled, [2, 4, 22, 232, 4846]);
    }

    #[test]
    fn extensions_of_a_diamond() {
        let exts = linear_extensions(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(exts, vec![vec![0, 1, 2, 3], vec![0, 2, 1, 3]]);
    }

    #[test]
    fn capped_enumeration_fills_with_a_sample() {
        let g = enumerate_capped(4, 40, 1);
        assert_eq!(g.len(), 40);
        assert_eq!(g.iter().filter(|g| g.len() < 4).count(), 2 + 4 + 22);
        assert_eq!(enumerate_capped(4, 1000, 1).len(), 2 + 4 + 22 + 232);
        let again: Vec<_> = enumerate_capped(4, 40, 1).iter().map(|g| (g.edges(), g.has_write.clone())).collect();
        assert_eq!(again, g.iter().map(|g| (g.edges(), g.has_write.clone())).collect::<Vec<_>>());
    }
}
