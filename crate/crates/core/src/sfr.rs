//! Selective function recording: which units must persist their outputs so
//! that re-running a workflow from the start cannot change its effects.
//!
//! Units are visited from the sink back to the source. Every unit that
//! writes is recorded. A read-only unit is recorded iff the units it feeds
//! reach more than one distinct target, where targets are recorded units and
//! the sink and a search never passes through a recorded unit. Otherwise a
//! re-execution of the unit after a crash could feed a different value to one
//! target than the one already persisted by another.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Post-fusion units in topological order; the last unit is the sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisGraph {
    pub names: Vec<String>,
    pub children: Vec<Vec<usize>>,
    pub has_write: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge {0}->{1} is not in topological order")]
    NotTopological(usize, usize),
    #[error("unit {0} has no children but is not the last unit")]
    ExtraSink(usize),
    #[error("graph is empty or sizes disagree")]
    Malformed,
}

impl AnalysisGraph {
    pub fn new(names: Vec<String>, edges: &[(usize, usize)], has_write: Vec<bool>) -> Result<Self, GraphError> {
        let n = names.len();
        if n == 0 || has_write.len() != n {
            return Err(GraphError::Malformed);
        }
        let mut children = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= b || b >= n {
                return Err(GraphError::NotTopological(a, b));
            }
            if !children[a].contains(&b) {
                children[a].push(b);
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        if let Some(i) = (0..n - 1).find(|&i| children[i].is_empty()) {
            return Err(GraphError::ExtraSink(i));
        }
        if !children[n - 1].is_empty() {
            return Err(GraphError::Malformed);
        }
        Ok(AnalysisGraph { names, children, has_write })
    }

    /// Unlabeled-name convenience: units are named `F1..Fn`.
    pub fn numbered(n: usize, edges: &[(usize, usize)], has_write: Vec<bool>) -> Result<Self, GraphError> {
        Self::new((1..=n).map(|i| format!("F{i}")).collect(), edges, has_write)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn sink(&self) -> usize {
        self.names.len() - 1
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.children.iter().enumerate().flat_map(|(a, cs)| cs.iter().map(move |&b| (a, b))).collect()
    }
}

/// Why a unit is (or is not) recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// The unit writes to the database.
    Write,
    /// Recorded units and the sink reachable without passing through a
    /// recorded unit. The unit is recorded iff there is more than one.
    Targets(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfrResult {
    pub recorded: BTreeSet<usize>,
    pub reasons: Vec<Reason>,
}

impl SfrResult {
    pub fn is_recorded(&self, unit: usize) -> bool {
        self.recorded.contains(&unit)
    }

    /// One line per unit, e.g. `F1 recorded: disjoint paths to {F2, F4}`.
    pub fn explain(&self, g: &AnalysisGraph) -> Vec<String> {
        let names = |s: &BTreeSet<usize>| s.iter().map(|&i| g.names[i].as_str()).collect::<Vec<_>>().join(", ");
        self.reasons
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let name = &g.names[i];
                match r {
                    Reason::Write => format!("{name} recorded: performs a write"),
                    Reason::Targets(t) if t.len() > 1 => format!("{name} recorded: disjoint paths to {{{}}}", names(t)),
                    Reason::Targets(t) if t.is_empty() => format!("{name} not recorded: sink with no targets"),
                    Reason::Targets(t) => format!("{name} not recorded: single target {{{}}}", names(t)),
                }
            })
            .collect()
    }
}

impl fmt::Display for SfrResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.recorded.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", ids.join(", "))
    }
}

/// Memoized analysis: each unit's target set is assembled from its
/// children's, so every edge is looked at once.
pub fn sfr(g: &AnalysisGraph) -> SfrResult {
    let n = g.len();
    let sink = g.sink();
    let mut recorded = BTreeSet::new();
    let mut reach: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut reasons = vec![Reason::Write; n];
    for u in (0..n).rev() {
        let mut targets = BTreeSet::new();
        for &c in &g.children[u] {
            if c == sink || recorded.contains(&c) {
                targets.insert(c);
            } else {
                targets.extend(reach[c].iter().copied());
            }
        }
        if g.has_write[u] {
            recorded.insert(u);
        } else {
            if targets.len() > 1 {
                recorded.insert(u);
            }
            reasons[u] = Reason::Targets(targets.clone());
        }
        reach[u] = targets;
    }
    SfrResult { recorded, reasons }
}

/// Reference implementation: a fresh breadth-first search per unit.
pub fn sfr_naive(g: &AnalysisGraph) -> SfrResult {
    let n = g.len();
    let sink = g.sink();
    let mut recorded = BTreeSet::new();
    let mut reasons = vec![Reason::Write; n];
    for u in (0..n).rev() {
        if g.has_write[u] {
            recorded.insert(u);
            continue;
        }
        let mut targets = BTreeSet::new();
        let mut visited = vec![false; n];
        let mut queue: VecDeque<usize> = g.children[u].iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            if std::mem::replace(&mut visited[v], true) {
                continue;
            }
            if v == sink || recorded.contains(&v) {
                targets.insert(v);
                continue;
            }
            queue.extend(g.children[v].iter().copied());
        }
        if targets.len() > 1 {
            recorded.insert(u);
        }
        reasons[u] = Reason::Targets(targets);
    }
    SfrResult { recorded, reasons }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn forked_graph(writes: [bool; 4]) -> AnalysisGraph {
        AnalysisGraph::numbered(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], writes.to_vec()).unwrap()
    }

    #[test]
    fn forked_graph_records_writer_and_fork() {
        let r = sfr(&forked_graph([false, false, true, false]));
        assert_eq!(r.recorded, BTreeSet::from([0, 2]));
        assert_eq!(r.to_string(), "{1, 3}");
        let lines = r.explain(&forked_graph([false, false, true, false]));
        assert_eq!(lines[0], "F1 recorded: disjoint paths to {F3, F4}");
        assert_eq!(lines[2], "F3 recorded: performs a write");
        assert_eq!(lines[3], "F4 not recorded: sink with no targets");
    }

    #[test]
    fn read_only_records_nothing() {
        assert!(sfr(&forked_graph([false; 4])).recorded.is_empty());
    }

    #[test]
    fn chain_read_write_read() {
        let g = AnalysisGraph::numbered(3, &[(0, 1), (1, 2)], vec![false, true, false]).unwrap();
        assert_eq!(sfr(&g).recorded, BTreeSet::from([1]));
    }

    #[test]
    fn chain_of_reads() {
        let edges: Vec<_> = (0..9).map(|i| (i, i + 1)).collect();
        let g = AnalysisGraph::numbered(10, &edges, vec![false; 10]).unwrap();
        let r = sfr(&g);
        assert!(r.recorded.is_empty());
        for reason in &r.reasons[..9] {
            assert_eq!(reason, &Reason::Targets(BTreeSet::from([9])));
        }
    }

    #[test]
    fn star_of_writers() {
        let mut edges: Vec<_> = (1..=5).map(|i| (0, i)).collect();
        edges.extend((1..=5).map(|i| (i, 6)));
        let mut w = vec![true; 7];
        w[0] = false;
        w[6] = false;
        let g = AnalysisGraph::numbered(7, &edges, w).unwrap();
        assert_eq!(sfr(&g).recorded, (0..6).collect());
    }

    #[test]
    fn write_sink_counts_once() {
        // both paths end at the same write sink
        let g = forked_graph([false, false, false, true]);
        assert_eq!(sfr(&g).recorded, BTreeSet::from([3]));
    }

    #[test]
    fn rejects_bad_graphs() {
        assert_eq!(AnalysisGraph::numbered(2, &[(1, 0)], vec![false; 2]), Err(GraphError::NotTopological(1, 0)));
        assert_eq!(AnalysisGraph::numbered(3, &[(0, 2)], vec![false; 3]), Err(GraphError::ExtraSink(1)));
    }

    /// Random single-sink DAG in topological order.
    pub(crate) fn dag(max: usize) -> impl Strategy<Value = AnalysisGraph> {
        (2..=max).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let m = pairs.len();
            (Just(n), Just(pairs), prop::collection::vec(any::<bool>(), m), prop::collection::vec(any::<bool>(), n), prop::collection::vec(0..n, n))
                .prop_map(|(n, pairs, keep, writes, fallback)| {
                    let mut edges: Vec<(usize, usize)> = pairs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e).collect();
                    for a in 0..n - 1 {
                        if !edges.iter().any(|&(x, _)| x == a) {
                            let b = a + 1 + fallback[a] % (n - 1 - a);
                            edges.push((a, b));
                        }
                    }
                    AnalysisGraph::numbered(n, &edges, writes).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn memoized_matches_naive(g in dag(9)) {
            prop_assert_eq!(sfr(&g), sfr_naive(&g));
        }

        #[test]
        fn records_every_writer(g in dag(9)) {
            let r = sfr(&g);
            for (i, w) in g.has_write.iter().enumerate() {
                prop_assert!(!w || r.is_recorded(i));
            }
        }

        #[test]
        fn adding_an_edge_never_shrinks(g in dag(8), x in 0usize..64, y in 0usize..64) {
            let n = g.len();
            let a = x % (n - 1);
            let b = a + 1 + y % (n - 1 - a);
            let mut edges = g.edges();
            edges.push((a, b));
            let bigger = AnalysisGraph::new(g.names.clone(), &edges, g.has_write.clone()).unwrap();
            prop_assert!(sfr(&g).recorded.is_subset(&sfr(&bigger).recorded));
        }
    }
}
