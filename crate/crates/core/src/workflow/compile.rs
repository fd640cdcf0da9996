use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::topo_order;
use super::{FunctionDef, Source, WorkflowError, WorkflowGraph};
use crate::sfr::{self, AnalysisGraph, SfrResult};

/// Which units persist their outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordingPolicy {
    /// Units chosen by selective function recording.
    #[default]
    Selective,
    /// Every unit (the naive baseline).
    All,
}

/// A unit input fed from outside the unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitInput {
    pub member: usize,
    pub input: String,
    pub source: Source,
}

/// One execution unit: a single function, or a fused group run as one
/// transaction.
#[derive(Debug, Clone)]
pub struct Unit {
    /// 1-based topological index, the suffix of the unit's func_id.
    pub index: usize,
    /// Member function names joined with `+`.
    pub name: String,
    /// Member nodes in topological order.
    pub members: Vec<usize>,
    pub parents: Vec<usize>,
    pub children: Vec<usize>,
    pub external_inputs: Vec<UnitInput>,
    pub has_write: bool,
    pub recorded: bool,
    /// Source of the value that selects the unit's partition.
    pub site: Option<Source>,
    pub statements: usize,
}

/// An immutable, executable workflow.
#[derive(Debug)]
pub struct RegisteredWorkflow {
    graph: WorkflowGraph,
    units: Vec<Unit>,
    unit_of: Vec<usize>,
    analysis: AnalysisGraph,
    sfr: SfrResult,
    policy: RecordingPolicy,
}

/// Fuses every group into one unit, orders the units, and runs selective
/// function recording over the fused graph.
pub fn register(graph: &WorkflowGraph, policy: RecordingPolicy) -> Result<Arc<RegisteredWorkflow>, WorkflowError> {
    let n = graph.len();
    // provisional unit ids ordered by their first member
    let mut unit_members: Vec<Vec<usize>> = Vec::new();
    let mut unit_of = vec![usize::MAX; n];
    for node in 0..n {
        if unit_of[node] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = match graph.groups.iter().find(|g| g.contains(&node)) {
            Some(g) => g.iter().copied().collect(),
            None => vec![node],
        };
        for &m in &members {
            unit_of[m] = unit_members.len();
        }
        unit_members.push(members);
    }
    let k = unit_members.len();
    let mut children = vec![BTreeSet::new(); k];
    let mut parents = vec![BTreeSet::new(); k];
    for (a, b) in graph.edges() {
        let (ua, ub) = (unit_of[a], unit_of[b]);
        if ua != ub {
            children[ua].insert(ub);
            parents[ub].insert(ua);
        }
    }
    let order = topo_order(k, &children, &parents).map_err(|_| {
        let stuck = stuck_units(k, &children, &parents);
        let names = stuck
            .into_iter()
            .filter(|&u| unit_members[u].len() > 1)
            .flat_map(|u| unit_members[u].iter().map(|&m| graph.nodes[m].name.clone()))
            .collect();
        WorkflowError::GroupCreatesCycle(names)
    })?;
    let mut pos = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
    }

    let mut units = Vec::with_capacity(k);
    for (i, &old) in order.iter().enumerate() {
        let members = unit_members[old].clone();
        let defs: Vec<&Arc<FunctionDef>> = members.iter().map(|&m| &graph.nodes[m]).collect();
        let name = defs.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join("+");
        let mut external_inputs = Vec::new();
        for &m in &members {
            for (input, source) in graph.nodes[m].inputs.iter().zip(&graph.bindings[m]) {
                let internal = matches!(source, Source::Output { node, .. } if unit_of[*node] == old);
                if !internal {
                    external_inputs.push(UnitInput { member: m, input: input.clone(), source: source.clone() });
                }
            }
        }
        let site = resolve_site(graph, &name, &members, &unit_of, old)?;
        units.push(Unit {
            index: i + 1,
            name,
            parents: parents[old].iter().map(|&u| pos[u]).collect::<BTreeSet<_>>().into_iter().collect(),
            children: children[old].iter().map(|&u| pos[u]).collect::<BTreeSet<_>>().into_iter().collect(),
            members,
            external_inputs,
            has_write: defs.iter().any(|f| f.has_write()),
            recorded: false,
            site,
            statements: defs.iter().map(|f| f.statements.len()).sum(),
        });
    }
    let unit_of: Vec<usize> = unit_of.into_iter().map(|u| pos[u]).collect();

    let edges: Vec<(usize, usize)> =
        units.iter().enumerate().flat_map(|(a, u)| u.children.iter().map(move |&b| (a, b))).collect();
    let analysis = AnalysisGraph::new(
        units.iter().map(|u| u.name.clone()).collect(),
        &edges,
        units.iter().map(|u| u.has_write).collect(),
    )
    .expect("fused graph of a single-sink DAG is a single-sink DAG");
    let result = sfr::sfr(&analysis);
    for (i, u) in units.iter_mut().enumerate() {
        u.recorded = match policy {
            RecordingPolicy::Selective => result.is_recorded(i),
            RecordingPolicy::All => true,
        };
    }
    Ok(Arc::new(RegisteredWorkflow { graph: graph.clone(), units, unit_of, analysis, sfr: result, policy }))
}

fn stuck_units(k: usize, children: &[BTreeSet<usize>], parents: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut indegree: Vec<usize> = parents.iter().map(BTreeSet::len).collect();
    let mut ready: Vec<usize> = (0..k).filter(|&u| indegree[u] == 0).collect();
    while let Some(u) = ready.pop() {
        for &c in &children[u] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    (0..k).filter(|&u| indegree[u] > 0).collect()
}

fn resolve_site(
    graph: &WorkflowGraph,
    unit_name: &str,
    members: &[usize],
    unit_of: &[usize],
    unit: usize,
) -> Result<Option<Source>, WorkflowError> {
    let mut site: Option<(Source, String)> = None;
    for &m in members {
        let f = &graph.nodes[m];
        let Some(hint) = &f.site_hint else { continue };
        let idx = f.inputs.iter().position(|i| i == hint).expect("hint validated at creation");
        let source = graph.bindings[m][idx].clone();
        let label = format!("{}.{}", f.name, hint);
        if matches!(&source, Source::Output { node, .. } if unit_of[*node] == unit) {
            return Err(WorkflowError::SiteHintConflict {
                unit: unit_name.to_owned(),
                reason: format!("{label} is computed inside the unit"),
            });
        }
        match &site {
            Some((s, other)) if *s != source => {
                return Err(WorkflowError::SiteHintConflict {
                    unit: unit_name.to_owned(),
                    reason: format!("{other} and {label} come from different sources"),
                })
            }
            Some(_) => {}
            None => site = Some((source, label)),
        }
    }
    Ok(site.map(|(s, _)| s))
}

impl RegisteredWorkflow {
    pub fn name(&self) -> &str {
        self.graph.name()
    }

    pub fn graph(&self) -> &WorkflowGraph {
        &self.graph
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit_of(&self, node: usize) -> usize {
        self.unit_of[node]
    }

    pub fn sink_unit(&self) -> usize {
        self.units.len() - 1
    }

    pub fn analysis(&self) -> &AnalysisGraph {
        &self.analysis
    }

    /// Result of the selective analysis, regardless of the policy in use.
    pub fn sfr(&self) -> &SfrResult {
        &self.sfr
    }

    pub fn policy(&self) -> RecordingPolicy {
        self.policy
    }

    /// Positions of the units that record their outputs under the policy.
    pub fn recorded_units(&self) -> BTreeSet<usize> {
        self.units.iter().enumerate().filter(|(_, u)| u.recorded).map(|(i, _)| i).collect()
    }

    pub fn unit_names(&self) -> Vec<&str> {
        self.units.iter().map(|u| u.name.as_str()).collect()
    }

    /// Transactions per invocation (one per unit).
    pub fn txn_count(&self) -> usize {
        self.units.len()
    }

    /// Declared statements across all units.
    pub fn query_count(&self) -> usize {
        self.units.iter().map(|u| u.statements).sum()
    }

    pub fn is_read_only(&self) -> bool {
        self.units.iter().all(|u| !u.has_write)
    }

    /// A copy that records exactly the units in `recorded`, overriding the
    /// analysis. Used to probe what happens when a record is withheld.
    pub fn with_recorded(&self, recorded: &BTreeSet<usize>) -> Arc<RegisteredWorkflow> {
        let mut units = self.units.clone();
        for (i, u) in units.iter_mut().enumerate() {
            u.recorded = recorded.contains(&i);
        }
        Arc::new(RegisteredWorkflow {
            graph: self.graph.clone(),
            units,
            unit_of: self.unit_of.clone(),
            analysis: self.analysis.clone(),
            sfr: self.sfr.clone(),
            policy: self.policy,
        })
    }

    /// The same workflow under another recording policy.
    pub fn with_policy(&self, policy: RecordingPolicy) -> Arc<RegisteredWorkflow> {
        register(&self.graph, policy).expect("graph registered before")
    }
}
