use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FunctionDef, WorkflowError};

/// One or several wiring targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    One(String),
    Many(Vec<String>),
}

impl Targets {
    pub fn names(&self) -> &[String] {
        match self {
            Targets::One(s) => std::slice::from_ref(s),
            Targets::Many(v) => v,
        }
    }
}

/// Data-flow wiring, as a JSON object from source names to target names.
///
/// A key is a function output, or a workflow input if no function has an
/// output by that name. A target is a function input, or a workflow output
/// if no function has an input by that name (only the sink may feed workflow
/// outputs). Names may be qualified as `function.name` to disambiguate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WiringSpec(pub BTreeMap<String, Targets>);

impl WiringSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wire(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        let to = to.into();
        match self.0.entry(from.into()) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(Targets::One(to));
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let mut names = e.get().names().to_vec();
                names.push(to);
                e.insert(Targets::Many(names));
            }
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        serde_json::from_str(text).map_err(|e| WorkflowError::InvalidDocument(e.to_string()))
    }
}

/// Where a function input gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Workflow(String),
    Output { node: usize, output: String },
}

/// A validated workflow DAG. Nodes are stored in topological order; ties are
/// broken by registration order.
#[derive(Debug, Clone)]
pub struct WorkflowGraph {
    pub(crate) name: String,
    pub(crate) nodes: Vec<Arc<FunctionDef>>,
    /// Per node, the source of each declared input, in declaration order.
    pub(crate) bindings: Vec<Vec<Source>>,
    pub(crate) children: Vec<BTreeSet<usize>>,
    pub(crate) parents: Vec<BTreeSet<usize>>,
    pub(crate) inputs: Vec<String>,
    /// Workflow output name and the sink output feeding it.
    pub(crate) outputs: Vec<(String, String)>,
    pub(crate) groups: Vec<BTreeSet<usize>>,
    pub(crate) wiring: WiringSpec,
}

type NameIndex = HashMap<String, Vec<(usize, String)>>;

fn index_names(functions: &[Arc<FunctionDef>], pick: impl Fn(&FunctionDef) -> &[String]) -> NameIndex {
    let mut idx: NameIndex = HashMap::new();
    for (i, f) in functions.iter().enumerate() {
        for n in pick(f) {
            idx.entry(n.clone()).or_default().push((i, n.clone()));
            idx.entry(format!("{}.{}", f.name, n)).or_default().push((i, n.clone()));
        }
    }
    idx
}

fn resolve(idx: &NameIndex, name: &str) -> Result<Option<(usize, String)>, WorkflowError> {
    match idx.get(name).map(Vec::as_slice) {
        None | Some([]) => Ok(None),
        Some([one]) => Ok(Some(one.clone())),
        Some(_) => Err(WorkflowError::AmbiguousName(name.to_owned())),
    }
}

/// Builds and validates a workflow from functions and their wiring.
pub fn create_workflow(
    name: impl Into<String>,
    functions: Vec<FunctionDef>,
    wiring: WiringSpec,
) -> Result<WorkflowGraph, WorkflowError> {
    let functions: Vec<Arc<FunctionDef>> = functions.into_iter().map(Arc::new).collect();
    if functions.is_empty() {
        return Err(WorkflowError::EmptyWorkflow);
    }
    let mut names = BTreeSet::new();
    for f in &functions {
        if f.name.is_empty() || f.name.contains(['.', '+']) {
            return Err(WorkflowError::InvalidDocument(format!("invalid function name {:?}", f.name)));
        }
        if !names.insert(f.name.as_str()) {
            return Err(WorkflowError::DuplicateName(f.name.clone()));
        }
        let mut ins = BTreeSet::new();
        let mut outs = BTreeSet::new();
        for i in &f.inputs {
            if !ins.insert(i) {
                return Err(WorkflowError::DuplicateName(format!("{}.{}", f.name, i)));
            }
        }
        for o in &f.outputs {
            if !outs.insert(o) {
                return Err(WorkflowError::DuplicateName(format!("{}.{}", f.name, o)));
            }
        }
        if let Some(h) = &f.site_hint {
            if !f.inputs.contains(h) {
                return Err(WorkflowError::InvalidSiteHint { function: f.name.clone(), hint: h.clone() });
            }
        }
        for s in &f.statements {
            if f.statements.iter().filter(|t| t.id == s.id).count() > 1 {
                return Err(WorkflowError::DuplicateName(format!("{}.{}", f.name, s.id)));
            }
        }
    }

    let out_idx = index_names(&functions, |f| &f.outputs);
    let in_idx = index_names(&functions, |f| &f.inputs);
    let n = functions.len();
    let mut bound: Vec<BTreeMap<String, Source>> = vec![BTreeMap::new(); n];
    let mut wf_inputs: Vec<String> = Vec::new();
    let mut wf_outputs: Vec<(String, usize, String)> = Vec::new();

    for (key, targets) in &wiring.0 {
        let source = match resolve(&out_idx, key)? {
            Some((node, output)) => Source::Output { node, output },
            None if key.contains('.') => return Err(WorkflowError::UnknownName(key.clone())),
            None => {
                if !wf_inputs.contains(key) {
                    wf_inputs.push(key.clone());
                }
                Source::Workflow(key.clone())
            }
        };
        for target in targets.names() {
            match resolve(&in_idx, target)? {
                Some((node, input)) => {
                    let qualified = format!("{}.{}", functions[node].name, input);
                    if bound[node].insert(input, source.clone()).is_some() {
                        return Err(WorkflowError::MultiplyWired(qualified));
                    }
                }
                None => match &source {
                    Source::Output { node, output } if !target.contains('.') => {
                        if wf_outputs.iter().any(|(t, _, _)| t == target) {
                            return Err(WorkflowError::DuplicateName(target.clone()));
                        }
                        wf_outputs.push((target.clone(), *node, output.clone()));
                    }
                    _ => return Err(WorkflowError::UnknownName(target.clone())),
                },
            }
        }
    }

    let mut children = vec![BTreeSet::new(); n];
    let mut parents = vec![BTreeSet::new(); n];
    for (node, f) in functions.iter().enumerate() {
        for input in &f.inputs {
            match bound[node].get(input) {
                None => return Err(WorkflowError::UnwiredInput(format!("{}.{}", f.name, input))),
                Some(Source::Output { node: p, .. }) => {
                    if *p == node {
                        return Err(WorkflowError::CycleDetected(f.name.clone()));
                    }
                    children[*p].insert(node);
                    parents[node].insert(*p);
                }
                Some(Source::Workflow(_)) => {}
            }
        }
    }

    let order = topo_order(n, &children, &parents)
        .map_err(|stuck| WorkflowError::CycleDetected(functions[stuck].name.clone()))?;

    let sinks: Vec<usize> = (0..n).filter(|&i| children[i].is_empty()).collect();
    if sinks.len() > 1 {
        return Err(WorkflowError::MultipleSinks(sinks.iter().map(|&i| functions[i].name.clone()).collect()));
    }
    let sink = sinks[0];
    for (name, node, _) in &wf_outputs {
        if *node != sink {
            return Err(WorkflowError::DanglingOutput(name.clone()));
        }
    }

    // renumber nodes in topological order
    let mut pos = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        pos[old] = new;
    }
    let renumber = |s: &Source| match s {
        Source::Output { node, output } => Source::Output { node: pos[*node], output: output.clone() },
        w => w.clone(),
    };
    let nodes: Vec<Arc<FunctionDef>> = order.iter().map(|&i| functions[i].clone()).collect();
    let bindings: Vec<Vec<Source>> =
        order.iter().map(|&i| functions[i].inputs.iter().map(|inp| renumber(&bound[i][inp])).collect()).collect();
    let remap = |sets: &Vec<BTreeSet<usize>>| -> Vec<BTreeSet<usize>> {
        order.iter().map(|&i| sets[i].iter().map(|&j| pos[j]).collect()).collect()
    };
    let outputs = wf_outputs.into_iter().map(|(name, _, output)| (name, output)).collect();

    Ok(WorkflowGraph {
        name: name.into(),
        nodes,
        bindings,
        children: remap(&children),
        parents: remap(&parents),
        inputs: wf_inputs,
        outputs,
        groups: Vec::new(),
        wiring,
    })
}

/// Kahn's algorithm, always taking the ready node with the smallest index.
/// On a cycle, returns some node on or behind it.
pub(crate) fn topo_order(n: usize, children: &[BTreeSet<usize>], parents: &[BTreeSet<usize>]) -> Result<Vec<usize>, usize> {
    let mut indegree: Vec<usize> = parents.iter().map(BTreeSet::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < n {
        return Err((0..n).find(|&i| indegree[i] > 0).expect("a node is stuck"));
    }
    Ok(order)
}

impl WorkflowGraph {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Functions in topological order.
    pub fn nodes(&self) -> &[Arc<FunctionDef>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|f| f.name == name)
    }

    pub fn children(&self, node: usize) -> &BTreeSet<usize> {
        &self.children[node]
    }

    pub fn parents(&self, node: usize) -> &BTreeSet<usize> {
        &self.parents[node]
    }

    pub fn bindings(&self, node: usize) -> &[Source] {
        &self.bindings[node]
    }

    /// Names of the workflow inputs, in wiring order.
    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    /// Workflow output names with the sink outputs feeding them. When the
    /// wiring names no workflow outputs, every sink output is returned under
    /// its own name.
    pub fn outputs(&self) -> Vec<(String, String)> {
        if self.outputs.is_empty() {
            return self.nodes[self.sink()].outputs.iter().map(|o| (o.clone(), o.clone())).collect();
        }
        self.outputs.clone()
    }

    pub fn sink(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn groups(&self) -> &[BTreeSet<usize>] {
        &self.groups
    }

    pub fn wiring(&self) -> &WiringSpec {
        &self.wiring
    }

    /// Data-flow edges as (producer, consumer) node pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.children.iter().enumerate().flat_map(|(p, cs)| cs.iter().map(move |&c| (p, c))).collect()
    }

    /// Marks `names` as a multi-function transaction. The functions must
    /// form a connected subgraph and not belong to another group.
    pub fn group_functions<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self, WorkflowError> {
        let mut members = BTreeSet::new();
        for n in names {
            let n = n.as_ref();
            let i = self.node_index(n).ok_or_else(|| WorkflowError::UnknownNode(n.to_owned()))?;
            if self.groups.iter().any(|g| g.contains(&i)) {
                return Err(WorkflowError::OverlappingGroups(n.to_owned()));
            }
            members.insert(i);
        }
        let names: Vec<String> = members.iter().map(|&i| self.nodes[i].name.clone()).collect();
        let Some(&start) = members.iter().next() else {
            return Err(WorkflowError::NotConnected(names));
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in self.children[u].iter().chain(&self.parents[u]) {
                if members.contains(&v) && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        if seen.len() != members.len() {
            return Err(WorkflowError::NotConnected(names));
        }
        self.groups.push(members);
        Ok(self)
    }
}
