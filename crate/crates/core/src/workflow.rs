//! Workflow graphs as sets of relational triples, node substitution,
//! redundancy elimination to a fixed point, and impact scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    HumanRole,
    Document,
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub source: String,
    pub relation: String,
    pub target: String,
}

impl RelationTriple {
    pub fn new(source: &str, relation: &str, target: &str) -> Self {
        Self {
            source: source.into(),
            relation: relation.into(),
            target: target.into(),
        }
    }
}

impl std::fmt::Display for RelationTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.relation, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node id `{0}` already in use")]
    IdCollision(String),
    #[error("node `{0}` is not a document")]
    NotADocument(String),
    #[error("triple {0} is not in the graph")]
    UnknownTriple(RelationTriple),
    #[error("duplicate triple {0}")]
    DuplicateTriple(RelationTriple),
    #[error("triple {triple} references unknown node `{node}`")]
    DanglingTriple { triple: RelationTriple, node: String },
    #[error("inconsistent transformation: {0}")]
    InconsistentTransformation(String),
    #[error("{0}")]
    Format(String),
}

/// Nodes plus a set of triples with referential integrity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WorkflowGraph {
    nodes: BTreeMap<String, WorkflowNode>,
    triples: BTreeSet<RelationTriple>,
}

#[derive(Deserialize)]
struct GraphDoc {
    nodes: Vec<WorkflowNode>,
    #[serde(default)]
    triples: Vec<RelationTriple>,
}

impl WorkflowGraph {
    pub fn new(nodes: Vec<WorkflowNode>, triples: Vec<RelationTriple>) -> Result<Self, GraphError> {
        let mut g = WorkflowGraph::default();
        for n in nodes {
            if g.nodes.contains_key(&n.id) {
                return Err(GraphError::IdCollision(n.id));
            }
            g.nodes.insert(n.id.clone(), n);
        }
        for t in triples {
            for end in [&t.source, &t.target] {
                if !g.nodes.contains_key(end) {
                    return Err(GraphError::DanglingTriple {
                        node: end.clone(),
                        triple: t.clone(),
                    });
                }
            }
            if !g.triples.insert(t.clone()) {
                return Err(GraphError::DuplicateTriple(t));
            }
        }
        Ok(g)
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_yaml::from_str(text).map_err(|e| GraphError::Format(e.to_string()))?;
        WorkflowGraph::new(doc.nodes, doc.triples)
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Self::parse(&text).map_err(|e| crate::Error::format(path, e.to_string()))
    }

    pub fn to_yaml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            nodes: Vec<&'a WorkflowNode>,
            triples: &'a BTreeSet<RelationTriple>,
        }
        serde_yaml::to_string(&Out {
            nodes: self.nodes.values().collect(),
            triples: &self.triples,
        })
        .expect("graph serializes")
    }

    pub fn node(&self, id: &str) -> Option<&WorkflowNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &WorkflowNode> {
        self.nodes.values()
    }

    pub fn triples(&self) -> &BTreeSet<RelationTriple> {
        &self.triples
    }

    pub fn contains(&self, t: &RelationTriple) -> bool {
        self.triples.contains(t)
    }

    fn without(&self, removed: &BTreeSet<RelationTriple>) -> WorkflowGraph {
        WorkflowGraph {
            nodes: self.nodes.clone(),
            triples: self.triples.difference(removed).cloned().collect(),
        }
    }
}

/// Replace document `document` by `service`; incident triples re-point.
pub fn substitute_node(graph: &WorkflowGraph, document: &str, service: WorkflowNode) -> Result<WorkflowGraph, GraphError> {
    let old = graph
        .nodes
        .get(document)
        .ok_or_else(|| GraphError::UnknownNode(document.to_string()))?;
    if old.kind != NodeKind::Document {
        return Err(GraphError::NotADocument(document.to_string()));
    }
    if graph.nodes.contains_key(&service.id) {
        return Err(GraphError::IdCollision(service.id));
    }
    let sid = service.id.clone();
    let mut nodes = graph.nodes.clone();
    nodes.remove(document);
    nodes.insert(
        sid.clone(),
        WorkflowNode {
            kind: NodeKind::Service,
            ..service
        },
    );
    let repoint = |id: &String| if id == document { sid.clone() } else { id.clone() };
    let triples = graph
        .triples
        .iter()
        .map(|t| RelationTriple {
            source: repoint(&t.source),
            relation: t.relation.clone(),
            target: repoint(&t.target),
        })
        .collect();
    Ok(WorkflowGraph { nodes, triples })
}

/// Substitutions made so far and the direct programmatic connections the
/// pipeline declares between services.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionRecord {
    /// Document id → service id.
    pub substitutions: BTreeMap<String, String>,
    /// Unordered service pairs.
    pub connections: BTreeSet<(String, String)>,
}

impl SubstitutionRecord {
    pub fn connect(&mut self, a: &str, b: &str) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.connections.insert((x.to_string(), y.to_string()));
    }

    pub fn connected(&self, a: &str, b: &str) -> bool {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.connections.contains(&(x.to_string(), y.to_string()))
    }

    fn is_substituted(&self, id: &str) -> bool {
        self.substitutions.values().any(|s| s == id)
    }
}

pub fn is_redundant(graph: &WorkflowGraph, triple: &RelationTriple, record: &SubstitutionRecord) -> Result<bool, GraphError> {
    if !graph.contains(triple) {
        return Err(GraphError::UnknownTriple(triple.clone()));
    }
    Ok(redundant(graph, triple, record))
}

fn redundant(graph: &WorkflowGraph, t: &RelationTriple, record: &SubstitutionRecord) -> bool {
    let service = |id: &str| graph.node(id).is_some_and(|n| n.kind == NodeKind::Service) && record.is_substituted(id);
    service(&t.source) && service(&t.target) && record.connected(&t.source, &t.target)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    pub graph: WorkflowGraph,
    /// Sweeps run, including the final one that found nothing to remove.
    pub iterations: usize,
    pub removed: Vec<RelationTriple>,
}

/// Remove redundant triples sweep by sweep until a sweep removes nothing.
pub fn reduce_to_fixed_point(graph: &WorkflowGraph, record: &SubstitutionRecord) -> Reduction {
    let bound = graph.triples.len() + 1;
    let mut current = graph.clone();
    let mut removed = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let sweep: BTreeSet<RelationTriple> = current
            .triples
            .iter()
            .filter(|t| redundant(&current, t, record))
            .cloned()
            .collect();
        if sweep.is_empty() {
            break;
        }
        current = current.without(&sweep);
        removed.extend(sweep);
        assert!(iterations <= bound, "reduction exceeded its sweep bound");
    }
    Reduction {
        graph: current,
        iterations,
        removed,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactVector {
    pub complexity: i64,
    pub automation: i64,
    pub communication: i64,
}

impl ImpactVector {
    pub fn new(complexity: i64, automation: i64, communication: i64) -> Self {
        Self {
            complexity,
            automation,
            communication,
        }
    }
}

impl Add for ImpactVector {
    type Output = ImpactVector;
    fn add(self, o: ImpactVector) -> ImpactVector {
        ImpactVector::new(
            self.complexity + o.complexity,
            self.automation + o.automation,
            self.communication + o.communication,
        )
    }
}

impl std::iter::Sum for ImpactVector {
    fn sum<I: Iterator<Item = ImpactVector>>(iter: I) -> Self {
        iter.fold(ImpactVector::default(), Add::add)
    }
}

impl std::fmt::Display for ImpactVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:+}, {:+}, {:+})", self.complexity, self.automation, self.communication)
    }
}

pub fn cumulative_impact(vectors: &[ImpactVector]) -> ImpactVector {
    vectors.iter().copied().sum()
}

/// Human-supplied per-element annotations: automation shift per task
/// (-1..=1) and communication duality change per artifact (-2..=2).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreAnnotations {
    #[serde(default)]
    pub automation: BTreeMap<String, i64>,
    #[serde(default)]
    pub communication: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transformation {
    pub substitutions: Vec<(String, String)>,
    pub removed: Vec<RelationTriple>,
    pub added: Vec<RelationTriple>,
    pub annotations: ScoreAnnotations,
}

impl Transformation {
    /// Union of two transformations.
    pub fn merge(&self, other: &Transformation) -> Transformation {
        let mut out = self.clone();
        out.substitutions.extend(other.substitutions.iter().cloned());
        out.removed.extend(other.removed.iter().cloned());
        out.added.extend(other.added.iter().cloned());
        for (k, v) in &other.annotations.automation {
            *out.annotations.automation.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.annotations.communication {
            *out.annotations.communication.entry(k.clone()).or_default() += v;
        }
        out
    }
}

/// Sum of per-element contributions: -1 per removed triple, +1 per added
/// triple, plus the annotated automation and communication shifts.
pub fn score_transformation(
    before: &WorkflowGraph,
    after: &WorkflowGraph,
    t: &Transformation,
) -> Result<ImpactVector, GraphError> {
    let bad = |m: String| Err(GraphError::InconsistentTransformation(m));
    let mut expected = before.clone();
    for (doc, svc) in &t.substitutions {
        let Some(node) = after.node(svc) else {
            return bad(format!("service `{svc}` missing after transformation"));
        };
        expected = match substitute_node(&expected, doc, node.clone()) {
            Ok(g) => g,
            Err(e) => return bad(format!("substitution {doc} => {svc}: {e}")),
        };
    }
    for r in &t.removed {
        if !expected.triples.remove(r) {
            return bad(format!("removed triple {r} was not present"));
        }
    }
    for a in &t.added {
        if !expected.triples.insert(a.clone()) {
            return bad(format!("added triple {a} was already present"));
        }
    }
    if expected.triples != after.triples || expected.nodes.keys().ne(after.nodes.keys()) {
        return bad("graphs differ by more than the listed changes".into());
    }
    let mut v = ImpactVector::new(t.added.len() as i64 - t.removed.len() as i64, 0, 0);
    for (task, s) in &t.annotations.automation {
        if after.node(task).is_none() {
            return bad(format!("automation annotation on unknown task `{task}`"));
        }
        if !(-1..=1).contains(s) {
            return bad(format!("automation score {s} for `{task}` outside -1..=1"));
        }
        v.automation += s;
    }
    for (artifact, s) in &t.annotations.communication {
        if after.node(artifact).is_none() {
            return bad(format!("communication annotation on unknown artifact `{artifact}`"));
        }
        if !(-2..=2).contains(s) {
            return bad(format!("communication score {s} for `{artifact}` outside -2..=2"));
        }
        v.communication += s;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptSubstitution {
    pub document: String,
    pub service: String,
    #[serde(default)]
    pub label: String,
}

/// One step of a transformation script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptIteration {
    pub name: String,
    #[serde(default)]
    pub substitutions: Vec<ScriptSubstitution>,
    /// Service pairs the pipeline connects directly from this step on.
    #[serde(default)]
    pub connections: Vec<(String, String)>,
    #[serde(default)]
    pub added: Vec<RelationTriple>,
    #[serde(default)]
    pub automation: BTreeMap<String, i64>,
    #[serde(default)]
    pub communication: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationScript {
    pub iterations: Vec<ScriptIteration>,
}

impl TransformationScript {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        serde_yaml::from_str(text).map_err(|e| GraphError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Self::parse(&text).map_err(|e| crate::Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationResult {
    pub name: String,
    pub impact: ImpactVector,
    pub removed: Vec<RelationTriple>,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationResult>,
    pub net: ImpactVector,
    pub removed_total: usize,
    #[serde(skip)]
    pub graph: WorkflowGraph,
}

/// Run a script: substitute, reduce to a fixed point, add, score.
pub fn optimize(graph: &WorkflowGraph, script: &TransformationScript) -> Result<OptimizationReport, GraphError> {
    let mut record = SubstitutionRecord::default();
    let mut current = graph.clone();
    let mut results = Vec::new();
    for it in &script.iterations {
        let before = current.clone();
        for s in &it.substitutions {
            current = substitute_node(
                &current,
                &s.document,
                WorkflowNode {
                    id: s.service.clone(),
                    kind: NodeKind::Service,
                    label: s.label.clone(),
                },
            )?;
            record.substitutions.insert(s.document.clone(), s.service.clone());
        }
        for (a, b) in &it.connections {
            record.connect(a, b);
        }
        let reduction = reduce_to_fixed_point(&current, &record);
        current = reduction.graph;
        for a in &it.added {
            current = WorkflowGraph::new(
                current.nodes.values().cloned().collect(),
                current.triples.iter().cloned().chain([a.clone()]).collect(),
            )?;
        }
        let t = Transformation {
            substitutions: it.substitutions.iter().map(|s| (s.document.clone(), s.service.clone())).collect(),
            removed: reduction.removed.clone(),
            added: it.added.clone(),
            annotations: ScoreAnnotations {
                automation: it.automation.clone(),
                communication: it.communication.clone(),
            },
        };
        let impact = score_transformation(&before, &current, &t)?;
        results.push(IterationResult {
            name: it.name.clone(),
            impact,
            removed: reduction.removed,
            sweeps: reduction.iterations,
        });
    }
    Ok(OptimizationReport {
        net: results.iter().map(|r| r.impact).sum(),
        removed_total: results.iter().map(|r| r.removed.len()).sum(),
        iterations: results,
        graph: current,
    })
}

/// A random graph of at most `max_nodes` nodes with random substitutions
/// and connections, for property checks.
pub fn random_instance(seed: u64, max_nodes: usize) -> (WorkflowGraph, SubstitutionRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes.max(1));
    let kinds = [NodeKind::HumanRole, NodeKind::Document, NodeKind::Service];
    let nodes: Vec<WorkflowNode> = (0..n)
        .map(|i| WorkflowNode {
            id: format!("n{i}"),
            kind: kinds[rng.gen_range(0..3)],
            label: String::new(),
        })
        .collect();
    let relations = ["feeds", "consults", "reviews"];
    let mut triples = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=n * 3) {
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        triples.insert(RelationTriple::new(
            &format!("n{s}"),
            relations[rng.gen_range(0..relations.len())],
            &format!("n{t}"),
        ));
    }
    let mut graph = WorkflowGraph::new(nodes, triples.into_iter().collect()).expect("generated graph is valid");
    let mut record = SubstitutionRecord::default();
    let docs: Vec<String> = graph
        .nodes()
        .filter(|n| n.kind == NodeKind::Document)
        .map(|n| n.id.clone())
        .collect();
    for d in docs {
        if rng.gen_bool(0.6) {
            let sid = format!("s_{d}");
            graph = substitute_node(&graph, &d, WorkflowNode { id: sid.clone(), kind: NodeKind::Service, label: String::new() })
                .expect("fresh service id");
            record.substitutions.insert(d, sid);
        }
    }
    let services: Vec<String> = graph
        .nodes()
        .filter(|n| n.kind == NodeKind::Service)
        .map(|n| n.id.clone())
        .collect();
    for a in &services {
        for b in &services {
            if a <= b && rng.gen_bool(0.4) {
                record.connect(a, b);
            }
        }
    }
    (graph, record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, kind: NodeKind) -> WorkflowNode {
        WorkflowNode { id: id.into(), kind, label: String::new() }
    }

    fn small() -> WorkflowGraph {
        WorkflowGraph::new(
            vec![node("A", NodeKind::HumanRole), node("d", NodeKind::Document), node("B", NodeKind::HumanRole)],
            vec![RelationTriple::new("A", "writes", "d"), RelationTriple::new("d", "informs", "B")],
        )
        .unwrap()
    }

    #[test]
    fn substitution_repoints_edges() {
        let g = substitute_node(&small(), "d", node("s", NodeKind::Service)).unwrap();
        let want: BTreeSet<_> = [RelationTriple::new("A", "writes", "s"), RelationTriple::new("s", "informs", "B")].into();
        assert_eq!(g.triples(), &want);
        assert_eq!(g.node("s").unwrap().kind, NodeKind::Service);
        assert!(g.node("d").is_none());
        assert_eq!(
            substitute_node(&small(), "zz", node("s", NodeKind::Service)),
            Err(GraphError::UnknownNode("zz".into()))
        );
        assert_eq!(
            substitute_node(&small(), "d", node("A", NodeKind::Service)),
            Err(GraphError::IdCollision("A".into()))
        );
    }

    #[test]
    fn redundancy_needs_two_connected_substituted_services() {
        let g = WorkflowGraph::new(
            vec![node("x", NodeKind::Document), node("y", NodeKind::Document), node("h", NodeKind::HumanRole)],
            vec![RelationTriple::new("x", "feeds", "y"), RelationTriple::new("h", "reads", "x")],
        )
        .unwrap();
        let g = substitute_node(&g, "x", node("sx", NodeKind::Service)).unwrap();
        let g = substitute_node(&g, "y", node("sy", NodeKind::Service)).unwrap();
        let mut rec = SubstitutionRecord::default();
        rec.substitutions.insert("x".into(), "sx".into());
        rec.substitutions.insert("y".into(), "sy".into());
        let feed = RelationTriple::new("sx", "feeds", "sy");
        assert!(!is_redundant(&g, &feed, &rec).unwrap());
        rec.connect("sy", "sx");
        assert!(is_redundant(&g, &feed, &rec).unwrap());
        assert!(!is_redundant(&g, &RelationTriple::new("h", "reads", "sx"), &rec).unwrap());
        assert!(is_redundant(&g, &RelationTriple::new("h", "reads", "zz"), &rec).is_err());
        let r = reduce_to_fixed_point(&g, &rec);
        assert_eq!(r.removed, [feed]);
        assert_eq!(r.iterations, 2);
        assert_eq!(reduce_to_fixed_point(&r.graph, &rec).iterations, 1);
    }

    #[test]
    fn identity_scores_zero() {
        let g = small();
        assert_eq!(score_transformation(&g, &g, &Transformation::default()), Ok(ImpactVector::default()));
    }

    #[test]
    fn inconsistent_transformation_rejected() {
        let g = small();
        let t = Transformation { removed: vec![RelationTriple::new("A", "x", "B")], ..Default::default() };
        assert!(matches!(score_transformation(&g, &g, &t), Err(GraphError::InconsistentTransformation(_))));
        let t = Transformation {
            annotations: ScoreAnnotations { communication: [("d".to_string(), 3)].into(), ..Default::default() },
            ..Default::default()
        };
        assert!(score_transformation(&g, &g, &t).is_err());
    }

    #[test]
    fn cumulative_sums() {
        let v = [ImpactVector::new(-1, 1, 2), ImpactVector::new(-2, 1, 2), ImpactVector::new(-2, 1, 2)];
        assert_eq!(cumulative_impact(&v), ImpactVector::new(-5, 3, 6));
        assert_eq!(cumulative_impact(&[]), ImpactVector::default());
        assert_eq!(cumulative_impact(&v[..1]), v[0]);
    }

    #[test]
    fn yaml_round_trip() {
        let g = small();
        assert_eq!(WorkflowGraph::parse(&g.to_yaml()).unwrap(), g);
    }
}
