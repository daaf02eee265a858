//! Heterogeneous graph data model: typed nodes, per-relation edge lists,
//! per-type feature matrices, labels and evaluation splits over the target
//! type.

mod mask;
mod metapath;
mod sparse;
pub mod io;
pub mod synthetic;

pub use mask::mask_features;
pub use metapath::{metapath_adjacency, MetaPath, PathStep};
pub use sparse::SparseAdj;

use ndarray::Array2;
use std::collections::BTreeMap;
use thiserror::Error;

/// Dense identifier of a node type; valid ids are `0..n_types`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeTypeId(pub usize);

/// Dense identifier of an edge relation; valid ids are `0..n_relations`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub usize);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown node type '{0}'")]
    UnknownType(String),
    #[error("unknown relation '{0}'")]
    UnknownRelation(String),
    #[error("duplicate {kind} name '{name}'")]
    DuplicateName { kind: &'static str, name: String },
    #[error("validation failed: {0}")]
    Invalid(String),
    #[error("meta-path '{name}' is ill-typed: {message}")]
    IllTypedMetaPath { name: String, message: String },
    #[error("type '{0}' already has features")]
    FeaturesPresent(String),
}

/// Per-type node feature storage. One-hot features are kept symbolic so
/// that large attribute-less types (e.g. 7k authors) never materialize an
/// n x n identity.
#[derive(Debug, Clone)]
pub enum FeatureMatrix {
    Dense(Array2<f64>),
    /// The n x n identity.
    OneHot(usize),
    /// A diagonal 0/1 matrix, the result of masking one-hot features.
    Diagonal(Vec<f64>),
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(x) => x.nrows(),
            FeatureMatrix::OneHot(n) => *n,
            FeatureMatrix::Diagonal(d) => d.len(),
        }
    }

    pub fn n_cols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(x) => x.ncols(),
            FeatureMatrix::OneHot(n) => *n,
            FeatureMatrix::Diagonal(d) => d.len(),
        }
    }

    /// Materialize as dense. Intended for tests and small matrices.
    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            FeatureMatrix::Dense(x) => x.clone(),
            FeatureMatrix::OneHot(n) => Array2::from_diag_elem(*n, 1.0),
            FeatureMatrix::Diagonal(d) => {
                let mut m = Array2::zeros((d.len(), d.len()));
                for (i, &v) in d.iter().enumerate() {
                    m[(i, i)] = v;
                }
                m
            }
        }
    }
}

/// One edge relation between two node types, stored as local-id pairs.
#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    pub src: NodeTypeId,
    pub dst: NodeTypeId,
    pub pairs: Vec<(u32, u32)>,
}

impl Relation {
    /// CSR adjacency src -> dst.
    pub fn csr_forward(&self, g: &HeteroGraph) -> SparseAdj {
        SparseAdj::from_pairs(g.node_count(self.src), g.node_count(self.dst), &self.pairs)
    }

    /// CSR adjacency dst -> src.
    pub fn csr_reverse(&self, g: &HeteroGraph) -> SparseAdj {
        let rev: Vec<(u32, u32)> = self.pairs.iter().map(|&(a, b)| (b, a)).collect();
        SparseAdj::from_pairs(g.node_count(self.dst), g.node_count(self.src), &rev)
    }
}

/// Immutable heterogeneous graph. Construct through [`GraphBuilder`],
/// which validates every structural invariant; after that the graph is
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    type_names: Vec<String>,
    node_counts: Vec<usize>,
    relations: Vec<Relation>,
    features: Vec<Option<FeatureMatrix>>,
    target: NodeTypeId,
    labels: Option<Vec<u32>>,
    splits: BTreeMap<String, Vec<u32>>,
    metapaths: Vec<MetaPath>,
    num_classes: usize,
}

impl HeteroGraph {
    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn type_name(&self, t: NodeTypeId) -> &str {
        &self.type_names[t.0]
    }

    pub fn type_id(&self, name: &str) -> Option<NodeTypeId> {
        self.type_names.iter().position(|n| n == name).map(NodeTypeId)
    }

    pub fn node_count(&self, t: NodeTypeId) -> usize {
        self.node_counts[t.0]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, r: RelationId) -> &Relation {
        &self.relations[r.0]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r.name == name).map(RelationId)
    }

    pub fn target_type(&self) -> NodeTypeId {
        self.target
    }

    pub fn n_target(&self) -> usize {
        self.node_counts[self.target.0]
    }

    pub fn features(&self, t: NodeTypeId) -> Option<&FeatureMatrix> {
        self.features[t.0].as_ref()
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn split(&self, name: &str) -> Option<&[u32]> {
        self.splits.get(name).map(|v| v.as_slice())
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(|s| s.as_str())
    }

    pub fn metapaths(&self) -> &[MetaPath] {
        &self.metapaths
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Non-target node types connected to the target type by at least one
    /// relation, in type-id order.
    pub fn neighbor_types_of_target(&self) -> Vec<NodeTypeId> {
        let mut out: Vec<NodeTypeId> = Vec::new();
        for t in 0..self.n_types() {
            let t = NodeTypeId(t);
            if t == self.target {
                continue;
            }
            let touches = self.relations.iter().any(|r| {
                (r.src == self.target && r.dst == t) || (r.dst == self.target && r.src == t)
            });
            if touches {
                out.push(t);
            }
        }
        out
    }

    /// First-order neighbors of each target node restricted to type `t`,
    /// unioned over every relation that connects the two types.
    pub fn target_neighbors_of_type(&self, t: NodeTypeId) -> SparseAdj {
        let n = self.n_target();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        for r in &self.relations {
            if r.src == self.target && r.dst == t {
                for &(a, b) in &r.pairs {
                    rows[a as usize].push(b);
                }
            } else if r.dst == self.target && r.src == t {
                for &(a, b) in &r.pairs {
                    rows[b as usize].push(a);
                }
            }
        }
        SparseAdj::from_rows(self.node_count(t), rows)
    }
}

/// Assigns one-hot (identity) features to a type that has none.
pub fn one_hot_features(mut g: HeteroGraph, t: NodeTypeId) -> Result<HeteroGraph, DataError> {
    if g.features[t.0].is_some() {
        return Err(DataError::FeaturesPresent(g.type_name(t).to_string()));
    }
    g.features[t.0] = Some(FeatureMatrix::OneHot(g.node_counts[t.0]));
    Ok(g)
}

/// Staged construction of a [`HeteroGraph`]; `build` runs full validation.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    type_names: Vec<String>,
    node_counts: Vec<usize>,
    relations: Vec<Relation>,
    features: Vec<Option<FeatureMatrix>>,
    target: Option<String>,
    labels: Option<Vec<u32>>,
    splits: BTreeMap<String, Vec<u32>>,
    metapath_decls: Vec<(String, Vec<String>)>,
    num_classes: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node_type(&mut self, name: &str, count: usize) -> &mut Self {
        self.type_names.push(name.to_string());
        self.node_counts.push(count);
        self.features.push(None);
        self
    }

    pub fn add_relation(
        &mut self,
        name: &str,
        src: &str,
        dst: &str,
        pairs: Vec<(u32, u32)>,
    ) -> Result<&mut Self, DataError> {
        let src = self
            .lookup_type(src)
            .ok_or_else(|| DataError::UnknownType(src.to_string()))?;
        let dst = self
            .lookup_type(dst)
            .ok_or_else(|| DataError::UnknownType(dst.to_string()))?;
        self.relations.push(Relation {
            name: name.to_string(),
            src,
            dst,
            pairs,
        });
        Ok(self)
    }

    pub fn set_features(&mut self, ty: &str, f: FeatureMatrix) -> Result<&mut Self, DataError> {
        let t = self
            .lookup_type(ty)
            .ok_or_else(|| DataError::UnknownType(ty.to_string()))?;
        self.features[t.0] = Some(f);
        Ok(self)
    }

    pub fn set_target(&mut self, ty: &str) -> &mut Self {
        self.target = Some(ty.to_string());
        self
    }

    pub fn set_labels(&mut self, labels: Vec<u32>) -> &mut Self {
        self.labels = Some(labels);
        self
    }

    pub fn add_split(&mut self, name: &str, ids: Vec<u32>) -> &mut Self {
        self.splits.insert(name.to_string(), ids);
        self
    }

    pub fn add_metapath(&mut self, name: &str, relation_names: &[&str]) -> &mut Self {
        self.metapath_decls.push((
            name.to_string(),
            relation_names.iter().map(|s| s.to_string()).collect(),
        ));
        self
    }

    pub fn set_num_classes(&mut self, n: usize) -> &mut Self {
        self.num_classes = n;
        self
    }

    fn lookup_type(&self, name: &str) -> Option<NodeTypeId> {
        self.type_names.iter().position(|n| n == name).map(NodeTypeId)
    }

    pub fn build(self) -> Result<HeteroGraph, DataError> {
        for (i, name) in self.type_names.iter().enumerate() {
            if self.type_names[..i].contains(name) {
                return Err(DataError::DuplicateName {
                    kind: "node type",
                    name: name.clone(),
                });
            }
        }
        for (i, rel) in self.relations.iter().enumerate() {
            if self.relations[..i].iter().any(|r| r.name == rel.name) {
                return Err(DataError::DuplicateName {
                    kind: "relation",
                    name: rel.name.clone(),
                });
            }
        }
        if self.type_names.len() + self.relations.len() <= 2 {
            return Err(DataError::Invalid(
                "a heterogeneous graph needs |node types| + |relations| > 2".into(),
            ));
        }
        let target_name = self
            .target
            .ok_or_else(|| DataError::Invalid("no target type declared".into()))?;
        let target = self
            .type_names
            .iter()
            .position(|n| *n == target_name)
            .map(NodeTypeId)
            .ok_or(DataError::UnknownType(target_name))?;

        let g0 = HeteroGraph {
            type_names: self.type_names,
            node_counts: self.node_counts,
            relations: self.relations,
            features: self.features,
            target,
            labels: self.labels,
            splits: self.splits,
            metapaths: Vec::new(),
            num_classes: self.num_classes,
        };
        validate(&g0)?;

        let mut metapaths = Vec::with_capacity(self.metapath_decls.len());
        for (name, rels) in &self.metapath_decls {
            metapaths.push(MetaPath::resolve(name, rels, &g0)?);
        }
        Ok(HeteroGraph { metapaths, ..g0 })
    }
}

fn validate(g: &HeteroGraph) -> Result<(), DataError> {
    for r in &g.relations {
        let (ns, nd) = (g.node_count(r.src), g.node_count(r.dst));
        for &(a, b) in &r.pairs {
            if a as usize >= ns || b as usize >= nd {
                return Err(DataError::Invalid(format!(
                    "relation '{}' edge ({a}, {b}) out of range ({ns} x {nd} nodes)",
                    r.name
                )));
            }
        }
    }
    for (t, f) in g.features.iter().enumerate() {
        if let Some(f) = f {
            if f.n_rows() != g.node_counts[t] {
                return Err(DataError::Invalid(format!(
                    "feature matrix for type '{}' has {} rows but the type has {} nodes",
                    g.type_names[t],
                    f.n_rows(),
                    g.node_counts[t]
                )));
            }
        }
    }
    let n_target = g.n_target();
    if let Some(labels) = &g.labels {
        if labels.len() != n_target {
            return Err(DataError::Invalid(format!(
                "labels cover {} target nodes, expected {n_target}",
                labels.len()
            )));
        }
        if g.num_classes > 0 {
            if let Some(&bad) = labels.iter().find(|&&c| c as usize >= g.num_classes) {
                return Err(DataError::Invalid(format!(
                    "label {bad} exceeds declared class count {}",
                    g.num_classes
                )));
            }
        }
    }
    for (name, ids) in &g.splits {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= n_target) {
            return Err(DataError::Invalid(format!(
                "split '{name}' references node {bad}, but the target type has {n_target} nodes"
            )));
        }
    }
    // Within a split family (trainXX, val, test) the index sets must be
    // disjoint; train splits of different label rates may overlap.
    let val = g.splits.get("val");
    let test = g.splits.get("test");
    if let (Some(val), Some(test)) = (val, test) {
        check_disjoint("val", val, "test", test)?;
    }
    for (name, ids) in &g.splits {
        if name.starts_with("train") {
            if let Some(val) = val {
                check_disjoint(name, ids, "val", val)?;
            }
            if let Some(test) = test {
                check_disjoint(name, ids, "test", test)?;
            }
        }
    }
    Ok(())
}

fn check_disjoint(an: &str, a: &[u32], bn: &str, b: &[u32]) -> Result<(), DataError> {
    let set: std::collections::HashSet<u32> = a.iter().copied().collect();
    if let Some(&shared) = b.iter().find(|i| set.contains(i)) {
        return Err(DataError::Invalid(format!(
            "splits '{an}' and '{bn}' share node {shared}"
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Hand-built fixture: 3 papers, 2 authors, 1 subject, edges
    /// {P1-A1, P2-A1, P2-A2, P3-A2} and P*-S1 for all papers.
    /// Node ids are zero-based.
    pub fn paper_fixture() -> HeteroGraph {
        let mut b = GraphBuilder::new();
        b.add_node_type("paper", 3)
            .add_node_type("author", 2)
            .add_node_type("subject", 1);
        b.add_relation("P-A", "paper", "author", vec![(0, 0), (1, 0), (1, 1), (2, 1)])
            .unwrap();
        b.add_relation("P-S", "paper", "subject", vec![(0, 0), (1, 0), (2, 0)])
            .unwrap();
        b.set_features(
            "paper",
            FeatureMatrix::Dense(ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])),
        )
        .unwrap();
        b.set_target("paper");
        b.set_labels(vec![0, 1, 0]);
        b.set_num_classes(2);
        b.add_metapath("PAP", &["P-A", "P-A"]);
        b.add_metapath("PSP", &["P-S", "P-S"]);
        b.build().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_counts_and_edges() {
        let g = testutil::paper_fixture();
        assert_eq!(g.node_count(g.type_id("paper").unwrap()), 3);
        assert_eq!(g.node_count(g.type_id("author").unwrap()), 2);
        assert_eq!(g.node_count(g.type_id("subject").unwrap()), 1);
        assert_eq!(g.relation(RelationId(0)).pairs.len(), 4);
        assert_eq!(g.relation(RelationId(1)).pairs.len(), 3);
    }

    #[test]
    fn edge_out_of_range_rejected() {
        let mut b = GraphBuilder::new();
        b.add_node_type("a", 2).add_node_type("b", 2);
        b.add_relation("a-b", "a", "b", vec![(0, 2)]).unwrap();
        b.set_target("a");
        let err = b.build().unwrap_err();
        assert!(matches!(err, DataError::Invalid(_)), "{err}");
    }

    #[test]
    fn feature_row_mismatch_rejected() {
        let mut b = GraphBuilder::new();
        b.add_node_type("a", 3).add_node_type("b", 1);
        b.add_relation("a-b", "a", "b", vec![]).unwrap();
        b.set_features("a", FeatureMatrix::Dense(Array2::zeros((2, 4))))
            .unwrap();
        b.set_target("a");
        assert!(b.build().is_err());
    }

    #[test]
    fn too_homogeneous_rejected() {
        let mut b = GraphBuilder::new();
        b.add_node_type("a", 3);
        b.add_relation("a-a", "a", "a", vec![(0, 1)]).unwrap();
        b.set_target("a");
        assert!(b.build().is_err());
    }

    #[test]
    fn one_hot_assignment() {
        let g = testutil::paper_fixture();
        let subj = g.type_id("subject").unwrap();
        let g = one_hot_features(g, subj).unwrap();
        let f = g.features(subj).unwrap();
        assert_eq!(f.to_dense(), Array2::from_diag_elem(1, 1.0));
        // no silent overwrite
        let paper = g.type_id("paper").unwrap();
        assert!(matches!(
            one_hot_features(g, paper),
            Err(DataError::FeaturesPresent(_))
        ));
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let f = FeatureMatrix::OneHot(3);
        let d = f.to_dense();
        for row in d.rows() {
            assert_eq!(row.sum(), 1.0);
        }
        assert_eq!(d, Array2::from_diag_elem(3, 1.0));
    }

    #[test]
    fn overlapping_val_test_rejected() {
        let mut b = GraphBuilder::new();
        b.add_node_type("a", 4).add_node_type("b", 1);
        b.add_relation("a-b", "a", "b", vec![]).unwrap();
        b.set_target("a");
        b.add_split("val", vec![0, 1]);
        b.add_split("test", vec![1, 2]);
        assert!(b.build().is_err());
    }

    #[test]
    fn neighbor_types_of_target() {
        let g = testutil::paper_fixture();
        let types = g.neighbor_types_of_target();
        assert_eq!(types, vec![NodeTypeId(1), NodeTypeId(2)]);
    }
}
