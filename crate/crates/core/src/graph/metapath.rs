//! Meta-path resolution and adjacency composition.
//!
//! A meta-path is an ordered chain of relations whose node-type signature
//! composes and whose endpoints are both the target type. Its adjacency
//! over target nodes marks path existence (boolean), not instance counts:
//! composition is a chain of boolean sparse products.

use super::{DataError, HeteroGraph, NodeTypeId, RelationId, SparseAdj};

/// Direction a relation is traversed in a meta-path step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStep {
    Forward(RelationId),
    Reverse(RelationId),
}

impl PathStep {
    pub fn relation(&self) -> RelationId {
        match *self {
            PathStep::Forward(r) | PathStep::Reverse(r) => r,
        }
    }

    fn endpoints(&self, g: &HeteroGraph) -> (NodeTypeId, NodeTypeId) {
        let rel = g.relation(self.relation());
        match self {
            PathStep::Forward(_) => (rel.src, rel.dst),
            PathStep::Reverse(_) => (rel.dst, rel.src),
        }
    }
}

/// A resolved meta-path: every step's direction is fixed and the type
/// signature is verified to compose from target type back to target type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    name: String,
    steps: Vec<PathStep>,
}

impl MetaPath {
    /// Resolve a relation-name sequence against a graph. The direction of
    /// each step is inferred from the current node type; a `~` prefix
    /// forces reverse traversal (needed when both endpoints of a relation
    /// have the same type).
    pub fn resolve(
        name: &str,
        relation_names: &[String],
        g: &HeteroGraph,
    ) -> Result<MetaPath, DataError> {
        if relation_names.is_empty() {
            return Err(DataError::IllTypedMetaPath {
                name: name.to_string(),
                message: "empty relation list".into(),
            });
        }
        let mut cur = g.target_type();
        let mut steps = Vec::with_capacity(relation_names.len());
        for raw in relation_names {
            let (forced_reverse, rel_name) = match raw.strip_prefix('~') {
                Some(rest) => (true, rest),
                None => (false, raw.as_str()),
            };
            let rid = g
                .relation_id(rel_name)
                .ok_or_else(|| DataError::UnknownRelation(rel_name.to_string()))?;
            let rel = g.relation(rid);
            let step = if forced_reverse {
                if rel.dst != cur {
                    return Err(DataError::IllTypedMetaPath {
                        name: name.to_string(),
                        message: format!(
                            "step '~{rel_name}' expects current type '{}', found '{}'",
                            g.type_name(rel.dst),
                            g.type_name(cur)
                        ),
                    });
                }
                PathStep::Reverse(rid)
            } else {
                match (rel.src == cur, rel.dst == cur) {
                    (true, true) => {
                        return Err(DataError::IllTypedMetaPath {
                            name: name.to_string(),
                            message: format!(
                                "relation '{rel_name}' connects '{}' to itself; disambiguate \
                                 with a '~' prefix for reverse traversal",
                                g.type_name(cur)
                            ),
                        })
                    }
                    (true, false) => PathStep::Forward(rid),
                    (false, true) => PathStep::Reverse(rid),
                    (false, false) => {
                        return Err(DataError::IllTypedMetaPath {
                            name: name.to_string(),
                            message: format!(
                                "relation '{rel_name}' ({} - {}) does not touch current type '{}'",
                                g.type_name(rel.src),
                                g.type_name(rel.dst),
                                g.type_name(cur)
                            ),
                        })
                    }
                }
            };
            cur = step.endpoints(g).1;
            steps.push(step);
        }
        if cur != g.target_type() {
            return Err(DataError::IllTypedMetaPath {
                name: name.to_string(),
                message: format!(
                    "path ends at type '{}', expected target type '{}'",
                    g.type_name(cur),
                    g.type_name(g.target_type())
                ),
            });
        }
        Ok(MetaPath {
            name: name.to_string(),
            steps,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.steps
    }

    /// Type sequence visited, starting and ending at the target type.
    pub fn type_sequence(&self, g: &HeteroGraph) -> Vec<NodeTypeId> {
        let mut seq = vec![g.target_type()];
        for s in &self.steps {
            seq.push(s.endpoints(g).1);
        }
        seq
    }

    fn validate_against(&self, g: &HeteroGraph) -> Result<(), DataError> {
        let mut cur = g.target_type();
        for s in &self.steps {
            if s.relation().0 >= g.n_relations() {
                return Err(DataError::IllTypedMetaPath {
                    name: self.name.clone(),
                    message: "relation id out of range".into(),
                });
            }
            let (from, to) = s.endpoints(g);
            if from != cur {
                return Err(DataError::IllTypedMetaPath {
                    name: self.name.clone(),
                    message: "step does not compose".into(),
                });
            }
            cur = to;
        }
        if cur != g.target_type() {
            return Err(DataError::IllTypedMetaPath {
                name: self.name.clone(),
                message: "endpoints differ from target type".into(),
            });
        }
        Ok(())
    }
}

/// Composes the meta-path adjacency over target nodes. Entry (i, j) is
/// present iff at least one path instance connects i and j; every
/// intermediate product is binarized so multiplicity never accumulates.
pub fn metapath_adjacency(
    g: &HeteroGraph,
    p: &MetaPath,
    add_self_loops: bool,
) -> Result<SparseAdj, DataError> {
    p.validate_against(g)?;
    let mut acc: Option<SparseAdj> = None;
    for step in p.steps() {
        let rel = g.relation(step.relation());
        let next = match step {
            PathStep::Forward(_) => rel.csr_forward(g),
            PathStep::Reverse(_) => rel.csr_reverse(g),
        };
        acc = Some(match acc {
            None => next,
            Some(a) => a.multiply(&next),
        });
    }
    let adj = acc.expect("resolve guarantees a non-empty path");
    Ok(if add_self_loops {
        adj.with_self_loops()
    } else {
        adj
    })
}
