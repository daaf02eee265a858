//! Dataset directory IO.
//!
//! Layout (all text files UTF-8, tab-separated):
//!
//! - `manifest.json` — node types (name, count, feature_dim), relations
//!   (name, src, dst, edge_file), target type, meta-paths as relation-name
//!   sequences, class count.
//! - `features_<type>.tsv` — one row per node; absent for one-hot types
//!   (`feature_dim: null`).
//! - `edges_<relation>.tsv` — `src_id<TAB>dst_id`, local ids.
//! - `labels.tsv` — `node_id<TAB>class_id` for target nodes.
//! - `split_<name>.txt` — one node id per line (`train20`, `train40`,
//!   `train60`, `val`, `test`).

use super::{DataError, FeatureMatrix, GraphBuilder, HeteroGraph, NodeTypeId};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestJson {
    node_types: Vec<NodeTypeJson>,
    relations: Vec<RelationJson>,
    target_type: String,
    #[serde(default)]
    metapaths: Vec<MetaPathJson>,
    #[serde(default)]
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeTypeJson {
    name: String,
    count: usize,
    feature_dim: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationJson {
    name: String,
    src: String,
    dst: String,
    edge_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaPathJson {
    name: String,
    relations: Vec<String>,
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Loads and validates a dataset directory. Loading never mutates the
/// input files.
pub fn load_dataset(root: &Path) -> Result<HeteroGraph, DataError> {
    let manifest_path = root.join("manifest.json");
    let manifest: ManifestJson = serde_json::from_str(&read_to_string(&manifest_path)?)
        .map_err(|e| parse_err(&manifest_path, e.line(), e.to_string()))?;

    let mut b = GraphBuilder::new();
    for nt in &manifest.node_types {
        b.add_node_type(&nt.name, nt.count);
    }
    for rel in &manifest.relations {
        let path = root.join(&rel.edge_file);
        let mut pairs = Vec::new();
        for (line_no, line) in open_lines(&path)? {
            let line = line.map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let src: u32 = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err(&path, line_no, format!("bad src id in '{line}'")))?;
            let dst: u32 = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err(&path, line_no, format!("bad dst id in '{line}'")))?;
            pairs.push((src, dst));
        }
        b.add_relation(&rel.name, &rel.src, &rel.dst, pairs)?;
    }
    for nt in &manifest.node_types {
        let Some(dim) = nt.feature_dim else { continue };
        let path = root.join(format!("features_{}.tsv", nt.name));
        let mut rows: Vec<f64> = Vec::with_capacity(nt.count * dim);
        let mut n_rows = 0usize;
        for (line_no, line) in open_lines(&path)? {
            let line = line.map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            let start = rows.len();
            for field in line.split('\t') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    parse_err(&path, line_no, format!("bad feature value '{field}'"))
                })?;
                rows.push(v);
            }
            if rows.len() - start != dim {
                return Err(parse_err(
                    &path,
                    line_no,
                    format!("expected {dim} columns, found {}", rows.len() - start),
                ));
            }
            n_rows += 1;
        }
        let x = Array2::from_shape_vec((n_rows, dim), rows)
            .expect("row-count bookkeeping is consistent");
        b.set_features(&nt.name, FeatureMatrix::Dense(x))?;
    }
    b.set_target(&manifest.target_type);
    b.set_num_classes(manifest.num_classes);

    let labels_path = root.join("labels.tsv");
    if labels_path.exists() {
        let n_target = manifest
            .node_types
            .iter()
            .find(|nt| nt.name == manifest.target_type)
            .map(|nt| nt.count)
            .ok_or_else(|| DataError::UnknownType(manifest.target_type.clone()))?;
        let mut labels = vec![u32::MAX; n_target];
        for (line_no, line) in open_lines(&labels_path)? {
            let line = line.map_err(|source| DataError::Io {
                path: labels_path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let node: usize = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err(&labels_path, line_no, "bad node id"))?;
            let class: u32 = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err(&labels_path, line_no, "bad class id"))?;
            if node >= n_target {
                return Err(parse_err(
                    &labels_path,
                    line_no,
                    format!("node id {node} out of range for target type"),
                ));
            }
            labels[node] = class;
        }
        if let Some(missing) = labels.iter().position(|&c| c == u32::MAX) {
            return Err(DataError::Invalid(format!(
                "labels.tsv does not cover target node {missing}"
            )));
        }
        b.set_labels(labels);
    }

    let mut split_names: Vec<String> = Vec::new();
    for entry in fs::read_dir(root).map_err(|source| DataError::Io {
        path: root.display().to_string(),
        source,
    })? {
        let entry = entry.map_err(|source| DataError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let fname = entry.file_name().to_string_lossy().into_owned();
        if let Some(name) = fname
            .strip_prefix("split_")
            .and_then(|s| s.strip_suffix(".txt"))
        {
            split_names.push(name.to_string());
        }
    }
    split_names.sort();
    for name in split_names {
        let path = root.join(format!("split_{name}.txt"));
        let mut ids = Vec::new();
        for (line_no, line) in open_lines(&path)? {
            let line = line.map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let id: u32 = line
                .trim()
                .parse()
                .map_err(|_| parse_err(&path, line_no, format!("bad node id '{line}'")))?;
            ids.push(id);
        }
        b.add_split(&name, ids);
    }

    for mp in &manifest.metapaths {
        let rels: Vec<&str> = mp.relations.iter().map(|s| s.as_str()).collect();
        b.add_metapath(&mp.name, &rels);
    }
    b.build()
}

/// Writes a graph back out in the dataset directory layout. Dense feature
/// values round-trip exactly (shortest-representation float formatting);
/// synthesized one-hot features are recorded as `feature_dim: null` and
/// produce no feature file.
pub fn save_dataset(g: &HeteroGraph, root: &Path) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(|source| DataError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| DataError::Io {
            path,
            source,
        }
    };

    let manifest = ManifestJson {
        node_types: (0..g.n_types())
            .map(|t| {
                let t = NodeTypeId(t);
                NodeTypeJson {
                    name: g.type_name(t).to_string(),
                    count: g.node_count(t),
                    feature_dim: match g.features(t) {
                        Some(FeatureMatrix::Dense(x)) => Some(x.ncols()),
                        _ => None,
                    },
                }
            })
            .collect(),
        relations: g
            .relations()
            .iter()
            .map(|r| RelationJson {
                name: r.name.clone(),
                src: g.type_name(r.src).to_string(),
                dst: g.type_name(r.dst).to_string(),
                edge_file: format!("edges_{}.tsv", r.name),
            })
            .collect(),
        target_type: g.type_name(g.target_type()).to_string(),
        metapaths: g
            .metapaths()
            .iter()
            .map(|p| MetaPathJson {
                name: p.name().to_string(),
                relations: p
                    .steps()
                    .iter()
                    .map(|s| {
                        let rel = &g.relation(s.relation()).name;
                        // `~` marks forced reverse traversal of a
                        // same-type relation; asymmetric-type steps
                        // re-infer their direction on load.
                        let r = g.relation(s.relation());
                        if r.src == r.dst {
                            match s {
                                super::PathStep::Forward(_) => rel.clone(),
                                super::PathStep::Reverse(_) => format!("~{rel}"),
                            }
                        } else {
                            rel.clone()
                        }
                    })
                    .collect(),
            })
            .collect(),
        num_classes: g.num_classes(),
    };
    let mpath = root.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest).expect("serializable"))
        .map_err(io_err(&mpath))?;

    for r in g.relations() {
        let path = root.join(format!("edges_{}.tsv", r.name));
        let mut out = String::new();
        for &(a, b) in &r.pairs {
            out.push_str(&format!("{a}\t{b}\n"));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    for t in 0..g.n_types() {
        let t = NodeTypeId(t);
        if let Some(FeatureMatrix::Dense(x)) = g.features(t) {
            let path = root.join(format!("features_{}.tsv", g.type_name(t)));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut w = std::io::BufWriter::new(file);
            for row in x.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join("\t")).map_err(io_err(&path))?;
            }
        }
    }
    if let Some(labels) = g.labels() {
        let path = root.join("labels.tsv");
        let mut out = String::new();
        for (i, c) in labels.iter().enumerate() {
            out.push_str(&format!("{i}\t{c}\n"));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    for name in g.split_names() {
        let path = root.join(format!("split_{name}.txt"));
        let ids = g.split(name).expect("name comes from the split map");
        let mut out = String::new();
        for id in ids {
            out.push_str(&format!("{id}\n"));
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    Ok(())
}
