//! Planetoid dataset import.
//!
//! Two raw layouts are recognized inside a directory:
//! `ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}` pickles, and the
//! LINQS `<name>.content` / `<name>.cites` text pair. The LINQS files carry no
//! split, so a Planetoid-shaped one (20 train nodes per class, 500 val, 1000
//! test) is drawn with a recorded seed.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::pickle::Pickle;
use super::{GraphBundle, Provenance};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, Splits};

pub const DEFAULT_SPLIT_SEED: u64 = 0;
const TRAIN_PER_CLASS: usize = 20;
const NUM_VAL: usize = 500;
const NUM_TEST: usize = 1000;

fn import_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Import {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_raw(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|source| Error::io(path, source))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn find_with_suffix(dir: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::io(dir, source))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    found.sort();
    Ok(found.into_iter().next())
}

/// Imports the dataset found in `dir`. `split_seed` only matters for the
/// LINQS layout.
pub fn import_planetoid(dir: &Path, split_seed: u64) -> Result<GraphBundle> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    if let Some(x) = find_with_suffix(dir, ".test.index")? {
        let file = x.file_name().unwrap().to_string_lossy().to_string();
        let name = file
            .strip_prefix("ind.")
            .and_then(|s| s.strip_suffix(".test.index"))
            .ok_or_else(|| import_err(&x, "expected ind.<name>.test.index"))?
            .to_string();
        return import_pickles(dir, &name);
    }
    if let Some(content) = find_with_suffix(dir, ".content")? {
        let stem = content.file_stem().unwrap().to_string_lossy().to_string();
        let cites = dir.join(format!("{stem}.cites"));
        return import_linqs(&content, &cites, &stem, split_seed);
    }
    Err(import_err(dir, "no Planetoid (ind.*) or LINQS (.content/.cites) files found"))
}

fn dense_rows(p: &Pickle, path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let root = p.root();
    p.csr_dense(root)
        .or_else(|_| {
            p.ndarray(root).and_then(|(shape, v)| match shape[..] {
                [r, c] => Ok((r, c, v)),
                _ => Err("expected a 2-D array".to_string()),
            })
        })
        .map_err(|e| import_err(path, e))
}

fn load_pickle(path: &Path, hashes: &mut Provenance) -> Result<Pickle> {
    let bytes = read_raw(path)?;
    hashes.insert(
        path.file_name().unwrap().to_string_lossy().into(),
        Value::from(sha256_hex(&bytes)),
    );
    Pickle::parse(&bytes).map_err(|e| import_err(path, e))
}

fn one_hot_labels(values: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    (0..rows)
        .map(|r| {
            let row = &values[r * cols..(r + 1) * cols];
            row.iter().position(|&v| v != 0.0)
        })
        .collect()
}

fn import_pickles(dir: &Path, name: &str) -> Result<GraphBundle> {
    let file = |ext: &str| dir.join(format!("ind.{name}.{ext}"));
    let mut hashes = Provenance::new();
    let (allx_rows, d, allx) = dense_rows(&load_pickle(&file("allx"), &mut hashes)?, &file("allx"))?;
    let (tx_rows, tx_d, tx) = dense_rows(&load_pickle(&file("tx"), &mut hashes)?, &file("tx"))?;
    let (ally_rows, c, ally) = dense_rows(&load_pickle(&file("ally"), &mut hashes)?, &file("ally"))?;
    let (ty_rows, ty_c, ty) = dense_rows(&load_pickle(&file("ty"), &mut hashes)?, &file("ty"))?;
    let (y_rows, _, _) = dense_rows(&load_pickle(&file("y"), &mut hashes)?, &file("y"))?;
    let graph_pickle = load_pickle(&file("graph"), &mut hashes)?;
    if tx_d != d || ty_c != c || allx_rows != ally_rows || tx_rows != ty_rows {
        return Err(import_err(&file("tx"), "feature or label blocks disagree in shape"));
    }
    let index_path = file("test.index");
    let index_bytes = read_raw(&index_path)?;
    hashes.insert(
        format!("ind.{name}.test.index"),
        Value::from(sha256_hex(&index_bytes)),
    );
    let test_order: Vec<usize> = String::from_utf8_lossy(&index_bytes)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| import_err(&index_path, format!("bad index {l:?}"))))
        .collect::<Result<_>>()?;
    if test_order.len() != tx_rows {
        return Err(import_err(&index_path, "test index count differs from tx rows"));
    }
    let n = test_order.iter().copied().max().map_or(allx_rows, |m| (m + 1).max(allx_rows));

    let mut features = Array2::zeros((n, d));
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let ally_lab = one_hot_labels(&ally, ally_rows, c);
    for r in 0..allx_rows {
        features.row_mut(r).assign(&ndarray::ArrayView1::from(&allx[r * d..(r + 1) * d]));
        labels[r] = ally_lab[r];
    }
    let ty_lab = one_hot_labels(&ty, ty_rows, c);
    for (k, &node) in test_order.iter().enumerate() {
        if node < allx_rows {
            return Err(import_err(&index_path, format!("test node {node} overlaps allx")));
        }
        features.row_mut(node).assign(&ndarray::ArrayView1::from(&tx[k * d..(k + 1) * d]));
        labels[node] = ty_lab[k];
    }
    let unlabeled = labels.iter().filter(|l| l.is_none()).count();
    let labels: Vec<usize> = labels.into_iter().map(|l| l.unwrap_or(0)).collect();

    let lists = graph_pickle
        .adjacency_lists(graph_pickle.root())
        .map_err(|e| import_err(&file("graph"), e))?;
    let mut raw_records = 0usize;
    let mut self_loops = 0usize;
    let mut unique = BTreeSet::new();
    for (src, nbrs) in lists {
        for dst in nbrs {
            raw_records += 1;
            if src >= n || dst >= n {
                return Err(import_err(&file("graph"), format!("edge ({src}, {dst}) outside {n} nodes")));
            }
            if src == dst {
                self_loops += 1;
                continue;
            }
            unique.insert((src.min(dst), src.max(dst)));
        }
    }
    let edges = unique.iter().map(|&(src, dst)| Edge { src, dst, weight: 1.0 }).collect();
    let mut test = test_order.clone();
    test.sort_unstable();
    let splits = Splits {
        train: (0..y_rows).collect(),
        val: (y_rows..(y_rows + NUM_VAL).min(allx_rows)).collect(),
        test,
    };
    let graph = Graph::new(features, labels, c, edges, splits)?;
    let mut prov = Provenance::new();
    prov.insert("dataset".into(), Value::from(name));
    prov.insert("source_format".into(), Value::from("planetoid-pickle"));
    prov.insert("split".into(), Value::from("public"));
    prov.insert("raw_edge_records".into(), Value::from(raw_records));
    prov.insert("raw_self_loops".into(), Value::from(self_loops));
    prov.insert("unlabeled_padding_nodes".into(), Value::from(unlabeled));
    prov.insert("raw_sha256".into(), Value::Object(hashes.into_iter().collect()));
    Ok(GraphBundle { graph, provenance: prov })
}

fn import_linqs(content: &Path, cites: &Path, name: &str, split_seed: u64) -> Result<GraphBundle> {
    let content_bytes = read_raw(content)?;
    let cites_bytes = read_raw(cites)?;
    let text = String::from_utf8(content_bytes.clone()).map_err(|_| import_err(content, "not UTF-8"))?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(import_err(content, format!("line {} has too few fields", lineno + 1)));
        }
        let row = fields[1..fields.len() - 1]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| import_err(content, format!("line {}: bad value {v:?}", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(import_err(content, format!("line {} has a different width", lineno + 1)));
        }
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(import_err(content, format!("duplicate id {}", fields[0])));
        }
        rows.push(row);
        class_names.push(fields[fields.len() - 1].to_string());
    }
    if rows.is_empty() {
        return Err(import_err(content, "no records"));
    }
    let n = rows.len();
    let d = rows[0].len();
    let classes: Vec<String> = class_names.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let class_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = class_names.iter().map(|c| class_of[c.as_str()]).collect();
    let features = Array2::from_shape_vec((n, d), rows.concat()).expect("rows have equal width");

    let cites_text = String::from_utf8(cites_bytes.clone()).map_err(|_| import_err(cites, "not UTF-8"))?;
    let mut raw_records = 0usize;
    let mut dangling = 0usize;
    let mut self_loops = 0usize;
    let mut unique = BTreeSet::new();
    for (lineno, line) in cites_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(import_err(cites, format!("line {} is not a pair", lineno + 1)));
        }
        raw_records += 1;
        let (Some(&a), Some(&b)) = (ids.get(f[0]), ids.get(f[1])) else {
            dangling += 1;
            continue;
        };
        if a == b {
            self_loops += 1;
            continue;
        }
        unique.insert((a.min(b), a.max(b)));
    }
    let edges = unique.iter().map(|&(src, dst)| Edge { src, dst, weight: 1.0 }).collect();
    let splits = planetoid_shaped_split(&labels, classes.len(), split_seed)
        .ok_or_else(|| import_err(content, "too few nodes for a 20-per-class / 500 / 1000 split"))?;
    let graph = Graph::new(features, labels, classes.len(), edges, splits)?;

    let mut hashes = serde_json::Map::new();
    for (p, b) in [(content, &content_bytes), (cites, &cites_bytes)] {
        hashes.insert(p.file_name().unwrap().to_string_lossy().into(), Value::from(sha256_hex(b)));
    }
    let mut prov = Provenance::new();
    prov.insert("dataset".into(), Value::from(name));
    prov.insert("source_format".into(), Value::from("linqs"));
    prov.insert("classes".into(), Value::from(classes));
    prov.insert("split".into(), Value::from("seeded 20 per class / 500 / 1000"));
    prov.insert("split_seed".into(), Value::from(split_seed));
    prov.insert("raw_edge_records".into(), Value::from(raw_records));
    prov.insert("raw_self_loops".into(), Value::from(self_loops));
    prov.insert("dangling_edge_records".into(), Value::from(dangling));
    prov.insert("raw_sha256".into(), Value::Object(hashes));
    Ok(GraphBundle { graph, provenance: prov })
}

fn planetoid_shaped_split(labels: &[usize], classes: usize, seed: u64) -> Option<Splits> {
    let n = labels.len();
    if n < classes * TRAIN_PER_CLASS + NUM_VAL + NUM_TEST {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![0usize; classes];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for i in order {
        if taken[labels[i]] < TRAIN_PER_CLASS {
            taken[labels[i]] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if taken.iter().any(|&t| t < TRAIN_PER_CLASS) {
        return None;
    }
    let mut val = rest[..NUM_VAL].to_vec();
    let mut test = rest[NUM_VAL..NUM_VAL + NUM_TEST].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Some(Splits { train, val, test })
}
