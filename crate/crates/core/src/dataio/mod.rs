//! On-disk bundles, model checkpoints, dataset importers and the SBM generator.
//!
//! A graph bundle is a directory:
//!
//! | file          | content                                                   |
//! |---------------|-----------------------------------------------------------|
//! | `meta.json`   | format version, kind, sizes, provenance                   |
//! | `edges.tsv`   | `src\tdst[\tweight]`, each undirected edge once, sorted    |
//! | `features.bin`| `TGCCBND1`, rows and cols as u64 LE, row-major f32 LE      |
//! | `labels.tsv`  | one class index per line, in node order                   |
//! | `splits.json` | `{"train": [...], "val": [...], "test": [...]}`           |
//!
//! Condensed bundles add `adjacency.bin` and, for learned structure,
//! `logits.bin` (both in the `features.bin` layout), `config.json`,
//! `loss_trace.json` and, when available, an `encoder.bin` checkpoint.
//! Every file is written to a temporary name and renamed into place.

mod import;
mod pickle;
mod sbm;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::condenser::{SynAdjacency, SyntheticGraph};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, Splits};
use crate::pipeline::{EpochRecord, RunArtifacts};
use crate::relay::RelayModel;

pub use import::{import_planetoid, DEFAULT_SPLIT_SEED};
pub use pickle::Pickle;
pub use sbm::{gen_sbm, SbmSpec};

pub const MAGIC: &[u8; 8] = b"TGCCBND1";
pub const FORMAT_VERSION: u32 = 1;
/// Symmetry tolerance applied to a reloaded condensed adjacency.
pub const RELOAD_SYMMETRY_TOL: f64 = 1e-6;

const CHECKPOINT_FORMAT: &str = "tgcc-checkpoint";

pub type Provenance = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundleKind {
    Graph,
    Condensed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub format_version: u32,
    pub kind: BundleKind,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_edges: usize,
    pub weighted: bool,
    #[serde(default)]
    pub provenance: Provenance,
}

/// A graph together with the provenance recorded in its `meta.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub graph: Graph,
    pub provenance: Provenance,
}

impl GraphBundle {
    pub fn new(graph: Graph) -> Self {
        Self {
            graph,
            provenance: Provenance::new(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::io(path, source)
}

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| malformed(path, "not valid UTF-8"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Serializes a matrix in the `TGCCBND1` layout.
pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses the `TGCCBND1` layout, checking the dims against `expect` when given.
pub fn decode_matrix(bytes: &[u8], path: &Path, expect: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let mismatch = |detail: String| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(mismatch("missing TGCCBND1 magic".into()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if let Some((r, c)) = expect {
        if (rows, cols) != (r, c) {
            return Err(mismatch(format!("header says {rows}x{cols}, expected {r}x{c}")));
        }
    }
    let body = &bytes[24..];
    let expected_len = rows.checked_mul(cols).and_then(|k| k.checked_mul(4));
    if expected_len != Some(body.len()) {
        return Err(mismatch(format!(
            "header says {rows}x{cols} but the payload has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

fn read_matrix(path: &Path, expect: Option<(usize, usize)>) -> Result<Array2<f64>> {
    decode_matrix(&read_file(path)?, path, expect)
}

fn encode_edges(edges: &[Edge], weighted: bool) -> String {
    let mut out = String::with_capacity(edges.len() * 12);
    for e in edges {
        if weighted {
            out.push_str(&format!("{}\t{}\t{}\n", e.src, e.dst, e.weight));
        } else {
            out.push_str(&format!("{}\t{}\n", e.src, e.dst));
        }
    }
    out
}

fn decode_edges(text: &str, path: &Path, n: usize) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(malformed(path, format!("line {} has {} fields", lineno + 1, fields.len())));
        }
        let idx = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| malformed(path, format!("line {}: bad node index {s:?}", lineno + 1)))?;
            if v >= n {
                return Err(Error::IndexOutOfRange {
                    path: path.to_path_buf(),
                    detail: format!("line {}: node {v} not below {n}", lineno + 1),
                });
            }
            Ok(v)
        };
        let src = idx(fields[0])?;
        let dst = idx(fields[1])?;
        let weight = match fields.get(2) {
            Some(w) => w
                .parse()
                .map_err(|_| malformed(path, format!("line {}: bad weight {w:?}", lineno + 1)))?,
            None => 1.0,
        };
        edges.push(Edge { src, dst, weight });
    }
    Ok(edges)
}

fn encode_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for y in labels {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    out
}

fn decode_labels(text: &str, path: &Path, n: usize, classes: usize) -> Result<Vec<usize>> {
    let labels = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let y: usize = l
                .trim()
                .parse()
                .map_err(|_| malformed(path, format!("line {}: bad label {l:?}", i + 1)))?;
            if y >= classes {
                return Err(Error::IndexOutOfRange {
                    path: path.to_path_buf(),
                    detail: format!("line {}: label {y} not below {classes}", i + 1),
                });
            }
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            detail: format!("{} labels for {n} nodes", labels.len()),
        });
    }
    Ok(labels)
}

fn decode_splits(text: &str, path: &Path, n: usize) -> Result<Splits> {
    let splits: Splits = serde_json::from_str(text).map_err(|e| malformed(path, e.to_string()))?;
    for (name, idx) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        if let Some(&i) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                path: path.to_path_buf(),
                detail: format!("{name} index {i} not below {n}"),
            });
        }
    }
    Ok(splits)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_meta(dir: &Path, kind: BundleKind) -> Result<BundleMeta> {
    let path = dir.join("meta.json");
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let meta: BundleMeta =
        serde_json::from_str(&read_text(&path)?).map_err(|e| malformed(&path, e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::HeaderMismatch {
            path,
            detail: format!("format version {} is not {FORMAT_VERSION}", meta.format_version),
        });
    }
    if meta.kind != kind {
        return Err(Error::HeaderMismatch {
            path,
            detail: format!("bundle kind is {:?}, expected {kind:?}", meta.kind),
        });
    }
    Ok(meta)
}

/// Writes a graph bundle into `dir`, creating it if needed.
pub fn save_bundle(bundle: &GraphBundle, dir: &Path) -> Result<()> {
    let g = &bundle.graph;
    ensure_dir(dir)?;
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        kind: BundleKind::Graph,
        num_nodes: g.num_nodes(),
        feature_dim: g.feature_dim(),
        num_classes: g.num_classes(),
        num_edges: g.num_edges(),
        weighted: g.is_weighted(),
        provenance: bundle.provenance.clone(),
    };
    write_atomic(&dir.join("edges.tsv"), encode_edges(g.edges(), g.is_weighted()).as_bytes())?;
    write_atomic(&dir.join("features.bin"), &encode_matrix(g.features()))?;
    write_atomic(&dir.join("labels.tsv"), encode_labels(g.labels()).as_bytes())?;
    let mut splits = serde_json::to_string(g.splits())?;
    splits.push('\n');
    write_atomic(&dir.join("splits.json"), splits.as_bytes())?;
    write_atomic(&dir.join("meta.json"), pretty_json(&meta)?.as_bytes())
}

/// Loads and validates a graph bundle.
pub fn read_bundle(dir: &Path) -> Result<GraphBundle> {
    let meta = read_meta(dir, BundleKind::Graph)?;
    let n = meta.num_nodes;
    let features = read_matrix(&dir.join("features.bin"), Some((n, meta.feature_dim)))?;
    let labels_path = dir.join("labels.tsv");
    let labels = decode_labels(&read_text(&labels_path)?, &labels_path, n, meta.num_classes)?;
    let edges_path = dir.join("edges.tsv");
    let edges = decode_edges(&read_text(&edges_path)?, &edges_path, n)?;
    if edges.len() != meta.num_edges {
        return Err(Error::HeaderMismatch {
            path: edges_path,
            detail: format!("{} edges listed, meta says {}", edges.len(), meta.num_edges),
        });
    }
    let splits_path = dir.join("splits.json");
    let splits = decode_splits(&read_text(&splits_path)?, &splits_path, n)?;
    let graph = Graph::new(features, labels, meta.num_classes, edges, splits)?;
    Ok(GraphBundle {
        graph,
        provenance: meta.provenance,
    })
}

pub fn load_bundle(dir: &Path) -> Result<Graph> {
    Ok(read_bundle(dir)?.graph)
}

/// A condensed graph with the run record that produced it.
#[derive(Debug, Clone)]
pub struct CondensedBundle {
    pub synthetic: SyntheticGraph,
    /// Verbatim content of `config.json`.
    pub config_json: String,
    pub trace: Vec<EpochRecord>,
    pub encoder: Option<RelayModel>,
    pub provenance: Provenance,
}

impl CondensedBundle {
    pub fn from_artifacts(artifacts: &RunArtifacts, provenance: Provenance) -> Self {
        Self {
            synthetic: artifacts.synthetic.clone(),
            config_json: artifacts.config_snapshot.clone(),
            trace: artifacts.trace.clone(),
            encoder: Some(artifacts.encoder.clone()),
            provenance,
        }
    }
}

fn upper_edges(adj: &Array2<f64>) -> Vec<Edge> {
    let m = adj.nrows();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let w = adj[[i, j]] as f32;
            if w != 0.0 {
                edges.push(Edge {
                    src: i,
                    dst: j,
                    weight: w as f64,
                });
            }
        }
    }
    edges
}

pub fn save_condensed(bundle: &CondensedBundle, dir: &Path) -> Result<()> {
    let syn = &bundle.synthetic;
    let m = syn.num_nodes();
    ensure_dir(dir)?;
    let adjacency = syn.adjacency();
    let edges = upper_edges(&adjacency);
    let mut provenance = bundle.provenance.clone();
    let structure = if syn.logits().is_some() { "learned" } else { "fixed" };
    provenance.insert("adjacency".into(), Value::from(structure));
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        kind: BundleKind::Condensed,
        num_nodes: m,
        feature_dim: syn.feature_dim(),
        num_classes: syn.num_classes,
        num_edges: edges.len(),
        weighted: true,
        provenance,
    };
    let splits = Splits {
        train: (0..m).collect(),
        ..Default::default()
    };
    write_atomic(&dir.join("edges.tsv"), encode_edges(&edges, true).as_bytes())?;
    write_atomic(&dir.join("features.bin"), &encode_matrix(&syn.xs))?;
    write_atomic(&dir.join("labels.tsv"), encode_labels(&syn.ys).as_bytes())?;
    let mut splits = serde_json::to_string(&splits)?;
    splits.push('\n');
    write_atomic(&dir.join("splits.json"), splits.as_bytes())?;
    write_atomic(&dir.join("adjacency.bin"), &encode_matrix(&adjacency))?;
    let logits_path = dir.join("logits.bin");
    match syn.logits() {
        Some(l) => write_atomic(&logits_path, &encode_matrix(l))?,
        None if logits_path.exists() => fs::remove_file(&logits_path).map_err(io_err(&logits_path))?,
        None => {}
    }
    write_atomic(&dir.join("config.json"), bundle.config_json.as_bytes())?;
    write_atomic(&dir.join("loss_trace.json"), pretty_json(&bundle.trace)?.as_bytes())?;
    if let Some(enc) = &bundle.encoder {
        save_checkpoint(enc, &dir.join("encoder.bin"))?;
    }
    write_atomic(&dir.join("meta.json"), pretty_json(&meta)?.as_bytes())
}

pub fn load_condensed(dir: &Path) -> Result<CondensedBundle> {
    let meta = read_meta(dir, BundleKind::Condensed)?;
    let m = meta.num_nodes;
    let xs = read_matrix(&dir.join("features.bin"), Some((m, meta.feature_dim)))?;
    let labels_path = dir.join("labels.tsv");
    let ys = decode_labels(&read_text(&labels_path)?, &labels_path, m, meta.num_classes)?;
    let logits_path = dir.join("logits.bin");
    let (path, mut mat) = if logits_path.is_file() {
        (logits_path.clone(), read_matrix(&logits_path, Some((m, m)))?)
    } else {
        let p = dir.join("adjacency.bin");
        let a = read_matrix(&p, Some((m, m)))?;
        (p, a)
    };
    let asym = crate::linalg::max_asymmetry(mat.view());
    if asym > RELOAD_SYMMETRY_TOL {
        return Err(malformed(&path, format!("matrix is asymmetric by {asym:e}")));
    }
    let t = mat.t().to_owned();
    mat = (&mat + &t) * 0.5;
    let adj = if path == logits_path {
        SynAdjacency::Learned(mat)
    } else {
        SynAdjacency::Fixed(mat)
    };
    let synthetic = SyntheticGraph::new(xs, adj, ys, meta.num_classes)?;
    let config_path = dir.join("config.json");
    let config_json = read_text(&config_path)?;
    serde_json::from_str::<Value>(&config_json).map_err(|e| malformed(&config_path, e.to_string()))?;
    let trace_path = dir.join("loss_trace.json");
    let trace = serde_json::from_str(&read_text(&trace_path)?).map_err(|e| malformed(&trace_path, e.to_string()))?;
    let enc_path = dir.join("encoder.bin");
    let encoder = if enc_path.is_file() {
        Some(load_checkpoint(&enc_path)?)
    } else {
        None
    };
    let mut provenance = meta.provenance;
    provenance.remove("adjacency");
    Ok(CondensedBundle {
        synthetic,
        config_json,
        trace,
        encoder,
        provenance,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    seed: u64,
    tensors: Vec<TensorHeader>,
}

/// A relay checkpoint: one JSON header line followed by f32 LE tensors.
pub fn encode_checkpoint(model: &RelayModel) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        seed: model.seed,
        tensors: vec![
            TensorHeader {
                name: "w1".into(),
                shape: [model.w1.nrows(), model.w1.ncols()],
            },
            TensorHeader {
                name: "w2".into(),
                shape: [model.w2.nrows(), model.w2.ncols()],
            },
        ],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for v in model.w1.iter().chain(model.w2.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<RelayModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(path, "no header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| malformed(path, e.to_string()))?;
    let mismatch = |detail: &str| Error::HeaderMismatch {
        path: path.to_path_buf(),
        detail: detail.into(),
    };
    if header.format != CHECKPOINT_FORMAT || header.version != FORMAT_VERSION {
        return Err(mismatch("not a version 1 checkpoint"));
    }
    if header.tensors.len() != 2 || header.tensors[0].name != "w1" || header.tensors[1].name != "w2" {
        return Err(mismatch("expected tensors w1 and w2"));
    }
    let [d, h] = header.tensors[0].shape;
    let [h2, c] = header.tensors[1].shape;
    if h != h2 {
        return Err(mismatch("w1 and w2 disagree on the hidden width"));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 4 * (d * h + h * c) {
        return Err(mismatch("payload length does not match the tensor shapes"));
    }
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let w1 = Array2::from_shape_vec((d, h), vals[..d * h].to_vec()).expect("length checked");
    let w2 = Array2::from_shape_vec((h, c), vals[d * h..].to_vec()).expect("length checked");
    Ok(RelayModel {
        w1,
        w2,
        seed: header.seed,
    })
}

pub fn save_checkpoint(model: &RelayModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<RelayModel> {
    decode_checkpoint(&read_file(path)?, path)
}

/// True when `dir` looks like a condensed bundle.
pub fn is_condensed_bundle(dir: &Path) -> bool {
    let path: PathBuf = dir.join("meta.json");
    fs::read_to_string(path)
        .ok()
        .and_then(|s| serde_json::from_str::<BundleMeta>(&s).ok())
        .is_some_and(|m| m.kind == BundleKind::Condensed)
}
