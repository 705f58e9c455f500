mod common;

use std::fs;
use std::path::Path;

use ndarray::Array2;
use tgcc::dataio::{
    encode_matrix, gen_sbm, import_planetoid, is_condensed_bundle, load_bundle, load_checkpoint, load_condensed,
    read_bundle, save_bundle, save_checkpoint, save_condensed, CondensedBundle, GraphBundle, Provenance, SbmSpec,
    DEFAULT_SPLIT_SEED, MAGIC,
};
use tgcc::pipeline::{run_condense, TgccConfig};
use tgcc::relay::init_model;
use tgcc::{bench, Error};

use common::{data_dir, sbm};

const FILES: [&str; 5] = ["meta.json", "edges.tsv", "features.bin", "labels.tsv", "splits.json"];

fn read_all(dir: &Path) -> Vec<Vec<u8>> {
    FILES.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect()
}

fn write_two_node_fixture(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let meta = r#"{
  "format_version": 1,
  "kind": "graph",
  "num_nodes": 2,
  "feature_dim": 3,
  "num_classes": 2,
  "num_edges": 1,
  "weighted": false
}
"#;
    fs::write(dir.join("meta.json"), meta).unwrap();
    fs::write(dir.join("edges.tsv"), "0\t1\n").unwrap();
    let mut feats = MAGIC.to_vec();
    feats.extend(2u64.to_le_bytes());
    feats.extend(3u64.to_le_bytes());
    for v in [1.0f32, 0.0, 0.5, 0.0, 1.0, -0.5] {
        feats.extend(v.to_le_bytes());
    }
    fs::write(dir.join("features.bin"), feats).unwrap();
    fs::write(dir.join("labels.tsv"), "0\n1\n").unwrap();
    fs::write(dir.join("splits.json"), r#"{"train": [0, 1], "val": [], "test": []}"#).unwrap();
}

#[test]
fn two_node_fixture_loads() {
    let tmp = tempfile::tempdir().unwrap();
    write_two_node_fixture(tmp.path());
    let g = load_bundle(tmp.path()).unwrap();
    assert_eq!(g.num_nodes(), 2);
    assert_eq!(g.num_edges(), 1);
    assert_eq!(g.features()[[1, 2]], -0.5);
    assert_eq!(g.labels(), &[0, 1]);
}

#[test]
fn corrupted_header_is_a_header_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    write_two_node_fixture(tmp.path());
    let path = tmp.path().join("features.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes[8..16].copy_from_slice(&5u64.to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_bundle(tmp.path()), Err(Error::HeaderMismatch { .. })));

    bytes[..8].copy_from_slice(b"NOTMAGIC");
    fs::write(&path, &bytes).unwrap();
    let err = load_bundle(tmp.path()).unwrap_err();
    assert!(err.is_data_error());
}

#[test]
fn missing_files_and_bad_indices_are_distinct_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(load_bundle(&tmp.path().join("nope")), Err(Error::MissingFile(_))));

    write_two_node_fixture(tmp.path());
    fs::remove_file(tmp.path().join("labels.tsv")).unwrap();
    assert!(matches!(load_bundle(tmp.path()), Err(Error::MissingFile(_))));

    write_two_node_fixture(tmp.path());
    fs::write(tmp.path().join("edges.tsv"), "0\t2\n").unwrap();
    assert!(matches!(load_bundle(tmp.path()), Err(Error::IndexOutOfRange { .. })));

    write_two_node_fixture(tmp.path());
    fs::write(tmp.path().join("splits.json"), r#"{"train": [7], "val": [], "test": []}"#).unwrap();
    assert!(matches!(load_bundle(tmp.path()), Err(Error::IndexOutOfRange { .. })));

    write_two_node_fixture(tmp.path());
    fs::write(tmp.path().join("labels.tsv"), "0\n9\n").unwrap();
    assert!(matches!(load_bundle(tmp.path()), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn save_of_load_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    save_bundle(&gen_sbm(&SbmSpec::new(vec![9, 7, 5], 0.5, 0.1, 4, 3)).unwrap(), &a).unwrap();
    let loaded = read_bundle(&a).unwrap();
    save_bundle(&loaded, &b).unwrap();
    assert_eq!(read_all(&a), read_all(&b));
    assert_eq!(read_bundle(&b).unwrap(), loaded);

    write_two_node_fixture(&tmp.path().join("fixture"));
    let fixture = read_bundle(&tmp.path().join("fixture")).unwrap();
    save_bundle(&fixture, &tmp.path().join("c")).unwrap();
    save_bundle(&read_bundle(&tmp.path().join("c")).unwrap(), &tmp.path().join("d")).unwrap();
    assert_eq!(read_all(&tmp.path().join("c")), read_all(&tmp.path().join("d")));
}

#[test]
fn cora_import_matches_published_statistics() {
    let bundle = import_planetoid(&data_dir().join("cora"), DEFAULT_SPLIT_SEED).unwrap();
    let g = &bundle.graph;
    assert_eq!((g.num_nodes(), g.feature_dim(), g.num_classes()), (2708, 1433, 7));
    assert_eq!(g.splits().train.len(), 140);
    assert_eq!(g.train_class_histogram(), vec![20; 7]);
    assert_eq!(bundle.provenance["raw_edge_records"], 5429);
    let again = import_planetoid(&data_dir().join("cora"), DEFAULT_SPLIT_SEED).unwrap();
    assert_eq!(again, bundle);

    let tmp = tempfile::tempdir().unwrap();
    save_bundle(&bundle, tmp.path()).unwrap();
    assert_eq!(read_bundle(tmp.path()).unwrap(), bundle);
}

#[test]
fn citeseer_import_matches_published_statistics() {
    let bundle = import_planetoid(&data_dir().join("citeseer"), DEFAULT_SPLIT_SEED).unwrap();
    let g = &bundle.graph;
    assert_eq!((g.num_nodes(), g.feature_dim(), g.num_classes()), (3327, 3703, 6));
    assert_eq!(g.splits().train.len(), 120);
    assert_eq!(import_planetoid(&data_dir().join("citeseer"), DEFAULT_SPLIT_SEED).unwrap(), bundle);
}

#[test]
fn unparseable_raw_file_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("x.content"), "paper1\t1\t0\tA\npaper2\tnot-a-number\n").unwrap();
    fs::write(tmp.path().join("x.cites"), "paper1\tpaper2\n").unwrap();
    let err = import_planetoid(tmp.path(), 0).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains("x.content"), "{err}");
}

#[test]
fn sbm_extremes_give_disjoint_cliques() {
    let g = gen_sbm(&SbmSpec::new(vec![4, 3], 1.0, 0.0, 2, 1)).unwrap().graph;
    let a = g.dense_adjacency();
    for i in 0..7 {
        for j in 0..7 {
            let same = (i < 4) == (j < 4);
            assert_eq!(a[[i, j]], if same && i != j { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(g.num_edges(), 6 + 3);
    assert_eq!(sbm(&[5, 5], 0.4, 0.1, 3, 9), sbm(&[5, 5], 0.4, 0.1, 3, 9));
    assert!(gen_sbm(&SbmSpec::new(vec![3], 1.5, 0.0, 2, 0)).is_err());
}

#[test]
fn sbm_edge_count_is_binomial() {
    let blocks = [30usize, 20, 10];
    let (p_in, p_out) = (0.3, 0.05);
    let within: usize = blocks.iter().map(|b| b * (b - 1) / 2).sum();
    let total = 60 * 59 / 2;
    let between = total - within;
    let mean = p_in * within as f64 + p_out * between as f64;
    let var = p_in * (1.0 - p_in) * within as f64 + p_out * (1.0 - p_out) * between as f64;
    let seeds = 20;
    let counts: Vec<f64> = (0..seeds)
        .map(|s| sbm(&blocks, p_in, p_out, 2, s).num_edges() as f64)
        .collect();
    for &c in &counts {
        assert!((c - mean).abs() <= 3.0 * var.sqrt(), "count {c}, mean {mean}");
    }
    let avg = counts.iter().sum::<f64>() / seeds as f64;
    assert!((avg - mean).abs() <= 3.0 * (var / seeds as f64).sqrt(), "average {avg}, mean {mean}");
}

#[test]
fn condensed_bundle_round_trips() {
    let g = sbm(&[10, 10], 0.4, 0.05, 4, 2);
    let cfg = TgccConfig {
        ratio: 0.3,
        horizon: 2,
        relay_inits: 1,
        inner_steps: 2,
        hidden: 8,
        ..TgccConfig::default()
    };
    let art = run_condense(&g, &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let bundle = CondensedBundle::from_artifacts(&art, Provenance::new());
    save_condensed(&bundle, tmp.path()).unwrap();
    assert!(is_condensed_bundle(tmp.path()));
    let back = load_condensed(tmp.path()).unwrap();
    assert_eq!(back.config_json, art.config_snapshot);
    assert_eq!(TgccConfig::from_json(&back.config_json).unwrap(), cfg);
    assert_eq!(back.trace.len(), art.trace.len());
    assert_eq!(back.synthetic.ys, art.synthetic.ys);
    let adj = back.synthetic.adjacency();
    assert!(tgcc::linalg::max_asymmetry(adj.view()) <= 1e-6);
    // Stored as f32: reloaded values round-trip the f32 image.
    let hash = bench::bundle_hash(&back.synthetic);
    assert_eq!(hash, bench::bundle_hash(&art.synthetic));
    let again = tmp.path().join("again");
    save_condensed(&back, &again).unwrap();
    assert_eq!(bench::bundle_hash(&load_condensed(&again).unwrap().synthetic), hash);
    assert!(!is_condensed_bundle(&tmp.path().join("missing")));

    // A coreset has a fixed adjacency and no encoder.
    let core = bench::coreset_random(&g, 6, 0).unwrap();
    let plain = CondensedBundle {
        synthetic: core.clone(),
        config_json: "{}".into(),
        trace: Vec::new(),
        encoder: None,
        provenance: Provenance::new(),
    };
    let dir = tmp.path().join("core");
    save_condensed(&plain, &dir).unwrap();
    let back = load_condensed(&dir).unwrap();
    assert_eq!(back.synthetic, core);
    assert!(back.encoder.is_none());
}

#[test]
fn checkpoint_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("relay.bin");
    let mut model = init_model(5, 7, 3, 4).unwrap();
    save_checkpoint(&model, &path).unwrap();
    // Weights are stored as f32.
    model.w1.mapv_inplace(|v| v as f32 as f64);
    model.w2.mapv_inplace(|v| v as f32 as f64);
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    save_checkpoint(&back, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), model);
    fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path).unwrap_err().is_data_error());
    assert!(matches!(load_checkpoint(&tmp.path().join("none.bin")), Err(Error::MissingFile(_))));
}

#[test]
fn matrix_header_encodes_dims() {
    let m = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
    let bytes = encode_matrix(&m);
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    assert_eq!(bytes.len(), 24 + 6 * 4);
}

#[test]
fn graph_bundle_new_has_empty_provenance() {
    let g = sbm(&[3, 3], 0.5, 0.1, 2, 0);
    assert!(GraphBundle::new(g).provenance.is_empty());
}
