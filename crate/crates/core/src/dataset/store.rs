//! On-disk layout:
//!
//! ```text
//! manifest.json        shapes, hyperparameters, byte sizes and sha256 of every file
//! edges.bin            u32 LE (src, dst) pairs
//! edge_feat.bin        f32 LE [num_edges × c]
//! features_<i>.bin     f32 LE [t × n × 1] for the i-th injection time
//! labels.json          per time, per node: 1 detected, 0 undetected, -1 unlabeled
//! masks.bin            train, val, test bitsets over [num_times × n], LSB first,
//!                      each padded to a whole byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitMatrix;
use crate::graphgen::SpatialGraph;
use crate::waveform::FeatureTensor;

use super::{DatasetError, DatasetMeta, Label, Masks, Sample, SeuDataset};

const FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FileEntry {
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphSection {
    num_nodes: usize,
    num_edges: usize,
    edge_dim: usize,
    max_distance: usize,
    undirected: bool,
    node_names: Vec<String>,
    distances: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    meta: DatasetMeta,
    injection_times: Vec<usize>,
    /// `[t, n, m]`
    feature_shape: [usize; 3],
    graph: GraphSection,
    files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsDoc {
    injection_times: Vec<usize>,
    labels: Vec<Vec<i8>>,
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f32_from(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn pack_bits(m: &BitMatrix) -> Vec<u8> {
    let mut out = vec![0u8; (m.rows() * m.cols()).div_ceil(8)];
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if m.get(r, c) {
                let k = r * m.cols() + c;
                out[k / 8] |= 1 << (k % 8);
            }
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], rows: usize, cols: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(rows, cols);
    for k in 0..rows * cols {
        if bytes[k / 8] >> (k % 8) & 1 == 1 {
            m.set(k / cols, k % cols, true);
        }
    }
    m
}

fn label_code(l: Label) -> i8 {
    match l {
        Label::Detected => 1,
        Label::Undetected => 0,
        Label::Unlabeled => -1,
    }
}

pub fn save(ds: &SeuDataset, dir: &Path) -> Result<(), DatasetError> {
    let io = |e: std::io::Error| DatasetError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push((
        "edges.bin".into(),
        ds.graph
            .edges
            .iter()
            .flat_map(|&(s, d)| s.to_le_bytes().into_iter().chain(d.to_le_bytes()))
            .collect(),
    ));
    files.push(("edge_feat.bin".into(), f32_bytes(&ds.graph.edge_features)));
    for (i, s) in ds.samples.iter().enumerate() {
        files.push((format!("features_{i}.bin"), f32_bytes(&s.x.data)));
    }
    let labels = LabelsDoc {
        injection_times: ds.injection_times(),
        labels: ds
            .samples
            .iter()
            .map(|s| s.labels.iter().map(|&l| label_code(l)).collect())
            .collect(),
    };
    files.push(("labels.json".into(), serde_json::to_vec(&labels).expect("labels serialize")));
    let mut masks = pack_bits(&ds.masks.train);
    masks.extend(pack_bits(&ds.masks.val));
    masks.extend(pack_bits(&ds.masks.test));
    files.push(("masks.bin".into(), masks));

    let mut entries = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes).map_err(io)?;
        entries.insert(
            name.clone(),
            FileEntry {
                bytes: bytes.len(),
                sha256: hex::encode(Sha256::digest(bytes)),
            },
        );
    }
    let t = ds.meta.time_win_size;
    let manifest = Manifest {
        format: FORMAT,
        meta: ds.meta.clone(),
        injection_times: ds.injection_times(),
        feature_shape: ds.samples.first().map_or([t, ds.num_nodes(), 1], |s| s.x.shape()),
        graph: GraphSection {
            num_nodes: ds.graph.num_nodes,
            num_edges: ds.graph.num_edges(),
            edge_dim: ds.graph.edge_dim(),
            max_distance: ds.graph.max_distance,
            undirected: ds.graph.undirected,
            node_names: ds.graph.node_names.clone(),
            distances: ds.graph.distances.clone(),
        },
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json).map_err(io)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<SeuDataset, DatasetError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| DatasetError::Io(format!("{}: {e}", p.display())))
    };
    let manifest: Manifest =
        serde_json::from_slice(&read("manifest.json")?).map_err(|e| DatasetError::Format(format!("manifest.json: {e}")))?;
    if manifest.format != FORMAT {
        return Err(DatasetError::Format(format!("unsupported format version {}", manifest.format)));
    }
    let g = &manifest.graph;
    let [t, n, m] = manifest.feature_shape;
    let num_times = manifest.injection_times.len();
    if n != g.num_nodes || m != 1 || g.node_names.len() != n || g.distances.len() != g.num_edges {
        return Err(DatasetError::Format("manifest shapes are inconsistent".into()));
    }

    let mut expected: BTreeMap<String, Option<usize>> = BTreeMap::new();
    expected.insert("edges.bin".into(), Some(8 * g.num_edges));
    expected.insert("edge_feat.bin".into(), Some(4 * g.num_edges * g.edge_dim));
    for i in 0..num_times {
        expected.insert(format!("features_{i}.bin"), Some(4 * t * n));
    }
    expected.insert("labels.json".into(), None);
    expected.insert("masks.bin".into(), Some(3 * (num_times * n).div_ceil(8)));

    let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (name, size) in expected {
        let entry = manifest
            .files
            .get(&name)
            .ok_or_else(|| DatasetError::Format(format!("manifest does not list {name}")))?;
        if let Some(size) = size {
            if entry.bytes != size {
                return Err(DatasetError::ManifestMismatch {
                    file: name,
                    expected: size,
                    actual: entry.bytes,
                });
            }
        }
        let bytes = read(&name)?;
        if bytes.len() != entry.bytes {
            return Err(DatasetError::ManifestMismatch {
                file: name,
                expected: entry.bytes,
                actual: bytes.len(),
            });
        }
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(DatasetError::IntegrityMismatch(name));
        }
        blobs.insert(name, bytes);
    }

    let edges = blobs["edges.bin"]
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();
    let graph = SpatialGraph {
        num_nodes: n,
        edges,
        edge_features: f32_from(&blobs["edge_feat.bin"]),
        distances: g.distances.clone(),
        max_distance: g.max_distance,
        node_names: g.node_names.clone(),
        undirected: g.undirected,
    };
    if graph.edge_dim() != g.edge_dim {
        return Err(DatasetError::Format("edge width disagrees with max_distance".into()));
    }

    let labels: LabelsDoc =
        serde_json::from_slice(&blobs["labels.json"]).map_err(|e| DatasetError::Format(format!("labels.json: {e}")))?;
    if labels.injection_times != manifest.injection_times || labels.labels.len() != num_times {
        return Err(DatasetError::Format("labels.json disagrees with the manifest".into()));
    }
    let mut samples = Vec::with_capacity(num_times);
    for (i, (&t_seu, row)) in manifest.injection_times.iter().zip(&labels.labels).enumerate() {
        if row.len() != n {
            return Err(DatasetError::Format(format!("labels row {i} has {} entries", row.len())));
        }
        let row = row
            .iter()
            .map(|&v| match v {
                1 => Ok(Label::Detected),
                0 => Ok(Label::Undetected),
                -1 => Ok(Label::Unlabeled),
                other => Err(DatasetError::Format(format!("label code {other}"))),
            })
            .collect::<Result<_, _>>()?;
        samples.push(Sample {
            t_seu,
            x: FeatureTensor {
                t_seu,
                time_win_size: t,
                num_nodes: n,
                data: f32_from(&blobs[&format!("features_{i}.bin")]),
            },
            labels: row,
        });
    }

    let mb = &blobs["masks.bin"];
    let stride = (num_times * n).div_ceil(8);
    let masks = Masks {
        train: unpack_bits(&mb[..stride], num_times, n),
        val: unpack_bits(&mb[stride..2 * stride], num_times, n),
        test: unpack_bits(&mb[2 * stride..], num_times, n),
    };
    let ds = SeuDataset {
        graph,
        samples,
        masks,
        meta: manifest.meta,
    };
    if !ds.masks_valid() {
        return Err(DatasetError::Format("masks overlap or select unlabeled cells".into()));
    }
    Ok(ds)
}
