//! Dataset directory format:
//! `meta.json` (`n_nodes`, `n_feats`, `n_classes`), `features.bin`
//! (N·D little-endian f32, row-major), `labels.bin` (N little-endian i32),
//! `edges.tsv` (`src<TAB>dst` per line, 0-indexed).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

use super::Graph;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct Meta {
    pub n_nodes: usize,
    pub n_feats: usize,
    pub n_classes: usize,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn load_graph(dir: &Path) -> Result<Graph> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read_file(&meta_path)?)
        .map_err(|e| bad(&meta_path, e.to_string()))?;

    let feat_path = dir.join("features.bin");
    let raw = read_file(&feat_path)?;
    let expect = meta.n_nodes * meta.n_feats * 4;
    if raw.len() != expect {
        return Err(bad(
            &feat_path,
            format!("{} bytes, meta implies {expect}", raw.len()),
        ));
    }
    let feats = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let label_path = dir.join("labels.bin");
    let raw = read_file(&label_path)?;
    if raw.len() != meta.n_nodes * 4 {
        return Err(bad(
            &label_path,
            format!("{} bytes, meta implies {}", raw.len(), meta.n_nodes * 4),
        ));
    }
    let mut labels = Vec::with_capacity(meta.n_nodes);
    for c in raw.chunks_exact(4) {
        let y = i32::from_le_bytes(c.try_into().unwrap());
        if y < 0 || y as usize >= meta.n_classes {
            return Err(bad(
                &label_path,
                format!("label {y} outside [0, {})", meta.n_classes),
            ));
        }
        labels.push(y as usize);
    }

    let edge_path = dir.join("edges.tsv");
    let edges = read_edges(&edge_path, meta.n_nodes)?;
    let features = Tensor::new(&[meta.n_nodes, meta.n_feats], feats)?;
    Graph::new(features, labels, meta.n_classes, &edges).map_err(|e| match e {
        Error::Dataset { detail, .. } => bad(dir, detail),
        other => other,
    })
}

fn read_edges(path: &Path, n_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|t| t.trim().parse::<usize>().ok())
                .ok_or_else(|| bad(path, format!("line {}: expected two node ids", lineno + 1)))
        };
        let mut parts = line.split('\t');
        let (u, v) = (parse(parts.next())?, parse(parts.next())?);
        if parts.next().is_some() {
            return Err(bad(path, format!("line {}: extra columns", lineno + 1)));
        }
        if u >= n_nodes || v >= n_nodes {
            return Err(bad(path, format!("line {}: node id out of range", lineno + 1)));
        }
        if u == v {
            return Err(bad(path, format!("line {}: self-loop on {u}", lineno + 1)));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(bad(path, format!("line {}: duplicate edge {u}-{v}", lineno + 1)));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn save_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        n_nodes: g.n_nodes(),
        n_feats: g.n_feats(),
        n_classes: g.n_classes(),
    };
    let p = dir.join("meta.json");
    fs::write(&p, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&p, e))?;

    let p = dir.join("features.bin");
    let bytes: Vec<u8> = g.features().data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;

    let p = dir.join("labels.bin");
    let bytes: Vec<u8> = g.labels().iter().flat_map(|&y| (y as i32).to_le_bytes()).collect();
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;

    let p = dir.join("edges.tsv");
    let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut buf = String::new();
    for &(u, v) in g.edges() {
        buf.push_str(&format!("{u}\t{v}\n"));
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(&p, e))
}

/// Reads a LINQS-style citation dump: `<stem>.content` lines of
/// `id feat... label` and `<stem>.cites` lines of `id id`.
/// Classes are numbered by sorted label name; nodes keep file order.
pub fn import_linqs(src: &Path, stem: &str) -> Result<Graph> {
    let content = src.join(format!("{stem}.content"));
    let f = fs::File::open(&content).map_err(|e| Error::io(&content, e))?;
    let mut ids = HashMap::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&content, e))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if parts.len() < 3 {
            return Err(bad(&content, format!("line {}: too few columns", lineno + 1)));
        }
        ids.insert(parts[0].to_string(), ids.len());
        let feats = parts[1..parts.len() - 1]
            .iter()
            .map(|s| s.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(&content, format!("line {}: bad feature value", lineno + 1)))?;
        rows.push(feats);
        names.push(parts[parts.len() - 1].to_string());
    }
    let classes: BTreeMap<&str, usize> = {
        let mut uniq: Vec<&str> = names.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };
    let labels: Vec<usize> = names.iter().map(|s| classes[s.as_str()]).collect();

    let cites = src.join(format!("{stem}.cites"));
    let f = fs::File::open(&cites).map_err(|e| Error::io(&cites, e))?;
    let mut edges = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&cites, e))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if let [a, b] = parts[..] {
            if let (Some(&u), Some(&v)) = (ids.get(a), ids.get(b)) {
                if u != v {
                    edges.push((u, v));
                }
            }
        }
    }
    let features = Tensor::from_rows(&rows).map_err(|_| bad(&content, "ragged feature rows"))?;
    Graph::new(features, labels, classes.len(), &edges)
}
