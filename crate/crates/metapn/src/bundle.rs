//! On-disk graph bundles.
//!
//! A bundle is a directory with four files:
//!
//! - `meta.json`: `{"n": .., "f": .., "c": .., "name": ..}` (extra keys are kept)
//! - `edges.tsv`: one undirected edge per line, two tab-separated node ids
//! - `labels.tsv`: one class id per line, line `i` belongs to node `i`
//! - `features.bin`: `n × f` little-endian `f64`, row-major, no header

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use metapn_core::split::{sample_kshot_split, SplitSpec};
use metapn_core::{CsrMatrix, DenseMatrix};
use serde::{Deserialize, Serialize};

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const FEATURES_FILE: &str = "features.bin";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("invalid meta.json: {0}")]
    Meta(#[from] serde_json::Error),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: &'static str,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label out of range: node {node} has label {label}, c = {classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },

    #[error("feature payload size: expected {expected} bytes, found {actual}")]
    FeaturePayloadSize { expected: usize, actual: usize },

    #[error("edge ({u}, {v}) is a self-loop")]
    SelfLoop { u: usize, v: usize },

    #[error("edge ({u}, {v}) references a node outside 0..{n}")]
    EdgeOutOfRange { u: usize, v: usize, n: usize },

    #[error(transparent)]
    Core(#[from] metapn_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub f: usize,
    pub c: usize,
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub meta: BundleMeta,
    pub edges: Vec<(usize, usize)>,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl GraphBundle {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn f(&self) -> usize {
        self.meta.f
    }

    pub fn c(&self) -> usize {
        self.meta.c
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    /// Checks every structural invariant of the bundle.
    pub fn validate(&self) -> Result<(), BundleError> {
        let BundleMeta { n, f, c, .. } = self.meta;
        if self.labels.len() != n {
            return Err(BundleError::DimensionMismatch(format!(
                "{} labels for n = {n}",
                self.labels.len()
            )));
        }
        if self.features.shape() != (n, f) {
            return Err(BundleError::DimensionMismatch(format!(
                "features are {}×{}, meta says {n}×{f}",
                self.features.n_rows(),
                self.features.n_cols()
            )));
        }
        if let Some((node, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(BundleError::LabelOutOfRange {
                node,
                label,
                classes: c,
            });
        }
        for &(u, v) in &self.edges {
            if u >= n || v >= n {
                return Err(BundleError::EdgeOutOfRange { u, v, n });
            }
            if u == v {
                return Err(BundleError::SelfLoop { u, v });
            }
        }
        Ok(())
    }

    /// Symmetric binary adjacency of the edge list.
    pub fn adjacency(&self) -> Result<CsrMatrix, BundleError> {
        Ok(CsrMatrix::from_edge_list(self.n(), &self.edges)?)
    }

    pub fn sample_split(
        &self,
        shots: usize,
        val_per_class: usize,
        seed: u64,
    ) -> Result<SplitSpec, BundleError> {
        Ok(sample_kshot_split(
            &self.labels,
            self.c(),
            shots,
            val_per_class,
            seed,
        )?)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            BundleError::MissingFile(path.to_path_buf())
        } else {
            BundleError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn parse_usize(file: &'static str, line: usize, token: Option<&str>) -> Result<usize, BundleError> {
    let token = token.ok_or_else(|| BundleError::Parse {
        file,
        line,
        message: "missing field".into(),
    })?;
    token.trim().parse().map_err(|e| BundleError::Parse {
        file,
        line,
        message: format!("{token:?}: {e}"),
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, BundleError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle, BundleError> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: BundleMeta =
        serde_json::from_slice(&fs::read(&meta_path).map_err(io_err(&meta_path))?)?;

    let edges_path = dir.join(EDGES_FILE);
    let mut edges = Vec::new();
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let u = parse_usize(EDGES_FILE, i + 1, parts.next())?;
        let v = parse_usize(EDGES_FILE, i + 1, parts.next())?;
        if parts.next().is_some() {
            return Err(BundleError::Parse {
                file: EDGES_FILE,
                line: i + 1,
                message: "expected exactly two columns".into(),
            });
        }
        edges.push((u, v));
    }

    let labels_path = dir.join(LABELS_FILE);
    let labels = read_lines(&labels_path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_usize(LABELS_FILE, i + 1, Some(l)))
        .collect::<Result<Vec<_>, _>>()?;

    let features_path = dir.join(FEATURES_FILE);
    let raw = fs::read(&features_path).map_err(io_err(&features_path))?;
    let expected = meta.n * meta.f * 8;
    if raw.len() != expected {
        return Err(BundleError::FeaturePayloadSize {
            expected,
            actual: raw.len(),
        });
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let features = DenseMatrix::from_vec(meta.n, meta.f, values)?;

    let bundle = GraphBundle {
        meta,
        edges,
        features,
        labels,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes a bundle directory (created if needed), overwriting existing files.
pub fn store_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<(), BundleError> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let write = |name: &str, bytes: &[u8]| -> Result<(), BundleError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))
    };
    write(META_FILE, &serde_json::to_vec_pretty(&bundle.meta)?)?;

    let edges_path = dir.join(EDGES_FILE);
    let mut out = BufWriter::new(fs::File::create(&edges_path).map_err(io_err(&edges_path))?);
    for (u, v) in &bundle.edges {
        writeln!(out, "{u}\t{v}").map_err(io_err(&edges_path))?;
    }
    out.flush().map_err(io_err(&edges_path))?;

    let labels: String = bundle.labels.iter().map(|l| format!("{l}\n")).collect();
    write(LABELS_FILE, labels.as_bytes())?;

    let payload: Vec<u8> = bundle
        .features
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write(FEATURES_FILE, &payload)
}
