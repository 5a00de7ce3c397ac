use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cellgraph::featureio::read_features;
use cellgraph::graphbuilder::{read_graph_file, write_graph_file, AugmentParams, CellGraph, GraphFormat};
use cellgraph::trainer::image_graph;

use crate::manifest::sha256_bytes;

/// Content-addressed store of built graphs. The key covers the feature
/// table bytes, the augmentation parameters, the kept feature width and the
/// node-selection seed.
pub struct GraphCache {
    dir: Option<PathBuf>,
}

pub fn cache_key(table: &[u8], params: &AugmentParams, dim: usize, seed: u64) -> String {
    let mut bytes = table.to_vec();
    bytes.extend_from_slice(
        format!(
            "\nalpha={} beta={} d={} m={} dim={dim} seed={seed}",
            params.alpha, params.beta, params.d, params.m
        )
        .as_bytes(),
    );
    sha256_bytes(&bytes)
}

impl GraphCache {
    /// `None` disables caching.
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).with_context(|| format!("creating cache directory {}", d.display()))?;
        }
        Ok(GraphCache {
            dir: dir.map(Path::to_path_buf),
        })
    }

    /// Graph of the feature table at `path`, loaded from the cache when an
    /// entry exists and built (then stored) otherwise.
    pub fn graph(&self, path: &Path, params: &AugmentParams, dim: Option<usize>, seed: u64) -> Result<CellGraph> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let set = read_features(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
        let dim = dim.unwrap_or(set.dim);
        let entry = self
            .dir
            .as_ref()
            .map(|d| d.join(format!("{}.cgph", cache_key(&bytes, params, dim, seed))));
        if let Some(entry) = entry.as_ref().filter(|e| e.exists()) {
            log::debug!("cache hit for {}", path.display());
            return read_graph_file(entry).with_context(|| format!("reading cached graph {}", entry.display()));
        }
        let graph = image_graph(&set, params, dim, seed).with_context(|| format!("building graph for {}", path.display()))?;
        if let Some(entry) = entry {
            // Write-then-rename keeps concurrent builders from reading a
            // partial entry.
            let tmp = entry.with_extension(format!("tmp{}", std::process::id()));
            write_graph_file(&graph, GraphFormat::Binary, &tmp)?;
            fs::rename(&tmp, &entry)?;
        }
        Ok(graph)
    }
}
