//! Disk-backed graph store: append-only edge log plus a node registry.
//!
//! Layout inside the store directory:
//! - `edges.log`: one canonical edge record per line, append-only
//! - `nodes.idx`: `name \t type` per line; the line number is the dense id
//! - `meta.json`: version and counters, rewritten on flush/close
//!
//! Single writer; reads of already-acknowledged edges are safe. Reopening a
//! store replays the log into memory and must reproduce the same sequence.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, MemGraph, NodeId};

const STORE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    version: u32,
    n_nodes: usize,
    n_edges: usize,
}

pub struct DiskStore {
    dir: PathBuf,
    graph: MemGraph,
    edge_log: BufWriter<File>,
    node_idx: BufWriter<File>,
}

impl DiskStore {
    /// Opens (or creates) a store directory, replaying any existing log.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let edges_path = dir.join("edges.log");
        let nodes_path = dir.join("nodes.idx");
        let meta_path = dir.join("meta.json");

        let mut graph = MemGraph::new();
        if nodes_path.exists() {
            let reader = BufReader::new(File::open(&nodes_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let (name, ty) = line.split_once('\t').ok_or(Error::FormatError {
                    line: i + 1,
                    msg: "bad nodes.idx line".into(),
                })?;
                graph.intern_node(name, ty)?;
            }
        }
        if edges_path.exists() {
            let reader = BufReader::new(File::open(&edges_path)?);
            for (i, line) in reader.lines().enumerate() {
                let rec = EdgeRecord::parse(&line?, i + 1)?;
                graph.append(&rec)?;
            }
        }
        if meta_path.exists() {
            let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
            if meta.version != STORE_VERSION {
                return Err(Error::InvalidModel(format!(
                    "store version {} unsupported",
                    meta.version
                )));
            }
        }

        let edge_log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&edges_path)?);
        let node_idx = BufWriter::new(OpenOptions::new().create(true).append(true).open(&nodes_path)?);
        Ok(DiskStore {
            dir: dir.to_path_buf(),
            graph,
            edge_log,
            node_idx,
        })
    }

    pub fn graph(&self) -> &MemGraph {
        &self.graph
    }

    /// Durably appends one edge record, registering any new endpoints.
    pub fn append_edge(&mut self, rec: &EdgeRecord) -> Result<usize> {
        let before = self.graph.node_count();
        let edge_id = self.graph.append(rec)?;
        // persist any nodes interned by this record
        for v in before..self.graph.node_count() {
            writeln!(
                self.node_idx,
                "{}\t{}",
                self.graph.node_name(v as NodeId),
                self.graph.node_type(v as NodeId)
            )?;
        }
        writeln!(self.edge_log, "{}", rec.to_line())?;
        Ok(edge_id)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.edge_log.flush()?;
        self.node_idx.flush()?;
        let meta = Meta {
            version: STORE_VERSION,
            n_nodes: self.graph.node_count(),
            n_edges: self.graph.edge_count(),
        };
        fs::write(self.dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

impl Drop for DiskStore {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn replay_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut records = Vec::new();
        for ts in 0..100 {
            let s = rng.gen_range(0..20);
            let d = rng.gen_range(0..20);
            records.push(EdgeRecord {
                src: format!("n{s}"),
                src_type: "t".into(),
                dst: format!("n{d}"),
                dst_type: "t".into(),
                edge_type: format!("e{}", rng.gen_range(0..3)),
                timestamp: ts,
            });
        }
        {
            let mut store = DiskStore::open(tmp.path()).unwrap();
            for r in &records {
                store.append_edge(r).unwrap();
            }
            store.flush().unwrap();
        }
        let store = DiskStore::open(tmp.path()).unwrap();
        assert_eq!(store.graph().edge_count(), 100);
        let replayed: Vec<EdgeRecord> = (0..100).map(|i| store.graph().record_for(i)).collect();
        assert_eq!(replayed, records);
    }

    #[test]
    fn reopen_preserves_dense_ids() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let mut store = DiskStore::open(tmp.path()).unwrap();
            store
                .append_edge(&EdgeRecord {
                    src: "alpha".into(),
                    src_type: "process".into(),
                    dst: "beta".into(),
                    dst_type: "file".into(),
                    edge_type: "write".into(),
                    timestamp: 1,
                })
                .unwrap();
        }
        let store = DiskStore::open(tmp.path()).unwrap();
        assert_eq!(store.graph().lookup("alpha"), Some(0));
        assert_eq!(store.graph().lookup("beta"), Some(1));
        assert_eq!(store.graph().node_type(1), "file");
    }

    #[test]
    fn type_conflict_on_append() {
        let tmp = tempfile::tempdir().unwrap();
        let mut store = DiskStore::open(tmp.path()).unwrap();
        store
            .append_edge(&EdgeRecord {
                src: "a".into(),
                src_type: "process".into(),
                dst: "b".into(),
                dst_type: "file".into(),
                edge_type: "write".into(),
                timestamp: 1,
            })
            .unwrap();
        let err = store
            .append_edge(&EdgeRecord {
                src: "b".into(),
                src_type: "socket".into(),
                dst: "a".into(),
                dst_type: "process".into(),
                edge_type: "read".into(),
                timestamp: 2,
            })
            .unwrap_err();
        assert!(matches!(err, Error::TypeConflict { .. }));
    }
}
