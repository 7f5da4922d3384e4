//! Dataset files: nodes as JSON Lines, edges as CSV with a
//! `src,dst,relation` header.
//!
//! A node line is `{"id": .., "label": "human"|"bot", "content": [..]}`
//! plus either `"age_norm"` directly or a raw `"created_at"` timestamp.
//! When timestamps are present they are min-max normalized over the file,
//! oldest account mapping to age 1.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use otcloak_core::graph::{GraphBuilder, Label, NodeRecord, RelationTag};
use otcloak_core::{DirectedSocialGraph, NodeId};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct NodeLine {
    id: u64,
    label: Label,
    #[serde(default)]
    age_norm: Option<f64>,
    #[serde(default)]
    created_at: Option<f64>,
    #[serde(default)]
    content: Vec<f64>,
}

pub fn load_dataset(node_path: &Path, edge_path: &Path) -> Result<DirectedSocialGraph> {
    let node_file = std::fs::File::open(node_path)?;
    let mut lines: Vec<(usize, NodeLine)> = Vec::new();
    for (idx, line) in BufReader::new(node_file).lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: NodeLine = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if parsed.age_norm.is_none() && parsed.created_at.is_none() {
            return Err(Error::Parse {
                line: line_no,
                message: "node needs either age_norm or created_at".into(),
            });
        }
        lines.push((line_no, parsed));
    }

    // Min-max normalize raw timestamps: newest account -> age 0.
    let stamps: Vec<f64> = lines.iter().filter_map(|(_, n)| n.created_at).collect();
    let (ts_min, ts_max) = stamps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });

    let mut gb = GraphBuilder::new();
    for (line_no, node) in &lines {
        let age = match (node.age_norm, node.created_at) {
            (Some(a), _) => a,
            (None, Some(ts)) => {
                if ts_max > ts_min {
                    (ts_max - ts) / (ts_max - ts_min)
                } else {
                    0.0
                }
            }
            (None, None) => unreachable!("checked during parsing"),
        };
        gb.add_node(
            NodeId(node.id),
            NodeRecord::new(node.label, age, node.content.clone()),
        )
        .map_err(|e| Error::Parse {
            line: *line_no,
            message: e.to_string(),
        })?;
    }

    let known: std::collections::BTreeSet<u64> = lines.iter().map(|(_, n)| n.id).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(edge_path)
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
    for (idx, record) in reader.records().enumerate() {
        let line_no = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |k: usize, name: &str| -> Result<&str> {
            record.get(k).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("missing column {name}"),
            })
        };
        let src: u64 = field(0, "src")?.trim().parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad src: {e}"),
        })?;
        let dst: u64 = field(1, "dst")?.trim().parse().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad dst: {e}"),
        })?;
        let relation: RelationTag =
            field(2, "relation")?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad relation: {e}"),
                })?;
        for endpoint in [src, dst] {
            if !known.contains(&endpoint) {
                return Err(Error::DanglingEdge {
                    line: line_no,
                    node: NodeId(endpoint),
                });
            }
        }
        gb.add_edge(NodeId(src), NodeId(dst), relation)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
    }
    Ok(gb.build()?)
}

pub fn save_dataset(g: &DirectedSocialGraph, node_path: &Path, edge_path: &Path) -> Result<()> {
    let mut nodes = std::fs::File::create(node_path)?;
    for (id, rec) in g.nodes() {
        let line = serde_json::json!({
            "id": id,
            "label": rec.label,
            "age_norm": rec.age_norm,
            "content": rec.content,
        });
        writeln!(nodes, "{line}")?;
    }
    let mut edges = std::fs::File::create(edge_path)?;
    writeln!(edges, "src,dst,relation")?;
    for v in g.node_ids() {
        for &(dst, relation) in g.out_edges(v) {
            writeln!(edges, "{},{},{}", v.0, dst.0, relation)?;
        }
    }
    Ok(())
}
