//! County adjacency graph, neighbor sampling and GraphSAGE layers.

mod sage;
mod sampling;

pub use sage::{gnn_forward, Aggregator, GnnConfig, SageActivation, SageLayer, SageStack};
pub use sampling::{sample_block, sample_neighbors, BlockLayer, SampledBlock};

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Undirected county graph without self-loops. Neighbor lists are sorted by
/// county id, so iteration order does not depend on storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct CountyGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    adj: Vec<Vec<usize>>,
}

impl CountyGraph {
    /// Builds a graph over `ids` from `edges`. Edges are symmetrized,
    /// duplicates merged and self-loops dropped.
    pub fn from_edges<S: AsRef<str>>(ids: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut g = CountyGraph::with_nodes(ids.iter().map(|s| s.as_ref().to_string()).collect())?;
        for (a, b) in edges {
            let i = g.index_of(a.as_ref())?;
            let j = g.index_of(b.as_ref())?;
            g.link(i, j);
        }
        g.finish();
        Ok(g)
    }

    fn with_nodes(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate county id `{id}`")));
            }
        }
        let adj = vec![Vec::new(); ids.len()];
        Ok(CountyGraph { ids, index, adj })
    }

    fn link(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i].push(j);
            self.adj[j].push(i);
        }
    }

    fn finish(&mut self) {
        let ids = &self.ids;
        for list in &mut self.adj {
            list.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
            list.dedup();
        }
    }

    /// Parses the tab-separated edge list. With `known` the node set is fixed
    /// to those ids (in that order) and any other id is an error; without it
    /// nodes are created in order of first appearance. A line with a single
    /// id declares an isolated node.
    pub fn parse(text: &str, known: Option<&[String]>, origin: &Path) -> Result<Self> {
        let mut g = match known {
            Some(ids) => CountyGraph::with_nodes(ids.to_vec())?,
            None => CountyGraph::with_nodes(Vec::new())?,
        };
        let mut seen_line = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(['\t', ',']).map(str::trim).filter(|s| !s.is_empty()).collect();
            if !seen_line && fields.iter().all(|f| f.chars().any(|c| c.is_ascii_alphabetic()) && f.contains('_')) {
                // header row such as `county_a	county_b`
                seen_line = true;
                continue;
            }
            seen_line = true;
            if fields.len() > 2 {
                return Err(Error::parse(origin, lineno + 1, format!("expected 1 or 2 fields, got {}", fields.len())));
            }
            let mut idx = [0usize; 2];
            for (k, f) in fields.iter().enumerate() {
                idx[k] = match (known, g.index.get(*f)) {
                    (_, Some(&i)) => i,
                    (Some(_), None) => return Err(Error::UnknownNode(f.to_string())),
                    (None, None) => {
                        g.ids.push(f.to_string());
                        g.index.insert(f.to_string(), g.ids.len() - 1);
                        g.adj.push(Vec::new());
                        g.ids.len() - 1
                    }
                };
            }
            if fields.len() == 2 {
                g.link(idx[0], idx[1]);
            }
        }
        if g.ids.is_empty() {
            return Err(Error::Empty(format!("adjacency file {} has no nodes", origin.display())));
        }
        g.finish();
        Ok(g)
    }

    pub fn load(path: &Path, known: Option<&[String]>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            return Err(Error::Empty(format!("adjacency file {}", path.display())));
        }
        CountyGraph::parse(&text, known, path)
    }

    /// Tab-separated edge list: every node on its own line in storage order,
    /// then each undirected edge once.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::from("# county_a\tcounty_b\n");
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        for i in 0..self.len() {
            for &j in &self.adj[i] {
                if i < j {
                    out.push_str(&format!("{}\t{}\n", self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }

    /// Rows × cols 4-neighbor lattice with ids `prefix` + zero-padded index.
    pub fn grid(rows: usize, cols: usize, prefix: &str) -> Self {
        let ids: Vec<String> = (0..rows * cols).map(|i| format!("{prefix}{i:05}")).collect();
        let mut g = CountyGraph::with_nodes(ids).expect("grid ids are unique");
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    g.link(i, i + 1);
                }
                if r + 1 < rows {
                    g.link(i, i + cols);
                }
            }
        }
        g.finish();
        g
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| {
            self.adj[i]
                .iter()
                .all(|&j| j != i && self.adj[j].contains(&i))
        })
    }
}
