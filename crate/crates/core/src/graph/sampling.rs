use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;

use super::CountyGraph;
use crate::error::{Error, Result};

/// One hop of message passing. `src_nodes[..num_dst]` are the destination
/// nodes; the neighbors of destination `d` are
/// `src_nodes[nbr[offsets[d]..offsets[d + 1]]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayer {
    pub num_dst: usize,
    pub src_nodes: Vec<usize>,
    pub offsets: Vec<usize>,
    pub nbr: Vec<usize>,
}

impl BlockLayer {
    pub fn neighbors_of(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        self.nbr[self.offsets[d]..self.offsets[d + 1]]
            .iter()
            .map(|&l| self.src_nodes[l])
    }
}

/// Sampled computation graph for a set of seed nodes. `layers[0]` consumes the
/// input embeddings of `input_nodes()`; the last layer produces the seeds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledBlock {
    pub seeds: Vec<usize>,
    pub layers: Vec<BlockLayer>,
}

impl SampledBlock {
    pub fn input_nodes(&self) -> &[usize] {
        self.layers.first().map_or(&self.seeds, |l| &l.src_nodes)
    }
}

/// Keeps each neighbor of `node` with probability `1 - edge_dropout`, then
/// draws `min(fanout, kept)` of the survivors without replacement. Survivors
/// keep adjacency order.
pub fn sample_neighbors<R: Rng>(
    g: &CountyGraph,
    node: usize,
    fanout: usize,
    edge_dropout: f64,
    rng: &mut R,
) -> Vec<usize> {
    let all = g.neighbors(node);
    let kept: Vec<usize> = if edge_dropout > 0.0 {
        all.iter().copied().filter(|_| rng.gen::<f64>() >= edge_dropout).collect()
    } else {
        all.to_vec()
    };
    if kept.len() <= fanout {
        return kept;
    }
    let mut pick = index::sample(rng, kept.len(), fanout).into_vec();
    pick.sort_unstable();
    pick.into_iter().map(|i| kept[i]).collect()
}

/// Samples `layers` hops outward from `seeds`. Duplicate seeds are merged.
pub fn sample_block<R: Rng>(
    g: &CountyGraph,
    seeds: &[usize],
    fanout: usize,
    layers: usize,
    edge_dropout: f64,
    rng: &mut R,
) -> Result<SampledBlock> {
    if seeds.is_empty() {
        return Err(Error::Empty("sample_block: no seed nodes".into()));
    }
    if !(0.0..1.0).contains(&edge_dropout) {
        return Err(Error::InvalidArgument(format!("edge dropout {edge_dropout} outside [0, 1)")));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= g.len()) {
        return Err(Error::InvalidArgument(format!("seed index {bad} out of range")));
    }
    let mut uniq = Vec::with_capacity(seeds.len());
    let mut seen = HashMap::new();
    for &s in seeds {
        if seen.insert(s, uniq.len()).is_none() {
            uniq.push(s);
        }
    }
    let mut dst = uniq.clone();
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut src = dst.clone();
        let mut local: HashMap<usize, usize> = src.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut offsets = Vec::with_capacity(dst.len() + 1);
        let mut nbr = Vec::new();
        offsets.push(0);
        for &d in &dst {
            for n in sample_neighbors(g, d, fanout, edge_dropout, rng) {
                let l = *local.entry(n).or_insert_with(|| {
                    src.push(n);
                    src.len() - 1
                });
                nbr.push(l);
            }
            offsets.push(nbr.len());
        }
        out.push(BlockLayer {
            num_dst: dst.len(),
            src_nodes: src.clone(),
            offsets,
            nbr,
        });
        dst = src;
    }
    out.reverse();
    Ok(SampledBlock { seeds: uniq, layers: out })
}
