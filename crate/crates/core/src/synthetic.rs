//! Seeded synthetic bipartite networks for tests, benchmarks and demos.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::context::BipartiteContext;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Every cell present independently with probability `density`.
pub fn random_context(n_objects: usize, n_attributes: usize, density: f64, seed: u64) -> Result<BipartiteContext> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Config(format!("density {density} outside [0, 1]")));
    }
    let mut rng = seeded(seed);
    let mut edges = Vec::new();
    for u in 0..n_objects as u32 {
        for v in 0..n_attributes as u32 {
            if rng.gen_bool(density) {
                edges.push((u, v));
            }
        }
    }
    BipartiteContext::from_edges(n_objects, n_attributes, edges)
}

/// Exactly `n_edges` distinct cells, uniformly at random.
pub fn random_context_with_edges(
    n_objects: usize,
    n_attributes: usize,
    n_edges: usize,
    seed: u64,
) -> Result<BipartiteContext> {
    let cells = n_objects * n_attributes;
    if n_edges > cells {
        return Err(Error::Config(format!("{n_edges} edges do not fit {cells} cells")));
    }
    let mut rng = seeded(seed);
    let edges: Vec<(u32, u32)> = index::sample(&mut rng, cells, n_edges)
        .into_iter()
        .map(|c| ((c / n_attributes) as u32, (c % n_attributes) as u32))
        .collect();
    BipartiteContext::from_edges(n_objects, n_attributes, edges)
}

/// Exactly `n_edges` edges with no isolated node: a sparse network in the shape of an
/// author-publication list, where most attributes have a single object.
pub fn covering_context(n_objects: usize, n_attributes: usize, n_edges: usize, seed: u64) -> Result<BipartiteContext> {
    if n_edges < n_objects.max(n_attributes) || n_edges > n_objects * n_attributes {
        return Err(Error::Config(format!(
            "{n_edges} edges cannot cover {n_objects} objects and {n_attributes} attributes"
        )));
    }
    let mut rng = seeded(seed);
    let mut attrs: Vec<u32> = (0..n_attributes as u32).collect();
    attrs.shuffle(&mut rng);
    let mut objs: Vec<u32> = (0..n_objects as u32).collect();
    objs.shuffle(&mut rng);
    let mut present = std::collections::HashSet::with_capacity(n_edges);
    // pair the longer side off against the shorter one so both are covered
    let k = n_objects.max(n_attributes);
    for i in 0..k {
        let u = if i < n_objects { objs[i] } else { rng.gen_range(0..n_objects as u32) };
        let v = if i < n_attributes { attrs[i] } else { rng.gen_range(0..n_attributes as u32) };
        present.insert((u, v));
    }
    while present.len() < n_edges {
        let u = rng.gen_range(0..n_objects as u32);
        let v = rng.gen_range(0..n_attributes as u32);
        present.insert((u, v));
    }
    let mut edges: Vec<_> = present.into_iter().collect();
    edges.sort_unstable();
    let objects = (0..n_objects).map(|i| format!("author{i}")).collect();
    let attributes = (0..n_attributes).map(|j| format!("paper{j}")).collect();
    BipartiteContext::new(objects, attributes, edges, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_blocks: usize,
    pub objects_per_block: usize,
    pub attributes_per_block: usize,
    /// Extra random edges as a fraction of the planted edge count.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_blocks: 8,
            objects_per_block: 20,
            attributes_per_block: 3,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedNetwork {
    pub context: BipartiteContext,
    /// `(objects, attributes)` of every planted bi-clique
    pub blocks: Vec<(Vec<u32>, Vec<u32>)>,
    pub noise_edges: Vec<(u32, u32)>,
}

/// Disjoint planted bi-cliques plus uniformly random noise edges outside them.
pub fn planted_bicliques(cfg: &PlantedConfig) -> Result<PlantedNetwork> {
    if cfg.n_blocks == 0 || cfg.objects_per_block == 0 || cfg.attributes_per_block == 0 {
        return Err(Error::Config("planted network needs non-empty blocks".into()));
    }
    let n = cfg.n_blocks * cfg.objects_per_block;
    let m = cfg.n_blocks * cfg.attributes_per_block;
    let mut rng = seeded(cfg.seed);
    let mut objs: Vec<u32> = (0..n as u32).collect();
    let mut attrs: Vec<u32> = (0..m as u32).collect();
    objs.shuffle(&mut rng);
    attrs.shuffle(&mut rng);
    let mut present = std::collections::HashSet::new();
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let mut bo = objs[b * cfg.objects_per_block..(b + 1) * cfg.objects_per_block].to_vec();
        let mut ba = attrs[b * cfg.attributes_per_block..(b + 1) * cfg.attributes_per_block].to_vec();
        bo.sort_unstable();
        ba.sort_unstable();
        for &u in &bo {
            for &v in &ba {
                present.insert((u, v));
            }
        }
        blocks.push((bo, ba));
    }
    let n_noise = (cfg.noise * present.len() as f64).round() as usize;
    if present.len() + n_noise > n * m {
        return Err(Error::Config("too much noise for the grid".into()));
    }
    let mut noise_edges = Vec::with_capacity(n_noise);
    while noise_edges.len() < n_noise {
        let e = (rng.gen_range(0..n as u32), rng.gen_range(0..m as u32));
        if present.insert(e) {
            noise_edges.push(e);
        }
    }
    noise_edges.sort_unstable();
    let edges: Vec<_> = present.into_iter().collect();
    Ok(PlantedNetwork {
        context: BipartiteContext::from_edges(n, m, edges)?,
        blocks,
        noise_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_context_has_exact_shape() {
        let c = covering_context(30, 200, 260, 1).unwrap();
        assert_eq!((c.n_objects(), c.n_attributes(), c.n_edges()), (30, 200, 260));
        let stats = crate::context::context_stats(&c);
        assert!(!stats.object_degree_histogram.contains_key(&0));
        assert!(!stats.attribute_degree_histogram.contains_key(&0));
    }

    #[test]
    fn planted_blocks_are_complete_and_noise_counted() {
        let cfg = PlantedConfig::default();
        let p = planted_bicliques(&cfg).unwrap();
        assert_eq!(p.blocks.len(), 8);
        for (o, a) in &p.blocks {
            for &u in o {
                for &v in a {
                    assert!(p.context.contains(u, v));
                }
            }
        }
        let planted = 8 * 20 * 3;
        assert_eq!(p.noise_edges.len(), (0.05 * planted as f64).round() as usize);
        assert_eq!(p.context.n_edges(), planted + p.noise_edges.len());
        assert_eq!(planted_bicliques(&cfg).unwrap().context, p.context);
    }

    #[test]
    fn random_contexts_are_seeded() {
        let a = random_context(10, 12, 0.3, 4).unwrap();
        assert_eq!(a, random_context(10, 12, 0.3, 4).unwrap());
        let b = random_context_with_edges(10, 12, 40, 4).unwrap();
        assert_eq!(b.n_edges(), 40);
    }
}
