//! Reference predictors: common-neighbour counts and an alternating-least-squares factorisation
//! of the incidence matrix.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::BipartiteContext;
use crate::error::{Error, Result};
use crate::rng::seeded;

fn check_object(ctx: &BipartiteContext, u: u32) -> Result<()> {
    if u as usize >= ctx.n_objects() {
        return Err(Error::OutOfRange {
            kind: "object",
            id: u as usize,
            size: ctx.n_objects(),
        });
    }
    Ok(())
}

fn check_attribute(ctx: &BipartiteContext, v: u32) -> Result<()> {
    if v as usize >= ctx.n_attributes() {
        return Err(Error::OutOfRange {
            kind: "attribute",
            id: v as usize,
            size: ctx.n_attributes(),
        });
    }
    Ok(())
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Number of attributes shared by two objects.
pub fn common_neighbors_oo(ctx: &BipartiteContext, u1: u32, u2: u32) -> Result<usize> {
    check_object(ctx, u1)?;
    check_object(ctx, u2)?;
    let a: Vec<u32> = ctx.attributes_of(u1).collect();
    let b: Vec<u32> = ctx.attributes_of(u2).collect();
    Ok(sorted_intersection_len(&a, &b))
}

/// Neighbourhood counts precomputed once per network, for scoring many candidates.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    /// attributes of each object, ascending
    attrs: Vec<Vec<u32>>,
    /// objects of each attribute, ascending
    objs: Vec<Vec<u32>>,
    /// objects sharing at least one attribute with each object, ascending, self excluded
    coauthors: Vec<Vec<u32>>,
}

impl NeighborIndex {
    pub fn new(ctx: &BipartiteContext) -> Self {
        let attrs: Vec<Vec<u32>> = (0..ctx.n_objects() as u32).map(|u| ctx.attributes_of(u).collect()).collect();
        let objs = ctx.attribute_columns();
        let coauthors = (0..ctx.n_objects())
            .map(|u| {
                let mut c: Vec<u32> = attrs[u]
                    .iter()
                    .flat_map(|&v| objs[v as usize].iter().copied())
                    .filter(|&w| w as usize != u)
                    .collect();
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        NeighborIndex { attrs, objs, coauthors }
    }

    /// Attributes shared by every member of the group.
    pub fn shared_attributes(&self, group: &[u32]) -> usize {
        match group {
            [] => 0,
            [u] => self.attrs[*u as usize].len(),
            [first, rest @ ..] => {
                let mut acc = self.attrs[*first as usize].clone();
                for &u in rest {
                    let other = &self.attrs[u as usize];
                    acc.retain(|v| other.binary_search(v).is_ok());
                }
                acc.len()
            }
        }
    }

    /// Objects linked to every member of the group through some attribute, i.e. common
    /// neighbours in the object projection of the network.
    pub fn shared_projected_neighbors(&self, group: &[u32]) -> usize {
        let Some((first, rest)) = group.split_first() else {
            return 0;
        };
        let mut acc = self.coauthors[*first as usize].clone();
        for &u in rest {
            let other = &self.coauthors[u as usize];
            acc.retain(|w| other.binary_search(w).is_ok());
        }
        acc.retain(|w| !group.contains(w));
        acc.len()
    }

    /// `|N(u) ∩ N(N(v))|`: attributes of `u` that co-occur with `v` on some object.
    pub fn object_attribute(&self, u: u32, v: u32) -> usize {
        let mut near: Vec<u32> = self.objs[v as usize]
            .iter()
            .flat_map(|&w| self.attrs[w as usize].iter().copied())
            .filter(|&a| a != v)
            .collect();
        near.sort_unstable();
        near.dedup();
        sorted_intersection_len(&self.attrs[u as usize], &near)
    }
}

/// Common-neighbour score of an object-attribute pair; see [`NeighborIndex::object_attribute`].
pub fn common_neighbors_oa(ctx: &BipartiteContext, u: u32, v: u32) -> Result<usize> {
    check_object(ctx, u)?;
    check_attribute(ctx, v)?;
    Ok(NeighborIndex::new(ctx).object_attribute(u, v))
}

// ---------------------------------------------------------------------------
// matrix factorisation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub rank: usize,
    pub lambda: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            rank: 32,
            lambda: 0.1,
            sweeps: 15,
            seed: 0,
        }
    }
}

/// Object and attribute factors; a cell is scored by the dot product of its rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub rank: usize,
    pub lambda: f64,
    /// `|U| × k`, row-major
    pub object_factors: Vec<f64>,
    /// `|V| × k`, row-major
    pub attribute_factors: Vec<f64>,
    /// regularised squared error after each sweep
    pub loss_curve: Vec<f64>,
}

impl FactorModel {
    pub fn object_row(&self, u: u32) -> &[f64] {
        &self.object_factors[u as usize * self.rank..(u as usize + 1) * self.rank]
    }

    pub fn attribute_row(&self, v: u32) -> &[f64] {
        &self.attribute_factors[v as usize * self.rank..(v as usize + 1) * self.rank]
    }
}

pub fn score_mf(model: &FactorModel, u: u32, v: u32) -> f64 {
    dot(model.object_row(u), model.attribute_row(v))
}

/// Similarity of two objects: dot product of their factor rows.
pub fn score_mf_objects(model: &FactorModel, u1: u32, u2: u32) -> f64 {
    dot(model.object_row(u1), model.object_row(u2))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve every row of one side given the other side's factors. With implicit zeros the
/// normal matrix `FᵀF + λI` is shared by all rows, so one factorisation serves the sweep.
fn solve_side(fixed: &DMatrix<f64>, lambda: f64, rows: &[Vec<u32>]) -> Result<DMatrix<f64>> {
    let k = fixed.ncols();
    let gram = fixed.transpose() * fixed + DMatrix::identity(k, k) * lambda;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Diverged {
            epoch: 0,
            last_good_epoch: None,
        })?;
    let solved: Vec<DVector<f64>> = rows
        .par_iter()
        .map(|nbrs| {
            let mut rhs = DVector::zeros(k);
            for &j in nbrs {
                rhs += fixed.row(j as usize).transpose();
            }
            chol.solve(&rhs)
        })
        .collect();
    Ok(DMatrix::from_fn(rows.len(), k, |i, c| solved[i][c]))
}

fn mf_loss(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, edges: &[(u32, u32)]) -> f64 {
    // Σ (r - xᵀy)² over all cells = |E| - 2 Σ_E xᵀy + tr(XᵀX YᵀY)
    let fit: f64 = edges
        .iter()
        .map(|&(u, v)| x.row(u as usize).dot(&y.row(v as usize)))
        .sum();
    let cross = ((x.transpose() * x).component_mul(&(y.transpose() * y))).sum();
    edges.len() as f64 - 2.0 * fit + cross + lambda * (x.norm_squared() + y.norm_squared())
}

/// Fit the 0/1 incidence matrix (absent cells count as zeros) by seeded alternating least squares.
pub fn train_mf(ctx: &BipartiteContext, cfg: &MfConfig) -> Result<FactorModel> {
    let (n, m) = (ctx.n_objects(), ctx.n_attributes());
    let k = cfg.rank;
    if k == 0 || k > n.min(m) {
        return Err(Error::Config(format!("rank {k} outside 1..={}", n.min(m))));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Config(format!("lambda {} must be positive", cfg.lambda)));
    }
    let mut rng = seeded(cfg.seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mut x = DMatrix::from_fn(n, k, |_, _| normal.sample(&mut rng));
    let mut y = DMatrix::from_fn(m, k, |_, _| normal.sample(&mut rng));
    let by_object: Vec<Vec<u32>> = (0..n as u32).map(|u| ctx.attributes_of(u).collect()).collect();
    let by_attribute = ctx.attribute_columns();
    let mut loss_curve = Vec::with_capacity(cfg.sweeps);
    for sweep in 1..=cfg.sweeps {
        x = solve_side(&y, cfg.lambda, &by_object)?;
        y = solve_side(&x, cfg.lambda, &by_attribute)?;
        let loss = mf_loss(&x, &y, cfg.lambda, ctx.edges());
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: sweep,
                last_good_epoch: sweep.checked_sub(1).filter(|&s| s > 0),
            });
        }
        log::debug!("als sweep {sweep}: loss {loss:.6}");
        loss_curve.push(loss);
    }
    let row_major = |a: &DMatrix<f64>| a.transpose().as_slice().to_vec();
    Ok(FactorModel {
        rank: k,
        lambda: cfg.lambda,
        object_factors: row_major(&x),
        attribute_factors: row_major(&y),
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n: usize, m: usize, edges: &[(u32, u32)]) -> BipartiteContext {
        BipartiteContext::from_edges(n, m, edges.to_vec()).unwrap()
    }

    #[test]
    fn common_neighbor_examples() {
        let c = ctx(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        assert_eq!(common_neighbors_oo(&c, 0, 1).unwrap(), 1);
        let c = ctx(2, 6, &[(0, 0), (0, 1), (0, 2), (1, 3), (1, 4), (1, 5)]);
        assert_eq!(common_neighbors_oo(&c, 0, 1).unwrap(), 0);
        let c = ctx(2, 3, &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
        assert_eq!(common_neighbors_oo(&c, 0, 1).unwrap(), 3);
        assert!(common_neighbors_oo(&c, 0, 2).is_err());
    }

    #[test]
    fn object_attribute_counts_length_three_paths() {
        // u0 - v0 - u1 - v1: v0 co-occurs with v1 on u1, so u0 gains one
        let c = ctx(2, 2, &[(0, 0), (1, 0), (1, 1)]);
        assert_eq!(common_neighbors_oa(&c, 0, 1).unwrap(), 1);
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.shared_projected_neighbors(&[0]), 1);
        assert_eq!(idx.shared_attributes(&[0, 1]), 1);
    }

    #[test]
    fn projected_neighbors_of_a_pair() {
        // u0 and u2 share no attribute but both co-occur with u1
        let c = ctx(3, 2, &[(0, 0), (1, 0), (1, 1), (2, 1)]);
        let idx = NeighborIndex::new(&c);
        assert_eq!(idx.shared_attributes(&[0, 2]), 0);
        assert_eq!(idx.shared_projected_neighbors(&[0, 2]), 1);
        assert_eq!(idx.shared_projected_neighbors(&[0, 1]), 0);
    }

    #[test]
    fn rank_one_block_is_recovered() {
        let mut edges = Vec::new();
        for u in 0..10 {
            for v in 5..15 {
                edges.push((u, v));
            }
        }
        let c = ctx(20, 20, &edges);
        let cfg = MfConfig {
            rank: 1,
            sweeps: 30,
            ..Default::default()
        };
        let model = train_mf(&c, &cfg).unwrap();
        let mut se = 0.0;
        for u in 0..20 {
            for v in 0..20 {
                let r = c.contains(u, v) as u8 as f64;
                se += (r - score_mf(&model, u, v)).powi(2);
            }
        }
        assert!((se / 400.0).sqrt() < 0.05);
        for w in model.loss_curve.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert_eq!(train_mf(&c, &cfg).unwrap(), model);
    }

    #[test]
    fn rank_bounds() {
        let c = ctx(3, 4, &[(0, 0)]);
        let zero = MfConfig {
            rank: 0,
            ..Default::default()
        };
        assert!(train_mf(&c, &zero).is_err());
        let big = MfConfig {
            rank: 4,
            ..Default::default()
        };
        assert!(train_mf(&c, &big).is_err());
    }
}
