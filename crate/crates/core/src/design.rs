//! Design measures: weighted atoms and products of particle ensembles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::math::sq_dist;
use crate::models::Domain;

/// Positive measure `sum_i w_i δ_{x_i}`; its total mass is the batch size
/// for `U_B` and one for probability measures.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl DesignMeasure {
    /// Atoms stored row-major in `positions` (`len = weights.len() * dim`).
    /// Zero weights are allowed.
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        check_dim(weights.len() * dim, positions.len())?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("positions", "must be finite"));
        }
        Ok(DesignMeasure { dim, positions, weights })
    }

    /// Equal weights `mass / n` on the given atoms.
    pub fn uniform(dim: usize, positions: Vec<f64>, mass: f64) -> Result<Self> {
        let n = positions.len().checked_div(dim).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid("positions", "need at least one atom"));
        }
        Self::new(dim, positions, vec![mass / n as f64; n])
    }

    pub fn dirac(x: &[f64], mass: f64) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), vec![mass])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The measure multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DesignMeasure {
            dim: self.dim,
            positions: self.positions.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    /// `(1 - t) self + t other`, as the union of both atom sets. A `t`
    /// outside `[0, 1]` gives signed weights, which the utility accepts so
    /// that directional derivatives can be taken by central differences.
    pub fn mix(&self, other: &Self, t: f64) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let weights = self.weights.iter().map(|w| (1.0 - t) * w).chain(other.weights.iter().map(|w| t * w)).collect();
        Ok(DesignMeasure { dim: self.dim, positions, weights })
    }

    pub fn has_signed_weights(&self) -> bool {
        self.weights.iter().any(|w| *w < 0.0)
    }

    /// Fails with [`Error::OutOfDomain`] for the first atom outside `domain`.
    pub fn check_domain(&self, domain: &Domain) -> Result<()> {
        (0..self.len()).try_for_each(|i| domain.check(self.point(i)))
    }

    /// Atom counts per bin over the box of `domain`: `bins` cells in 1D,
    /// `bins x bins` cells (row-major) in 2D.
    pub fn histogram(&self, domain: &Domain, bins: usize) -> Result<Vec<usize>> {
        if bins < 1 {
            return Err(Error::invalid("bins", "must be at least 1"));
        }
        check_dim(domain.dim(), self.dim)?;
        let cell = |x: f64, d: usize| {
            let (a, b) = (domain.lower()[d], domain.upper()[d]);
            let k = libm::floor((x - a) / (b - a) * bins as f64);
            (k.max(0.0) as usize).min(bins - 1)
        };
        let mut counts = vec![0; bins.pow(self.dim as u32)];
        for i in 0..self.len() {
            let idx = self.point(i).iter().enumerate().fold(0, |acc, (d, x)| acc * bins + cell(*x, d));
            counts[idx] += 1;
        }
        Ok(counts)
    }
}

/// `B` ensembles of `N` particles each, the product measure `⊗_b μ_b` with
/// `μ_b` the empirical probability measure of ensemble `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleProduct {
    dim: usize,
    batch: usize,
    per_ensemble: usize,
    particles: Vec<f64>,
}

impl EnsembleProduct {
    /// Particles stored as `[b][i][d]`.
    pub fn new(dim: usize, batch: usize, per_ensemble: usize, particles: Vec<f64>) -> Result<Self> {
        if dim == 0 || batch == 0 || per_ensemble == 0 {
            return Err(Error::invalid("ensemble", "dimension, batch size and ensemble size must be positive"));
        }
        check_dim(dim * batch * per_ensemble, particles.len())?;
        if particles.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("particles", "must be finite"));
        }
        Ok(EnsembleProduct { dim, batch, per_ensemble, particles })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn per_ensemble(&self) -> usize {
        self.per_ensemble
    }

    pub fn num_particles(&self) -> usize {
        self.batch * self.per_ensemble
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub(crate) fn particles_mut(&mut self) -> &mut [f64] {
        &mut self.particles
    }

    fn check_index(&self, b: usize, i: usize) -> Result<()> {
        if b >= self.batch || i >= self.per_ensemble {
            return Err(Error::IndexOutOfRange(format!(
                "particle ({b}, {i}) in a product of {} ensembles of {}",
                self.batch, self.per_ensemble
            )));
        }
        Ok(())
    }

    /// Particle `i` of ensemble `b`, both zero-based.
    pub fn particle(&self, b: usize, i: usize) -> Result<&[f64]> {
        self.check_index(b, i)?;
        Ok(self.particle_unchecked(b, i))
    }

    #[inline]
    pub(crate) fn particle_unchecked(&self, b: usize, i: usize) -> &[f64] {
        let k = (b * self.per_ensemble + i) * self.dim;
        &self.particles[k..k + self.dim]
    }

    pub fn ensemble(&self, b: usize) -> Result<&[f64]> {
        self.check_index(b, 0)?;
        let len = self.per_ensemble * self.dim;
        Ok(&self.particles[b * len..(b + 1) * len])
    }

    /// All particles as atoms of weight `1 / N`; the total mass is `B`.
    pub fn flatten(&self) -> DesignMeasure {
        DesignMeasure {
            dim: self.dim,
            positions: self.particles.clone(),
            weights: vec![1.0 / self.per_ensemble as f64; self.num_particles()],
        }
    }

    pub fn ensemble_mean(&self, b: usize) -> Result<Vec<f64>> {
        self.check_index(b, 0)?;
        Ok(self.mean_unchecked(b))
    }

    pub(crate) fn mean_unchecked(&self, b: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.per_ensemble {
            for (a, x) in m.iter_mut().zip(self.particle_unchecked(b, i)) {
                *a += x;
            }
        }
        for a in m.iter_mut() {
            *a /= self.per_ensemble as f64;
        }
        m
    }

    /// Mean squared distance to the ensemble mean (population normalization).
    pub fn ensemble_variance(&self, b: usize) -> Result<f64> {
        let mean = self.ensemble_mean(b)?;
        let s: f64 = (0..self.per_ensemble).map(|i| sq_dist(self.particle_unchecked(b, i), &mean)).sum();
        Ok(s / self.per_ensemble as f64)
    }

    pub fn ensemble_means(&self) -> Vec<Vec<f64>> {
        (0..self.batch).map(|b| self.mean_unchecked(b)).collect()
    }

    /// Squared Euclidean distances between ensemble means.
    pub fn pairwise_mean_distances(&self) -> DMatrix<f64> {
        let means = self.ensemble_means();
        DMatrix::from_fn(self.batch, self.batch, |a, b| sq_dist(&means[a], &means[b]))
    }
}

/// A group of points merged by [`cluster_points`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub members: Vec<usize>,
}

/// Single-linkage clustering: points closer than `merge_radius` (Euclidean)
/// are joined, transitively. Clusters are ordered by their smallest member
/// index; centers are member means.
pub fn cluster_points(points: &[f64], dim: usize, merge_radius: f64) -> Result<Vec<Cluster>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("points", "length must be a multiple of the dimension"));
    }
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = merge_radius * merge_radius;
    for i in 0..n {
        for j in i + 1..n {
            if sq_dist(pt(i), pt(j)) <= r2 {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Cluster { center: vec![0.0; dim], members: Vec::new() });
        }
        let c = &mut clusters[slot[r]];
        c.members.push(i);
        for (a, x) in c.center.iter_mut().zip(pt(i)) {
            *a += x;
        }
    }
    for c in clusters.iter_mut() {
        let k = c.members.len() as f64;
        for a in c.center.iter_mut() {
            *a /= k;
        }
    }
    Ok(clusters)
}
