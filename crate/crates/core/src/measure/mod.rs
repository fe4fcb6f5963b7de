//! Finitely supported signed measures and the φ-weighted total variation
//! `‖μ‖_φ = ∫ φ d|μ|`.
//!
//! Two carriers exist: [`DiscreteSignedMeasure`] (weighted atoms, used for
//! empirical laws of particle ensembles) and [`GridSignedMeasure`] (masses on
//! half-open cells, used to compare two empirical laws after common binning).
//! Values are immutable once built.

mod flow;
pub mod io;
mod weight;

use std::cmp::Ordering;
use std::collections::BTreeMap;

pub(crate) use flow::slice_index;
pub use flow::{FlowMeasure, FlowSlice, LawRef, LawSource, MeasureFlow};
pub use weight::{TimeWeight, WeightFunction};

use crate::error::{Error, Result};

/// Operations shared by both carriers.
pub trait SignedMeasure: Sized {
    fn weighted_tv(&self, phi: &WeightFunction) -> Result<f64>;
    /// Jordan parts `(μ⁺, μ⁻)` with `μ = μ⁺ − μ⁻` and disjoint supports.
    fn hahn_split(&self) -> (Self, Self);
}

pub fn weighted_tv<M: SignedMeasure>(mu: &M, phi: &WeightFunction) -> Result<f64> {
    mu.weighted_tv(phi)
}

pub fn hahn_split<M: SignedMeasure>(mu: &M) -> (M, M) {
    mu.hahn_split()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSignedMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteSignedMeasure {
    /// `positions` is flat, `dim` components per atom.
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if positions.len() != weights.len() * dim {
            return Err(Error::Dimension {
                expected: weights.len() * dim,
                got: positions.len(),
                context: "atom positions",
            });
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::non_finite("atom position", format!("atom {}", i / dim)));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::non_finite("atom weight", format!("atom {i}")));
        }
        Ok(Self {
            dim,
            positions,
            weights,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self::new(point.len(), point.to_vec(), vec![1.0]).expect("finite dirac")
    }

    pub fn from_atoms(dim: usize, atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.len(),
                    context: "atom",
                });
            }
            positions.extend_from_slice(p);
            weights.push(*w);
        }
        Self::new(dim, positions, weights)
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

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom(&self, i: usize) -> (&[f64], f64) {
        (&self.positions[i * self.dim..(i + 1) * self.dim], self.weights[i])
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ w_i x_i`; for a probability measure this is its mean.
    pub fn first_moment(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.atoms() {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += w * xi;
            }
        }
        m
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            positions: self.positions.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    /// `self + other` as a concatenation of atoms.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: other.dim,
                context: "measure sum",
            });
        }
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Ok(Self {
            dim: self.dim,
            positions,
            weights,
        })
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    /// Merges atoms at identical positions and drops zero weights. Atoms are
    /// sorted lexicographically, so the result is a canonical representation
    /// of the measure.
    pub fn canonical(&self) -> Self {
        let d = self.dim;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let key = |i: usize| &self.positions[i * d..(i + 1) * d];
        order.sort_by(|&a, &b| lex_cmp(key(a), key(b)));
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut weights: Vec<f64> = Vec::with_capacity(self.len());
        let mut last: Option<&[f64]> = None;
        for i in order {
            let p = key(i);
            match last {
                Some(q) if q == p => *weights.last_mut().unwrap() += self.weights[i],
                _ => {
                    positions.extend_from_slice(p);
                    weights.push(self.weights[i]);
                    last = Some(p);
                }
            }
        }
        let mut out = Self::zero(d);
        for (p, w) in positions.chunks_exact(d).zip(weights) {
            if w != 0.0 {
                out.positions.extend_from_slice(p);
                out.weights.push(w);
            }
        }
        out
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl SignedMeasure for DiscreteSignedMeasure {
    fn weighted_tv(&self, phi: &WeightFunction) -> Result<f64> {
        let canon = self.canonical();
        let mut total = 0.0;
        for (i, (x, w)) in canon.atoms().enumerate() {
            let f = phi.eval(x);
            if !f.is_finite() {
                return Err(Error::non_finite("weight function", format!("atom {i} at {x:?}")));
            }
            total += f * w.abs();
        }
        Ok(total)
    }

    fn hahn_split(&self) -> (Self, Self) {
        let canon = self.canonical();
        let mut pos = Self::zero(self.dim);
        let mut neg = Self::zero(self.dim);
        for (x, w) in canon.atoms() {
            let part = if w > 0.0 { &mut pos } else { &mut neg };
            part.positions.extend_from_slice(x);
            part.weights.push(w.abs());
        }
        (pos, neg)
    }
}

/// Signed masses on the half-open cells `[o + k w, o + (k+1) w)` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignedMeasure {
    origin: Vec<f64>,
    cell_width: Vec<f64>,
    cells: BTreeMap<Vec<i64>, f64>,
}

impl GridSignedMeasure {
    pub fn new(origin: Vec<f64>, cell_width: Vec<f64>) -> Result<Self> {
        if origin.is_empty() || origin.len() != cell_width.len() {
            return Err(Error::invalid(
                "grid origin and cell width must have the same positive length",
            ));
        }
        if cell_width.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("cell width must be positive and finite"));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self {
            origin,
            cell_width,
            cells: BTreeMap::new(),
        })
    }

    pub fn from_cells(
        origin: Vec<f64>,
        cell_width: Vec<f64>,
        cells: impl IntoIterator<Item = (Vec<i64>, f64)>,
    ) -> Result<Self> {
        let mut g = Self::new(origin, cell_width)?;
        for (k, m) in cells {
            g.add_mass(k, m)?;
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cell_width(&self) -> &[f64] {
        &self.cell_width
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i64], f64)> + '_ {
        self.cells.iter().map(|(k, m)| (k.as_slice(), *m))
    }

    pub fn mass(&self, index: &[i64]) -> f64 {
        self.cells.get(index).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn add_mass(&mut self, index: Vec<i64>, mass: f64) -> Result<()> {
        if index.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: index.len(),
                context: "cell index",
            });
        }
        if !mass.is_finite() {
            return Err(Error::non_finite("cell mass", format!("cell {index:?}")));
        }
        *self.cells.entry(index).or_insert(0.0) += mass;
        Ok(())
    }

    pub fn cell_center(&self, index: &[i64]) -> Vec<f64> {
        index
            .iter()
            .zip(&self.origin)
            .zip(&self.cell_width)
            .map(|((&k, o), w)| o + (k as f64 + 0.5) * w)
            .collect()
    }

    /// Index of the half-open cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .zip(&self.origin)
            .zip(&self.cell_width)
            .map(|((&xi, &o), &w)| {
                let mut k = ((xi - o) / w).floor() as i64;
                // Division rounding can land one cell off near a boundary;
                // settle against the boundaries as they are computed.
                if xi >= o + (k + 1) as f64 * w {
                    k += 1;
                } else if xi < o + k as f64 * w {
                    k -= 1;
                }
                k
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut g = self.clone();
        for m in g.cells.values_mut() {
            *m *= c;
        }
        g
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.origin != other.origin || self.cell_width != other.cell_width {
            return Err(Error::invalid("grid measures live on different grids"));
        }
        Ok(())
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let mut g = self.clone();
        for (k, m) in &other.cells {
            *g.cells.entry(k.clone()).or_insert(0.0) += m;
        }
        Ok(g)
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-1.0))
    }

    /// Cell centers as atoms carrying the cell masses.
    pub fn to_atoms(&self) -> DiscreteSignedMeasure {
        let d = self.dim();
        let mut positions = Vec::with_capacity(self.cells.len() * d);
        let mut weights = Vec::with_capacity(self.cells.len());
        for (k, m) in &self.cells {
            positions.extend(self.cell_center(k));
            weights.push(*m);
        }
        DiscreteSignedMeasure::new(d, positions, weights).expect("cell centers are finite")
    }
}

impl SignedMeasure for GridSignedMeasure {
    fn weighted_tv(&self, phi: &WeightFunction) -> Result<f64> {
        let mut total = 0.0;
        for (k, m) in &self.cells {
            if *m == 0.0 {
                continue;
            }
            let c = self.cell_center(k);
            let f = phi.eval(&c);
            if !f.is_finite() {
                return Err(Error::non_finite("weight function", format!("cell {k:?}")));
            }
            total += f * m.abs();
        }
        Ok(total)
    }

    fn hahn_split(&self) -> (Self, Self) {
        let empty = || Self {
            origin: self.origin.clone(),
            cell_width: self.cell_width.clone(),
            cells: BTreeMap::new(),
        };
        let (mut pos, mut neg) = (empty(), empty());
        for (k, m) in &self.cells {
            if *m > 0.0 {
                pos.cells.insert(k.clone(), *m);
            } else if *m < 0.0 {
                neg.cells.insert(k.clone(), -m);
            }
        }
        (pos, neg)
    }
}

/// Empirical measure of a particle cloud; weights default to `1/N`.
pub fn empirical_from_particles(
    dim: usize,
    positions: &[f64],
    weights: Option<&[f64]>,
) -> Result<DiscreteSignedMeasure> {
    if dim == 0 || positions.is_empty() {
        return Err(Error::Empty("particle positions"));
    }
    if !positions.len().is_multiple_of(dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: positions.len() % dim,
            context: "flat particle positions",
        });
    }
    let n = positions.len() / dim;
    let weights = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: w.len(),
                    context: "particle weights",
                });
            }
            w.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    DiscreteSignedMeasure::new(dim, positions.to_vec(), weights)
}

/// Mass-preserving assignment of every atom to the half-open cell containing it.
pub fn bin_to_grid(mu: &DiscreteSignedMeasure, origin: &[f64], cell_width: &[f64]) -> Result<GridSignedMeasure> {
    if origin.len() != mu.dim() {
        return Err(Error::Dimension {
            expected: mu.dim(),
            got: origin.len(),
            context: "grid origin",
        });
    }
    let mut grid = GridSignedMeasure::new(origin.to_vec(), cell_width.to_vec())?;
    for (i, (x, w)) in mu.atoms().enumerate() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("atom position", format!("atom {i}")));
        }
        let k = grid.cell_of(x);
        *grid.cells.entry(k).or_insert(0.0) += w;
    }
    Ok(grid)
}

/// Uniform cell width along every axis.
pub fn bin_uniform(mu: &DiscreteSignedMeasure, origin: f64, width: f64) -> Result<GridSignedMeasure> {
    let d = mu.dim();
    bin_to_grid(mu, &vec![origin; d], &vec![width; d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn atoms_1d(pairs: &[(f64, f64)]) -> DiscreteSignedMeasure {
        DiscreteSignedMeasure::from_atoms(1, &pairs.iter().map(|(x, w)| (vec![*x], *w)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_measure_has_zero_norm() {
        let phi = WeightFunction::polynomial(2.0);
        assert_eq!(DiscreteSignedMeasure::zero(2).weighted_tv(&phi).unwrap(), 0.0);
        // coincident atoms cancelling to the zero measure
        assert_eq!(atoms_1d(&[(1.0, 0.5), (1.0, -0.5)]).weighted_tv(&phi).unwrap(), 0.0);
    }

    #[test]
    fn dipole_norm() {
        let mu = atoms_1d(&[(1.0, 1.0), (-1.0, -1.0)]);
        assert_eq!(mu.weighted_tv(&WeightFunction::polynomial(2.0)).unwrap(), 4.0);
    }

    #[test]
    fn grid_norm_with_exponential_weight() {
        // centers at 0, 1, 2 need origin -0.5 and width 1
        let g = GridSignedMeasure::from_cells(
            vec![-0.5],
            vec![1.0],
            [(vec![0], 0.5), (vec![1], -0.25), (vec![2], 0.75)],
        )
        .unwrap();
        let e = std::f64::consts::E;
        let oracle = 0.5 + 0.25 * e + 0.75 * e * e;
        let got = g.weighted_tv(&WeightFunction::exponential(1.0, 1.0)).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        assert!((got - 6.72136).abs() < 1e-5);
    }

    #[test]
    fn non_finite_weight_names_the_atom() {
        let phi = WeightFunction::custom(|y| if y[0] > 1.5 { f64::INFINITY } else { 1.0 });
        let err = atoms_1d(&[(0.0, 1.0), (2.0, 1.0)]).weighted_tv(&phi).unwrap_err();
        assert!(err.to_string().contains("atom 1"), "{err}");
    }

    #[test]
    fn hahn_split_examples() {
        let (p, n) = atoms_1d(&[(0.0, 1.0), (1.0, -2.0)]).hahn_split();
        assert_eq!(p, atoms_1d(&[(0.0, 1.0)]));
        assert_eq!(n, atoms_1d(&[(1.0, 2.0)]));
        let positive = atoms_1d(&[(0.0, 1.0), (3.0, 2.0)]);
        let (p, n) = positive.hahn_split();
        assert_eq!(p, positive);
        assert!(n.is_empty());
    }

    #[test]
    fn empirical_defaults() {
        let mu = empirical_from_particles(1, &[1.0, 2.0, 3.0], None).unwrap();
        assert!(mu.weights().iter().all(|w| (*w - 1.0 / 3.0).abs() < 1e-16));
        let d = empirical_from_particles(1, &[0.0], None).unwrap();
        assert_eq!(d, DiscreteSignedMeasure::dirac(&[0.0]));
        let w = empirical_from_particles(1, &[0.0, 1.0], Some(&[0.25, 2.0])).unwrap();
        assert_eq!(w.total_mass(), 2.25);
        assert!(matches!(empirical_from_particles(1, &[], None), Err(Error::Empty(_))));
    }

    #[test]
    fn binning_examples() {
        let g = bin_uniform(&DiscreteSignedMeasure::dirac(&[0.2]), 0.0, 1.0).unwrap();
        assert_eq!(g.mass(&[0]), 1.0);
        let two = atoms_1d(&[(0.2, 0.5), (0.8, 0.5)]);
        let g = bin_uniform(&two, 0.0, 1.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.mass(&[0]), 1.0);
        // boundaries belong to the cell on their right
        let g = bin_uniform(&atoms_1d(&[(1.0, 1.0), (-1.0, 1.0)]), 0.0, 1.0).unwrap();
        assert_eq!(g.mass(&[1]), 1.0);
        assert_eq!(g.mass(&[-1]), 1.0);
        assert!(GridSignedMeasure::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn binning_rejects_zero_width() {
        assert!(bin_uniform(&DiscreteSignedMeasure::dirac(&[0.2]), 0.0, 0.0).is_err());
    }

    #[test]
    fn boundary_assignment_matches_computed_boundaries() {
        let g = GridSignedMeasure::new(vec![0.0], vec![0.1]).unwrap();
        for i in -50..50 {
            let x = i as f64 * 0.1;
            let k = g.cell_of(&[x])[0];
            assert!(k as f64 * 0.1 <= x && x < (k + 1) as f64 * 0.1, "x={x} k={k}");
        }
    }

    fn arb_measure(max_atoms: usize) -> impl Strategy<Value = DiscreteSignedMeasure> {
        (1usize..=3).prop_flat_map(move |d| {
            prop::collection::vec((prop::collection::vec(-5.0f64..5.0, d), -3.0f64..3.0), 0..max_atoms)
                .prop_map(move |atoms| DiscreteSignedMeasure::from_atoms(d, &atoms).unwrap())
        })
    }

    proptest! {
        #[test]
        fn norm_axioms(mu in arb_measure(20), c in -4.0f64..4.0, seed in 0u64..1000) {
            let phi = WeightFunction::polynomial(1.5);
            let d = mu.dim();
            // a second measure on the same dimension, partly overlapping
            let nu = DiscreteSignedMeasure::from_atoms(
                d,
                &mu.atoms()
                    .enumerate()
                    .map(|(i, (x, w))| (x.to_vec(), if (i as u64 + seed).is_multiple_of(2) { -w } else { 0.5 * w }))
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let n_mu = mu.weighted_tv(&phi).unwrap();
            let n_nu = nu.weighted_tv(&phi).unwrap();
            let n_sum = mu.plus(&nu).unwrap().weighted_tv(&phi).unwrap();
            prop_assert!(n_sum <= n_mu + n_nu + 1e-12 * (1.0 + n_mu + n_nu));
            let n_scaled = mu.scaled(c).weighted_tv(&phi).unwrap();
            prop_assert!((n_scaled - c.abs() * n_mu).abs() <= 1e-12 * (1.0 + n_scaled));
            let is_zero = mu.canonical().is_empty();
            prop_assert_eq!(n_mu == 0.0, is_zero);
        }

        #[test]
        fn hahn_consistency(mu in arb_measure(30)) {
            let phi = WeightFunction::exponential(0.3, 1.0);
            let (p, n) = mu.hahn_split();
            prop_assert!(p.weights().iter().all(|w| *w > 0.0));
            prop_assert!(n.weights().iter().all(|w| *w > 0.0));
            let total = mu.weighted_tv(&phi).unwrap();
            let parts = p.weighted_tv(&phi).unwrap() + n.weighted_tv(&phi).unwrap();
            prop_assert!((total - parts).abs() <= 1e-12 * (1.0 + total));
            prop_assert_eq!(p.minus(&n).unwrap().canonical(), mu.canonical());
        }

        #[test]
        fn grid_hahn_recombines_exactly(cells in prop::collection::btree_map(-20i64..20, -2.0f64..2.0, 0..40)) {
            let g = GridSignedMeasure::from_cells(vec![0.0], vec![0.3], cells.into_iter().map(|(k, m)| (vec![k], m))).unwrap();
            let (p, n) = g.hahn_split();
            let back = p.minus(&n).unwrap();
            for (k, m) in g.cells() {
                prop_assert_eq!(back.mass(k), m);
            }
        }

        #[test]
        fn binning_preserves_mass(xs in prop::collection::vec((-10.0f64..10.0, -1.0f64..1.0), 1..300), w in 0.01f64..3.0) {
            let mu = atoms_1d(&xs);
            let g = bin_uniform(&mu, -0.37, w).unwrap();
            let direct: f64 = xs.iter().map(|(_, m)| m).sum();
            prop_assert!((g.total_mass() - direct).abs() <= 1e-12 * (1.0 + xs.len() as f64));
        }
    }
}
