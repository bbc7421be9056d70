//! Partial-consensus coupling matrices.
//!
//! A stacked vector `x = col[x_1, ..., x_N]` with heterogeneous block sizes
//! `n_i` reaches partial consensus when the first `n` entries of every block
//! agree. The matrix `K_n` built here is the Kronecker product `L ⊗ I_n`
//! padded with zero rows and columns at the coordinates that do not take
//! part in consensus, so `K_n x = 0` exactly characterizes that subspace on a
//! connected graph.
//!
//! All index sets exposed by this module are 1-based.

use std::collections::HashSet;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues with magnitude below `ZERO_EIGENVALUE_RTOL * max(1, δ_max)`
/// are counted as zero.
pub const ZERO_EIGENVALUE_RTOL: f64 = 1e-9;

/// Absolute tolerance used when validating Laplacian symmetry and row sums,
/// scaled by the largest entry magnitude.
const LAPLACIAN_RTOL: f64 = 1e-12;

/// An ordered set of distinct 1-based indices. Order is significant and is
/// never changed by any operation on the set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct OrderedIndexSet(Vec<usize>);

/// Index subset selecting the consensus components of one vector.
pub type SerialSubset = OrderedIndexSet;

impl OrderedIndexSet {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for &e in &entries {
            if e == 0 {
                return Err(Error::invalid("index sets are 1-based; found entry 0"));
            }
            if !seen.insert(e) {
                return Err(Error::invalid(format!(
                    "duplicate index {e} in ordered set"
                )));
            }
        }
        Ok(Self(entries))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// `{lo, lo+1, ..., hi}`; empty when `hi < lo`.
    pub fn interval(lo: usize, hi: usize) -> Result<Self> {
        Self::new((lo..=hi).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.contains(&idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.iter().copied().max()
    }

    /// Every entry shifted by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        Self(self.0.iter().map(|e| e + offset).collect())
    }

    /// The same members in ascending order.
    pub fn sorted(&self) -> Self {
        let mut v = self.0.clone();
        v.sort_unstable();
        Self(v)
    }

    /// Members of `{1..=m}` not in `self`, ascending.
    pub fn complement_in(&self, m: usize) -> Self {
        Self((1..=m).filter(|i| !self.contains(*i)).collect())
    }
}

impl From<OrderedIndexSet> for Vec<usize> {
    fn from(s: OrderedIndexSet) -> Self {
        s.0
    }
}

/// Order-preserving concatenation of two disjoint ordered sets.
pub fn ordered_union(a: &OrderedIndexSet, b: &OrderedIndexSet) -> Result<OrderedIndexSet> {
    if let Some(dup) = b.iter().find(|e| a.contains(*e)) {
        return Err(Error::invalid(format!(
            "ordered union needs disjoint operands; {dup} appears in both"
        )));
    }
    let mut v = a.0.clone();
    v.extend_from_slice(&b.0);
    Ok(OrderedIndexSet(v))
}

/// `x^(s) = col[x_{s_1}, ..., x_{s_k}]`.
pub fn extract(x: &[f64], s: &OrderedIndexSet) -> Result<Vec<f64>> {
    s.iter()
        .map(|i| {
            x.get(i - 1).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "index {i} out of range for vector of length {}",
                    x.len()
                ))
            })
        })
        .collect()
}

/// Grows a square matrix by inserting a zero row and zero column at each
/// position of `w`, in order. Each position refers to the matrix as it
/// stands after the previous insertions, so inserting at `t` places the new
/// row right after the current row `t - 1`.
pub fn extend_matrix(m: &DMatrix<f64>, w: &OrderedIndexSet) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "extension needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut out = m.clone();
    for t in w.iter() {
        let order = out.nrows();
        if t > order + 1 {
            return Err(Error::invalid(format!(
                "insertion position {t} exceeds current order {order} + 1"
            )));
        }
        out = out.insert_row(t - 1, 0.0).insert_column(t - 1, 0.0);
    }
    Ok(out)
}

/// Per-agent vector dimensions `[n_1, ..., n_N]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentDims {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl AgentDims {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("at least one agent is required"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("agent {} has dimension 0", i + 1)));
        }
        let offsets = dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect();
        Ok(Self { dims, offsets })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.dims
    }

    /// Number of agents `N`.
    pub fn agents(&self) -> usize {
        self.dims.len()
    }

    /// `N̄ = Σ n_i`.
    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn min(&self) -> usize {
        self.dims.iter().copied().min().unwrap_or(0)
    }

    pub fn dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    /// Zero-based start offset of agent `agent`'s block in the stacked vector.
    pub fn offset(&self, agent: usize) -> usize {
        self.offsets[agent]
    }

    /// Zero-based coordinate range of agent `agent`'s block.
    pub fn block(&self, agent: usize) -> Range<usize> {
        self.offsets[agent]..self.offsets[agent] + self.dims[agent]
    }

    fn check_depth(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.min() {
            return Err(Error::invalid(format!(
                "consensus depth {n} must lie in 1..={}",
                self.min()
            )));
        }
        Ok(())
    }
}

/// The consensus coordinates `V_n` of the stacked vector and their complement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusIndexSets {
    /// `V_n`, ascending.
    pub consensus: OrderedIndexSet,
    /// `V \ V_n`, ascending.
    pub complement: OrderedIndexSet,
}

/// Builds `V_n` for `v_n = {1..n}`: the first `n` coordinates of every block.
///
/// The ordered construction appends the blocks of agents `2..N` and then the
/// block of agent 1; only membership matters downstream, so the result is
/// returned sorted.
pub fn build_consensus_index_set(dims: &AgentDims, n: usize) -> Result<ConsensusIndexSets> {
    dims.check_depth(n)?;
    let local = OrderedIndexSet::interval(1, n)?;
    let mut ordered = OrderedIndexSet::empty();
    for j in 1..dims.agents() {
        ordered = ordered_union(&ordered, &local.shifted(dims.offset(j)))?;
    }
    ordered = ordered_union(&ordered, &local)?;
    let consensus = ordered.sorted();
    let complement = consensus.complement_in(dims.total());
    Ok(ConsensusIndexSets {
        consensus,
        complement,
    })
}

/// Checks that `l` is a symmetric graph Laplacian and returns it in the
/// positive semi-definite sign convention (non-negative diagonal,
/// non-positive off-diagonal, zero row sums). A matrix given in the negated
/// convention is flipped; the returned flag reports whether that happened.
pub fn normalize_laplacian(l: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if !l.is_square() || l.nrows() == 0 {
        return Err(Error::invalid(format!(
            "Laplacian must be a non-empty square matrix, got {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Laplacian has non-finite entries"));
    }
    let scale = l.amax().max(1.0);
    let tol = LAPLACIAN_RTOL * scale;
    let n = l.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (l[(i, j)] - l[(j, i)]).abs() > tol {
                return Err(Error::invalid(format!(
                    "Laplacian is not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        let row_sum: f64 = l.row(i).iter().sum();
        if row_sum.abs() > tol * n as f64 {
            return Err(Error::invalid(format!(
                "Laplacian row {} sums to {row_sum}, expected 0",
                i + 1
            )));
        }
    }
    let is_psd_form = |m: &DMatrix<f64>| {
        (0..n).all(|i| {
            (0..n).all(|j| {
                if i == j {
                    m[(i, j)] >= 0.0
                } else {
                    m[(i, j)] <= 0.0
                }
            })
        })
    };
    if is_psd_form(l) {
        return Ok((l.clone(), false));
    }
    let flipped = -l;
    if is_psd_form(&flipped) {
        return Ok((flipped, true));
    }
    Err(Error::invalid(
        "Laplacian has mixed signs: need a non-negative diagonal and non-positive off-diagonal (or the exact negation)",
    ))
}

/// Connectedness of the graph whose edges are the non-zero off-diagonal
/// entries of `l`.
pub fn is_connected(l: &DMatrix<f64>) -> bool {
    let n = l.nrows();
    if n == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if j != i && l[(i, j)] != 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// `K_n` together with the data it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialConsensusMatrix {
    k: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    dims: AgentDims,
    depth: usize,
    index_sets: ConsensusIndexSets,
}

impl PartialConsensusMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// The Laplacian in positive semi-definite convention.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn dims(&self) -> &AgentDims {
        &self.dims
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn index_sets(&self) -> &ConsensusIndexSets {
        &self.index_sets
    }

    pub fn order(&self) -> usize {
        self.k.nrows()
    }

    /// `K x`, accumulating each row in ascending column order and skipping
    /// zero entries. The decentralized simulator reproduces this ordering
    /// exactly, which is what makes both execution modes bit-identical.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.order();
        if x.len() != m {
            return Err(Error::invalid(format!(
                "vector has length {}, K has order {m}",
                x.len()
            )));
        }
        Ok((0..m)
            .map(|r| {
                let mut acc = 0.0;
                for (c, xc) in x.iter().enumerate() {
                    let k = self.k[(r, c)];
                    if k != 0.0 {
                        acc += k * xc;
                    }
                }
                acc
            })
            .collect())
    }
}

/// `K_n = E_{V\V_n}(L ⊗ I_n)`.
pub fn build_partial_consensus_matrix(
    laplacian: &DMatrix<f64>,
    dims: &AgentDims,
    n: usize,
) -> Result<PartialConsensusMatrix> {
    let (l, _) = normalize_laplacian(laplacian)?;
    if l.nrows() != dims.agents() {
        return Err(Error::invalid(format!(
            "Laplacian is {0}x{0} but there are {1} agents",
            l.nrows(),
            dims.agents()
        )));
    }
    let index_sets = build_consensus_index_set(dims, n)?;
    // the Kronecker product leaves -0.0 where a negative weight meets a zero
    let base = l
        .kronecker(&DMatrix::<f64>::identity(n, n))
        .map(|v| if v == 0.0 { 0.0 } else { v });
    let k = extend_matrix(&base, &index_sets.complement)?;
    Ok(PartialConsensusMatrix {
        k,
        laplacian: l,
        dims: dims.clone(),
        depth: n,
        index_sets,
    })
}

/// A 0/1 matrix reordering `x` into `col{x^(s), x^(complement of s)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationMatrix {
    p: DMatrix<f64>,
    source: SerialSubset,
    order: Vec<usize>,
}

impl PermutationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn source(&self) -> &SerialSubset {
        &self.source
    }

    /// `ω̄ = s ∪̄ (v \ s)`: row `p` of the matrix has its 1 in column `ω̄^p`.
    pub fn column_order(&self) -> &[usize] {
        &self.order
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.order.len() {
            return Err(Error::invalid(format!(
                "vector has length {}, permutation has order {}",
                x.len(),
                self.order.len()
            )));
        }
        Ok(self.order.iter().map(|&c| x[c - 1]).collect())
    }
}

pub fn permutation_matrix(m: usize, s: &SerialSubset) -> Result<PermutationMatrix> {
    if let Some(bad) = s.iter().find(|&i| i > m) {
        return Err(Error::invalid(format!(
            "subset entry {bad} outside 1..={m}"
        )));
    }
    let omega = ordered_union(s, &s.complement_in(m))?;
    let mut p = DMatrix::zeros(m, m);
    for (row, col) in omega.iter().enumerate() {
        p[(row, col - 1)] = 1.0;
    }
    Ok(PermutationMatrix {
        p,
        source: s.clone(),
        order: omega.into_vec(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralSummary {
    pub min: f64,
    pub zero_multiplicity: usize,
    pub max: f64,
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "eigensolver produced non-finite values".into(),
        ));
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

pub fn spectral_summary(k: &PartialConsensusMatrix) -> Result<SpectralSummary> {
    let vals = symmetric_eigenvalues(k.matrix())?;
    let min = vals[0];
    let max = *vals.last().unwrap();
    let tol = ZERO_EIGENVALUE_RTOL * max.abs().max(1.0);
    let zero_multiplicity = vals.iter().filter(|v| v.abs() < tol).count();
    Ok(SpectralSummary {
        min,
        zero_multiplicity,
        max,
    })
}

/// `‖K x‖ ≤ tol`.
pub fn is_partial_consensus(k: &PartialConsensusMatrix, x: &[f64], tol: f64) -> Result<bool> {
    let kx = k.mul_vec(x)?;
    Ok(norm(&kx) <= tol)
}

/// Direct check that the first `n` entries of every agent block agree
/// with agent 1's within `tol`.
pub fn consensus_components_agree(dims: &AgentDims, n: usize, x: &[f64], tol: f64) -> Result<bool> {
    if x.len() != dims.total() {
        return Err(Error::invalid(format!(
            "vector has length {}, expected {}",
            x.len(),
            dims.total()
        )));
    }
    dims.check_depth(n)?;
    let head = &x[..n];
    Ok((1..dims.agents()).all(|i| {
        let off = dims.offset(i);
        x[off..off + n]
            .iter()
            .zip(head)
            .all(|(a, b)| (a - b).abs() <= tol)
    }))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
