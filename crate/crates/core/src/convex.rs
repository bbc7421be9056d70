//! Convex atoms, local sets and projections.
//!
//! Expressions are small trees over a fixed atom vocabulary. Every tree is
//! convex by construction: quadratic coefficients and sum weights must be
//! non-negative, and there is no way to negate a non-affine atom.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// `|x_k - a| < KINK_TOL` counts as sitting on the kink of an absolute value.
pub const KINK_TOL: f64 = 1e-12;

/// A convex function `R^d -> R`. Variable indices are zero-based here; the
/// textual form names them `x1, x2, ...`.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexExpr {
    /// `Σ c_k x_k + constant`, coefficients sorted by variable, no zeros.
    Affine {
        coeffs: Vec<(usize, f64)>,
        constant: f64,
    },
    /// `coef * (x_var - shift)^2`, `coef ≥ 0`.
    Quadratic { var: usize, shift: f64, coef: f64 },
    /// `|x_var - shift|`.
    Abs { var: usize, shift: f64 },
    /// `exp(x_var) - offset`.
    Exp { var: usize, offset: f64 },
    /// `Σ w_k e_k` with every `w_k ≥ 0`.
    Sum(Vec<(f64, ConvexExpr)>),
}

impl ConvexExpr {
    pub fn constant(c: f64) -> Self {
        ConvexExpr::Affine {
            coeffs: Vec::new(),
            constant: c,
        }
    }

    /// Affine function; coefficients on the same variable are merged and
    /// zero coefficients dropped.
    pub fn affine(coeffs: impl IntoIterator<Item = (usize, f64)>, constant: f64) -> Self {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (k, c) in coeffs {
            match merged.iter_mut().find(|(j, _)| *j == k) {
                Some((_, acc)) => *acc += c,
                None => merged.push((k, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        merged.sort_by_key(|(k, _)| *k);
        ConvexExpr::Affine {
            coeffs: merged,
            constant,
        }
    }

    pub fn quadratic(var: usize, shift: f64, coef: f64) -> Result<Self> {
        let e = ConvexExpr::Quadratic { var, shift, coef };
        e.validate()?;
        Ok(e)
    }

    pub fn abs(var: usize, shift: f64) -> Self {
        ConvexExpr::Abs { var, shift }
    }

    pub fn exp(var: usize, offset: f64) -> Self {
        ConvexExpr::Exp { var, offset }
    }

    pub fn sum(terms: Vec<(f64, ConvexExpr)>) -> Result<Self> {
        let e = ConvexExpr::Sum(terms);
        e.validate()?;
        Ok(e)
    }

    /// Checks the convexity-by-construction rules and that every literal is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("non-finite {what} in expression")))
            }
        };
        match self {
            ConvexExpr::Affine { coeffs, constant } => {
                finite(*constant, "constant")?;
                coeffs
                    .iter()
                    .try_for_each(|(_, c)| finite(*c, "coefficient"))
            }
            ConvexExpr::Quadratic { shift, coef, .. } => {
                finite(*shift, "shift")?;
                finite(*coef, "coefficient")?;
                if *coef < 0.0 {
                    return Err(Error::invalid(format!(
                        "non-convex atom: quadratic coefficient {coef} is negative"
                    )));
                }
                Ok(())
            }
            ConvexExpr::Abs { shift, .. } => finite(*shift, "shift"),
            ConvexExpr::Exp { offset, .. } => finite(*offset, "offset"),
            ConvexExpr::Sum(terms) => {
                for (w, e) in terms {
                    finite(*w, "weight")?;
                    if *w < 0.0 && !e.is_affine() {
                        return Err(Error::invalid(format!(
                            "non-convex: negative weight {w} on a non-affine term"
                        )));
                    }
                    e.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn is_affine(&self) -> bool {
        match self {
            ConvexExpr::Affine { .. } => true,
            ConvexExpr::Sum(terms) => terms.iter().all(|(_, e)| e.is_affine()),
            _ => false,
        }
    }

    /// Smallest input dimension the expression can be evaluated on.
    pub fn arity(&self) -> usize {
        match self {
            ConvexExpr::Affine { coeffs, .. } => {
                coeffs.iter().map(|(k, _)| k + 1).max().unwrap_or(0)
            }
            ConvexExpr::Quadratic { var, .. }
            | ConvexExpr::Abs { var, .. }
            | ConvexExpr::Exp { var, .. } => var + 1,
            ConvexExpr::Sum(terms) => terms.iter().map(|(_, e)| e.arity()).max().unwrap_or(0),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        let need = self.arity();
        if x.len() < need {
            return Err(Error::invalid(format!(
                "expression uses x{need} but the input has dimension {}",
                x.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            ConvexExpr::Affine { coeffs, constant } => {
                coeffs.iter().fold(*constant, |acc, (k, c)| acc + c * x[*k])
            }
            ConvexExpr::Quadratic { var, shift, coef } => {
                let d = x[*var] - shift;
                coef * d * d
            }
            ConvexExpr::Abs { var, shift } => (x[*var] - shift).abs(),
            ConvexExpr::Exp { var, offset } => x[*var].exp() - offset,
            ConvexExpr::Sum(terms) => terms.iter().map(|(w, e)| w * e.eval_unchecked(x)).sum(),
        }
    }

    /// One element of the subdifferential at `x`. At the kink of `|x_k - a|`
    /// the minimal-norm element 0 is chosen.
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        self.add_subgradient(x, 1.0, &mut g);
        Ok(g)
    }

    /// `out += scale * subgradient(x)`.
    pub(crate) fn add_subgradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ConvexExpr::Affine { coeffs, .. } => {
                for (k, c) in coeffs {
                    out[*k] += scale * c;
                }
            }
            ConvexExpr::Quadratic { var, shift, coef } => {
                out[*var] += scale * 2.0 * coef * (x[*var] - shift);
            }
            ConvexExpr::Abs { var, shift } => {
                let d = x[*var] - shift;
                if d.abs() >= KINK_TOL {
                    out[*var] += scale * d.signum();
                }
            }
            ConvexExpr::Exp { var, .. } => {
                out[*var] += scale * x[*var].exp();
            }
            ConvexExpr::Sum(terms) => {
                for (w, e) in terms {
                    e.add_subgradient(x, scale * w, out);
                }
            }
        }
    }

    /// `out[k] += scale * w_k`, where `w_k` is the total weight of the
    /// absolute-value atoms sitting on their kink in coordinate `k` at `x`.
    /// The subdifferential there is `subgradient(x) + [-w_k, w_k]` along `k`.
    pub(crate) fn add_kink_weight(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ConvexExpr::Abs { var, shift } => {
                if (x[*var] - shift).abs() < KINK_TOL {
                    out[*var] += scale;
                }
            }
            ConvexExpr::Sum(terms) => {
                for (w, e) in terms {
                    e.add_kink_weight(x, scale * w, out);
                }
            }
            _ => {}
        }
    }

    /// Appends the `(variable, location)` of every non-differentiable point.
    pub fn kinks(&self, out: &mut Vec<(usize, f64)>) {
        match self {
            ConvexExpr::Abs { var, shift } => out.push((*var, *shift)),
            ConvexExpr::Sum(terms) => terms.iter().for_each(|(_, e)| e.kinks(out)),
            _ => {}
        }
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    // `{}` on f64 is the shortest representation that parses back exactly.
    write!(f, "{v}")
}

fn write_shifted_var(f: &mut fmt::Formatter<'_>, var: usize, shift: f64) -> fmt::Result {
    write!(f, "x{}", var + 1)?;
    if shift == 0.0 && shift.is_sign_positive() {
        Ok(())
    } else if shift.is_sign_negative() {
        f.write_str(" + ")?;
        write_num(f, -shift)
    } else {
        f.write_str(" - ")?;
        write_num(f, shift)
    }
}

/// Writes an affine function as `c1*x1 - x2 + 0.5`; `leading` controls
/// whether a positive first term gets an explicit `+ `.
fn write_affine(
    f: &mut fmt::Formatter<'_>,
    coeffs: &[(usize, f64)],
    constant: f64,
    leading: bool,
) -> fmt::Result {
    let mut first = !leading;
    let sign = |f: &mut fmt::Formatter<'_>, neg: bool, first: &mut bool| -> fmt::Result {
        let r = match (*first, neg) {
            (true, false) => Ok(()),
            (true, true) => f.write_str("-"),
            (false, false) => f.write_str(" + "),
            (false, true) => f.write_str(" - "),
        };
        *first = false;
        r
    };
    for (k, c) in coeffs {
        sign(f, c.is_sign_negative(), &mut first)?;
        let m = c.abs();
        if m != 1.0 {
            write_num(f, m)?;
            f.write_str("*")?;
        }
        write!(f, "x{}", k + 1)?;
    }
    if constant != 0.0 || coeffs.is_empty() {
        sign(f, constant.is_sign_negative(), &mut first)?;
        write_num(f, constant.abs())?;
    }
    Ok(())
}

impl fmt::Display for ConvexExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexExpr::Affine { coeffs, constant } => write_affine(f, coeffs, *constant, false),
            ConvexExpr::Quadratic { var, shift, coef } => {
                if *coef != 1.0 {
                    write_num(f, *coef)?;
                    f.write_str("*")?;
                }
                f.write_str("(")?;
                write_shifted_var(f, *var, *shift)?;
                f.write_str(")^2")
            }
            ConvexExpr::Abs { var, shift } => {
                f.write_str("abs(")?;
                write_shifted_var(f, *var, *shift)?;
                f.write_str(")")
            }
            ConvexExpr::Exp { var, offset } => {
                write!(f, "exp(x{})", var + 1)?;
                if *offset != 0.0 {
                    if offset.is_sign_negative() {
                        f.write_str(" + ")?;
                    } else {
                        f.write_str(" - ")?;
                    }
                    write_num(f, offset.abs())?;
                }
                Ok(())
            }
            ConvexExpr::Sum(terms) => {
                if terms.is_empty() {
                    return f.write_str("0");
                }
                for (i, (w, e)) in terms.iter().enumerate() {
                    if let ConvexExpr::Affine { coeffs, constant } = e {
                        if *w == 1.0 {
                            write_affine(f, coeffs, *constant, i > 0)?;
                            continue;
                        }
                    }
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    if *w != 1.0 {
                        write_num(f, *w)?;
                        f.write_str("*")?;
                    }
                    if matches!(e, ConvexExpr::Sum(_) | ConvexExpr::Affine { .. }) {
                        write!(f, "({e})")?;
                    } else {
                        write!(f, "{e}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// The components of `g_i: R^{n_i} -> R^{m_i}`; empty for an unconstrained
/// agent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintMap(pub Vec<ConvexExpr>);

impl ConstraintMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[ConvexExpr] {
        &self.0
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.iter().map(|g| g.eval(x)).collect()
    }
}

/// A local feasible set `Ω_i`.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalSet {
    Whole {
        dim: usize,
    },
    /// Per-coordinate bounds; infinite entries are allowed.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl LocalSet {
    pub fn whole(dim: usize) -> Self {
        LocalSet::Whole { dim }
    }

    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::invalid(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (k, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h || *l == f64::INFINITY || *h == f64::NEG_INFINITY {
                return Err(Error::invalid(format!(
                    "empty or malformed interval [{l}, {h}] on x{}",
                    k + 1
                )));
            }
        }
        Ok(LocalSet::Box { lo, hi })
    }

    /// Same interval on every coordinate.
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            LocalSet::Whole { dim } => *dim,
            LocalSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            LocalSet::Whole { .. } => false,
            LocalSet::Box { lo, hi } => lo.iter().chain(hi).all(|v| v.is_finite()),
        }
    }

    /// `(lo, hi)` of coordinate `k`.
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        match self {
            LocalSet::Whole { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            LocalSet::Box { lo, hi } => (lo[k], hi[k]),
        }
    }

    pub(crate) fn project_coord(&self, k: usize, v: f64) -> f64 {
        match self {
            LocalSet::Whole { .. } => v,
            LocalSet::Box { lo, hi } => v.max(lo[k]).min(hi[k]),
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| self.project_coord(k, v))
            .collect()
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let d = v - self.project_coord(k, v);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.distance(x) <= tol
    }

    /// A uniform sample; only bounded boxes can be sampled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if !self.is_bounded() {
            return Err(Error::invalid(
                "cannot sample uniformly from an unbounded set",
            ));
        }
        Ok((0..self.dim())
            .map(|k| {
                let (l, h) = self.bounds(k);
                if l == h {
                    l
                } else {
                    rng.gen_range(l..=h)
                }
            })
            .collect())
    }
}

/// Componentwise clamp onto a box; the identity on the whole space.
pub fn project_box(x: &[f64], s: &LocalSet) -> Result<Vec<f64>> {
    if x.len() != s.dim() {
        return Err(Error::invalid(format!(
            "vector has length {}, set has dimension {}",
            x.len(),
            s.dim()
        )));
    }
    Ok(s.project(x))
}

/// Projection onto the non-negative orthant.
pub fn project_nonneg(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| v.max(0.0)).collect()
}

/// Whether `w` lies in the normal cone of `s` at `x`, tested through
/// `P_s(x + w) = x`.
pub fn in_normal_cone(s: &LocalSet, x: &[f64], w: &[f64], tol: f64) -> Result<bool> {
    if x.len() != s.dim() || w.len() != s.dim() {
        return Err(Error::invalid("dimension mismatch in normal cone test"));
    }
    if !s.contains(x, tol) {
        return Err(Error::invalid(
            "normal cone is only defined at points of the set",
        ));
    }
    let shifted: Vec<f64> = x.iter().zip(w).map(|(a, b)| a + b).collect();
    let p = s.project(&shifted);
    let gap: f64 = p
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(gap <= tol)
}
