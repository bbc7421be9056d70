use super::{Dynamics, SolverState};
use crate::error::{Error, Result};

/// A reference point must have KKT residual at most this to anchor `V`.
pub const REFERENCE_TOL: f64 = 1e-5;

/// The Lyapunov function and its parts, measured against an equilibrium
/// `(x̂, λ̂, μ̂)`:
///
/// ```text
/// V1 = F(x) + ½‖P⁺‖² + ½(x+λ)ᵀK(x+λ)
/// V2 = V1 − V1̂ − ∂ₓV1̂ᵀ(x−x̂) − (x̂+λ̂)ᵀK(λ−λ̂) − μ̂ᵀ(μ−μ̂)
/// V3 = ½‖x−x̂‖² + ½(λ−λ̂)ᵀ(2δI − K)(λ−λ̂)
/// V4 = ½‖μ−μ̂‖²
/// ```
///
/// `V2` is the Bregman divergence of `V1` at the reference, so it vanishes
/// there and is non-negative everywhere else; `V3` and `V4` are non-negative
/// quadratics. `v = V1 + V2 + V3 + V4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovValue {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

impl Dynamics {
    fn pplus(&self, s: &SolverState) -> Result<Vec<f64>> {
        let g = self.problem.constraints(&s.x)?;
        Ok(s.mu
            .iter()
            .zip(&g)
            .map(|(m, gk)| (m + gk).max(0.0))
            .collect())
    }

    pub fn v1(&self, s: &SolverState) -> Result<f64> {
        self.check_state(s)?;
        let f = self.problem.objective(&s.x)?;
        let pp = self.pplus(s)?;
        let xl: Vec<f64> = s.x.iter().zip(&s.lambda).map(|(a, b)| a + b).collect();
        let kxl = self.k.mul_vec(&xl)?;
        Ok(f + 0.5 * dot(&pp, &pp) + 0.5 * dot(&xl, &kxl))
    }

    pub fn eval_lyapunov(&self, s: &SolverState, reference: &SolverState) -> Result<LyapunovValue> {
        self.check_state(s)?;
        let res = self.kkt_residual(reference)?;
        if res.max() > REFERENCE_TOL {
            return Err(Error::invalid(format!(
                "Lyapunov reference is not an equilibrium (KKT residual {:e} > {REFERENCE_TOL:e})",
                res.max()
            )));
        }
        let dims = self.problem.dims();
        let v1 = self.v1(s)?;
        let v1_ref = self.v1(reference)?;

        let xl_ref: Vec<f64> = reference
            .x
            .iter()
            .zip(&reference.lambda)
            .map(|(a, b)| a + b)
            .collect();
        let kxl_ref = self.k.mul_vec(&xl_ref)?;
        let pp_ref = self.pplus(reference)?;
        // the same selection as the flow, so that x̂ = P_Ω(x̂ − grad) holds
        let mut grad = kxl_ref.clone();
        let mut width = vec![0.0; grad.len()];
        for (i, a) in self.problem.agents().iter().enumerate() {
            let b = dims.block(i);
            let xi = &reference.x[b.clone()];
            a.objective.add_subgradient(xi, 1.0, &mut grad[b.clone()]);
            a.objective.add_kink_weight(xi, 1.0, &mut width[b.clone()]);
            for (k, g) in a.constraints.components().iter().enumerate() {
                let w = pp_ref[self.mu_offsets[i] + k];
                if w != 0.0 {
                    g.add_subgradient(xi, w, &mut grad[b.clone()]);
                    g.add_kink_weight(xi, w, &mut width[b.clone()]);
                }
            }
        }
        for (g, w) in grad.iter_mut().zip(&width) {
            *g = super::shrink(*g, *w);
        }

        let dx: Vec<f64> = s.x.iter().zip(&reference.x).map(|(a, b)| a - b).collect();
        let dl: Vec<f64> = s
            .lambda
            .iter()
            .zip(&reference.lambda)
            .map(|(a, b)| a - b)
            .collect();
        let dm: Vec<f64> = s.mu.iter().zip(&reference.mu).map(|(a, b)| a - b).collect();

        let v2 = v1 - v1_ref - dot(&grad, &dx) - dot(&kxl_ref, &dl) - dot(&reference.mu, &dm);
        let kdl = self.k.mul_vec(&dl)?;
        let v3 = 0.5 * dot(&dx, &dx) + self.delta * dot(&dl, &dl) - 0.5 * dot(&dl, &kdl);
        let v4 = 0.5 * dot(&dm, &dm);
        Ok(LyapunovValue {
            v: v1 + v2 + v3 + v4,
            v1,
            v2,
            v3,
            v4,
        })
    }
}
