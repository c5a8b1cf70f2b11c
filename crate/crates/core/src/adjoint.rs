//! Sensitivities of the discrete forward map.
//!
//! Differentiating one θ-step `A_k u^{k+1} = B_k u^k + b_k` with respect to the
//! half-step diffusion `α_k` gives the tangent recursion
//!
//! ```text
//! A_k v^{k+1} = B_k v^k + dt · δα_k ∘ (θ G(u^{k+1}) + (1 − θ) G(u^k)),
//! ```
//!
//! with `G(u) = u_yy − u_y` (discrete). The adjoint runs the transposed
//! recursion backward in τ, so gradients are exact for the discrete misfit.

use crate::dupire::{cell_averaged_payoff, convexity_term, DupireModel, StepOperator};
use crate::error::{invalid, Error, Result};
use crate::grid::{h1_norm, l2_norm, Grid, Surface};

/// Gradient of `‖u(a) − u_obs‖²` in its L² representation.
#[derive(Clone, Debug)]
pub struct MisfitGradient {
    pub surface: Surface,
    pub misfit_value: f64,
}

/// `θ G(u^{k+1}) + (1 − θ) G(u^k)` on interior nodes of step `k`.
fn step_source(model: &DupireModel, u: &Surface, k: usize, theta: f64) -> Vec<f64> {
    let g = u.grid();
    let dy = g.d_y();
    let start;
    let r0 = if k == 0 {
        start = cell_averaged_payoff(g, &model.params);
        &start[..]
    } else {
        u.row(k)
    };
    let r1 = u.row(k + 1);
    (1..g.n_y)
        .map(|j| theta * convexity_term(r1, j, dy) + (1.0 - theta) * convexity_term(r0, j, dy))
        .collect()
}

fn check_direction(a: &Surface, h: &Surface) -> Result<()> {
    a.check_same_grid(h)?;
    h.check_finite()
}

/// `F'(a)h` given the already computed prices `u = u(a)`.
pub(crate) fn tangent_with(model: &DupireModel, a: &Surface, u: &Surface, h: &Surface) -> Result<Surface> {
    let g = *a.grid();
    let (dt, n) = (g.d_tau(), g.n_y);
    let mut v = vec![0.0; g.node_count()];
    for k in 0..g.n_tau {
        let theta = model.theta(k);
        let op = StepOperator::new(a, k, theta, model.params.rate);
        let src = step_source(model, u, k, theta);
        let (h0, h1) = (h.row(k), h.row(k + 1));
        let prev = &v[k * (n + 1) + 1..k * (n + 1) + n];
        let mut rhs = op.explicit(dt).mul_vec(prev);
        for (jj, r) in rhs.iter_mut().enumerate() {
            let j = jj + 1;
            *r += dt * 0.5 * (h0[j] + h1[j]) * src[jj];
        }
        let next = op.implicit(dt).solve(&rhs)?;
        v[(k + 1) * (n + 1) + 1..(k + 1) * (n + 1) + n].copy_from_slice(&next);
    }
    Surface::new(g, v).map_err(|e| Error::Numerical(e.to_string()))
}

/// Linearized price response `F'(a)h`.
pub fn directional_derivative(model: &DupireModel, a: &Surface, h: &Surface) -> Result<Surface> {
    check_direction(a, h)?;
    let u = model.solve(a)?;
    tangent_with(model, a, &u, h)
}

/// Euclidean gradient with respect to the nodal values of `a` of the linear
/// functional `v ↦ Σ source·v` applied to `v = F'(a)·`.
pub(crate) fn adjoint_euclidean(model: &DupireModel, a: &Surface, u: &Surface, source: &[f64]) -> Result<Vec<f64>> {
    let g: Grid = *a.grid();
    let (dt, n, nt) = (g.d_tau(), g.n_y, g.n_tau);
    let mut grad = vec![0.0; g.node_count()];
    let mut psi_next: Option<Vec<f64>> = None;
    let mut op_next: Option<StepOperator> = None;
    for k in (1..=nt).rev() {
        // ψ^k = A_{k-1}^{-T} (s^k + B_k^T ψ^{k+1})
        let mut rhs: Vec<f64> = source[k * (n + 1) + 1..k * (n + 1) + n].to_vec();
        if let (Some(psi), Some(opn)) = (&psi_next, &op_next) {
            let bt = opn.explicit(dt).transpose().mul_vec(psi);
            rhs.iter_mut().zip(bt).for_each(|(r, b)| *r += b);
        }
        let theta = model.theta(k - 1);
        let op = StepOperator::new(a, k - 1, theta, model.params.rate);
        let psi = op.implicit(dt).transpose().solve(&rhs)?;
        let src = step_source(model, u, k - 1, theta);
        for jj in 0..n - 1 {
            let e = 0.5 * dt * psi[jj] * src[jj];
            grad[g.idx(k - 1, jj + 1)] += e;
            grad[g.idx(k, jj + 1)] += e;
        }
        psi_next = Some(psi);
        op_next = Some(op);
    }
    Ok(grad)
}

/// `F'(a)* w` in its L² representation: `⟨F'(a)h, w⟩ = ⟨h, F'(a)* w⟩`.
pub fn adjoint_derivative(model: &DupireModel, a: &Surface, w: &Surface) -> Result<Surface> {
    check_direction(a, w)?;
    let u = model.solve(a)?;
    let weights = a.grid().weights();
    let source: Vec<f64> = w.values().iter().zip(&weights).map(|(v, q)| v * q).collect();
    let e = adjoint_euclidean(model, a, &u, &source)?;
    Surface::new(*a.grid(), e.iter().zip(&weights).map(|(g, q)| g / q).collect())
}

/// Misfit `Σ W·mask·(u − d)²`, prices and the Euclidean gradient.
pub(crate) fn misfit_euclidean(
    model: &DupireModel,
    a: &Surface,
    u_obs: &Surface,
    mask: Option<&[f64]>,
) -> Result<(f64, Surface, Vec<f64>)> {
    let u = model.solve(a)?;
    u.check_same_grid(u_obs)?;
    let weights = a.grid().weights();
    let mut misfit = 0.0;
    let source: Vec<f64> = (0..weights.len())
        .map(|k| {
            let w = weights[k] * mask.map_or(1.0, |m| m[k]);
            let r = u.values()[k] - u_obs.values()[k];
            misfit += w * r * r;
            2.0 * w * r
        })
        .collect();
    let grad = adjoint_euclidean(model, a, &u, &source)?;
    Ok((misfit, u, grad))
}

/// Value and L²-gradient of `‖u(a) − u_obs‖²`.
pub fn misfit_gradient(model: &DupireModel, a: &Surface, u_obs: &Surface) -> Result<MisfitGradient> {
    a.check_same_grid(u_obs)?;
    let (misfit_value, _, e) = misfit_euclidean(model, a, u_obs, None)?;
    let weights = a.grid().weights();
    let surface = Surface::new(*a.grid(), e.iter().zip(&weights).map(|(g, q)| g / q).collect())?;
    Ok(MisfitGradient { surface, misfit_value })
}

/// `‖F(a) − F(ã) − F'(ã)(a − ã)‖ / ‖F(a) − F(ã)‖`.
pub fn check_tangential_cone(model: &DupireModel, a: &Surface, a_tilde: &Surface) -> Result<f64> {
    a.check_same_grid(a_tilde)?;
    let ua = model.solve(a)?;
    let ut = model.solve(a_tilde)?;
    let diff = ua.sub(&ut)?;
    let den = l2_norm(&diff)?;
    if den < 1e-14 {
        return Err(Error::DegeneratePair(format!("‖F(a) − F(ã)‖ = {den:e}")));
    }
    let lin = tangent_with(model, a_tilde, &ut, &a.sub(a_tilde)?)?;
    Ok(l2_norm(&diff.sub(&lin)?)? / den)
}

/// Largest `‖(F'(a) − F'(a+h))φ‖ / (‖h‖_{H¹}‖φ‖_{H¹})` over the probe directions.
pub fn check_lipschitz_derivative(model: &DupireModel, a: &Surface, h: &Surface, probes: &[Surface]) -> Result<f64> {
    check_direction(a, h)?;
    if probes.is_empty() {
        return invalid("at least one probe direction is required");
    }
    let hn = h1_norm(h)?;
    if hn == 0.0 {
        return Ok(0.0);
    }
    let a_h = a.add(h)?;
    let (u, u_h) = (model.solve(a)?, model.solve(&a_h)?);
    let mut best: f64 = 0.0;
    for phi in probes {
        check_direction(a, phi)?;
        let pn = h1_norm(phi)?;
        if pn == 0.0 {
            continue;
        }
        let d = tangent_with(model, a, &u, phi)?.sub(&tangent_with(model, &a_h, &u_h, phi)?)?;
        best = best.max(l2_norm(&d)? / (hn * pn));
    }
    Ok(best)
}
