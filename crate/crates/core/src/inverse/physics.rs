//! Pointwise Aliev–Panfilov residuals of the model fields and their first and
//! second derivatives with respect to the local model outputs.

use crate::error::{Error, Result};
use crate::geometry::WeightedGraph;
use crate::model::FieldOutputs;
use crate::simkit::ApParams;

/// Residuals at one collocation point, linearized in the grid outputs it touches.
///
/// `node` indexes the grid slot of the collocation point; `nbrs` holds the grid
/// slots of its graph neighbours with the coefficient `-D / d_ij` that each
/// contributes to `d r_u / d u_j`.
pub(crate) struct LocalResidual {
    pub node: usize,
    pub r_u: f64,
    pub r_v: f64,
    pub ru_u: f64,
    pub ru_v: f64,
    pub nbrs: Vec<(usize, f64)>,
    pub rv_u: f64,
    pub rv_v: f64,
    // second derivatives; r_u has only (u,u) and (u,v) terms
    pub ru_uu: f64,
    pub rv_uu: f64,
    pub rv_uv: f64,
    pub rv_vv: f64,
}

/// `base` is the grid offset of the collocation frame, `i` the heart node.
pub(crate) fn local_residual(
    graph: &WeightedGraph,
    p: &ApParams,
    outs: &FieldOutputs,
    base: usize,
    i: usize,
) -> Result<LocalResidual> {
    let slot = base + i;
    let (u, v) = (outs.u[slot], outs.v[slot]);
    let mut lap = 0.0;
    let mut diag = 0.0;
    let mut nbrs = Vec::with_capacity(graph.neighbors(i).len());
    for &(j, d) in graph.neighbors(i) {
        let c = p.d / d;
        lap += c * (outs.u[base + j] - u);
        diag += c;
        nbrs.push((base + j, -c));
    }
    let den = u + p.mu2;
    if den == 0.0 {
        return Err(Error::Singularity { node: i });
    }
    let (a, k) = (p.a, p.k_r);
    let xi = p.e0 + p.mu1 * v / den;
    let h = -v - k * u * (u - a - 1.0);

    let f_u = -3.0 * u * u + 2.0 * (1.0 + a) * u - a;
    let f_uu = -6.0 * u + 2.0 * (1.0 + a);
    let xi_u = -p.mu1 * v / (den * den);
    let xi_v = p.mu1 / den;
    let xi_uu = 2.0 * p.mu1 * v / (den * den * den);
    let xi_uv = -p.mu1 / (den * den);
    let h_u = -k * (2.0 * u - a - 1.0);
    let h_v = -1.0;
    let h_uu = -2.0 * k;

    let g_u = xi_u * h + xi * h_u;
    let g_v = xi_v * h + xi * h_v;
    let g_uu = xi_uu * h + 2.0 * xi_u * h_u + xi * h_uu;
    let g_uv = xi_uv * h + xi_u * h_v + xi_v * h_u;
    let g_vv = 2.0 * xi_v * h_v;

    Ok(LocalResidual {
        node: slot,
        r_u: outs.du_dt[slot] - lap - k * p.excitation(u) + u * v,
        r_v: outs.dv_dt[slot] - xi * h,
        ru_u: diag - k * f_u + v,
        ru_v: u,
        nbrs,
        rv_u: -g_u,
        rv_v: -g_v,
        ru_uu: -k * f_uu,
        rv_uu: -g_uu,
        rv_uv: -g_uv,
        rv_vv: -g_vv,
    })
}

impl LocalResidual {
    pub fn squared(&self) -> f64 {
        self.r_u * self.r_u + self.r_v * self.r_v
    }

    /// Adds `scale * d(r_u^2 + r_v^2)/d outputs` into `cot`.
    pub fn add_gradient(&self, scale: f64, cot: &mut FieldOutputs) {
        let (a, b) = (2.0 * scale * self.r_u, 2.0 * scale * self.r_v);
        let s = self.node;
        cot.u[s] += a * self.ru_u + b * self.rv_u;
        cot.v[s] += a * self.ru_v + b * self.rv_v;
        cot.du_dt[s] += a;
        cot.dv_dt[s] += b;
        for &(j, c) in &self.nbrs {
            cot.u[j] += a * c;
        }
    }

    /// Directional derivatives `(dr_u, dr_v)` along the output perturbation `dir`.
    fn directional(&self, dir: &FieldOutputs) -> (f64, f64) {
        let s = self.node;
        let mut dr_u = self.ru_u * dir.u[s] + self.ru_v * dir.v[s] + dir.du_dt[s];
        for &(j, c) in &self.nbrs {
            dr_u += c * dir.u[j];
        }
        let dr_v = self.rv_u * dir.u[s] + self.rv_v * dir.v[s] + dir.dv_dt[s];
        (dr_u, dr_v)
    }

    /// Adds `scale * Hess_outputs(r_u^2 + r_v^2) . dir` into `out`.
    pub fn add_hessian_product(&self, scale: f64, dir: &FieldOutputs, out: &mut FieldOutputs) {
        let (dr_u, dr_v) = self.directional(dir);
        let s = self.node;
        let (du, dv) = (dir.u[s], dir.v[s]);
        let c = 2.0 * scale;
        // Gauss-Newton part
        out.u[s] += c * (dr_u * self.ru_u + dr_v * self.rv_u);
        out.v[s] += c * (dr_u * self.ru_v + dr_v * self.rv_v);
        out.du_dt[s] += c * dr_u;
        out.dv_dt[s] += c * dr_v;
        for &(j, cj) in &self.nbrs {
            out.u[j] += c * dr_u * cj;
        }
        // residual curvature
        out.u[s] += c * (self.r_u * (self.ru_uu * du + dv) + self.r_v * (self.rv_uu * du + self.rv_uv * dv));
        out.v[s] += c * (self.r_u * du + self.r_v * (self.rv_uv * du + self.rv_vv * dv));
    }
}
