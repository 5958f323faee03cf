//! Exact diagonal of the squared-loss Hessian for scalar-output MLPs.
//!
//! For a parameter θ_k feeding neuron i of layer l, with `c_k` the incoming
//! activation (weights) or 1 (biases),
//!
//! ```text
//! [∇²L̂]_kk = (δ⁽ˡ⁾ᵢ c_k)² + (f − y) c_k² D⁽ˡ⁾ᵢ
//! ```
//!
//! where `D⁽ˡ⁾ᵢ = ∂δ⁽ˡ⁾ᵢ/∂z⁽ˡ⁾ᵢ`. Close to the output it obeys
//!
//! ```text
//! D⁽ᴸ⁾ = 0
//! D⁽ˡ⁾ᵢ = σ''(z⁽ˡ⁾ᵢ) S⁽ˡ⁾ᵢ + σ'(z⁽ˡ⁾ᵢ)² Σ_t D⁽ˡ⁺¹⁾_t (W⁽ˡ⁺¹⁾_{ti})²,
//! S⁽ˡ⁾ᵢ = Σ_t δ⁽ˡ⁺¹⁾_t W⁽ˡ⁺¹⁾_{ti},
//! ```
//!
//! and deeper in the network [`d_table`] carries the full same-layer Jacobian
//! of δ so that cross terms between neurons are not lost. The path expansion
//! in [`hessian_diag_paths`] and two finite-difference oracles cross-check it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::network::{Deltas, ForwardTrace, Network, ParamKind};
use crate::par;

/// Largest network [`hessian_diag_paths`] accepts.
pub const PATH_MAX_HIDDEN_NEURONS: usize = 12;
pub const PATH_MAX_DEPTH: usize = 4;

/// Default step of the second-difference oracle.
pub const FD_STEP: f64 = 1e-4;

/// `d[l - 1][i] = D⁽ˡ⁾ᵢ`; the output layer entry is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DTable {
    pub d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianDiagReport {
    pub diag: Vec<f64>,
    pub gauss_newton_part: Vec<f64>,
    pub residual_part: Vec<f64>,
    /// f − y
    pub residual: f64,
    pub normalized_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average the per-sample diagonals, then take the normalized norm.
    #[default]
    MeanDiagThenNorm,
    /// Average the per-sample normalized norms.
    MeanOfNorms,
}

fn require_curvature<A: Activation + ?Sized>(act: &A) -> Result<()> {
    if act.twice_differentiable() {
        Ok(())
    } else {
        Err(Error::UnsupportedActivation(act.label()))
    }
}

pub fn d_table(net: &Network, trace: &ForwardTrace, deltas: &Deltas) -> Result<DTable> {
    d_table_with(net, &net.activation(), trace, deltas)
}

/// Backward recursion for D with S summed directly from δ⁽ˡ⁺¹⁾.
///
/// `D⁽ˡ⁾ᵢ` is the diagonal of the same-layer Jacobian `M⁽ˡ⁾ = ∂δ⁽ˡ⁾/∂z⁽ˡ⁾`,
///
/// ```text
/// M⁽ᴸ⁾ = 0
/// M⁽ˡ⁾ = diag(σ''(z⁽ˡ⁾) ⊙ S⁽ˡ⁾) + diag(σ'(z⁽ˡ⁾)) (W⁽ˡ⁺¹⁾)ᵀ M⁽ˡ⁺¹⁾ W⁽ˡ⁺¹⁾ diag(σ'(z⁽ˡ⁾))
/// ```
///
/// Whenever `M⁽ˡ⁺¹⁾` is diagonal (always true for l ≥ L−2) this is the scalar
/// recursion `σ''S + σ'² Σ_t D⁽ˡ⁺¹⁾_t W_{ti}²`. Further from the output the
/// off-diagonal entries of `M⁽ˡ⁺¹⁾` contribute too, and are kept here.
pub fn d_table_with<A: Activation + ?Sized>(
    net: &Network,
    act: &A,
    trace: &ForwardTrace,
    deltas: &Deltas,
) -> Result<DTable> {
    require_curvature(act)?;
    let depth = net.depth();
    let mut d = vec![Vec::new(); depth];
    d[depth - 1] = vec![0.0];
    // Full M⁽ˡ⁺¹⁾ (row-major), or None while it is still diagonal.
    let mut next: Option<Vec<f64>> = None;
    for l in (0..depth - 1).rev() {
        let s = net.back_sum(l + 1, &deltas.delta[l + 1]);
        let n_out = net.widths()[l + 2];
        let n_in = net.widths()[l + 1];
        let w = net.weights(l + 2);
        let slope: Vec<f64> = trace.z[l].iter().map(|&z| act.slope(z)).collect();
        let curv: Vec<f64> = trace.z[l].iter().map(|&z| act.curvature(z)).collect();

        // P = Wᵀ M⁽ˡ⁺¹⁾ W, an n_in × n_in matrix.
        let mut prop = vec![0.0; n_in * n_in];
        match &next {
            None => {
                for t in 0..n_out {
                    let dt = d[l + 1][t];
                    if dt == 0.0 {
                        continue;
                    }
                    let row = &w[t * n_in..(t + 1) * n_in];
                    for a in 0..n_in {
                        let wa = dt * row[a];
                        for b in 0..n_in {
                            prop[a * n_in + b] += wa * row[b];
                        }
                    }
                }
            }
            Some(m) => {
                // MW = M⁽ˡ⁺¹⁾ W (n_out × n_in), then P = Wᵀ (MW).
                let mut mw = vec![0.0; n_out * n_in];
                for t in 0..n_out {
                    for u in 0..n_out {
                        let mtu = m[t * n_out + u];
                        for b in 0..n_in {
                            mw[t * n_in + b] += mtu * w[u * n_in + b];
                        }
                    }
                }
                for t in 0..n_out {
                    for a in 0..n_in {
                        let wta = w[t * n_in + a];
                        for b in 0..n_in {
                            prop[a * n_in + b] += wta * mw[t * n_in + b];
                        }
                    }
                }
            }
        }
        let mut m = prop;
        for a in 0..n_in {
            for b in 0..n_in {
                m[a * n_in + b] *= slope[a] * slope[b];
            }
            m[a * n_in + a] += curv[a] * s[a];
        }
        d[l] = (0..n_in).map(|a| m[a * n_in + a]).collect();
        next = Some(m);
    }
    Ok(DTable { d })
}

/// Exact Hessian diagonal of ½(f − y)² at one sample.
pub fn hessian_diag_exact(net: &Network, x: &[f64], y: f64) -> Result<HessianDiagReport> {
    hessian_diag_exact_with(net, &net.activation(), x, y)
}

pub fn hessian_diag_exact_with<A: Activation + ?Sized>(
    net: &Network,
    act: &A,
    x: &[f64],
    y: f64,
) -> Result<HessianDiagReport> {
    require_curvature(act)?;
    let trace = net.forward_with(act, x)?;
    let deltas = net.backprop_deltas_with(act, &trace);
    let table = d_table_with(net, act, &trace, &deltas)?;
    Ok(assemble(net, &trace, &deltas, &table.d, y))
}

/// Combines per-neuron δ and D into per-parameter entries.
fn assemble(net: &Network, trace: &ForwardTrace, deltas: &Deltas, d: &[Vec<f64>], y: f64) -> HessianDiagReport {
    let p = net.param_count();
    let r = trace.f - y;
    let mut gn = Vec::with_capacity(p);
    let mut res = Vec::with_capacity(p);
    for l in 0..net.depth() {
        let input = &trace.h[l];
        for (&delta, &dl) in deltas.delta[l].iter().zip(&d[l]) {
            for &c in input {
                let g = delta * c;
                gn.push(g * g);
                res.push(r * c * c * dl);
            }
        }
        for (&delta, &dl) in deltas.delta[l].iter().zip(&d[l]) {
            gn.push(delta * delta);
            res.push(r * dl);
        }
    }
    let diag: Vec<f64> = gn.iter().zip(&res).map(|(g, s)| g + s).collect();
    let normalized_norm = rms(&diag);
    HessianDiagReport {
        diag,
        gauss_newton_part: gn,
        residual_part: res,
        residual: r,
        normalized_norm,
    }
}

/// Same report as [`hessian_diag_exact`], with every D⁽ˡ⁾ᵢ obtained by
/// enumerating all neuron paths `(l, i) → (r, j)` through the hidden layers.
/// Each path carries the product `Π_s σ'(z⁽ˢ⁾_{i_s}) W⁽ˢ⁺¹⁾_{i_{s+1} i_s}`; the
/// products of all paths ending at the same `(r, j)` are summed, and
///
/// ```text
/// D⁽ˡ⁾ᵢ = Σ_{r, j} σ''(z⁽ʳ⁾ⱼ) · δ⁽ʳ⁾ⱼ / σ'(z⁽ʳ⁾ⱼ) · (Σ_{paths to (r, j)} Π)²
/// ```
///
/// When a single path reaches `(r, j)` (every target within one layer of
/// `(l, i)`), the square of the sum is the product of squared factors
/// `Π σ'² W²`. With more than one path the cross terms matter.
///
/// Path count grows as the product of layer widths, so the network must have
/// at most [`PATH_MAX_HIDDEN_NEURONS`] hidden neurons and depth
/// [`PATH_MAX_DEPTH`].
pub fn hessian_diag_paths(net: &Network, x: &[f64], y: f64) -> Result<HessianDiagReport> {
    let act = net.activation();
    require_curvature(&act)?;
    check_path_capacity(net)?;
    let trace = net.forward(x)?;
    let curv: Vec<Vec<f64>> = trace.z[..net.depth() - 1]
        .iter()
        .map(|zl| zl.iter().map(|&z| act.curvature(z)).collect())
        .collect();
    paths_report(net, &act, &trace, &curv, y)
}

/// Path expansion with caller-supplied σ'' values at every hidden neuron
/// (`curvature[l - 1][i]` replaces σ''(z⁽ˡ⁾ᵢ)); σ' and δ are unchanged.
pub fn hessian_diag_paths_with_curvature(
    net: &Network,
    x: &[f64],
    y: f64,
    curvature: &[Vec<f64>],
) -> Result<HessianDiagReport> {
    let act = net.activation();
    check_path_capacity(net)?;
    let hidden = &net.widths()[1..net.depth()];
    if curvature.len() != hidden.len() {
        return Err(Error::Shape {
            expected: hidden.len(),
            got: curvature.len(),
        });
    }
    for (c, &n) in curvature.iter().zip(hidden) {
        if c.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: c.len(),
            });
        }
    }
    let trace = net.forward(x)?;
    paths_report(net, &act, &trace, curvature, y)
}

fn check_path_capacity(net: &Network) -> Result<()> {
    if net.depth() > PATH_MAX_DEPTH || net.hidden_neurons() > PATH_MAX_HIDDEN_NEURONS {
        return Err(Error::Capacity(format!(
            "path expansion supports depth <= {PATH_MAX_DEPTH} and <= {PATH_MAX_HIDDEN_NEURONS} hidden neurons, got depth {} with {}",
            net.depth(),
            net.hidden_neurons()
        )));
    }
    Ok(())
}

fn paths_report<A: Activation + ?Sized>(
    net: &Network,
    act: &A,
    trace: &ForwardTrace,
    curv: &[Vec<f64>],
    y: f64,
) -> Result<HessianDiagReport> {
    let deltas = net.backprop_deltas_with(act, trace);
    let hidden_layers = net.depth() - 1;
    let slopes: Vec<Vec<f64>> = trace.z[..hidden_layers]
        .iter()
        .map(|zl| zl.iter().map(|&z| act.slope(z)).collect())
        .collect();
    // δ/σ' at every hidden neuron, in the division form the expansion is written in.
    let mut ratio = Vec::with_capacity(hidden_layers);
    for (l, (dl, sl)) in deltas.delta.iter().zip(&slopes).enumerate() {
        let mut row = Vec::with_capacity(dl.len());
        for (j, (&d, &s)) in dl.iter().zip(sl).enumerate() {
            if s.abs() < 1e-300 {
                return Err(Error::Singular(format!(
                    "sigma'(z) = {s:e} at layer {} neuron {j}",
                    l + 1
                )));
            }
            row.push(d / s);
        }
        ratio.push(row);
    }
    let walker = PathWalker { net, slopes: &slopes };
    let mut d: Vec<Vec<f64>> = Vec::with_capacity(hidden_layers + 1);
    for l in 0..hidden_layers {
        let mut row = Vec::with_capacity(net.widths()[l + 1]);
        for i in 0..net.widths()[l + 1] {
            // reach[r][j]: summed path products (l, i) → (r, j)
            let mut reach: Vec<Vec<f64>> = (0..hidden_layers).map(|r| vec![0.0; net.widths()[r + 1]]).collect();
            walker.walk(l, i, 1.0, &mut reach);
            let mut total = 0.0;
            for r in l..hidden_layers {
                for (j, &a) in reach[r].iter().enumerate() {
                    total += curv[r][j] * ratio[r][j] * a * a;
                }
            }
            row.push(total);
        }
        d.push(row);
    }
    d.push(vec![0.0]);
    Ok(assemble(net, trace, &deltas, &d, y))
}

struct PathWalker<'a> {
    net: &'a Network,
    slopes: &'a [Vec<f64>],
}

impl PathWalker<'_> {
    /// Depth-first enumeration of every path continuing from hidden neuron
    /// `(l, j)` (0-based layer) that arrived with product `prod`.
    fn walk(&self, l: usize, j: usize, prod: f64, reach: &mut [Vec<f64>]) {
        reach[l][j] += prod;
        if l + 1 < self.slopes.len() {
            let s = self.slopes[l][j];
            for t in 0..self.net.widths()[l + 2] {
                let w = self.net.weight(l + 2, t, j);
                self.walk(l + 1, t, prod * s * w, reach);
            }
        }
    }
}

/// Second central difference of the loss in each parameter:
/// `(L̂(θ + h e_k) − 2 L̂(θ) + L̂(θ − h e_k)) / h²`.
pub fn hessian_diag_fd(net: &Network, x: &[f64], y: f64, h: f64) -> Result<Vec<f64>> {
    let base = net.loss(x, y)?;
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.param_count());
    for k in 0..net.param_count() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + h;
        let up = probe.loss(x, y)?;
        *probe.param_mut(k) = orig - h;
        let down = probe.loss(x, y)?;
        *probe.param_mut(k) = orig;
        out.push((up - 2.0 * base + down) / (h * h));
    }
    Ok(out)
}

/// Central difference of the analytic gradient:
/// `(g_k(θ + h e_k) − g_k(θ − h e_k)) / 2h`.
pub fn hessian_diag_fd_grad(net: &Network, x: &[f64], y: f64, h: f64) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.param_count());
    for k in 0..net.param_count() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + h;
        let up = probe.grad_params(x, y)?[k];
        *probe.param_mut(k) = orig - h;
        let down = probe.grad_params(x, y)?[k];
        *probe.param_mut(k) = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `√((1/p) Σ_k diag_k²)`
pub fn normalized_diag_norm(diag: &[f64], p: usize) -> Result<f64> {
    if p == 0 {
        return Err(Error::Domain("normalized norm needs p >= 1".into()));
    }
    if diag.len() != p {
        return Err(Error::Shape {
            expected: p,
            got: diag.len(),
        });
    }
    Ok(rms(diag))
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|d| d * d).sum::<f64>() / v.len() as f64).sqrt()
}

/// Normalized Hessian diagonal norm over a dataset.
///
/// Per-sample reports are computed in parallel and reduced in sample order.
pub fn dataset_diag_norm(net: &Network, samples: &[Sample], reduction: Reduction) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("dataset_diag_norm on an empty dataset".into()));
    }
    let reports = par::map(samples, |_, s| hessian_diag_exact(net, &s.x, s.y));
    let n = samples.len() as f64;
    match reduction {
        Reduction::MeanDiagThenNorm => {
            let mut mean = vec![0.0; net.param_count()];
            for r in reports {
                for (m, d) in mean.iter_mut().zip(r?.diag) {
                    *m += d;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            normalized_diag_norm(&mean, net.param_count())
        }
        Reduction::MeanOfNorms => {
            let mut sum = 0.0;
            for r in reports {
                sum += r?.normalized_norm;
            }
            Ok(sum / n)
        }
    }
}

/// Single-hidden-layer closed forms, coded directly:
/// hidden weight `(W⁽²⁾ᵢ σ'(zᵢ) xⱼ)² + (f − y) W⁽²⁾ᵢ σ''(zᵢ) xⱼ²`, hidden bias
/// `(W⁽²⁾ᵢ σ'(zᵢ))² + (f − y) W⁽²⁾ᵢ σ''(zᵢ)`, output weight `hᵢ²`, output
/// bias 1.
pub fn single_hidden_layer_closed_form(net: &Network, x: &[f64], y: f64) -> Result<Vec<f64>> {
    if net.depth() != 2 {
        return Err(Error::Config(format!(
            "closed form needs exactly one hidden layer, got depth {}",
            net.depth()
        )));
    }
    let act = net.activation();
    require_curvature(&act)?;
    let t = net.forward(x)?;
    let r = t.f - y;
    let n_hidden = net.widths()[1];
    let w2 = net.weights(2);
    let mut out = Vec::with_capacity(net.param_count());
    for i in 0..n_hidden {
        let z = t.z[0][i];
        for &xj in x {
            let g = w2[i] * act.slope(z) * xj;
            out.push(g * g + r * w2[i] * act.curvature(z) * xj * xj);
        }
    }
    for i in 0..n_hidden {
        let z = t.z[0][i];
        let g = w2[i] * act.slope(z);
        out.push(g * g + r * w2[i] * act.curvature(z));
    }
    for &hi in &t.h[1] {
        out.push(hi * hi);
    }
    out.push(1.0);
    Ok(out)
}

impl HessianDiagReport {
    /// CSV rows `parameter_index,layer,kind,diag,gn,residual_part`.
    pub fn write_csv<W: Write>(&self, net: &Network, out: W) -> Result<()> {
        if self.diag.len() != net.param_count() {
            return Err(Error::Shape {
                expected: net.param_count(),
                got: self.diag.len(),
            });
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter_index", "layer", "kind", "diag", "gn", "residual_part"])?;
        for k in 0..self.diag.len() {
            let r = net.param_ref(k);
            let kind = match r.kind {
                ParamKind::Weight { .. } => "weight",
                ParamKind::Bias { .. } => "bias",
            };
            w.write_record([
                k.to_string(),
                r.layer.to_string(),
                kind.to_string(),
                self.diag[k].to_string(),
                self.gauss_newton_part[k].to_string(),
                self.residual_part[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
