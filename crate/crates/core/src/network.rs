//! Fully-connected networks with a linear scalar output.
//!
//! Layers are numbered 1..=L as in `z⁽ˡ⁾ = W⁽ˡ⁾ h⁽ˡ⁻¹⁾ + b⁽ˡ⁾`, but every
//! per-layer `Vec` in this module is 0-based: `weights[l - 1]` holds `W⁽ˡ⁾`.
//! `W⁽ˡ⁾` has shape `n_l × n_{l-1}` and is stored row-major.
//!
//! Parameters are ordered layer by layer, each layer's weights (row-major)
//! before its biases. Gradients and Hessian diagonals use this ordering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activation::{Activation, ActivationSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Normal(0, 2 / fan_in)
    He,
    /// Uniform(±√(6 / (fan_in + fan_out)))
    Xavier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr")]
pub struct Network {
    widths: Vec<usize>,
    activation: ActivationSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct NetworkRepr {
    widths: Vec<usize>,
    activation: ActivationSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::from_parts(r.widths, r.activation, r.weights, r.biases)
    }
}

/// Cached quantities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `z[l - 1] = z⁽ˡ⁾` for l = 1..=L; the last entry has length 1.
    pub z: Vec<Vec<f64>>,
    /// `h[0] = x`, `h[l] = σ(z⁽ˡ⁾)` for l = 1..L-1.
    pub h: Vec<Vec<f64>>,
    pub f: f64,
}

/// `delta[l - 1][i] = ∂f/∂z⁽ˡ⁾ᵢ`; the last layer is `[1.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Deltas {
    pub delta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight { row: usize, col: usize },
    Bias { row: usize },
}

/// Position of one parameter in the flat ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamRef {
    pub index: usize,
    /// 1-based layer number.
    pub layer: usize,
    pub kind: ParamKind,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "need at least an input and an output width, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Config(format!("zero width in {widths:?}")));
    }
    if widths[widths.len() - 1] != 1 {
        return Err(Error::Config(format!(
            "output layer must be scalar (width 1), got {widths:?}"
        )));
    }
    Ok(())
}

impl Network {
    /// Random initialisation with zero biases; deterministic in `seed`.
    pub fn init(widths: &[usize], activation: ActivationSpec, seed: u64, scheme: InitScheme) -> Result<Self> {
        check_widths(widths)?;
        activation.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let n = fan_in * fan_out;
            let w: Vec<f64> = match scheme {
                InitScheme::He => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
                InitScheme::Xavier => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
                }
            };
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Network {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit row-major weights and biases.
    pub fn from_parts(
        widths: Vec<usize>,
        activation: ActivationSpec,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_widths(&widths)?;
        activation.validate()?;
        let layers = widths.len() - 1;
        if weights.len() != layers {
            return Err(Error::Shape {
                expected: layers,
                got: weights.len(),
            });
        }
        if biases.len() != layers {
            return Err(Error::Shape {
                expected: layers,
                got: biases.len(),
            });
        }
        for l in 0..layers {
            let want = widths[l] * widths[l + 1];
            if weights[l].len() != want {
                return Err(Error::Shape {
                    expected: want,
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != widths[l + 1] {
                return Err(Error::Shape {
                    expected: widths[l + 1],
                    got: biases[l].len(),
                });
            }
        }
        Ok(Network {
            widths,
            activation,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> ActivationSpec {
        self.activation
    }

    /// Number of weight layers L.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Total hidden neurons Σ_{l<L} n_l.
    pub fn hidden_neurons(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().sum()
    }

    /// p = Σ_l n_l (n_{l-1} + 1)
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Row-major `W⁽ˡ⁾` for 1-based `layer`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer - 1]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer - 1]
    }

    /// `W⁽ˡ⁾[row][col]`.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.weights[layer - 1][row * self.widths[layer - 1] + col]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer - 1]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer - 1]
    }

    /// All parameters in the canonical order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&theta[off..off + nw]);
            off += nw;
            b.copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mutable access to parameter `k` in the canonical order.
    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let r = self.param_ref(k);
        match r.kind {
            ParamKind::Weight { row, col } => {
                let n_in = self.widths[r.layer - 1];
                &mut self.weights[r.layer - 1][row * n_in + col]
            }
            ParamKind::Bias { row } => &mut self.biases[r.layer - 1][row],
        }
    }

    /// Locates parameter `k`. Panics if `k >= param_count()`.
    pub fn param_ref(&self, k: usize) -> ParamRef {
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let nw = n_in * n_out;
            if k < off + nw {
                let r = k - off;
                return ParamRef {
                    index: k,
                    layer: l + 1,
                    kind: ParamKind::Weight {
                        row: r / n_in,
                        col: r % n_in,
                    },
                };
            }
            off += nw;
            if k < off + n_out {
                return ParamRef {
                    index: k,
                    layer: l + 1,
                    kind: ParamKind::Bias { row: k - off },
                };
            }
            off += n_out;
        }
        panic!("parameter index {k} out of range ({} parameters)", off);
    }

    pub fn param_refs(&self) -> Vec<ParamRef> {
        (0..self.param_count()).map(|k| self.param_ref(k)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward_with(&self.activation, x)
    }

    /// Forward pass with `act` in place of the network's own activation.
    pub fn forward_with<A: Activation + ?Sized>(&self, act: &A, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.widths[0] {
            return Err(Error::Shape {
                expected: self.widths[0],
                got: x.len(),
            });
        }
        let depth = self.depth();
        let mut z = Vec::with_capacity(depth);
        let mut h = Vec::with_capacity(depth);
        h.push(x.to_vec());
        for l in 0..depth {
            let zl = affine(&self.weights[l], &self.biases[l], &h[l]);
            if l + 1 < depth {
                h.push(zl.iter().map(|&v| act.value(v)).collect());
            }
            z.push(zl);
        }
        let f = z[depth - 1][0];
        Ok(ForwardTrace { z, h, f })
    }

    /// Network output f(x).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.f)
    }

    pub fn backprop_deltas(&self, trace: &ForwardTrace) -> Deltas {
        self.backprop_deltas_with(&self.activation, trace)
    }

    /// δ⁽ᴸ⁾ = 1, δ⁽ˡ⁾ᵢ = σ'(z⁽ˡ⁾ᵢ) Σ_t δ⁽ˡ⁺¹⁾_t W⁽ˡ⁺¹⁾_{ti}.
    pub fn backprop_deltas_with<A: Activation + ?Sized>(&self, act: &A, trace: &ForwardTrace) -> Deltas {
        let depth = self.depth();
        let mut delta = vec![Vec::new(); depth];
        delta[depth - 1] = vec![1.0];
        for l in (0..depth - 1).rev() {
            let s = self.back_sum(l + 1, &delta[l + 1]);
            delta[l] = s.iter().zip(&trace.z[l]).map(|(&s, &z)| act.slope(z) * s).collect();
        }
        Deltas { delta }
    }

    /// `(W⁽ˡ⁾)ᵀ v` for 0-based weight index `l`, i.e. Σ_t v_t W_{ti}.
    pub(crate) fn back_sum(&self, l: usize, v: &[f64]) -> Vec<f64> {
        let n_in = self.widths[l];
        let w = &self.weights[l];
        let mut out = vec![0.0; n_in];
        for (t, &vt) in v.iter().enumerate() {
            let row = &w[t * n_in..(t + 1) * n_in];
            for (o, &wti) in out.iter_mut().zip(row) {
                *o += vt * wti;
            }
        }
        out
    }

    /// ½ (f − y)²
    pub fn loss(&self, x: &[f64], y: f64) -> Result<f64> {
        let f = self.predict(x)?;
        Ok(0.5 * (f - y) * (f - y))
    }

    /// Mean loss over `(x, y)` pairs.
    pub fn mean_loss<'a, I>(&self, samples: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (x, y) in samples {
            sum += self.loss(x, y)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Domain("mean loss of an empty set".into()));
        }
        Ok(sum / n as f64)
    }

    /// ∂L̂/∂θ in the canonical order.
    pub fn grad_params(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_grad_params(x, y, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `scale · ∂L̂/∂θ` into `acc` and returns the loss.
    pub fn accumulate_grad_params(&self, x: &[f64], y: f64, scale: f64, acc: &mut [f64]) -> Result<f64> {
        if acc.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                got: acc.len(),
            });
        }
        let trace = self.forward(x)?;
        let deltas = self.backprop_deltas(&trace);
        let r = trace.f - y;
        let mut off = 0;
        for l in 0..self.depth() {
            let input = &trace.h[l];
            let n_in = input.len();
            for (i, &d) in deltas.delta[l].iter().enumerate() {
                let g = scale * r * d;
                let row = &mut acc[off + i * n_in..off + (i + 1) * n_in];
                for (a, &hj) in row.iter_mut().zip(input) {
                    *a += g * hj;
                }
            }
            off += n_in * deltas.delta[l].len();
            for (a, &d) in acc[off..off + deltas.delta[l].len()].iter_mut().zip(&deltas.delta[l]) {
                *a += scale * r * d;
            }
            off += deltas.delta[l].len();
        }
        Ok(0.5 * r * r)
    }

    /// ∂L̂/∂x = (f − y) Σᵢ δ⁽¹⁾ᵢ W⁽¹⁾ᵢ,:
    pub fn grad_input(&self, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let trace = self.forward(x)?;
        let deltas = self.backprop_deltas(&trace);
        let r = trace.f - y;
        let mut g = self.back_sum(0, &deltas.delta[0]);
        for v in &mut g {
            *v *= r;
        }
        Ok(g)
    }
}

fn affine(w: &[f64], b: &[f64], input: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            w[i * n_in..(i + 1) * n_in]
                .iter()
                .zip(input)
                .fold(bi, |acc, (&wij, &xj)| acc + wij * xj)
        })
        .collect()
}
