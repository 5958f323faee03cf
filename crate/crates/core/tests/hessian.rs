use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rctaf::activation::Activation;
use rctaf::data::{make_dataset, Sample};
use rctaf::hessian::{
    d_table, dataset_diag_norm, hessian_diag_exact, hessian_diag_exact_with, hessian_diag_fd, hessian_diag_paths,
    hessian_diag_paths_with_curvature, normalized_diag_norm, single_hidden_layer_closed_form, FD_STEP,
};
use rctaf::network::ParamKind;
use rctaf::verify::{check_case, random_case};
use rctaf::{ActivationSpec, Error, ForwardTrace, Generator, InitScheme, Network, Reduction};

fn net_with_biases(widths: &[usize], act: ActivationSpec, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(widths, act, seed, InitScheme::Xavier).unwrap();
    for l in 1..=net.depth() {
        for b in net.biases_mut(l) {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-8)
}

/// Forward trace with `z⁽ˡ⁺¹⁾` (0-based `l`) replaced and everything above recomputed.
fn retrace(net: &Network, trace: &ForwardTrace, l: usize, z_l: Vec<f64>) -> ForwardTrace {
    let act = net.activation();
    let mut z = trace.z[..l].to_vec();
    let mut h = trace.h[..=l].to_vec();
    z.push(z_l);
    for layer in l..net.depth() - 1 {
        let hl: Vec<f64> = z[layer].iter().map(|&v| act.value(v)).collect();
        let w = net.weights(layer + 2);
        let next = net
            .biases(layer + 2)
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                b + hl
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| w[i * hl.len() + j] * v)
                    .sum::<f64>()
            })
            .collect();
        h.push(hl);
        z.push(next);
    }
    let f = z[net.depth() - 1][0];
    ForwardTrace { z, h, f }
}

/// ∂δ⁽ˡ⁾ᵢ/∂z⁽ˡ⁾ᵢ by central differences of the backpropagated δ.
fn fd_of_delta(net: &Network, trace: &ForwardTrace, l: usize, i: usize, h: f64) -> f64 {
    let mut up = trace.z[l].clone();
    up[i] += h;
    let mut down = trace.z[l].clone();
    down[i] -= h;
    let du = net.backprop_deltas(&retrace(net, trace, l, up)).delta[l][i];
    let dd = net.backprop_deltas(&retrace(net, trace, l, down)).delta[l][i];
    (du - dd) / (2.0 * h)
}

/// `D⁽ˡ⁾ᵢ = σ''Sᵢ + σ'² Σ_t D⁽ˡ⁺¹⁾_t W_{ti}²`, keeping only the diagonal of the
/// downstream Jacobian.
fn diagonal_only_recursion(net: &Network, trace: &ForwardTrace) -> Vec<Vec<f64>> {
    let act = net.activation();
    let deltas = net.backprop_deltas(trace);
    let depth = net.depth();
    let mut d = vec![Vec::new(); depth];
    d[depth - 1] = vec![0.0];
    for l in (0..depth - 1).rev() {
        d[l] = (0..net.widths()[l + 1])
            .map(|i| {
                let z = trace.z[l][i];
                let mut s = 0.0;
                let mut prop = 0.0;
                for t in 0..net.widths()[l + 2] {
                    let w = net.weight(l + 2, t, i);
                    s += deltas.delta[l + 1][t] * w;
                    prop += d[l + 1][t] * w * w;
                }
                act.curvature(z) * s + act.slope(z).powi(2) * prop
            })
            .collect();
    }
    d
}

#[test]
fn exact_diagonal_passes_both_oracles_on_random_nets() {
    for seed in 0..40 {
        let case = random_case(seed).unwrap();
        let report = check_case(&case, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
        assert!(report.fd_grad_max_rel < 1e-5, "seed {seed}: {report:?}");
    }
}

#[test]
fn d_is_the_derivative_of_delta() {
    for (seed, widths) in [
        (1u64, vec![2, 4, 3, 1]),
        (2, vec![3, 5, 5, 1]),
        (3, vec![1, 3, 4, 2, 1]),
        (4, vec![2, 6, 5, 4, 1]),
    ] {
        for beta in 0..=2 {
            let net = net_with_biases(&widths, ActivationSpec::rct_af(4.0, beta).unwrap(), seed);
            let trace = net.forward(&[0.3, -0.4, 0.7][..widths[0]]).unwrap();
            let d = d_table(&net, &trace, &net.backprop_deltas(&trace)).unwrap();
            assert_eq!(d.d[net.depth() - 1], vec![0.0]);
            for l in 0..net.depth() - 1 {
                for i in 0..widths[l + 1] {
                    let fd = fd_of_delta(&net, &trace, l, i, 1e-5);
                    assert!(
                        (d.d[l][i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                        "{widths:?} β={beta} layer {} neuron {i}: {} vs {fd}",
                        l + 1,
                        d.d[l][i]
                    );
                }
            }
        }
    }
}

#[test]
fn diagonal_only_recursion_is_exact_up_to_two_hidden_layers() {
    for seed in 0..30 {
        let widths = [2, 1 + seed as usize % 7, 1 + (seed as usize * 3) % 8, 1];
        let net = net_with_biases(&widths, ActivationSpec::rct_af(14.0, (seed % 3) as u8).unwrap(), seed);
        let trace = net.forward(&[0.2, -0.9]).unwrap();
        let exact = d_table(&net, &trace, &net.backprop_deltas(&trace)).unwrap();
        let simple = diagonal_only_recursion(&net, &trace);
        for (a, b) in exact.d.iter().flatten().zip(simple.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn diagonal_only_recursion_misses_cross_terms_at_three_hidden_layers() {
    let net = net_with_biases(&[2, 4, 4, 4, 1], ActivationSpec::rct_af(4.0, 1).unwrap(), 11);
    let trace = net.forward(&[0.5, -0.25]).unwrap();
    let simple = diagonal_only_recursion(&net, &trace);
    let exact = d_table(&net, &trace, &net.backprop_deltas(&trace)).unwrap();
    let mut worst = 0.0f64;
    for i in 0..4 {
        let fd = fd_of_delta(&net, &trace, 0, i, 1e-5);
        assert!(rel_close(exact.d[0][i], fd, 1e-5));
        worst = worst.max((simple[0][i] - fd).abs() / fd.abs().max(1e-8));
    }
    assert!(worst > 1e-2, "expected a visible gap, got {worst}");
    for l in 1..3 {
        for i in 0..4 {
            assert!(rel_close(simple[l][i], exact.d[l][i], 1e-12));
        }
    }
}

#[test]
fn paths_match_recursion_on_small_nets() {
    let net = net_with_biases(&[2, 3, 3, 1], ActivationSpec::rct_af(4.0, 2).unwrap(), 21);
    let x = [0.4, 0.1];
    let exact = hessian_diag_exact(&net, &x, 0.5).unwrap();
    let paths = hessian_diag_paths(&net, &x, 0.5).unwrap();
    for (a, b) in paths.diag.iter().zip(&exact.diag) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
    }
    let net = net_with_biases(&[1, 4, 4, 4, 1], ActivationSpec::rct_af(14.0, 1).unwrap(), 22);
    let exact = hessian_diag_exact(&net, &[0.3], -0.7).unwrap();
    let paths = hessian_diag_paths(&net, &[0.3], -0.7).unwrap();
    for (a, b) in paths.diag.iter().zip(&exact.diag) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
    }
}

#[test]
fn paths_refuse_large_nets() {
    let net = net_with_biases(&[2, 7, 6, 1], ActivationSpec::rct_af(1.0, 1).unwrap(), 0);
    assert!(matches!(
        hessian_diag_paths(&net, &[0.0, 0.0], 0.0),
        Err(Error::Capacity(_))
    ));
}

#[test]
fn decomposition_is_exact() {
    for seed in 0..20 {
        let case = random_case(seed).unwrap();
        let r = hessian_diag_exact(&case.net, &case.x, case.y).unwrap();
        let g = case.net.grad_params(&case.x, case.y).unwrap();
        for k in 0..r.diag.len() {
            assert_eq!(r.diag[k], r.gauss_newton_part[k] + r.residual_part[k]);
            assert!(r.gauss_newton_part[k] >= 0.0);
            let via_grad = (g[k] / r.residual).powi(2);
            assert!(rel_close(r.gauss_newton_part[k], via_grad, 1e-10));
        }
        assert_eq!(r.normalized_norm, normalized_diag_norm(&r.diag, r.diag.len()).unwrap());
    }
}

#[test]
fn zero_residual_keeps_only_the_gauss_newton_part() {
    for seed in 0..10 {
        let case = random_case(seed).unwrap();
        let f = case.net.predict(&case.x).unwrap();
        let r = hessian_diag_exact(&case.net, &case.x, f).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.residual_part.iter().all(|&v| v == 0.0));
        assert_eq!(r.diag, r.gauss_newton_part);
        let fd = hessian_diag_fd(&case.net, &case.x, f, FD_STEP).unwrap();
        for (a, b) in r.gauss_newton_part.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-3 * b.abs().max(1e-3));
        }
    }
}

struct Identity;

impl Activation for Identity {
    fn value(&self, x: f64) -> f64 {
        x
    }
    fn slope(&self, _: f64) -> f64 {
        1.0
    }
    fn curvature(&self, _: f64) -> f64 {
        0.0
    }
    fn twice_differentiable(&self) -> bool {
        true
    }
    fn label(&self) -> String {
        "identity".into()
    }
}

#[test]
fn linear_activation_has_no_residual_term() {
    for seed in 0..10 {
        let case = random_case(seed).unwrap();
        let r = hessian_diag_exact_with(&case.net, &Identity, &case.x, case.y + 3.0).unwrap();
        assert_ne!(r.residual, 0.0);
        assert!(r.residual_part.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn diagonal_is_linear_in_each_curvature_site() {
    let net = net_with_biases(&[2, 3, 2, 1], ActivationSpec::rct_af(4.0, 1).unwrap(), 8);
    let (x, y) = ([0.6, -0.3], 0.9);
    let trace = net.forward(&x).unwrap();
    let act = net.activation();
    let base: Vec<Vec<f64>> = trace.z[..2]
        .iter()
        .map(|z| z.iter().map(|&v| act.curvature(v)).collect())
        .collect();
    let at = |site: (usize, usize), t: f64| {
        let mut c = base.clone();
        c[site.0][site.1] *= t;
        hessian_diag_paths_with_curvature(&net, &x, y, &c).unwrap().diag
    };
    for site in [(0, 0), (0, 2), (1, 1)] {
        let d0 = at(site, 0.0);
        let d1 = at(site, 1.0);
        for t in [-2.0, 0.5, 3.0] {
            let dt = at(site, t);
            for k in 0..dt.len() {
                let expect = d0[k] + t * (d1[k] - d0[k]);
                assert!((dt[k] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
    let unscaled = at((0, 0), 1.0);
    assert_eq!(unscaled, hessian_diag_paths(&net, &x, y).unwrap().diag);
}

#[test]
fn single_hidden_layer_matches_closed_form() {
    for seed in 0..20 {
        let net = net_with_biases(
            &[3, 5, 1],
            ActivationSpec::rct_af(14.0, (seed % 3) as u8).unwrap(),
            seed,
        );
        let x = [0.2, -0.5, 0.8];
        let exact = hessian_diag_exact(&net, &x, 0.3).unwrap();
        let cf = single_hidden_layer_closed_form(&net, &x, 0.3).unwrap();
        for (a, b) in exact.diag.iter().zip(&cf) {
            assert!((a - b).abs() <= 1e-12);
        }
        let h = &net.forward(&x).unwrap().h[1];
        for (k, r) in net.param_refs().iter().enumerate() {
            if r.layer == 2 {
                match r.kind {
                    ParamKind::Weight { col, .. } => assert_eq!(exact.diag[k], h[col] * h[col]),
                    ParamKind::Bias { .. } => assert_eq!(exact.diag[k], 1.0),
                }
            }
        }
    }
}

#[test]
fn dataset_norm_matches_summed_finite_differences() {
    let data = make_dataset(Generator::TwoMoons { noise: 0.1 }, 80, 3).unwrap();
    let samples: Vec<Sample> = data.train.clone();
    assert_eq!(samples.len(), 64);
    let net = net_with_biases(&[2, 4, 3, 1], ActivationSpec::rct_af(4.0, 1).unwrap(), 5);
    let p = net.param_count();
    let mut mean = vec![0.0; p];
    let mut norms = 0.0;
    for s in &samples {
        let fd = hessian_diag_fd(&net, &s.x, s.y, FD_STEP).unwrap();
        for (m, v) in mean.iter_mut().zip(&fd) {
            *m += v / samples.len() as f64;
        }
        norms += normalized_diag_norm(&fd, p).unwrap() / samples.len() as f64;
    }
    let brute = normalized_diag_norm(&mean, p).unwrap();
    let fast = dataset_diag_norm(&net, &samples, Reduction::MeanDiagThenNorm).unwrap();
    assert!(rel_close(fast, brute, 1e-4), "{fast} vs {brute}");
    let fast = dataset_diag_norm(&net, &samples, Reduction::MeanOfNorms).unwrap();
    assert!(rel_close(fast, norms, 1e-4), "{fast} vs {norms}");
}

#[test]
fn dataset_norm_of_one_sample() {
    let net = net_with_biases(&[2, 3, 1], ActivationSpec::Gelu, 1);
    let s = vec![Sample {
        x: vec![0.1, 0.2],
        y: 1.0,
    }];
    let single = hessian_diag_exact(&net, &s[0].x, 1.0).unwrap().normalized_norm;
    assert_eq!(
        dataset_diag_norm(&net, &s, Reduction::MeanDiagThenNorm).unwrap(),
        single
    );
    assert_eq!(dataset_diag_norm(&net, &s, Reduction::MeanOfNorms).unwrap(), single);
    assert!(dataset_diag_norm(&net, &[], Reduction::MeanOfNorms).is_err());
}

proptest! {
    #[test]
    fn norm_ignores_order(mut v in prop::collection::vec(-1e3f64..1e3, 1..40), seed in any::<u64>()) {
        let a = normalized_diag_norm(&v, v.len()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        let b = normalized_diag_norm(&v, v.len()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn norm_of_constant(c in -1e3f64..1e3, n in 1usize..50) {
        let v = vec![c; n];
        prop_assert!((normalized_diag_norm(&v, n).unwrap() - c.abs()).abs() <= 1e-12 * c.abs());
    }
}
