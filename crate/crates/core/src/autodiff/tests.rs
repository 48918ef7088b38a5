use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Builds `sum(r * f(inputs))` for a fixed random projection `r`, so
/// every output element contributes to the checked gradient.
fn projected<F>(store: &ParamStore, inputs: &[Tensor], f: &F, proj_seed: u64) -> (f64, Option<Vec<Vec<f64>>>)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new(store);
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &ids);
    let n = g.value(out).len();
    let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
    let r = Tensor::new(g.value(out).shape().to_vec(), rand_vec(&mut rng, n, 1.0)).unwrap();
    let rid = g.input(r);
    let prod = g.mul(out, rid).unwrap();
    let loss = g.sum_all(prod);
    let val = g.value(loss).item();
    let grads = g.backward(loss).unwrap();
    let per_input = ids.iter().map(|&id| grads.node(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(id).len()])).collect();
    (val, Some(per_input))
}

fn check_grad<F>(inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let store = ParamStore::new();
    let (_, analytic) = projected(&store, &inputs, &f, 99);
    let analytic = analytic.unwrap();
    for (which, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[k] += EPS;
            let mut minus = inputs.clone();
            minus[which].data_mut()[k] -= EPS;
            let fd = (projected(&store, &plus, &f, 99).0 - projected(&store, &minus, &f, 99).0) / (2.0 * EPS);
            let an = analytic[which][k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            assert!(err <= TOL, "input {which}[{k}]: analytic {an} vs numeric {fd}");
        }
    }
}

fn t(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(&mut rng, n, scale)).unwrap()
}

#[test]
fn same_padding_matches_reference_formula() {
    assert_eq!(same_padding(512, 9, 1), (512, 4));
    assert_eq!(same_padding(512, 9, 2), (256, 3));
    assert_eq!(same_padding(5, 3, 2), (3, 1));
}

#[test]
fn conv1d_matches_direct_loop() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(t(vec![6, 2], 1, 1.0));
    let w = g.input(t(vec![3, 2, 3], 2, 1.0));
    let b = g.input(t(vec![3], 3, 1.0));
    let y = g.conv1d(x, w, b, 2).unwrap();
    let (xv, wv, bv) = (g.value(x).data(), g.value(w).data(), g.value(b).data());
    assert_eq!(g.value(y).shape(), &[3, 3]);
    for tt in 0..3 {
        for o in 0..3 {
            let mut acc = bv[o];
            for k in 0..3 {
                // Total pad is (3-1)*2 + 3 - 6 = 1, so the left pad is 0.
                let src = (2 * tt + k) as isize;
                if !(0..6).contains(&src) {
                    continue;
                }
                for i in 0..2 {
                    acc += xv[src as usize * 2 + i] * wv[(k * 2 + i) * 3 + o];
                }
            }
            assert!((g.value(y).data()[tt * 3 + o] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn grad_conv1d_stride1_and_stride2() {
    for stride in [1, 2] {
        check_grad(vec![t(vec![7, 3], 4, 1.0), t(vec![5, 3, 2], 5, 0.5), t(vec![2], 6, 0.5)], |g, v| {
            g.conv1d(v[0], v[1], v[2], stride).unwrap()
        });
    }
}

#[test]
fn grad_leaky_relu_and_arith() {
    check_grad(vec![t(vec![10], 7, 1.0), t(vec![10], 8, 1.0)], |g, v| {
        let a = g.leaky_relu(v[0], 0.01);
        let b = g.sub(a, v[1]).unwrap();
        let c = g.mul(b, v[0]).unwrap();
        let d = g.add(c, v[1]).unwrap();
        g.scale(d, 0.7)
    });
}

#[test]
fn grad_upsampling_and_reshape() {
    check_grad(vec![t(vec![4, 6], 9, 1.0)], |g, v| {
        let a = g.subpixel_upsample(v[0]).unwrap();
        let b = g.repeat_upsample(a).unwrap();
        g.reshape(b, vec![48]).unwrap()
    });
}

#[test]
fn subpixel_layout() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::new(vec![2, 4], (0..8).map(f64::from).collect()).unwrap());
    let y = g.subpixel_upsample(x).unwrap();
    assert_eq!(g.value(y).shape(), &[4, 2]);
    assert_eq!(g.value(y).data(), &[0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
}

#[test]
fn grad_differential_ops() {
    check_grad(vec![t(vec![9], 10, 1.0)], |g, v| {
        let d = g.diff_encode(v[0]);
        let s = g.scale(d, 1.3);
        g.cumsum(s)
    });
}

#[test]
fn grad_soft_quantizer_chain() {
    // Moderate alpha keeps the softmax smooth enough for central differences.
    for per_row in [false, true] {
        let book = if per_row { t(vec![5, 4], 12, 1.0) } else { t(vec![4], 12, 1.0) };
        check_grad(vec![t(vec![5], 11, 1.0), book], |g, v| {
            let d = g.sq_dist(v[0], v[1]).unwrap();
            let a = g.softmax_neg(d, 3.0);
            let q = g.row_dot(a, v[1]).unwrap();
            let p = g.sqrt_penalty(a);
            let c = g.col_sum(a);
            let e = g.entropy(c, 5.0);
            let s = g.sum_all(q);
            g.weighted_sum(vec![(s, 1.0), (p, 0.5), (e, 0.25)]).unwrap()
        });
    }
}

#[test]
fn grad_mse_spectrum_mel() {
    let basis = Arc::new(SpectrumBasis::hann(32));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = Arc::new(ConstMatrix { rows: 4, cols: 17, data: rand_vec(&mut rng, 68, 1.0) });
    check_grad(vec![t(vec![32], 14, 1.0), t(vec![32], 15, 1.0)], move |g, v| {
        let sa = g.spectrum(v[0], basis.clone()).unwrap();
        let sb = g.spectrum(v[1], basis.clone()).unwrap();
        let ma = g.mat_vec(sa, m.clone()).unwrap();
        let mb = g.mat_vec(sb, m.clone()).unwrap();
        let l1 = g.mse(ma, mb).unwrap();
        let l2 = g.mse(v[0], v[1]).unwrap();
        g.weighted_sum(vec![(l1, 2.0), (l2, 3.0)]).unwrap()
    });
}

#[test]
fn spectrum_of_sinusoid_peaks_at_its_bin() {
    let basis = SpectrumBasis::hann(64);
    let x: Vec<f64> = (0..64).map(|n| (2.0 * std::f64::consts::PI * 8.0 * n as f64 / 64.0).cos()).collect();
    let (_, _, mag) = basis.magnitudes(&x);
    assert!((mag[8] - 0.5).abs() < 1e-9);
    assert!(mag[20] < 2e-6);
}

fn sorted_lsp(seed: u64, p: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..3.0)).collect();
    w.sort_by(f64::total_cmp);
    Tensor::vector(w)
}

#[test]
fn grad_lpc_filters() {
    let p = 6;
    check_grad(vec![sorted_lsp(16, p), t(vec![20], 17, 1.0)], move |g, v| {
        let s = g.lsp_stabilize(v[0], 0.01);
        let a = g.lsp_to_lpc(s);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let ctx = rand_vec(&mut rng, 20 + p, 1.0);
        let res = g.fir_residual(a, ctx).unwrap();
        let e = g.add(res, v[1]).unwrap();
        let mem = rand_vec(&mut rng, p, 1.0);
        g.iir_synth(e, a, mem).unwrap()
    });
}

#[test]
fn stabilize_sorts_and_spaces() {
    let (out, perm, pass) = stabilize_lsp(&[0.5, 0.2, 0.2005, 3.138], 0.01);
    assert_eq!(perm, vec![1, 2, 0, 3]);
    for w in out.windows(2) {
        assert!(w[1] - w[0] >= 0.01 - 1e-12);
    }
    assert!(out[3] <= std::f64::consts::PI - 0.01);
    assert_eq!(pass, vec![true, false, true, false]);
}

#[test]
fn params_receive_gradients_and_adam_moves_them() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::vector(vec![1.0, -2.0]));
    let frozen = store.insert("f", Tensor::vector(vec![3.0]));
    store.set_frozen(frozen, true);
    let mut state = OptimizerState::new(&store);
    for _ in 0..2000 {
        let grads = {
            let mut g = Graph::new(&store);
            let wn = g.param(w);
            let fnode = g.param(frozen);
            let target = g.input(Tensor::vector(vec![0.5, 0.5]));
            let l = g.mse(wn, target).unwrap();
            let s = g.sum_all(fnode);
            let loss = g.weighted_sum(vec![(l, 1.0), (s, 1.0)]).unwrap();
            g.backward(loss).unwrap().into_params()
        };
        assert!(grads[frozen.index()].is_some());
        adam_step(&mut store, &grads, &mut state, &AdamConfig { lr: 1e-2, ..Default::default() }).unwrap();
    }
    assert!(store.get(w).data().iter().all(|v| (v - 0.5).abs() < 1e-2));
    assert_eq!(store.get(frozen).data(), &[3.0]);
}

#[test]
fn adam_rejects_nan_gradient() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::vector(vec![1.0]));
    let mut state = OptimizerState::new(&store);
    let err = adam_step(&mut store, &[Some(vec![f64::NAN])], &mut state, &AdamConfig::default()).unwrap_err();
    assert_eq!(err.to_string(), "non-finite gradient");
    assert_eq!(store.get(w).data(), &[1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(GraphError::NonScalarLoss(_))));
}
