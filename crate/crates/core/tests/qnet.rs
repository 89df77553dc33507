use tbqn_core::qnet::{LayerKind, Mode, QNetwork, QNetworkSpec};
use tbqn_core::tensor::{Graph, Tensor};
use tbqn_core::RngState;

fn layer_spec(kind: LayerKind) -> QNetworkSpec {
    QNetworkSpec {
        history_horizon: 5,
        state_dim: 8,
        model_dim: 8,
        num_heads: 2,
        num_layers: 1,
        ff_dim: 16,
        num_actions: 2,
        layer_kind: kind,
        dropout_rate: 0.1,
        outer_dropout: false,
        depth_scaled_init: true,
        depth_scaled_last_layer: false,
    }
}

/// MSE of the first encoder layer's output against `target`; also returns the input gradient.
fn layer_loss(net: &QNetwork<f64>, x: &Tensor<f64>, target: &[f64], grads: bool) -> (f64, Vec<f64>, QNetwork<f64>) {
    let mut g = Graph::new();
    let vars = net.params().bind(&mut g);
    let xv = g.leaf(x.clone(), true);
    let y = net.layers()[0].forward(&mut g, &vars, xv, net.spec(), &mut Mode::Eval).unwrap();
    let loss = g.mse_loss(y, target).unwrap();
    let value = g.value(loss).data()[0];
    let mut out = net.clone();
    if !grads {
        return (value, Vec::new(), out);
    }
    g.backward(loss).unwrap();
    let dx = g.grad(xv).unwrap().to_vec();
    out.params_mut().zero_grad();
    out.params_mut().collect_grads(&mut g);
    (value, dx, out)
}

fn max_relative_error(kind: LayerKind, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let net = QNetwork::<f64>::new(layer_spec(kind), &mut rng).unwrap();
    let x = Tensor::from_f64(&[2, 5, 8], &(0..80).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
    let target: Vec<f64> = (0..80).map(|_| rng.normal()).collect();
    let (_, _, with_grads) = layer_loss(&net, &x, &target, true);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (pi, p) in with_grads.params().iter().enumerate() {
        let Some(analytic) = p.grad.as_ref() else { continue };
        for j in 0..p.value.numel() {
            let eval = |delta: f64| {
                let mut n = net.clone();
                n.params_mut().get_mut(pi).value.data_mut()[j] += delta;
                layer_loss(&n, &x, &target, false).0
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in LayerKind::ALL {
        let err = max_relative_error(kind, 40 + kind.number() as u64);
        assert!(err < 1e-4, "{kind:?}: max relative error {err:e}");
    }
}

#[test]
fn gradient_reaches_layer_input() {
    for kind in [LayerKind::Type3Imr, LayerKind::Type4PreNorm, LayerKind::Type5OutputGate, LayerKind::Type6GruGate] {
        let mut rng = RngState::new(7);
        let net = QNetwork::<f64>::new(layer_spec(kind), &mut rng).unwrap();
        let x = Tensor::from_f64(&[2, 5, 8], &(0..80).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
        let target = vec![0.0; 80];
        let (_, dx, _) = layer_loss(&net, &x, &target, true);
        let norm = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "{kind:?}");
    }
}

#[test]
fn dimension_variants_keep_shapes() {
    for (h, d, ff, layers) in [(5, 64, 256, 3), (5, 64, 256, 6), (3, 64, 256, 3), (7, 64, 256, 3), (5, 128, 512, 3)] {
        let spec = QNetworkSpec {
            history_horizon: h,
            state_dim: 4,
            model_dim: d,
            num_heads: 4,
            num_layers: layers,
            ff_dim: ff,
            num_actions: 2,
            layer_kind: LayerKind::Type3Imr,
            dropout_rate: 0.0,
            outer_dropout: false,
            depth_scaled_init: true,
            depth_scaled_last_layer: true,
        };
        let mut rng = RngState::new(1);
        let net = QNetwork::<f32>::new(spec, &mut rng).unwrap();
        let batch = 3;
        let mut g = Graph::inference();
        let vars = net.params().bind(&mut g);
        let x = g.constant(Tensor::new(&[batch, h, 4], (0..batch * h * 4).map(|i| i as f32 * 0.01).collect()).unwrap());
        let e = net.embed(&mut g, &vars, x, &mut Mode::Eval).unwrap();
        let enc = net.encode(&mut g, &vars, e, &mut Mode::Eval).unwrap();
        assert_eq!(g.shape(enc), g.shape(e));
        assert_eq!(g.shape(e), &[batch, h, d]);
        let q = net.forward(&mut g, &vars, x, &mut Mode::Eval).unwrap();
        assert_eq!(g.shape(q), &[batch, 2]);
    }
}
