use drogo_core::nets::checkpoint::{load_checkpoint, save_checkpoint};
use drogo_core::nets::optim::RmsProp;
use drogo_core::nets::{ConvSpec, MlpSpec, NetSpec, Network};
use drogo_core::objectives::net_spec_for;
use drogo_core::rng::{stream_rng, streams};
use drogo_core::{EncoderKind, GridWorld};
use rand::Rng;

const H: f64 = 1e-5;

fn random_inputs(d: usize, batch: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, streams::TEST);
    (0..d * batch).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central differences of Σ_i w_i·v_i against backprop, per parameter.
fn check(net: &Network, x: &[f64], batch: usize, w: &[f64]) {
    let (_, tape) = net.forward_batch(x, batch).unwrap();
    let grads = net.backward_batch(&tape, w).unwrap();
    let objective = |n: &Network| -> f64 {
        n.predict(x, batch).unwrap().iter().zip(w).map(|(v, k)| v * k).sum()
    };
    let mut worst = 0.0f64;
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = net.clone();
            plus.params_mut()[t][i] += H;
            let mut minus = net.clone();
            minus.params_mut()[t][i] -= H;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * H);
            let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
            assert!(err <= 1e-6, "tensor {t} entry {i}: backprop {} vs {}", g[i], fd);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn ten_parameter_mlp() {
    let spec = NetSpec::Mlp(MlpSpec { input: 1, hidden: vec![3] });
    let net = Network::init(&spec, &mut stream_rng(1, streams::TEST)).unwrap();
    assert_eq!(net.n_params(), 10);
    check(&net, &random_inputs(1, 1, 2), 1, &[1.0]);
}

#[test]
fn deep_mlp_batch() {
    let spec = NetSpec::Mlp(MlpSpec { input: 5, hidden: vec![7, 6, 4] });
    let net = Network::init(&spec, &mut stream_rng(3, streams::TEST)).unwrap();
    check(&net, &random_inputs(5, 6, 4), 6, &[0.3, -1.2, 0.7, 2.0, -0.5, 0.1]);
}

#[test]
fn small_conv_net() {
    let spec = NetSpec::Conv(ConvSpec { channels: 2, rows: 6, cols: 5, filters: vec![2, 3], pooled: 2, fc: 3 });
    let net = Network::init(&spec, &mut stream_rng(5, streams::TEST)).unwrap();
    check(&net, &random_inputs(60, 3, 6), 3, &[1.0, -0.4, 0.8]);
}

#[test]
fn conv_net_with_unpooled_tail() {
    let spec = NetSpec::Conv(ConvSpec { channels: 3, rows: 5, cols: 7, filters: vec![2, 2, 3], pooled: 2, fc: 4 });
    let net = Network::init(&spec, &mut stream_rng(7, streams::TEST)).unwrap();
    check(&net, &random_inputs(105, 2, 8), 2, &[0.9, -1.1]);
}

#[test]
fn single_sample_paths_match_batched() {
    let spec = NetSpec::Mlp(MlpSpec { input: 4, hidden: vec![5] });
    let net = Network::init(&spec, &mut stream_rng(9, streams::TEST)).unwrap();
    let x = random_inputs(4, 3, 10);
    let w = [0.5, -2.0, 1.5];
    let (_, tape) = net.forward_batch(&x, 3).unwrap();
    let batched = net.backward_batch(&tape, &w).unwrap();
    let mut summed = net.zero_grads();
    for i in 0..3 {
        let (v, tape) = net.forward(&x[i * 4..(i + 1) * 4]).unwrap();
        assert_eq!(v, net.predict(&x[i * 4..(i + 1) * 4], 1).unwrap()[0]);
        let g = net.backward(&tape, w[i]).unwrap();
        for (a, b) in summed.iter_mut().zip(&g) {
            a.iter_mut().zip(b).for_each(|(p, q)| *p += q);
        }
    }
    for (a, b) in batched.iter().zip(&summed) {
        for (p, q) in a.iter().zip(b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let gw = GridWorld::bundled("grid_task").unwrap();
    for enc in EncoderKind::ALL {
        let net = Network::init(&net_spec_for(&gw, enc), &mut stream_rng(4, streams::INIT)).unwrap();
        let bytes = save_checkpoint(&net);
        assert_eq!(&bytes[..4], b"DRNN");
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(save_checkpoint(&back), bytes);
        let x = gw.feature_matrix(enc);
        let a = net.predict(&x, gw.n_states).unwrap();
        let b = back.predict(&x, gw.n_states).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let spec = NetSpec::Mlp(MlpSpec { input: 2, hidden: vec![3] });
    let bytes = save_checkpoint(&Network::init(&spec, &mut stream_rng(0, streams::INIT)).unwrap());
    assert!(load_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(load_checkpoint(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(load_checkpoint(&magic).is_err());
}

#[test]
fn init_and_optimizer_are_deterministic() {
    let spec = NetSpec::Mlp(MlpSpec { input: 3, hidden: vec![8, 8] });
    let run = || {
        let mut net = Network::init(&spec, &mut stream_rng(21, streams::INIT)).unwrap();
        let mut opt = RmsProp::new(&net, 1e-3, 0.99, 1e-8);
        let x = random_inputs(3, 4, 22);
        for _ in 0..20 {
            let (v, tape) = net.forward_batch(&x, 4).unwrap();
            let g = net.backward_batch(&tape, &v).unwrap();
            opt.step(&mut net, &g).unwrap();
        }
        save_checkpoint(&net)
    };
    assert_eq!(run(), run());
}

#[test]
fn untrained_networks_are_finite_on_every_state() {
    for (name, _) in drogo_core::mdp::BUNDLED {
        let gw = GridWorld::bundled(name).unwrap();
        for enc in EncoderKind::ALL {
            let net = Network::init(&net_spec_for(&gw, enc), &mut stream_rng(0, streams::INIT)).unwrap();
            let v = net.predict(&gw.feature_matrix(enc), gw.n_states).unwrap();
            assert!(v.iter().all(|x| x.is_finite()), "{name} {}", enc.name());
        }
    }
}
