mod common;

use common::rng;
use rand::Rng;
use vta_core::funcsim::Simulator;
use vta_core::oracle;
use vta_core::tensorfront::{
    compile_network, lenet5, run_network, InputSource, LayerGeometry, LayerKind, LayerSpec, PoolMode,
    PoolPlacement, PoolSpec,
};
use vta_core::{default_config, Tensor4, VtaConfig};

fn random_input(r: &mut rand_chacha::ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor4 {
    Tensor4::from_fn(1, c, h, w, |_, _, _, _| r.gen_range(-128..=127))
}

fn lenet(seed: u64) -> Vec<LayerSpec> {
    let mut wr = rng(seed);
    let mut br = rng(seed + 1);
    lenet5(move || wr.gen_range(-16..=16), move || br.gen_range(-512..=512))
}

#[test]
fn lenet_matches_oracle_layer_by_layer() {
    let cfg = default_config();
    let layers = lenet(7);
    let mut net = compile_network(&layers, &cfg).unwrap();
    assert_eq!(net.plan.reshape_count(), 2);
    assert_eq!(
        net.plan.layers.iter().map(|l| l.input).collect::<Vec<_>>(),
        vec![InputSource::Host, InputSource::Host, InputSource::Host, InputSource::Alias, InputSource::Alias]
    );
    assert_eq!(net.plan.layers[0].out_dims, (196, 6));
    let mut sim = Simulator::new(&cfg).unwrap().strict_deps(true);
    let mut r = rng(99);
    for _ in 0..3 {
        let input = random_input(&mut r, 1, 32, 32);
        let runs = run_network(&mut net.image, &net.plan, &input, &mut sim).unwrap();
        let expected = oracle::network(&layers, &input, 0).unwrap();
        assert_eq!(runs[0].outputs, expected);
        assert_eq!(runs[0].reshapes, 2);
        assert_eq!(runs[0].outputs.last().unwrap().data.len(), 10);
    }
}

#[test]
fn host_pooling_and_padded_conv() {
    let cfg = VtaConfig { block_size: 4, ..default_config() };
    let mut r = rng(3);
    let conv = LayerGeometry {
        kind: LayerKind::Conv { kernel: 3, stride: 1, pad: 1 },
        in_channels: 3,
        in_h: 6,
        in_w: 6,
        out_channels: 5,
        requant_shift: Some(5),
        relu: true,
        pool: Some(PoolSpec { mode: PoolMode::Max, window: 2, stride: 2, placement: PoolPlacement::Host }),
    };
    let fc = LayerGeometry {
        kind: LayerKind::Fc,
        in_channels: 5,
        in_h: 3,
        in_w: 3,
        out_channels: 7,
        requant_shift: None,
        relu: false,
        pool: None,
    };
    let layers: Vec<LayerSpec> = [("c", conv), ("f", fc)]
        .into_iter()
        .map(|(n, g)| LayerSpec {
            name: n.into(),
            geometry: g,
            weights: (0..g.weight_len()).map(|_| r.gen_range(-20..=20)).collect(),
            bias: None,
        })
        .collect();
    let mut net = compile_network(&layers, &cfg).unwrap();
    let mut sim = Simulator::new(&cfg).unwrap().strict_deps(true);
    let input = Tensor4::stack(&[random_input(&mut r, 3, 6, 6), random_input(&mut r, 3, 6, 6)]).unwrap();
    let runs = run_network(&mut net.image, &net.plan, &input, &mut sim).unwrap();
    for (i, run) in runs.iter().enumerate() {
        assert_eq!(run.outputs, oracle::network(&layers, &input, i).unwrap());
    }
}

#[test]
fn mismatched_layers_are_rejected() {
    let mut layers = lenet(1);
    layers.remove(1);
    assert!(compile_network(&layers, &default_config()).is_err());
}
