//! A network with hand-set weights that performs one explicit diffusion step
//! per core step. On an unweighted graph with non-negative states:
//! edge message = sender value, so the outgoing sum is `deg_i v_i` and the
//! incoming sum is `Σ_j v_j`; the node update `v − α(out − in)` is `v − αLv`.

use dpgn::autodiff::{Tape, Tensor};
use dpgn::checkpoint::TrainedModel;
use dpgn::data::NormalizationKind;
use dpgn::graph::grid;
use dpgn::model::{forward, physics_loss, GraphContext, ModelConfig, ModelKind, ModelParams};
use dpgn::pde::{make_synthetic_dataset, PdeSpec, SyntheticConfig};
use dpgn::train::{evaluate, predict};

const ALPHA: f64 = 0.2;

fn diffusion_params(n_edge_types: usize) -> ModelParams<Tensor> {
    let cfg = ModelConfig { d_in: 1, d_h: 1, d_out: 1, n_edge_types };
    let mut p = ModelParams::zeros(&cfg);
    p.node_encoder.w = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    // [e, v_sender, v_receiver, u]
    p.gn.phi_e.w = Tensor::matrix(4, 1, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    // [v, out_sum, in_sum, u]
    p.gn.phi_v.w = Tensor::matrix(4, 1, vec![1.0, -ALPHA, ALPHA, 0.0]).unwrap();
    p.node_decoder.w = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    p
}

fn dataset() -> dpgn::data::TrajectoryDataset {
    let mut sc = SyntheticConfig::new(PdeSpec::diffusion(ALPHA), 3, 40, 17);
    sc.normalization = NormalizationKind::None;
    sc.n_land_types = 2;
    make_synthetic_dataset(&grid(4, 4), &sc).unwrap()
}

#[test]
fn hand_built_network_reproduces_diffusion() {
    let ds = dataset();
    let model = TrainedModel {
        kind: ModelKind::Dpgn,
        alpha: ALPHA,
        edge_type_map: ds.edge_type_map().clone(),
        normalizer: None,
        params: diffusion_params(ds.n_edge_types()),
    };
    let mse = evaluate(&model, &ds, 5).unwrap();
    assert_eq!(mse.len(), 5);
    assert!(mse.iter().all(|&m| m < 1e-8), "{mse:?}");

    // the decoded rollout matches the stored targets step by step
    let preds = predict(&model, &ds, 1, 3, 4).unwrap();
    let seq = &ds.sequences()[1];
    for (k, y) in preds.iter().enumerate() {
        for i in 0..16 {
            assert!((y.data()[i] - seq.targets[(3 + k, i, 0)]).abs() < 1e-12);
        }
    }
}

#[test]
fn exact_latent_dynamics_have_zero_physics_residual() {
    let ds = dataset();
    let params = diffusion_params(ds.n_edge_types());
    let ctx = GraphContext::new(ds.graph(), ds.edge_types(), ds.n_edge_types());
    let seq = &ds.sequences()[0];
    let x: Vec<f64> = (0..16).map(|i| seq.features[(0, i, 0)]).collect();

    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let xv = tape.constant(Tensor::matrix(16, 1, x).unwrap());
    let fwd = forward(&mut tape, &ctx, ModelKind::Dpgn, &p, xv, 6).unwrap();
    let r = physics_loss(&mut tape, &ctx, &fwd.node_states, ALPHA).unwrap();
    assert!(tape.value(r).item().unwrap() < 1e-24);
    let wrong = physics_loss(&mut tape, &ctx, &fwd.node_states, 2.0 * ALPHA).unwrap();
    assert!(tape.value(wrong).item().unwrap() > 1e-6);
}

#[test]
fn skip_variant_of_the_same_weights_drifts() {
    let ds = dataset();
    let model = TrainedModel {
        kind: ModelKind::GnSkip,
        alpha: ALPHA,
        edge_type_map: ds.edge_type_map().clone(),
        normalizer: None,
        params: diffusion_params(ds.n_edge_types()),
    };
    // H + step(H) doubles the state instead of diffusing it
    let mse = evaluate(&model, &ds, 2).unwrap();
    assert!(mse[0] > 1e-6);
}
