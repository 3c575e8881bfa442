mod common;

use aqisense_core::data::{SeriesGrid, SeriesWindow};
use aqisense_core::ground::{
    gc_forward, horizon_rmse, persistence_forecast, synthesize_diffusion, train_gclstm,
    DiffusionSpec, GcLstm, GcLstmConfig, Standardizer, Station, StationGraph,
};
use aqisense_core::nn::{Activation, Graph, Tensor};
use common::{rand_tensor, rng};

fn gc(p: &Tensor, j: &Tensor, w: &Tensor, act: Activation) -> Tensor {
    let mut g = Graph::new();
    let (pv, jv, wv) = (g.input(p.clone()), g.input(j.clone()), g.input(w.clone()));
    let out = gc_forward(&mut g, pv, jv, wv, act).unwrap();
    g.value(out).clone()
}

#[test]
fn graph_convolution_hand_case() {
    let p = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let j = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
    let w = Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap();
    let out = gc(&p, &j, &w, Activation::Identity);
    assert_eq!(out.data(), &[4.0, -2.0, 4.0, -2.0]);
    assert_eq!(
        gc(&p, &j, &w, Activation::Relu).data(),
        &[4.0, 0.0, 4.0, 0.0]
    );
}

#[test]
fn identity_propagation_and_weights_pass_features_through() {
    let j = rand_tensor(&[4, 3], &mut rng(1));
    let out = gc(
        &Tensor::identity(4),
        &j,
        &Tensor::identity(3),
        Activation::Identity,
    );
    assert_eq!(out, j);
}

fn stations(n: usize) -> Vec<Station> {
    let r = &mut rng(77);
    (0..n)
        .map(|i| {
            use rand::Rng;
            Station::new(
                format!("s{i}"),
                23.0 + r.gen_range(0.0..0.2),
                113.0 + r.gen_range(0.0..0.2),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn propagation_is_symmetric_with_unit_spectral_radius() {
    let g = StationGraph::new(stations(6)).unwrap();
    let p = &g.propagation;
    for i in 0..6 {
        for j in 0..6 {
            assert!((p.get(&[i, j]) - p.get(&[j, i])).abs() < 1e-15);
        }
    }
    // D^{1/2} 1 is an eigenvector with eigenvalue 1
    let at: Vec<f64> = (0..6)
        .map(|i| g.adjacency.row(i).iter().sum::<f64>() + 1.0)
        .collect();
    let v: Vec<f64> = at.iter().map(|d| d.sqrt()).collect();
    for i in 0..6 {
        let pv: f64 = (0..6).map(|j| p.get(&[i, j]) * v[j]).sum();
        assert!((pv - v[i]).abs() < 1e-9);
    }
}

#[test]
fn forecasts_are_permutation_equivariant() {
    let n = 5;
    let graph = StationGraph::new(stations(n)).unwrap();
    let order = [3, 0, 4, 1, 2];
    let perm = graph.permuted(&order).unwrap();
    let cfg = GcLstmConfig {
        window: 3,
        horizon: 2,
        gc_out: 4,
        hidden: 6,
        gc_activation: Activation::Tanh,
        ..Default::default()
    };
    let model = GcLstm::new(cfg, n, 3).unwrap();
    let params = model.init_params(5);
    let x = rand_tensor(&[3, n, 3], &mut rng(6));
    let xp = Tensor::from_fn(&[3, n, 3], |i| {
        let (t, j, k) = (i / (n * 3), (i / 3) % n, i % 3);
        x.get(&[t, order[j], k])
    });
    let y = model
        .forward_window(&params, &graph.propagation, &x)
        .unwrap();
    let yp = model
        .forward_window(&params, &perm.propagation, &xp)
        .unwrap();
    for h in 0..2 {
        for (j, &o) in order.iter().enumerate() {
            assert!((yp.get(&[h, j]) - y.get(&[h, o])).abs() < 1e-12);
        }
    }
}

#[test]
fn persistence_and_rmse_oracles() {
    let x = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
    let p = persistence_forecast(&x, 3);
    assert_eq!(p.data(), &[2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
    let w = SeriesWindow {
        x,
        y: Tensor::from_rows(&[vec![2.0, 3.0], vec![4.0, 3.0], vec![2.0, 7.0]]).unwrap(),
        anchor: 0,
    };
    let r = horizon_rmse(&[p], &[w]).unwrap();
    assert_eq!(r[0], 0.0);
    assert!((r[1] - 2f64.sqrt()).abs() < 1e-15);
    assert!((r[2] - 8f64.sqrt()).abs() < 1e-15);
}

fn small_problem() -> (StationGraph, Vec<SeriesWindow>, Standardizer) {
    let spec = DiffusionSpec {
        nodes: 4,
        steps: 200,
        seed: 3,
        ..Default::default()
    };
    let (graph, obs) = synthesize_diffusion(&spec).unwrap();
    let grid = SeriesGrid::from_observations(&obs, &obs.met_columns).unwrap();
    let graph = graph.reordered(&grid.stations).unwrap();
    let scaler = Standardizer::fit(&grid).unwrap();
    (graph, grid.windows(4, 2, 2).unwrap(), scaler)
}

fn small_cfg() -> GcLstmConfig {
    GcLstmConfig {
        window: 4,
        horizon: 2,
        gc_out: 4,
        hidden: 8,
        epochs: 8,
        batch: 16,
        seed: 2,
        ..Default::default()
    }
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let (graph, windows, scaler) = small_problem();
    let (f, trace) = train_gclstm(&graph, &windows, &scaler, &small_cfg()).unwrap();
    assert_eq!(trace.epoch_losses.len(), 8);
    assert!(trace.epoch_losses[7] < trace.epoch_losses[0]);
    let (g, trace2) = train_gclstm(&graph, &windows, &scaler, &small_cfg()).unwrap();
    assert_eq!(trace, trace2);
    assert_eq!(f.params, g.params);
    let out = f.forecast(&windows[0].x).unwrap();
    assert_eq!(out.shape(), &[2, 4]);
}

#[test]
fn standardizer_round_trips_targets() {
    let (_, windows, scaler) = small_problem();
    let y = &windows[3].y;
    let back = scaler.unscale_target(&scaler.scale_target(y));
    assert!(back.max_abs_diff(y) < 1e-12);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (graph, windows, scaler) = small_problem();
    let (f, _) = train_gclstm(
        &graph,
        &windows[..4],
        &scaler,
        &GcLstmConfig {
            epochs: 1,
            ..small_cfg()
        },
    )
    .unwrap();
    assert!(f.forecast(&Tensor::zeros(&[4, 3, 4])).is_err());
    let other = StationGraph::new(stations(3)).unwrap();
    assert!(train_gclstm(&other, &windows, &scaler, &small_cfg()).is_err());
    assert!(train_gclstm(&graph, &[], &scaler, &small_cfg()).is_err());
}
