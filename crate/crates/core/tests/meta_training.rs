use std::f64::consts::TAU;
use std::time::Instant;

use ndarray::{array, s};
use rand::Rng;
use tlopt_core::anp::{train, ModelSpec, TrainConfig};
use tlopt_core::dataset::{sinusoid_family, Points};
use tlopt_core::seed;

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        checkpoint_interval: 200,
        seed: 1,
        model: ModelSpec { width: 32, encoder_layers: 2, decoder_layers: 2 },
        ..TrainConfig::default()
    }
}

#[test]
fn sinusoid_training_improves_validation_and_fits_context() {
    let data = sinusoid_family(20, 64, 9);
    let start = Instant::now();
    let out = train(&data, &config(2000)).unwrap();
    eprintln!("trained in {:?}; history {:?}", start.elapsed(), out.history);
    let initial = out.history[0].valid_ll;
    let best = out.history.iter().map(|r| r.valid_ll).fold(f64::NEG_INFINITY, f64::max);
    assert!(best > initial + 0.5, "initial {initial}, best {best}");
    assert_eq!(out.history.len(), 2000 / 200 + 1);

    // Ten observed points per task; probe at those points and far outside
    // the unit interval, where the truth is the continued sinusoid.
    let (mut near_err, mut far_err) = (0.0, 0.0);
    for task in data.valid_tasks() {
        let (amp, phase) = truth(9, task.task_id);
        let pts = task.points();
        let ctx = Points::new(pts.x.slice(s![..10, ..]).to_owned(), pts.y.slice(s![..10]).to_owned());
        let near = out.model.predict(&ctx, ctx.x.view()).unwrap();
        near_err += near.mean.iter().zip(&ctx.y).map(|(m, y)| (m - y).abs()).sum::<f64>() / 10.0;
        let far_x = array![[-0.75], [1.75]];
        let far = out.model.predict(&ctx, far_x.view()).unwrap();
        far_err += far_x.iter().zip(&far.mean).map(|(x, m)| (m - amp * (TAU * x + phase).sin()).abs()).sum::<f64>() / 2.0;
    }
    assert!(near_err < far_err, "near {near_err}, far {far_err}");
}

/// Amplitude and phase of task `t`, drawn the way the generator does.
fn truth(seed_: u64, t: usize) -> (f64, f64) {
    let mut rng = seed::derived_rng(seed_, &[t as u64]);
    let amp = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..std::f64::consts::PI);
    (amp, phase)
}

#[test]
fn training_is_reproducible() {
    let data = sinusoid_family(8, 40, 2);
    let cfg = TrainConfig { checkpoint_interval: 10, ..config(40) };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.model.to_checkpoint_json().unwrap(), b.model.to_checkpoint_json().unwrap());
    assert_eq!(a.history, b.history);
}
