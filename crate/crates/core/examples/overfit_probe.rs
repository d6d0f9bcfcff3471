//! Single-sample overfit runner: trains the full model on one generated
//! sample and reports the loss curve plus eval-mode vessel accuracy.
//! Useful for measuring per-iteration cost and optimizer behavior:
//!
//!   cargo run --release -p avnet-core --example overfit_probe -- \
//!       500 adam 0.0 1e-4 500
//!
//! Arguments: iterations, optimizer (adam|sgd), dropout rate, base lr,
//! poly-decay horizon.

use avnet_core::data::generate_synthetic;
use avnet_core::model::{AvNet, ModelConfig};
use avnet_core::train::{
    evaluate_classmaps, train, LrSchedule, NullObserver, OptimizerKind, TrainConfig,
};
use avnet_core::ops::PaddingMode;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let optimizer = match args.get(2).map(String::as_str) {
        Some("sgd") => OptimizerKind::default(),
        _ => OptimizerKind::adam_default(),
    };
    let dropout: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let base_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let max_iter: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(iters);

    let cfg = ModelConfig {
        dropout_rate: dropout,
        ..ModelConfig::default()
    };
    let mut model = AvNet::<f32>::build(&cfg, 17).unwrap();
    println!("params: {}", model.param_count());
    let sample = generate_synthetic(64, 1);
    let data = vec![sample.clone()];

    let tc = TrainConfig {
        batch_size: 1,
        iterations: iters,
        schedule: LrSchedule::new(base_lr, 0.9, max_iter).unwrap(),
        optimizer,
        seed: 7,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let result = train(&mut model, &data, &tc, &mut NullObserver).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{} iters in {:.1}s ({:.3}s/iter)",
        iters,
        dt,
        dt / iters as f64
    );
    for rec in result.records.iter().step_by((iters / 20).max(1)) {
        println!("it {:4}  lr {:.3e}  loss {:.5}", rec.iteration, rec.lr, rec.loss);
    }
    println!("final loss: {:.6}", result.records.last().unwrap().loss);

    // Eval-mode accuracy on the memorized sample.
    let image = sample.image.cast::<f32>();
    let probs = avnet_core::model::predict_image(&model, &image, PaddingMode::Reflect).unwrap();
    let pred = avnet_core::train::argmax_classes(probs.data(), 4, 64 * 64);
    let (_, report) = evaluate_classmaps(&pred, &sample, false).unwrap();
    println!(
        "eval accuracy {:.4} tpr_at {:.4} tpr_ve {:.4} missed {} / {}",
        report.accuracy,
        report.tpr_at,
        report.tpr_ve,
        report.missed_at + report.missed_ve,
        report.vessel_pixels
    );
}
