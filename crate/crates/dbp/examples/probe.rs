use dbp::eval::{evaluate, EvalInputs, PredictorKind};
use dbp::run_config::RunConfig;
use dbp::trainer::train_one;
use dbp_core::data::{split, SplitSpec};
use dbp_core::loss::LossMode;
use dbp_core::sim::{generate_dataset, SimulatorConfig};
use std::time::Instant;

fn main() {
    dbp::tune_allocator();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(800);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);

    let sim = SimulatorConfig::consumer();
    let t0 = Instant::now();
    let data = generate_dataset(&sim, 400, 8, 42, false).unwrap();
    println!("dataset: {} samples in {:?}", data.len(), t0.elapsed());
    let (train, test) = split(&data, &SplitSpec::default()).unwrap();
    println!("split: {} train / {} test", train.len(), test.len());

    let mut cfg = RunConfig::default();
    cfg.batch_size = batch;
    cfg.steps = steps;
    cfg.checkpoint_every = 0;
    cfg.optim.learning_rate = lr;
    cfg.optim.lr_decay = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    cfg.loss.mode = match args.get(4).map(|s| s.as_str()) {
        Some("plain") => LossMode::Plain,
        Some("loglik") => LossMode::LogLik,
        _ => LossMode::Moments,
    };
    cfg.loss.lambda_v = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let t0 = Instant::now();
    let run = train_one(&cfg, 1, &train, None).unwrap();
    println!("train {} steps: {:?}", steps, t0.elapsed());
    for w in [0, steps / 4, steps / 2, 3 * steps / 4, steps - 50] {
        let window: Vec<f64> = run.log.entries[w..(w + 50).min(steps)]
            .iter()
            .map(|e| e.j_z.unwrap_or(e.j_m))
            .collect();
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        println!("  j_z around step {w}: {mean:.1}");
    }

    let inputs = EvalInputs {
        calib: Some(&train),
        models: vec![run.model],
        filter_sigma: None,
    };
    let t0 = Instant::now();
    for kind in [
        PredictorKind::Raw,
        PredictorKind::RawBc,
        PredictorKind::GaussianFilter,
        PredictorKind::GaussianFilterBc,
        PredictorKind::Dbp,
    ] {
        let needs_calib = kind.needs_calibration() || kind == PredictorKind::GaussianFilter;
        let empty = EvalInputs {
            models: inputs.models.clone(),
            ..EvalInputs::default()
        };
        let r = evaluate(
            kind,
            None,
            "consumer",
            &test,
            if needs_calib || kind == PredictorKind::Dbp { &inputs } else { &empty },
        )
        .unwrap();
        println!(
            "{:>6}: rmse {:.2} mm (mse {:+.2}) sigma {:?}",
            r.predictor, r.rmse_mm, r.mean_signed_error_mm, r.filter_sigma
        );
    }
    println!("eval: {:?}", t0.elapsed());
}
