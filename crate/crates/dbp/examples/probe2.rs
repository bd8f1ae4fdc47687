use dbp::run_config::RunConfig;
use dbp::trainer::train_one;
use dbp_core::loss::LossMode;
use dbp_core::sim::{generate_dataset, SimulatorConfig};

fn main() {
    dbp::tune_allocator();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);

    let mut sim = SimulatorConfig::consumer();
    // Clean labels so the overfit target is exactly reachable.
    for m in &mut sim.materials {
        m.gross_error_prob = 0.0;
    }
    sim.labels.sigma_success_mm = 0.0;
    sim.labels.sigma_fail_mm = 1e-5;
    sim.labels.outlier_prob = 0.0;
    sim.invalid_pixel_prob = 0.0;
    let data = generate_dataset(&sim, 10, 1, 9, false).unwrap();

    let mut cfg = RunConfig::default();
    cfg.batch_size = 10;
    cfg.steps = steps;
    cfg.checkpoint_every = 0;
    cfg.optim.learning_rate = lr;
    cfg.loss.mode = LossMode::Plain;
    let run = train_one(&cfg, 1, &data, None).unwrap();
    for w in (0..steps).step_by(steps / 10) {
        let e = &run.log.entries[w];
        println!("step {:4}: j_z {:.3}", e.step, e.j_z.unwrap());
    }
    println!("final j_z {:.4}", run.log.entries.last().unwrap().j_z.unwrap());
}
