//! End-to-end training behavior: determinism, logging modes, abort paths,
//! the overfit sanity run, and stop-gradient isolation at the level of
//! whole-network gradients.

use dbp::run_config::{Objective, RunConfig};
use dbp::trainer::{train_multi, train_one};
use dbp::DbpError;
use dbp_core::graph::Graph;
use dbp_core::loss::{self, LossMode, PokeLabel};
use dbp_core::net::{build_model, NetConfig};
use dbp_core::sim::{generate_dataset, SimulatorConfig};

fn small_net() -> NetConfig {
    NetConfig {
        input_height: 16,
        input_width: 16,
        encoder_channels: vec![4, 8],
        decoder_channels: vec![8, 4],
        ..NetConfig::default()
    }
}

fn small_sim() -> SimulatorConfig {
    let mut sim = SimulatorConfig::consumer();
    sim.height = 16;
    sim.width = 16;
    sim
}

fn quick_config(steps: usize, mode: LossMode) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.net = small_net();
    cfg.steps = steps;
    cfg.batch_size = 5;
    cfg.checkpoint_every = 0;
    cfg.optim.learning_rate = 3e-3;
    cfg.loss.mode = mode;
    cfg.loss.lambda_v = 1e-3;
    cfg
}

#[test]
fn identical_seeds_produce_bitwise_identical_checkpoints() {
    let data = generate_dataset(&small_sim(), 8, 3, 5, false).unwrap();
    let cfg = quick_config(25, LossMode::Moments);
    let dir = tempfile::tempdir().unwrap();
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    std::fs::create_dir_all(&a_dir).unwrap();
    std::fs::create_dir_all(&b_dir).unwrap();
    let a = train_one(&cfg, 7, &data, Some(&a_dir)).unwrap();
    let b = train_one(&cfg, 7, &data, Some(&b_dir)).unwrap();
    let bytes_a = std::fs::read(a.final_checkpoint.unwrap()).unwrap();
    let bytes_b = std::fs::read(b.final_checkpoint.unwrap()).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let c = train_one(&cfg, 8, &data, None).unwrap();
    assert_ne!(
        a.model.params(),
        c.model.params(),
        "different seeds should diverge"
    );
}

#[test]
fn log_components_follow_the_mode() {
    let data = generate_dataset(&small_sim(), 6, 3, 6, false).unwrap();

    let plain = train_one(&quick_config(4, LossMode::Plain), 1, &data, None).unwrap();
    assert!(plain.log.entries.iter().all(|e| e.j_v.is_none() && e.j_n.is_none()));
    assert!(plain.log.entries.iter().all(|e| e.j_z.is_some()));

    let moments = train_one(&quick_config(4, LossMode::Moments), 1, &data, None).unwrap();
    assert!(moments.log.entries.iter().all(|e| e.j_v.is_some() && e.j_z.is_some()));
    let e = &moments.log.entries[0];
    let jm = e.j_z.unwrap() + 1e-3 * e.j_v.unwrap();
    assert!((e.j_m - jm).abs() / jm.max(1.0) < 1e-5);

    let loglik = train_one(&quick_config(4, LossMode::LogLik), 1, &data, None).unwrap();
    assert!(loglik.log.entries.iter().all(|e| e.j_n.is_some() && e.j_z.is_none()));
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_checkpoint() {
    let data = generate_dataset(&small_sim(), 6, 3, 9, false).unwrap();
    let mut cfg = quick_config(50, LossMode::Plain);
    // A pathological learning rate blows the parameters up within a few
    // steps; f32 squaring then overflows to infinity.
    cfg.optim.learning_rate = 1e30;
    cfg.checkpoint_every = 1;
    let dir = tempfile::tempdir().unwrap();
    let err = train_one(&cfg, 3, &data, Some(dir.path())).unwrap_err();
    match err {
        DbpError::TrainAborted { step, ref msg } => {
            assert!(step >= 1, "step {step}: first step starts from sane init");
            assert!(msg.contains("non-finite") || msg.contains("gradient"), "{msg}");
        }
        other => panic!("expected abort, got {other}"),
    }
    // The checkpoints written before the abort survive.
    let kept = std::fs::read_dir(dir.path()).unwrap().count();
    assert!(kept >= 1, "expected retained checkpoints");
}

#[test]
fn train_multi_runs_all_seeds_independently() {
    let data = generate_dataset(&small_sim(), 6, 3, 2, false).unwrap();
    let mut cfg = quick_config(10, LossMode::Plain);
    cfg.seeds = vec![1, 2, 3];
    let runs = train_multi(&cfg, &data, None).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_ne!(runs[0].model.params(), runs[1].model.params());
    assert_ne!(runs[1].model.params(), runs[2].model.params());

    // Each run matches what a solo run of that seed produces.
    let solo = train_one(&cfg, 2, &data, None).unwrap();
    assert_eq!(solo.model.params(), runs[1].model.params());
}

#[test]
fn autoencoder_reconstructs_clean_depth_maps() {
    // Noise-free sensor: reconstruction should become accurate on held-out
    // maps from the same scene distribution.
    let mut sim = small_sim();
    for m in &mut sim.materials {
        m.gaussian_noise_std_mm = 0.0;
        m.gross_error_prob = 0.0;
    }
    sim.invalid_pixel_prob = 0.0;
    let data = generate_dataset(&sim, 30, 2, 31, false).unwrap();
    let (train, test) = dbp_core::data::split(&data, &dbp_core::data::SplitSpec::default()).unwrap();

    let mut cfg = quick_config(400, LossMode::Plain);
    cfg.objective = Objective::Autoencoder;
    cfg.batch_size = 6;
    cfg.optim.lr_decay = 0.997;
    let run = train_one(&cfg, 4, &train, None).unwrap();

    let mut sq = 0.0f64;
    let mut n = 0usize;
    for s in &test {
        let pred = run
            .model
            .forward_maps(&s.image_tensor(), &s.depth_tensor())
            .unwrap();
        for (&p, &d) in pred.depth_mm.data().iter().zip(&s.depth) {
            sq += (p as f64 - d as f64).powi(2);
            n += 1;
        }
    }
    let rmse = (sq / n as f64).sqrt();
    assert!(rmse < 5.0, "held-out reconstruction rmse {rmse:.2} mm");

    // Dense supervision reaches every output pixel: gradients at a pixel
    // far from any poke are nonzero.
    let mut g = Graph::new();
    let model = build_model::<f32>(&cfg.net).unwrap();
    let bound = model.bind(&mut g);
    let s = &train[0];
    let img = g.constant(s.image_tensor());
    let dep = g.constant(s.depth_tensor());
    let out = bound.forward(&mut g, img, dep).unwrap();
    let target = g.constant(dbp_core::tensor::Tensor::new(vec![16, 16], s.depth.clone()).unwrap());
    let diff = g.sub(out.depth, target).unwrap();
    let sqd = g.square(diff);
    let loss = g.sum(sqd);
    g.backward(loss).unwrap();
    // Every pixel of the reconstruction influences the loss.
    let dd = g.grad(diff).unwrap();
    assert!(dd.iter().all(|&v| v != 0.0));
}

#[test]
fn moments_term_leaves_depth_head_gradients_untouched() {
    // Same batch, same parameters: depth-head gradients must be bitwise
    // identical with the variance term present or absent.
    let data = generate_dataset(&small_sim(), 6, 4, 13, false).unwrap();
    let model = build_model::<f32>(&small_net()).unwrap();

    let grads_with_lambda = |lambda_v: f64| {
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for s in &data[..8] {
            let img = g.constant(s.image_tensor());
            let dep = g.constant(s.depth_tensor());
            let out = bound.forward(&mut g, img, dep).unwrap();
            let zh = g.gather_pixel(out.depth, s.row, s.col).unwrap();
            let vh = g.gather_pixel(out.variance, s.row, s.col).unwrap();
            preds.push((zh, vh));
            labels.push(PokeLabel {
                row: s.row,
                col: s.col,
                success: s.success,
                z_mm: s.z_mm as f64,
            });
        }
        let z_only: Vec<_> = preds.iter().map(|p| p.0).collect();
        let z_mm: Vec<f64> = labels.iter().map(|l| l.z_mm).collect();
        let jz = loss::depth_loss(&mut g, &z_only, &labels, 1.0, 0.25).unwrap();
        let jv = loss::moments_loss(&mut g, &preds, &z_mm).unwrap();
        let jm = loss::combined_loss(&mut g, jz, jv, lambda_v).unwrap();
        g.backward(jm).unwrap();
        let mut head = Vec::new();
        for (id, (name, t)) in bound.param_ids().iter().zip(model.params()) {
            if name.starts_with("head.depth") {
                head.push(
                    g.grad(*id)
                        .map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                        .unwrap_or_else(|| vec![0; t.numel()]),
                );
            }
        }
        head
    };

    assert_eq!(grads_with_lambda(0.0), grads_with_lambda(0.7));
}

#[test]
fn overfit_sanity_run_reaches_near_zero_depth_loss() {
    // Ten matte pokes, moments objective: the depth loss must fall below
    // 1 mm^2 within 2000 steps, and the smoothed loss must be
    // non-increasing across the final quarter.
    let mut sim = small_sim();
    sim.material_weights = [1.0, 0.0, 0.0, 0.0];
    sim.labels.outlier_prob = 0.0;
    let data = generate_dataset(&sim, 10, 1, 77, false).unwrap();
    assert_eq!(data.len(), 10);

    let mut cfg = quick_config(1200, LossMode::Moments);
    cfg.batch_size = 10;
    cfg.optim.learning_rate = 4e-3;
    cfg.optim.lr_decay = 0.998;
    let run = train_one(&cfg, 11, &data, None).unwrap();
    let final_jz = run.log.entries.last().unwrap().j_z.unwrap();
    assert!(final_jz < 1.0, "final depth loss {final_jz}");

    let losses: Vec<f64> = run.log.entries.iter().map(|e| e.j_m).collect();
    let start = 3 * losses.len() / 4;
    let windows: Vec<f64> = losses[start..]
        .chunks(100)
        .filter(|c| c.len() == 100)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for pair in windows.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "smoothed loss rose late in training: {windows:?}"
        );
    }
}

#[test]
fn training_rejects_mismatched_data() {
    let data = generate_dataset(&small_sim(), 2, 2, 1, false).unwrap();
    let mut cfg = quick_config(2, LossMode::Plain);
    cfg.net.input_height = 32;
    cfg.net.input_width = 32;
    assert!(matches!(
        train_one(&cfg, 1, &data, None),
        Err(DbpError::Usage(_))
    ));
    let cfg = quick_config(2, LossMode::Plain);
    assert!(matches!(
        train_one(&cfg, 1, &[], None),
        Err(DbpError::Usage(_))
    ));
}
