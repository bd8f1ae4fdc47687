//! The training loop: per-batch forward passes, single-pixel loss
//! assembly, backward, optimizer step, checkpointing, and multi-seed runs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dbp_core::data::batches;
use dbp_core::graph::Graph;
use dbp_core::loss::{self, LossMode, PokeLabel};
use dbp_core::net::{build_model, Model, NetConfig};
use dbp_core::optim::AdamState;
use dbp_core::rng::derive;
use dbp_core::sim::PokeSample;
use dbp_core::tensor::Tensor;

use crate::checkpoint::save_checkpoint;
use crate::run_config::{Objective, RunConfig};
use crate::{DbpError, Result};

/// Loss components of one step. Fields are present per the active mode;
/// `j_m` is always the optimized total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub j_z: Option<f64>,
    pub j_v: Option<f64>,
    pub j_n: Option<f64>,
    pub j_m: f64,
    pub millis: f64,
}

/// Per-step training record.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    /// CSV with the schema `step,j_z,j_v,j_n,j_m,ms`; inapplicable
    /// components are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,j_z,j_v,j_n,j_m,ms\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.3}\n",
                e.step,
                fmt(e.j_z),
                fmt(e.j_v),
                fmt(e.j_n),
                e.j_m,
                e.millis
            ));
        }
        std::fs::write(path, out).map_err(|e| DbpError::io(path, e))
    }
}

/// The outcome of one seed's run.
pub struct TrainedRun {
    pub seed: u64,
    pub model: Model<f32>,
    pub log: TrainLog,
    pub final_checkpoint: Option<PathBuf>,
}

fn validate_data(cfg: &NetConfig, data: &[PokeSample]) -> Result<()> {
    if data.is_empty() {
        return Err(DbpError::Usage("training set is empty".into()));
    }
    for (i, s) in data.iter().enumerate() {
        if s.height != cfg.input_height || s.width != cfg.input_width {
            return Err(DbpError::Usage(format!(
                "sample {i} is {}x{} but the network expects {}x{}",
                s.height, s.width, cfg.input_height, cfg.input_width
            )));
        }
        if !s.z_mm.is_finite() || s.z_mm <= 0.0 || s.z_mm > 20_000.0 {
            return Err(DbpError::Usage(format!(
                "sample {i} has an out-of-range label {} mm",
                s.z_mm
            )));
        }
    }
    Ok(())
}

fn mean_label_mm(data: &[PokeSample]) -> f64 {
    data.iter().map(|s| s.z_mm as f64).sum::<f64>() / data.len() as f64
}

/// Cyclic, seeded batch scheduler: reshuffles at every epoch boundary.
struct Schedule {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    queue: Vec<Vec<usize>>,
    next: usize,
}

impl Schedule {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Schedule {
            n,
            batch_size,
            seed,
            epoch: 0,
            queue: Vec::new(),
            next: 0,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.next >= self.queue.len() {
            self.queue = batches(self.n, self.batch_size, derive(self.seed, self.epoch))
                .expect("batch_size validated");
            self.epoch += 1;
            self.next = 0;
        }
        self.next += 1;
        self.queue[self.next - 1].clone()
    }
}

/// Trains one model for `cfg.steps` steps on `train`, deterministically in
/// `seed`. Checkpoints are written into `out_dir` when given, at the
/// configured cadence and at the end; a non-finite loss aborts the run
/// with the last checkpoint left in place.
pub fn train_one(
    cfg: &RunConfig,
    seed: u64,
    train: &[PokeSample],
    out_dir: Option<&Path>,
) -> Result<TrainedRun> {
    crate::tune_allocator();
    cfg.validate()?;
    let mut net = cfg.net.clone();
    net.seed = seed;
    net.depth_bias_mm = mean_label_mm(train);
    validate_data(&net, train)?;

    let mut model = build_model::<f32>(&net).map_err(DbpError::Core)?;
    let tensors: Vec<Tensor<f32>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let mut opt = AdamState::new(&tensors);
    drop(tensors);

    let mut schedule = Schedule::new(train.len(), cfg.batch_size, seed);
    let mut log = TrainLog::default();
    let mut last_checkpoint = None;

    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let batch = schedule.next_batch();
        let (entry, grads) = match cfg.objective {
            Objective::Poke => poke_step(&model, cfg, train, &batch, step)?,
            Objective::Autoencoder => autoencoder_step(&model, train, &batch, step)?,
        };
        if !entry.j_m.is_finite() {
            return Err(DbpError::TrainAborted {
                step,
                msg: format!(
                    "non-finite loss {}; last checkpoint: {}",
                    entry.j_m,
                    last_checkpoint
                        .as_ref()
                        .map(|p: &PathBuf| p.display().to_string())
                        .unwrap_or_else(|| "none".into())
                ),
            });
        }
        let mut tensors: Vec<Tensor<f32>> =
            model.params().iter().map(|(_, t)| t.clone()).collect();
        opt.step(&cfg.optim, &mut tensors, &grads)
            .map_err(|e| DbpError::TrainAborted {
                step,
                msg: e.to_string(),
            })?;
        for ((_, dst), src) in model.params_mut().iter_mut().zip(tensors) {
            *dst = src;
        }

        log.entries.push(TrainLogEntry {
            millis: t0.elapsed().as_secs_f64() * 1e3,
            ..entry
        });

        if let Some(dir) = out_dir {
            let due = cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0;
            if due {
                let path = dir.join(format!("seed{seed}-step{:06}.dbpc", step + 1));
                save_checkpoint(&model, &path)?;
                last_checkpoint = Some(path);
            }
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join(format!("seed{seed}-final.dbpc"));
            save_checkpoint(&model, &path)?;
            Some(path)
        }
        None => None,
    };

    Ok(TrainedRun {
        seed,
        model,
        log,
        final_checkpoint,
    })
}

type StepOut = (TrainLogEntry, Vec<Vec<f32>>);

fn collect_grads(
    g: &Graph<f32>,
    ids: &[dbp_core::graph::TensorId],
    model: &Model<f32>,
) -> Vec<Vec<f32>> {
    ids.iter()
        .zip(model.params())
        .map(|(&id, (_, t))| {
            g.grad(id)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect()
}

fn poke_step(
    model: &Model<f32>,
    cfg: &RunConfig,
    train: &[PokeSample],
    batch: &[usize],
    step: usize,
) -> Result<StepOut> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let mut preds = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for &i in batch {
        let s = &train[i];
        let img = g.constant(s.image_tensor());
        let dep = g.constant(s.depth_tensor());
        let out = bound.forward(&mut g, img, dep).map_err(DbpError::Core)?;
        let z_hat = g.gather_pixel(out.depth, s.row, s.col).map_err(DbpError::Core)?;
        let v_hat = g
            .gather_pixel(out.variance, s.row, s.col)
            .map_err(DbpError::Core)?;
        preds.push((z_hat, v_hat));
        labels.push(PokeLabel {
            row: s.row,
            col: s.col,
            success: s.success,
            z_mm: s.z_mm as f64,
        });
    }
    let z_only: Vec<_> = preds.iter().map(|p| p.0).collect();
    let z_mm: Vec<f64> = labels.iter().map(|l| l.z_mm).collect();

    let (j_z, j_v, j_n, total) = match cfg.loss.mode {
        LossMode::Plain => {
            let jz = loss::depth_loss(
                &mut g,
                &z_only,
                &labels,
                cfg.loss.lambda_plus,
                cfg.loss.lambda_minus,
            )
            .map_err(DbpError::Core)?;
            (Some(g.value(jz).item() as f64), None, None, jz)
        }
        LossMode::Moments => {
            let jz = loss::depth_loss(
                &mut g,
                &z_only,
                &labels,
                cfg.loss.lambda_plus,
                cfg.loss.lambda_minus,
            )
            .map_err(DbpError::Core)?;
            let jv = loss::moments_loss(&mut g, &preds, &z_mm).map_err(DbpError::Core)?;
            let jm = loss::combined_loss(&mut g, jz, jv, cfg.loss.lambda_v)
                .map_err(DbpError::Core)?;
            (
                Some(g.value(jz).item() as f64),
                Some(g.value(jv).item() as f64),
                None,
                jm,
            )
        }
        LossMode::LogLik => {
            let jn = loss::gaussian_nll(&mut g, &preds, &z_mm).map_err(DbpError::Core)?;
            (None, None, Some(g.value(jn).item() as f64), jn)
        }
    };

    let j_m = g.value(total).item() as f64;
    g.backward(total).map_err(DbpError::Core)?;
    let grads = collect_grads(&g, bound.param_ids(), model);
    Ok((
        TrainLogEntry {
            step,
            j_z,
            j_v,
            j_n,
            j_m,
            millis: 0.0,
        },
        grads,
    ))
}

/// Dense reconstruction step: the depth head is trained with a full-map L2
/// loss against the sensor image, so every output pixel receives gradient.
fn autoencoder_step(
    model: &Model<f32>,
    train: &[PokeSample],
    batch: &[usize],
    step: usize,
) -> Result<StepOut> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let inv_n = 1.0 / batch.len() as f64;
    let mut total: Option<dbp_core::graph::TensorId> = None;
    for &i in batch {
        let s = &train[i];
        let img = g.constant(s.image_tensor());
        let dep = g.constant(s.depth_tensor());
        let out = bound.forward(&mut g, img, dep).map_err(DbpError::Core)?;
        let target = g.constant(
            Tensor::new(vec![s.height, s.width], s.depth.clone()).map_err(DbpError::Core)?,
        );
        let diff = g.sub(out.depth, target).map_err(DbpError::Core)?;
        let sq = g.square(diff);
        let sum = g.sum(sq);
        let per_pixel = g.scale(sum, (inv_n / (s.height * s.width) as f64) as f32);
        total = Some(match total {
            Some(t) => g.add(t, per_pixel).map_err(DbpError::Core)?,
            None => per_pixel,
        });
    }
    let total = total.expect("nonempty batch");
    let j_m = g.value(total).item() as f64;
    g.backward(total).map_err(DbpError::Core)?;
    let grads = collect_grads(&g, bound.param_ids(), model);
    Ok((
        TrainLogEntry {
            step,
            j_z: None,
            j_v: None,
            j_n: None,
            j_m,
            millis: 0.0,
        },
        grads,
    ))
}

/// Independent runs for every configured seed, executed on separate
/// threads (they share nothing but the read-only dataset). Results come
/// back in the input seed order.
pub fn train_multi(
    cfg: &RunConfig,
    train: &[PokeSample],
    out_dir: Option<&Path>,
) -> Result<Vec<TrainedRun>> {
    crate::tune_allocator();
    cfg.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_one(cfg, seed, train, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// Writes one log per run as `trainlog-seed<seed>.csv`.
pub fn write_logs(runs: &[TrainedRun], dir: &Path) -> Result<()> {
    for run in runs {
        run.log
            .write_csv(&dir.join(format!("trainlog-seed{}.csv", run.seed)))?;
    }
    Ok(())
}

/// Convenience for tests and the CLI: summarize final losses to a writer.
pub fn print_summary(runs: &[TrainedRun], mut w: impl Write) -> std::io::Result<()> {
    for run in runs {
        let last = run.log.entries.last();
        writeln!(
            w,
            "seed {}: {} steps, final loss {}",
            run.seed,
            run.log.entries.len(),
            last.map(|e| format!("{:.4}", e.j_m)).unwrap_or_default()
        )?;
    }
    Ok(())
}
