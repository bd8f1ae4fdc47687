//! Evaluation of predictors on a test split: poke-point RMSE, signed-error
//! histograms, studentized residuals, Q-Q points, discard curves, and the
//! aggregated results table.

use std::fmt::Write as _;
use std::path::Path;

use dbp_core::baseline::{
    apply_bias, estimate_bias, gaussian_filter_predict, raw_sensor_predict, BiasEstimate,
    DEFAULT_FILTER_SIGMA, FILTER_SIGMA_SWEEP,
};
use dbp_core::metrics::{
    discard_curve, error_histogram, mean_signed_error, qq_points, rmse, studentize, Histogram,
};
use dbp_core::net::Model;
use dbp_core::sim::PokeSample;

use crate::{DbpError, Result};

/// The comparison predictors and the learned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Raw,
    RawBc,
    GaussianFilter,
    GaussianFilterBc,
    Autoencoder,
    AutoencoderBc,
    Dbp,
}

impl PredictorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Self::Raw),
            "raw-bc" => Some(Self::RawBc),
            "gf" => Some(Self::GaussianFilter),
            "gf-bc" => Some(Self::GaussianFilterBc),
            "ae" => Some(Self::Autoencoder),
            "ae-bc" => Some(Self::AutoencoderBc),
            "dbp" => Some(Self::Dbp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::RawBc => "raw-bc",
            Self::GaussianFilter => "gf",
            Self::GaussianFilterBc => "gf-bc",
            Self::Autoencoder => "ae",
            Self::AutoencoderBc => "ae-bc",
            Self::Dbp => "dbp",
        }
    }

    pub fn needs_calibration(self) -> bool {
        matches!(self, Self::RawBc | Self::GaussianFilterBc | Self::AutoencoderBc)
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Self::Autoencoder | Self::AutoencoderBc | Self::Dbp)
    }
}

/// Inputs beyond the test split itself.
#[derive(Default)]
pub struct EvalInputs<'a> {
    /// Calibration (training) split for bias estimation and the filter
    /// width sweep.
    pub calib: Option<&'a [PokeSample]>,
    /// Trained checkpoints, one per seed, for `ae*` and `dbp`.
    pub models: Vec<Model<f32>>,
    /// Fixed filter width; `None` sweeps on the calibration split when one
    /// is available and otherwise uses the default of 13.
    pub filter_sigma: Option<f64>,
}

/// Everything measured for one predictor on one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub predictor: String,
    pub dataset: String,
    /// Cross-seed mean for model predictors, plain RMSE otherwise.
    pub rmse_mm: f64,
    /// Cross-seed sample standard deviation; 0 for a single run.
    pub std_mm: f64,
    pub per_seed_rmse: Vec<f64>,
    pub mean_signed_error_mm: f64,
    pub histogram: Histogram,
    /// Present only for predictors with a variance output.
    pub studentized: Vec<f64>,
    pub qq: Vec<(f64, f64)>,
    pub discard: Vec<(f64, f64)>,
    /// Dense-map RMSE against simulator ground truth, when the split
    /// carries it and the predictor produces maps.
    pub full_map_rmse_mm: Option<f64>,
    pub filter_sigma: Option<f64>,
}

fn sensor_predictions(
    test: &[PokeSample],
    sigma: Option<f64>,
) -> Result<Vec<f64>> {
    test.iter()
        .map(|s| match sigma {
            None => raw_sensor_predict(&s.depth, s.height, s.width, s.row, s.col),
            Some(sig) => {
                gaussian_filter_predict(&s.depth, s.height, s.width, s.row, s.col, sig)
            }
        })
        .map(|r| r.map_err(DbpError::Core))
        .collect()
}

fn labels_of(set: &[PokeSample]) -> Vec<f64> {
    set.iter().map(|s| s.z_mm as f64).collect()
}

/// Picks the sweep width with the lowest RMSE on the calibration split.
fn sweep_filter_sigma(calib: &[PokeSample]) -> Result<f64> {
    let labels = labels_of(calib);
    let mut best = (f64::INFINITY, DEFAULT_FILTER_SIGMA);
    for &sigma in &FILTER_SIGMA_SWEEP {
        let preds = sensor_predictions(calib, Some(sigma))?;
        let err = rmse(&preds, &labels).map_err(DbpError::Core)?;
        if err < best.0 {
            best = (err, sigma);
        }
    }
    Ok(best.1)
}

/// Model predictions at the poke points; variance comes back only for the
/// poke-supervised model.
fn model_predictions(
    model: &Model<f32>,
    set: &[PokeSample],
    want_variance: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut z = Vec::with_capacity(set.len());
    let mut v = want_variance.then(|| Vec::with_capacity(set.len()));
    for s in set {
        let (z_hat, v_hat) = model
            .predict_at(&s.image_tensor(), &s.depth_tensor(), s.row, s.col)
            .map_err(DbpError::Core)?;
        z.push(z_hat as f64);
        if let Some(v) = v.as_mut() {
            v.push(v_hat as f64);
        }
    }
    Ok((z, v))
}

fn full_map_rmse(model: &Model<f32>, set: &[PokeSample]) -> Result<Option<f64>> {
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for s in set {
        let Some(gt) = &s.ground_truth_mm else {
            return Ok(None);
        };
        let pred = model
            .forward_maps(&s.image_tensor(), &s.depth_tensor())
            .map_err(DbpError::Core)?;
        for (&p, &z) in pred.depth_mm.data().iter().zip(gt) {
            let d = p as f64 - z as f64;
            sq += d * d;
            n += 1;
        }
    }
    Ok((n > 0).then(|| (sq / n as f64).sqrt()))
}

fn cross_seed_stats(per_seed: &[f64]) -> (f64, f64) {
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    if per_seed.len() < 2 {
        return (mean, 0.0);
    }
    let var = per_seed.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one predictor over a test split.
///
/// Bias-corrected variants estimate the constant on the calibration split
/// only. For multi-checkpoint model predictors the RMSE is reported as
/// mean and std across seeds while the detailed curves come from the
/// first checkpoint.
pub fn evaluate(
    kind: PredictorKind,
    name: Option<&str>,
    dataset: &str,
    test: &[PokeSample],
    inputs: &EvalInputs,
) -> Result<EvalReport> {
    crate::tune_allocator();
    if test.is_empty() {
        return Err(DbpError::Usage("test split is empty".into()));
    }
    if kind.needs_calibration() && inputs.calib.is_none() {
        return Err(DbpError::Usage(format!(
            "predictor `{}` needs --calib for bias estimation",
            kind.name()
        )));
    }
    if kind.needs_model() && inputs.models.is_empty() {
        return Err(DbpError::Usage(format!(
            "predictor `{}` needs at least one --checkpoint",
            kind.name()
        )));
    }

    let labels = labels_of(test);
    let mut filter_sigma = None;

    // Per-seed prediction vectors; baselines have exactly one "seed".
    let mut per_seed_preds: Vec<Vec<f64>> = Vec::new();
    let mut variances: Option<Vec<f64>> = None;
    let mut full_map = None;

    match kind {
        PredictorKind::Raw | PredictorKind::RawBc => {
            let mut preds = sensor_predictions(test, None)?;
            if kind == PredictorKind::RawBc {
                let calib = inputs.calib.expect("checked above");
                let calib_preds = sensor_predictions(calib, None)?;
                let bias = estimate_bias(&calib_preds, &labels_of(calib)).map_err(DbpError::Core)?;
                correct(&mut preds, &bias);
            }
            per_seed_preds.push(preds);
        }
        PredictorKind::GaussianFilter | PredictorKind::GaussianFilterBc => {
            let sigma = match (inputs.filter_sigma, inputs.calib) {
                (Some(s), _) => s,
                (None, Some(calib)) => sweep_filter_sigma(calib)?,
                (None, None) => DEFAULT_FILTER_SIGMA,
            };
            filter_sigma = Some(sigma);
            let mut preds = sensor_predictions(test, Some(sigma))?;
            if kind == PredictorKind::GaussianFilterBc {
                let calib = inputs.calib.expect("checked above");
                let calib_preds = sensor_predictions(calib, Some(sigma))?;
                let bias = estimate_bias(&calib_preds, &labels_of(calib)).map_err(DbpError::Core)?;
                correct(&mut preds, &bias);
            }
            per_seed_preds.push(preds);
        }
        PredictorKind::Autoencoder | PredictorKind::AutoencoderBc => {
            for model in &inputs.models {
                let (mut preds, _) = model_predictions(model, test, false)?;
                if kind == PredictorKind::AutoencoderBc {
                    let calib = inputs.calib.expect("checked above");
                    let (calib_preds, _) = model_predictions(model, calib, false)?;
                    let bias =
                        estimate_bias(&calib_preds, &labels_of(calib)).map_err(DbpError::Core)?;
                    correct(&mut preds, &bias);
                }
                per_seed_preds.push(preds);
            }
            full_map = full_map_rmse(&inputs.models[0], test)?;
        }
        PredictorKind::Dbp => {
            for (i, model) in inputs.models.iter().enumerate() {
                let (preds, vars) = model_predictions(model, test, true)?;
                if i == 0 {
                    variances = vars;
                }
                per_seed_preds.push(preds);
            }
            full_map = full_map_rmse(&inputs.models[0], test)?;
        }
    }

    let per_seed_rmse: Vec<f64> = per_seed_preds
        .iter()
        .map(|p| rmse(p, &labels).map_err(DbpError::Core))
        .collect::<Result<_>>()?;
    let (rmse_mm, std_mm) = cross_seed_stats(&per_seed_rmse);

    let first = &per_seed_preds[0];
    let errors: Vec<f64> = first.iter().zip(&labels).map(|(&p, &z)| p - z).collect();
    let histogram = error_histogram(&errors, 5.0).map_err(DbpError::Core)?;
    let mean_signed = mean_signed_error(first, &labels).map_err(DbpError::Core)?;

    let (studentized, qq, discard) = match &variances {
        Some(vars) => {
            let studentized: Vec<f64> = first
                .iter()
                .zip(&labels)
                .zip(vars)
                .map(|((&p, &z), &v)| studentize(p, z, v).map_err(DbpError::Core))
                .collect::<Result<_>>()?;
            let qq = qq_points(&studentized).map_err(DbpError::Core)?;
            let steps = 10.min(test.len());
            let discard = discard_curve(&errors, vars, steps).map_err(DbpError::Core)?;
            (studentized, qq, discard)
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };

    Ok(EvalReport {
        predictor: name.unwrap_or(kind.name()).to_string(),
        dataset: dataset.to_string(),
        rmse_mm,
        std_mm,
        per_seed_rmse,
        mean_signed_error_mm: mean_signed,
        histogram,
        studentized,
        qq,
        discard,
        full_map_rmse_mm: full_map,
        filter_sigma,
    })
}

fn correct(preds: &mut [f64], bias: &BiasEstimate) {
    for p in preds.iter_mut() {
        *p = apply_bias(*p, bias);
    }
}

impl EvalReport {
    /// Writes `hist.csv`, `qq.csv`, `discard.csv`, and `table.csv` into a
    /// directory. Curves that do not apply produce header-only files.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DbpError::io(dir, e))?;
        let write = |name: &str, content: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| DbpError::io(&path, e))
        };

        let mut hist = String::from("bin_lo,bin_hi,count\n");
        for (i, &count) in self.histogram.counts.iter().enumerate() {
            let (lo, hi) = self.histogram.edges(i);
            let _ = writeln!(hist, "{lo},{hi},{count}");
        }
        write("hist.csv", hist)?;

        let mut qq = String::from("theoretical,empirical\n");
        for (t, e) in &self.qq {
            let _ = writeln!(qq, "{t:.6},{e:.6}");
        }
        write("qq.csv", qq)?;

        let mut discard = String::from("retained_fraction,rmse_mm\n");
        for (f, r) in &self.discard {
            let _ = writeln!(discard, "{f:.2},{r:.4}");
        }
        write("discard.csv", discard)?;

        write("table.csv", table_csv(std::slice::from_ref(self)))
    }
}

/// One CSV row per report: `predictor,dataset,rmse_mm,std_mm`.
pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("predictor,dataset,rmse_mm,std_mm\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.2}",
            r.predictor, r.dataset, r.rmse_mm, r.std_mm
        );
    }
    out
}

/// Canonical row order of the results table.
const TABLE_ORDER: [&str; 10] = [
    "raw",
    "raw-bc",
    "gf",
    "gf-bc",
    "ae",
    "ae-bc",
    "m-dbp-rgb",
    "ll-dbp-rgb",
    "m-dbp-rgbd",
    "ll-dbp-rgbd",
];

/// A parsed `table.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub predictor: String,
    pub dataset: String,
    pub rmse_mm: f64,
    pub std_mm: f64,
}

pub fn parse_table_csv(text: &str, path: &str) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(DbpError::ConfigParse {
                path: path.to_string(),
                line: idx + 1,
                msg: format!("expected 4 CSV fields, got {}", parts.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| DbpError::ConfigParse {
                path: path.to_string(),
                line: idx + 1,
                msg: format!("invalid number `{s}`"),
            })
        };
        rows.push(TableRow {
            predictor: parts[0].trim().to_string(),
            dataset: parts[1].trim().to_string(),
            rmse_mm: num(parts[2])?,
            std_mm: num(parts[3])?,
        });
    }
    Ok(rows)
}

/// Renders collected rows as an aligned text table, predictors down the
/// side in canonical order and datasets across, `mean +- std` in each
/// cell. Returns the text table and the combined CSV.
pub fn render_table(rows: &[TableRow]) -> (String, String) {
    let mut datasets: Vec<String> = Vec::new();
    for pref in ["consumer", "adversarial"] {
        if rows.iter().any(|r| r.dataset == pref) {
            datasets.push(pref.to_string());
        }
    }
    let mut extra: Vec<String> = rows
        .iter()
        .map(|r| r.dataset.clone())
        .filter(|d| !datasets.contains(d))
        .collect();
    extra.sort();
    extra.dedup();
    datasets.extend(extra);

    let mut predictors: Vec<String> = TABLE_ORDER
        .iter()
        .map(|s| s.to_string())
        .filter(|p| rows.iter().any(|r| &r.predictor == p))
        .collect();
    let mut extra: Vec<String> = rows
        .iter()
        .map(|r| r.predictor.clone())
        .filter(|p| !predictors.contains(p))
        .collect();
    extra.sort();
    extra.dedup();
    predictors.extend(extra);

    let cell = |p: &str, d: &str| -> String {
        match rows.iter().find(|r| r.predictor == p && r.dataset == d) {
            Some(r) if r.std_mm > 0.0 => format!("{:.2} +- {:.2}", r.rmse_mm, r.std_mm),
            Some(r) => format!("{:.2}", r.rmse_mm),
            None => String::from("-"),
        }
    };

    let width = 16usize;
    let mut text = format!("{:<14}", "predictor");
    for d in &datasets {
        let _ = write!(text, "{d:>width$}");
    }
    text.push('\n');
    for p in &predictors {
        let _ = write!(text, "{p:<14}");
        for d in &datasets {
            let c = cell(p, d);
            let _ = write!(text, "{c:>width$}");
        }
        text.push('\n');
    }

    let mut csv = String::from("predictor,dataset,rmse_mm,std_mm\n");
    for p in &predictors {
        for d in &datasets {
            if let Some(r) = rows.iter().find(|r| &r.predictor == p && &r.dataset == d) {
                let _ = writeln!(csv, "{},{},{:.2},{:.2}", p, d, r.rmse_mm, r.std_mm);
            }
        }
    }
    (text, csv)
}
