//! Run reports: evaluation over a test set, normalized confusion / energy /
//! voting matrices, operation counts and convergence traces, with JSON
//! (full precision) and CSV (one decimal) writers.

use crate::datasets::{ImageSample, SubSequence};
use crate::dpu::{DpuEngine, ErrorModel, OpsCount};
use crate::error::{DpuError, Result};
use crate::io::ModelSpec;
use crate::network::{region_energies, winner_takes_all, DrnnOutput};
use crate::num::Real;
use crate::trainer::ConvergenceTrace;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub arch: String,
    pub classes: usize,
    pub samples: usize,
    /// Primary accuracy of the run: image accuracy for feed-forward nets,
    /// video accuracy for recurrent ones. In [0, 1].
    pub test_accuracy: f64,
    /// Sub-sequence-level accuracy (recurrent runs only).
    pub frame_accuracy: Option<f64>,
    /// Video-level accuracy after winner-takes-all voting (recurrent only).
    pub video_accuracy: Option<f64>,
    /// Row-normalized percentages: row = true class, column = predicted.
    /// Every row sums to 100.
    pub confusion: Vec<Vec<f64>>,
    /// Mean detector-energy percentages per true class; entries in [0, 100].
    pub energy_matrix: Vec<Vec<f64>>,
    /// Vote percentages, one column per test video (ordered by source id),
    /// one row per voted category. Every column sums to 100. Recurrent only.
    pub voting_matrix: Option<Vec<Vec<f64>>>,
    /// True label of each voting-matrix column, same order.
    pub voting_labels: Option<Vec<usize>>,
    pub ops_per_inference: OpsCount,
    pub convergence: ConvergenceTrace,
    /// Snapshot of the experiment configuration that produced the run.
    pub config: serde_json::Value,
}

impl RunReport {
    /// Structural checks the harness promises: confusion rows sum to 100
    /// within 0.1, energy entries lie in [0, 100], voting columns sum to
    /// 100 within 0.1.
    pub fn validate(&self) -> Result<()> {
        if self.confusion.len() != self.classes {
            return Err(DpuError::Format("confusion matrix row count != classes".into()));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != self.classes {
                return Err(DpuError::Format(format!("confusion row {i} length")));
            }
            let s: f64 = row.iter().sum();
            // all-zero rows mark classes absent from the test set
            if s != 0.0 && (s - 100.0).abs() > 0.1 {
                return Err(DpuError::Format(format!("confusion row {i} sums to {s}")));
            }
        }
        for (i, row) in self.energy_matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=100.0).contains(&v) {
                    return Err(DpuError::Format(format!("energy[{i}][{j}] = {v} out of range")));
                }
            }
        }
        if let Some(vm) = &self.voting_matrix {
            if vm.len() != self.classes {
                return Err(DpuError::Format("voting matrix row count != categories".into()));
            }
            let videos = vm.first().map_or(0, |r| r.len());
            for c in 0..videos {
                let s: f64 = vm.iter().map(|row| row[c]).sum();
                if s != 0.0 && (s - 100.0).abs() > 0.1 {
                    return Err(DpuError::Format(format!("voting column {c} sums to {s}")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.test_accuracy) {
            return Err(DpuError::Format("test accuracy out of [0,1]".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)
            .map_err(|e| DpuError::Format(format!("report serialization: {e}")))?;
        Ok(())
    }

    /// CSV exports at one decimal: confusion.csv, energy.csv and, when
    /// present, voting.csv; plus convergence.csv with the epoch trace.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        write_matrix_csv(&dir.join("confusion.csv"), &self.confusion)?;
        write_matrix_csv(&dir.join("energy.csv"), &self.energy_matrix)?;
        if let Some(vm) = &self.voting_matrix {
            write_matrix_csv(&dir.join("voting.csv"), vm)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("convergence.csv"))?);
        writeln!(f, "epoch,train_loss,train_accuracy,test_accuracy")?;
        for e in &self.convergence {
            let test = e.test_accuracy.map(|a| format!("{:.1}", a * 100.0)).unwrap_or_default();
            writeln!(
                f,
                "{},{:.6},{:.1},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy * 100.0,
                test
            )?;
        }
        Ok(())
    }
}

fn write_matrix_csv(path: &Path, m: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.1}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

fn row_normalize_counts(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let s: usize = row.iter().sum();
            if s == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| 100.0 * c as f64 / s as f64).collect()
            }
        })
        .collect()
}

/// Worker count for sample-parallel evaluation: the `DPU_THREADS`
/// environment variable when set to a positive integer, else 1.
pub fn thread_count() -> usize {
    std::env::var("DPU_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Prediction and energy percentages of one image under a per-sample seed,
/// so results do not depend on evaluation order or thread count.
fn eval_one_image<R: Real>(
    engine: &DpuEngine<R>,
    model: &ModelSpec<R>,
    s: &ImageSample<R>,
    err: Option<&ErrorModel>,
    sample_seed: u64,
) -> Result<(usize, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    match model {
        ModelSpec::D2nn(spec) => {
            let out = crate::network::d2nn_forward(engine, spec, &s.image, err, &mut rng)?;
            let (e, pct) = region_energies(&out, &spec.regions);
            let pred = crate::network::classify(&e, &spec.decision_coeffs)?;
            Ok((pred, pct.iter().map(|p| p.to_f64c() * 100.0).collect()))
        }
        ModelSpec::Dnin(spec) => {
            let out = crate::network::dnin_forward(engine, spec, &s.image, err, &mut rng)?;
            let (e, pct) = region_energies(&out.intensity, &spec.regions);
            let pred = match &out.logits {
                Some(scores) => {
                    let mut best = 0;
                    for (i, &v) in scores.iter().enumerate() {
                        if v > scores[best] {
                            best = i;
                        }
                    }
                    best
                }
                None => crate::network::classify(&e, &spec.decision_coeffs)?,
            };
            Ok((pred, pct.iter().map(|p| p.to_f64c() * 100.0).collect()))
        }
        ModelSpec::Drnn(_) => Err(DpuError::Usage("recurrent model in image evaluation".into())),
    }
}

/// Evaluate a feed-forward model (D2NN or D-NIN) over a labeled image set.
/// Deterministic whenever the error model has zero read-out noise;
/// parallelizes across samples per `thread_count()` with a reduction in
/// sample order.
pub fn evaluate_images<R: Real>(
    engine: &DpuEngine<R>,
    model: &ModelSpec<R>,
    test: &[ImageSample<R>],
    err: Option<&ErrorModel>,
    seed: u64,
    convergence: ConvergenceTrace,
    config: serde_json::Value,
) -> Result<RunReport> {
    if test.is_empty() {
        return Err(DpuError::Usage("empty evaluation set".into()));
    }
    let (classes, arch) = match model {
        ModelSpec::D2nn(s) => (s.regions.len(), "d2nn"),
        ModelSpec::Dnin(s) => (s.regions.len(), "dnin"),
        ModelSpec::Drnn(_) => {
            return Err(DpuError::Usage("use evaluate_video for recurrent models".into()))
        }
    };
    for s in test {
        if s.label >= classes {
            return Err(DpuError::Usage(format!("label {} out of range", s.label)));
        }
    }
    let workers = thread_count().min(test.len());
    let mut results: Vec<Result<(usize, Vec<f64>)>> = if workers <= 1 {
        test.iter()
            .enumerate()
            .map(|(i, s)| eval_one_image(engine, model, s, err, seed.wrapping_add(i as u64)))
            .collect()
    } else {
        let chunk = test.len().div_ceil(workers);
        let mut out: Vec<Option<Result<(usize, Vec<f64>)>>> = Vec::new();
        out.resize_with(test.len(), || None);
        std::thread::scope(|scope| {
            let mut rest: &mut [Option<Result<(usize, Vec<f64>)>>] = &mut out;
            for (w, samples) in test.chunks(chunk).enumerate() {
                let (head, tail) = rest.split_at_mut(samples.len());
                rest = tail;
                let base = w * chunk;
                scope.spawn(move || {
                    for (j, s) in samples.iter().enumerate() {
                        head[j] = Some(eval_one_image(
                            engine,
                            model,
                            s,
                            err,
                            seed.wrapping_add((base + j) as u64),
                        ));
                    }
                });
            }
        });
        out.into_iter().map(|r| r.expect("worker filled every slot")).collect()
    };
    let mut counts = vec![vec![0usize; classes]; classes];
    let mut energy_sum = vec![vec![0.0f64; classes]; classes];
    let mut per_class = vec![0usize; classes];
    let mut hits = 0usize;
    for (s, r) in test.iter().zip(results.drain(..)) {
        let (pred, pct) = r?;
        counts[s.label][pred] += 1;
        hits += (pred == s.label) as usize;
        for (c, p) in pct.iter().enumerate() {
            energy_sum[s.label][c] += p;
        }
        per_class[s.label] += 1;
    }
    let energy_matrix: Vec<Vec<f64>> = energy_sum
        .iter()
        .zip(&per_class)
        .map(|(row, &n)| {
            if n == 0 {
                vec![0.0; classes]
            } else {
                row.iter().map(|&v| v / n as f64).collect()
            }
        })
        .collect();
    let electronic_readout = match model {
        ModelSpec::Dnin(spec) => spec.electronic_fc.as_ref().map_or(0, |fc| {
            2 * (fc.nrows() * fc.ncols()) as u128
        }),
        _ => 0,
    };
    let passes = match model {
        ModelSpec::D2nn(spec) => spec.layers.len() as u128,
        ModelSpec::Dnin(spec) => {
            let mut maps_in = 1u128;
            let mut p = 0u128;
            for b in &spec.blocks {
                p += b.dpu_layers.len() as u128 * maps_in;
                maps_in = b.dpu_layers.len() as u128;
            }
            p + 1 // + fusion read-out pass
        }
        _ => 1,
    };
    let base = engine.count_ops(electronic_readout);
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        arch: arch.into(),
        classes,
        samples: test.len(),
        test_accuracy: hits as f64 / test.len() as f64,
        frame_accuracy: None,
        video_accuracy: None,
        confusion: row_normalize_counts(&counts),
        energy_matrix,
        voting_matrix: None,
        voting_labels: None,
        ops_per_inference: OpsCount {
            optical: base.optical * passes,
            electronic: base.electronic,
        },
        convergence,
        config,
    };
    report.validate()?;
    Ok(report)
}

/// Evaluate a recurrent model over labeled sub-sequences: per-sub-sequence
/// predictions, winner-takes-all voting per source video, and both
/// accuracy levels. Deterministic for zero read-out noise.
pub fn evaluate_video<R: Real>(
    engine: &DpuEngine<R>,
    spec: &crate::network::DrnnSpec<R>,
    test: &[SubSequence<R>],
    categories: usize,
    err: Option<&ErrorModel>,
    seed: u64,
    convergence: ConvergenceTrace,
    config: serde_json::Value,
) -> Result<RunReport> {
    if test.is_empty() {
        return Err(DpuError::Usage("empty evaluation set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![vec![0usize; categories]; categories];
    let mut energy_sum = vec![vec![0.0f64; categories]; categories];
    let mut energy_n = vec![0usize; categories];
    let mut frame_hits = 0usize;
    let mut by_video: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
    for s in test {
        if s.label >= categories {
            return Err(DpuError::Usage(format!("label {} out of range", s.label)));
        }
        let mut h = Array2::zeros(engine.cfg.grid);
        for x in &s.frames {
            h = crate::network::drnn_step(engine, spec, &h, x, err, &mut rng)?;
        }
        let out = crate::network::drnn_readout(engine, spec, &h, err, &mut rng)?;
        let pred = out.predict(&spec.decision_coeffs)?;
        if let DrnnOutput::Dpu { ref energies, .. } = out {
            let total: R = energies.iter().cloned().sum();
            if total > R::zero() {
                for (c, &e) in energies.iter().enumerate() {
                    energy_sum[s.label][c] += (e / total).to_f64c() * 100.0;
                }
                energy_n[s.label] += 1;
            }
        }
        counts[s.label][pred] += 1;
        frame_hits += (pred == s.label) as usize;
        by_video
            .entry(s.source_id.as_str())
            .or_insert_with(|| (s.label, Vec::new()))
            .1
            .push(pred);
    }
    let mut video_hits = 0usize;
    let mut voting_matrix = vec![vec![0.0f64; by_video.len()]; categories];
    let mut voting_labels = Vec::with_capacity(by_video.len());
    for (col, (_, (label, preds))) in by_video.iter().enumerate() {
        let (winner, shares) = winner_takes_all(preds, categories)?;
        video_hits += (winner == *label) as usize;
        for (c, &sh) in shares.iter().enumerate() {
            voting_matrix[c][col] = sh * 100.0;
        }
        voting_labels.push(*label);
    }
    let energy_matrix: Vec<Vec<f64>> = energy_sum
        .iter()
        .zip(&energy_n)
        .map(|(row, &n)| {
            if n == 0 {
                vec![0.0; categories]
            } else {
                row.iter().map(|&v| v / n as f64).collect()
            }
        })
        .collect();
    let electronic_readout = match &spec.readout {
        crate::network::DrnnReadout::Electronic { weights, .. } => {
            2 * (weights.nrows() * weights.ncols()) as u128
        }
        _ => 0,
    };
    let base = engine.count_ops(electronic_readout);
    let passes = 2 * spec.seq_len as u128 + 1; // two branches per step + read-out
    let frame_accuracy = frame_hits as f64 / test.len() as f64;
    let video_accuracy = video_hits as f64 / by_video.len() as f64;
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        arch: "drnn".into(),
        classes: categories,
        samples: test.len(),
        test_accuracy: video_accuracy,
        frame_accuracy: Some(frame_accuracy),
        video_accuracy: Some(video_accuracy),
        confusion: row_normalize_counts(&counts),
        energy_matrix,
        voting_matrix: Some(voting_matrix),
        voting_labels: Some(voting_labels),
        ops_per_inference: OpsCount {
            optical: base.optical * passes,
            electronic: base.electronic * (spec.seq_len as u128 + 1),
        },
        convergence,
        config,
    };
    report.validate()?;
    Ok(report)
}
