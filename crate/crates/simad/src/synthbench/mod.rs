//! Synthetic benchmark for the metrics themselves.
//!
//! Generates label layouts of controlled event count and width, pairs them
//! with simulated detectors of dialed-in quality (from uniform-random scores
//! up to a detector that flags every point correctly), and tabulates all
//! metrics over repeated runs. The point of the exercise: metrics that
//! reward random or below-random detectors (point-adjusted F1 most visibly)
//! stand out against the bias-corrected affiliation scores, which stay near
//! zero for random scorers and go negative for misleading ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{
    binarize, events_from_labels, f1_point_adjusted, normalized_affiliation,
    precision_recall_f1, quantile, roc_auc, MetricsError, Zones,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid demo spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {placed} of {requested} events after {tries} tries")]
    PlacementExhausted { requested: usize, placed: usize, tries: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Layout of one synthetic labeling: `events` non-overlapping, non-adjacent
/// anomalous segments with lengths drawn uniformly from
/// `[min_len, max_len]`, placed uniformly in a series of `length` points.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub name: String,
    pub length: usize,
    pub events: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl DemoSpec {
    pub fn new(
        name: impl Into<String>,
        length: usize,
        events: usize,
        min_len: usize,
        max_len: usize,
    ) -> Result<DemoSpec, SynthError> {
        let spec = DemoSpec { name: name.into(), length, events, min_len, max_len };
        if spec.events == 0 || spec.min_len == 0 {
            return Err(SynthError::InvalidSpec("events and min_len must be positive".into()));
        }
        if spec.min_len > spec.max_len {
            return Err(SynthError::InvalidSpec(format!(
                "min_len {} exceeds max_len {}",
                spec.min_len, spec.max_len
            )));
        }
        // each event needs its length plus a separating gap point
        if spec.events * (spec.max_len + 1) > spec.length {
            return Err(SynthError::InvalidSpec(format!(
                "{} events of up to {} points cannot fit in {} points",
                spec.events, spec.max_len, spec.length
            )));
        }
        Ok(spec)
    }

    /// The three stock layouts: five narrow events, one medium event, and
    /// one event wide enough to cover about a third of the series.
    pub fn demo(i: usize) -> Result<DemoSpec, SynthError> {
        match i {
            1 => DemoSpec::new("demo1", 1000, 5, 10, 12),
            2 => DemoSpec::new("demo2", 1000, 1, 50, 60),
            3 => DemoSpec::new("demo3", 1000, 1, 300, 350),
            _ => Err(SynthError::InvalidSpec(format!("unknown demo index {i}"))),
        }
    }
}

/// A simulated detector. `Accuracy(p)` predicts each point correctly with
/// probability `p`%: correctly flagged anomalies score `0.9 + 0.1*U`, as do
/// incorrectly flagged normals; everything else scores 0. `Random` scores
/// every point `U[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimulatedModel {
    Random,
    Accuracy(u8),
}

impl SimulatedModel {
    pub fn name(&self) -> String {
        match self {
            SimulatedModel::Random => "Random".to_string(),
            SimulatedModel::Accuracy(p) => format!("M{p}"),
        }
    }

    /// The stock lineup used by the benchmark table.
    pub fn lineup() -> Vec<SimulatedModel> {
        vec![
            SimulatedModel::Random,
            SimulatedModel::Accuracy(10),
            SimulatedModel::Accuracy(60),
            SimulatedModel::Accuracy(70),
            SimulatedModel::Accuracy(80),
            SimulatedModel::Accuracy(90),
            SimulatedModel::Accuracy(95),
            SimulatedModel::Accuracy(100),
        ]
    }
}

const MAX_PLACEMENT_TRIES: usize = 1000;

/// Draw a labeling from the spec by rejection sampling: each event picks a
/// uniform length and start until it lands clear of (and not adjacent to)
/// every earlier event.
pub fn gen_labels(spec: &DemoSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>, SynthError> {
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(spec.events);
    for k in 0..spec.events {
        let mut ok = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let start = rng.random_range(0..=spec.length - len);
            let end = start + len;
            // require a gap of at least one point so events stay distinct
            let clear = placed.iter().all(|&(s, e)| end < s || start > e);
            if clear {
                placed.push((start, end));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SynthError::PlacementExhausted {
                requested: spec.events,
                placed: k,
                tries: MAX_PLACEMENT_TRIES,
            });
        }
    }
    placed.sort_unstable();
    let mut labels = vec![false; spec.length];
    for (s, e) in placed {
        for l in &mut labels[s..e] {
            *l = true;
        }
    }
    Ok(labels)
}

/// Score series of a simulated detector on the given labels.
pub fn simulate_scores(
    labels: &[bool],
    model: SimulatedModel,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match model {
        SimulatedModel::Random => labels.iter().map(|_| rng.random::<f64>()).collect(),
        SimulatedModel::Accuracy(p) => {
            let acc = p as f64 / 100.0;
            labels
                .iter()
                .map(|&anomalous| {
                    let correct = rng.random_bool(acc);
                    let flagged = if anomalous { correct } else { !correct };
                    if flagged {
                        0.9 + 0.1 * rng.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub reps: usize,
    /// Quantile of the score distribution used as decision threshold.
    pub threshold_q: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { reps: 20, threshold_q: 0.95, seed: 0 }
    }
}

/// Mean metrics of one (demo, model) cell, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub demo: String,
    pub model: String,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_pa: f64,
    pub auc: f64,
    pub aff_precision: f64,
    pub aff_recall: f64,
    pub aff_f1: f64,
    pub naff_f1: f64,
}

#[derive(Debug, Clone)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

/// Run every (demo, model) cell for `cfg.reps` repetitions and average.
/// Labels are drawn per (demo, repetition) and shared across models, so the
/// model comparison within a demo is paired. Cells run in parallel; output
/// is deterministic in `cfg.seed`.
pub fn run_bench(
    demos: &[DemoSpec],
    models: &[SimulatedModel],
    cfg: &BenchConfig,
) -> Result<BenchTable, SynthError> {
    let cells: Vec<(usize, usize)> = (0..demos.len())
        .flat_map(|d| (0..models.len()).map(move |m| (d, m)))
        .collect();
    let rows: Result<Vec<BenchRow>, SynthError> = cells
        .par_iter()
        .map(|&(d, m)| bench_cell(&demos[d], d, models[m], m, cfg))
        .collect();
    Ok(BenchTable { rows: rows? })
}

fn bench_cell(
    demo: &DemoSpec,
    demo_idx: usize,
    model: SimulatedModel,
    model_idx: usize,
    cfg: &BenchConfig,
) -> Result<BenchRow, SynthError> {
    let mut sums = [0.0f64; 10];
    for rep in 0..cfg.reps {
        // labels depend only on (demo, rep): models within a demo see the
        // same label draws
        let mut label_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        label_rng.set_stream(((demo_idx as u64 + 1) << 32) | rep as u64);
        let labels = gen_labels(demo, &mut label_rng)?;

        let mut score_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        score_rng
            .set_stream(((demo_idx as u64 + 1) << 48) | ((model_idx as u64 + 1) << 32) | rep as u64);
        let scores = simulate_scores(&labels, model, &mut score_rng);

        let thr = quantile(&scores, cfg.threshold_q);
        let pred = binarize(&scores, thr);
        let point = precision_recall_f1(&pred, &labels);
        let pa = f1_point_adjusted(&pred, &labels);
        let correct = pred.iter().zip(&labels).filter(|(p, g)| p == g).count();
        let accuracy = correct as f64 / labels.len() as f64;
        let auc = roc_auc(&scores, &labels)?;

        let gt_events = events_from_labels(&labels);
        let zones = Zones::new(&gt_events, labels.len())?;
        let aff = zones.score(&events_from_labels(&pred));
        let naff = normalized_affiliation(aff.precision, aff.recall, 0.5)?;

        for (slot, v) in sums.iter_mut().zip([
            point.f1,
            accuracy,
            point.precision,
            point.recall,
            pa.f1,
            auc,
            aff.precision,
            aff.recall,
            aff.f1,
            naff.f1,
        ]) {
            *slot += v;
        }
    }
    let k = cfg.reps as f64;
    let mean = |i: usize| 100.0 * sums[i] / k;
    Ok(BenchRow {
        demo: demo.name.clone(),
        model: model.name(),
        f1: mean(0),
        accuracy: mean(1),
        precision: mean(2),
        recall: mean(3),
        f1_pa: mean(4),
        auc: mean(5),
        aff_precision: mean(6),
        aff_recall: mean(7),
        aff_f1: mean(8),
        naff_f1: mean(9),
    })
}

pub const BENCH_COLUMNS: [&str; 12] = [
    "demo", "model", "f1", "accuracy", "precision", "recall", "f1_pa", "auc",
    "aff_precision", "aff_recall", "aff_f1", "naff_f1",
];

impl BenchTable {
    pub fn row(&self, demo: &str, model: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.demo == demo && r.model == model)
    }

    /// CSV with one row per (demo, model) cell, values in percent.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(BENCH_COLUMNS)?;
        for r in &self.rows {
            wtr.write_record([
                r.demo.clone(),
                r.model.clone(),
                format!("{:.4}", r.f1),
                format!("{:.4}", r.accuracy),
                format!("{:.4}", r.precision),
                format!("{:.4}", r.recall),
                format!("{:.4}", r.f1_pa),
                format!("{:.4}", r.auc),
                format!("{:.4}", r.aff_precision),
                format!("{:.4}", r.aff_recall),
                format!("{:.4}", r.aff_f1),
                format!("{:.4}", r.naff_f1),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Fixed-width table for terminals, values in percent with two decimals.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        let headers = &BENCH_COLUMNS;
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.demo.clone(),
                    r.model.clone(),
                    format!("{:.2}", r.f1),
                    format!("{:.2}", r.accuracy),
                    format!("{:.2}", r.precision),
                    format!("{:.2}", r.recall),
                    format!("{:.2}", r.f1_pa),
                    format!("{:.2}", r.auc),
                    format!("{:.2}", r.aff_precision),
                    format!("{:.2}", r.aff_recall),
                    format!("{:.2}", r.aff_f1),
                    format!("{:.2}", r.naff_f1),
                ]
            })
            .collect();
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.len());
            }
        }
        let fmt_row = |vals: &[String]| {
            vals.iter()
                .enumerate()
                .map(|(i, v)| format!("{:>w$}", v, w = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let header: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
        out.push_str(&fmt_row(&header));
        out.push('\n');
        for row in &cells {
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        out
    }
}
