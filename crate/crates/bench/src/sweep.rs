//! Dimension sweeps with wall-clock timing and tracked peak/saved bytes.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use lmhead::{Dims, HeadError, MemTracker, TileConfig};

use crate::check::seeded_instance;
use crate::strategy::BenchStrategy;

/// Pinned CSV header; one [`BenchRecord`] per row.
pub const CSV_HEADER: [&str; 14] = [
    "strategy",
    "B",
    "S",
    "D",
    "V",
    "vocab_tile",
    "batch_tile",
    "threads",
    "time_ms_med",
    "time_ms_p10",
    "time_ms_p90",
    "peak_bytes",
    "saved_bytes",
    "y_checksum",
];

/// Written in every measurement column of a row whose strategy hit the
/// allocation cap.
pub const OOM_SENTINEL: &str = "OOM";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Seq,
    Vocab,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "batch" => Ok(Axis::Batch),
            "seq" => Ok(Axis::Seq),
            "vocab" => Ok(Axis::Vocab),
            other => Err(format!(
                "unknown axis {other:?} (expected batch, seq or vocab)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<usize>,
    /// Dimensions for the axes not being swept.
    pub base: Dims,
    pub strategies: Vec<BenchStrategy>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Tile sizes are clamped to each point's `V` and `B`.
    pub tile: TileConfig,
    /// Cap on tracked bytes per forward; exceeding it yields an OOM row.
    pub mem_cap: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(!self.values.is_empty(), "sweep needs at least one value");
        anyhow::ensure!(
            self.values.windows(2).all(|w| w[0] < w[1]),
            "sweep values must be strictly increasing"
        );
        anyhow::ensure!(self.values[0] > 0, "sweep values must be positive");
        anyhow::ensure!(self.repeats >= 1, "repeats must be at least 1");
        anyhow::ensure!(!self.strategies.is_empty(), "no strategies selected");
        Ok(())
    }

    /// Dims of the sweep point where the swept axis equals `value`.
    pub fn dims_at(&self, value: usize) -> lmhead::Result<Dims> {
        let b = &self.base;
        match self.axis {
            Axis::Batch => Dims::new(value, b.seq(), b.hidden(), b.vocab()),
            Axis::Seq => Dims::new(b.batch(), value, b.hidden(), b.vocab()),
            Axis::Vocab => Dims::new(b.batch(), b.seq(), b.hidden(), value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub time_ms_med: f64,
    pub time_ms_p10: f64,
    pub time_ms_p90: f64,
    pub peak_bytes: usize,
    pub saved_bytes: usize,
    pub y_checksum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub strategy: BenchStrategy,
    pub dims: Dims,
    pub vocab_tile: usize,
    pub batch_tile: usize,
    pub threads: usize,
    /// `None` when the strategy ran out of its allocation cap.
    pub measurement: Option<Measurement>,
}

impl BenchRecord {
    pub fn csv_fields(&self) -> Vec<String> {
        let d = &self.dims;
        let mut row = vec![
            self.strategy.name().to_string(),
            d.batch().to_string(),
            d.seq().to_string(),
            d.hidden().to_string(),
            d.vocab().to_string(),
            self.vocab_tile.to_string(),
            self.batch_tile.to_string(),
            self.threads.to_string(),
        ];
        match &self.measurement {
            Some(m) => row.extend([
                format!("{:.6}", m.time_ms_med),
                format!("{:.6}", m.time_ms_p10),
                format!("{:.6}", m.time_ms_p90),
                m.peak_bytes.to_string(),
                m.saved_bytes.to_string(),
                format!("{:.9}", m.y_checksum),
            ]),
            None => row.extend(std::iter::repeat_n(OOM_SENTINEL.to_string(), 6)),
        }
        row
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs every `(value, strategy)` point in order, calling `sink` after each
/// record. Rows are never dropped or reordered.
pub fn run_sweep(
    spec: &SweepSpec,
    mut sink: impl FnMut(&BenchRecord),
) -> anyhow::Result<Vec<BenchRecord>> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.values.len() * spec.strategies.len());
    for &value in &spec.values {
        let dims = spec.dims_at(value)?;
        let (inputs, _) = seeded_instance(dims, spec.seed)?;
        let cfg = spec.tile.with_tiles(
            spec.tile.vocab_tile.min(dims.vocab()),
            spec.tile.batch_tile.min(dims.batch()),
        );
        for &strategy in &spec.strategies {
            let (vocab_tile, batch_tile) = if strategy.is_tiled() {
                (cfg.vocab_tile, cfg.batch_tile)
            } else {
                (dims.vocab(), dims.batch())
            };
            let measurement = measure(strategy, &inputs, &cfg, spec)?;
            let record = BenchRecord {
                strategy,
                dims,
                vocab_tile,
                batch_tile,
                threads: if strategy.is_tiled() {
                    cfg.num_threads
                } else {
                    1
                },
                measurement,
            };
            sink(&record);
            records.push(record);
        }
    }
    Ok(records)
}

fn measure(
    strategy: BenchStrategy,
    inputs: &lmhead::HeadInputs,
    cfg: &TileConfig,
    spec: &SweepSpec,
) -> anyhow::Result<Option<Measurement>> {
    let tracker = || {
        spec.mem_cap
            .map_or_else(MemTracker::new, MemTracker::with_cap)
    };
    let mut times = Vec::with_capacity(spec.repeats);
    let mut last = None;
    for run in 0..spec.warmup + spec.repeats {
        let mem = tracker();
        let start = Instant::now();
        let result = match strategy.forward(inputs, cfg, &mem) {
            Ok(r) => r,
            Err(HeadError::OutOfMemory { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if run >= spec.warmup {
            times.push(elapsed);
            let checksum = result.output.scores.data().iter().map(|&y| y as f64).sum();
            last = Some((mem.peak_bytes(), mem.saved_bytes(), checksum));
        }
        drop(result);
    }
    let (peak_bytes, saved_bytes, y_checksum) = last.expect("repeats >= 1");
    times.sort_by(f64::total_cmp);
    Ok(Some(Measurement {
        time_ms_med: median(&times),
        time_ms_p10: percentile(&times, 0.10),
        time_ms_p90: percentile(&times, 0.90),
        peak_bytes,
        saved_bytes,
        y_checksum,
    }))
}

/// Header plus one row per record; UTF-8 with LF line endings.
pub fn write_csv<W: Write>(out: W, records: &[BenchRecord]) -> anyhow::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}
