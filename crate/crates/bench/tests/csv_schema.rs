use lmhead::{Dims, TileConfig};
use lmhead_bench::{run_sweep, write_csv, Axis, BenchStrategy, SweepSpec, CSV_HEADER};

const GOLDEN_HEADER: &str = include_str!("golden/bench_header.csv");

#[test]
fn header_matches_golden() {
    assert_eq!(format!("{}\n", CSV_HEADER.join(",")), GOLDEN_HEADER);
}

#[test]
fn written_csv_starts_with_golden_header() {
    let base = Dims::new(2, 4, 8, 32).unwrap();
    let spec = SweepSpec {
        axis: Axis::Vocab,
        values: vec![16, 32],
        base,
        strategies: vec![BenchStrategy::Eager, BenchStrategy::FullyFused],
        repeats: 1,
        warmup: 0,
        seed: 5,
        tile: TileConfig::for_dims(base),
        mem_cap: None,
    };
    let rows = run_sweep(&spec, |_| {}).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(GOLDEN_HEADER));
    let names: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["eager", "fully_fused", "eager", "fully_fused"]);
    assert!(text
        .lines()
        .all(|l| l.split(',').count() == CSV_HEADER.len()));
}
