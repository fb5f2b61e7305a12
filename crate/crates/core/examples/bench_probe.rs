use baton_core::bench::{run_bench_suite, BenchConfig};
use std::time::Instant;

fn main() {
    let grid: Vec<usize> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let grid = if grid.is_empty() { vec![256, 512, 1024] } else { grid };
    let bc = BenchConfig { grid, ..BenchConfig::default() };
    let t0 = Instant::now();
    let report = run_bench_suite(&bc).unwrap();
    println!("{}", report.table());
    println!("suite wall time: {:.1} s", t0.elapsed().as_secs_f64());
}
