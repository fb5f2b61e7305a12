use std::time::Instant;

fn main() {
    // sgemm: (4096 x 32) * (32 x 4096)
    let (m, k, n) = (4096usize, 32usize, 4096usize);
    let a = vec![0.5f32; m * k];
    let b = vec![0.25f32; k * n];
    let mut c = vec![0.0f32; m * n];
    let t0 = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let gf = (2.0 * m as f64 * k as f64 * n as f64) / dt / 1e9;
    println!("sgemm 4096x32x4096: {:.3} s  -> {:.1} GFLOP/s", dt, gf);

    // std f32 exp
    let xs: Vec<f32> = (0..10_000_000).map(|i| -((i % 100) as f32) * 0.05).collect();
    let t0 = Instant::now();
    let mut acc = 0.0f32;
    for &x in &xs { acc += x.exp(); }
    let dt = t0.elapsed().as_secs_f64();
    println!("std expf: {:.2} ns/call (acc {acc})", dt / 1e7 * 1e9);

    // f64 exp
    let xs: Vec<f64> = (0..10_000_000).map(|i| -((i % 100) as f64) * 0.05).collect();
    let t0 = Instant::now();
    let mut acc = 0.0f64;
    for &x in &xs { acc += x.exp(); }
    let dt = t0.elapsed().as_secs_f64();
    println!("std exp f64: {:.2} ns/call (acc {acc})", dt / 1e7 * 1e9);
}
