use mjgp_core::linalg::{cholesky_in_place, invert_lower, spd_invert_from_chol, Mat};
use std::time::Instant;

fn main() {
    let n = 3349;
    let g = 61usize;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|i| ((i % g) as f64 / 60.0, (i / g) as f64 / 60.0))
        .collect();
    let mut m = Mat::from_fn(n, n, |i, j| {
        let dx = pts[i].0 - pts[j].0;
        let dy = pts[i].1 - pts[j].1;
        let v = (-(dx * dx + dy * dy) / 0.1).exp();
        if i == j { v + 1e-8 } else { v }
    });
    let flops = (n as f64).powi(3) / 3.0;

    let t1 = Instant::now();
    cholesky_in_place(&mut m).unwrap();
    let chol_t = t1.elapsed().as_secs_f64();
    println!("chol:   {:.2}s  ({:.1} GF/s mul-add)", chol_t, flops / chol_t / 1e9);

    let t2 = Instant::now();
    let x = invert_lower(&m);
    let ti = t2.elapsed().as_secs_f64();
    println!("trtri:  {:.2}s  ({:.1} GF/s)", ti, flops / ti / 1e9);
    std::hint::black_box(&x);

    let t3 = Instant::now();
    let z = spd_invert_from_chol(&m);
    let tz = t3.elapsed().as_secs_f64();
    println!("full:   {:.2}s  (syrk part {:.2}s)", tz, tz - ti);
    std::hint::black_box(&z);
}
