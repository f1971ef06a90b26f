use mjgp_core::gp::{self, Dataset, FitConfig};
use mjgp_core::linalg::Mat;
use mjgp_core::local::lagp_predict;

fn main() {
    let x = Mat::from_fn(30, 1, |i, _| i as f64 / 29.0);
    let data = Dataset::new(x, vec![4.2; 30]).unwrap();
    let hood = mjgp_core::local::nn_neighborhood(&[0.5], &data, 10, true).unwrap();
    let sub = data.subset(&hood.indices);
    let cfg = FitConfig::for_data(&sub);
    let out = gp::fit_mle(&sub, &gp::default_init(&sub), &cfg).unwrap();
    println!("fit: theta={:?} tau2={} conv={} obj={}", out.hyp.theta, out.hyp.tau2, out.converged, out.objective);
    let p = lagp_predict(&[0.5], &data, 10, 0).unwrap();
    println!("mean={} var={}", p.mean[0], p.var[0]);
}
