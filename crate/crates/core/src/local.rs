//! Nearest-neighbor local GP prediction, and the per-location search for the
//! neighborhood size that best predicts the held-out response at the nearest
//! training point.
//!
//! The search sweeps n from `n_min` to `n_max` around the training point x*
//! nearest the query. Each step grows the covariance factor by one row in
//! O(n^2); lengthscales are refit only on a logarithmic schedule (powers of
//! two), with the factor rebuilt from scratch after each refit because the
//! incremental update is only valid at fixed hyperparameters. Total sweep
//! cost stays cubic in `n_max`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{self, Dataset, FitConfig, GpModel, PredictiveResult};
use crate::kernel::{CovFactor, Hyperparams};
use crate::linalg::{self, Mat};

/// Neighborhood size used by plain LAGP when nothing else is requested.
pub const DEFAULT_LAGP_N: usize = 50;

/// Training rows nearest a query point, ordered by distance.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub center: Vec<f64>,
    /// Training-row indices by increasing Euclidean distance; ties break
    /// toward the lower row index.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// The `n` nearest training rows to `x`. With `exclude_exact`, rows at
/// distance exactly zero (the query's own row, when the query is a training
/// point) are left out.
pub fn nn_neighborhood(
    x: &[f64],
    data: &Dataset,
    n: usize,
    exclude_exact: bool,
) -> Result<Neighborhood> {
    if x.len() != data.dim() {
        return Err(Error::DimMismatch { context: "nn_neighborhood query", expected: data.dim(), got: x.len() });
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let row = data.x().row(i);
        let mut d2 = 0.0;
        for k in 0..x.len() {
            let d = row[k] - x[k];
            d2 += d * d;
        }
        if exclude_exact && d2 == 0.0 {
            continue;
        }
        order.push((d2, i));
    }
    if n > order.len() {
        return Err(Error::invalid(format!(
            "requested {n} neighbors but only {} rows are available",
            order.len()
        )));
    }
    order.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    order.truncate(n);
    Ok(Neighborhood {
        center: x.to_vec(),
        indices: order.iter().map(|&(_, i)| i).collect(),
        distances: order.iter().map(|&(d2, _)| d2.sqrt()).collect(),
    })
}

fn fit_local_model(sub: Dataset, init: Option<&Hyperparams>, seed: u64) -> Result<(GpModel, Hyperparams)> {
    let cfg = FitConfig::for_data(&sub).with_seed(seed);
    let base = gp::default_init(&sub);
    let start = match init {
        Some(h) => {
            let mut h = h.clone();
            for (t, b) in h.theta.iter_mut().zip(&cfg.bounds) {
                *t = t.clamp(b.0, b.1);
            }
            Hyperparams { tau2: base.tau2, theta: h.theta, g: base.g }
        }
        None => base,
    };
    let out = gp::fit_mle(&sub, &start, &cfg)?;
    let mut hyp = out.hyp;
    // deterministic data can defeat the default nugget; retry once, 10x
    match GpModel::fit(sub.clone(), hyp.clone()) {
        Ok(m) => Ok((m, hyp)),
        Err(Error::NotPositiveDefinite { .. }) => {
            hyp.g *= 10.0;
            let m = GpModel::fit(sub, hyp.clone())?;
            Ok((m, hyp))
        }
        Err(e) => Err(e),
    }
}

/// LAGP at fixed neighborhood size: a fresh MLE fit on the `n` nearest
/// training rows, then a single-point prediction.
pub fn lagp_predict(x: &[f64], data: &Dataset, n: usize, seed: u64) -> Result<PredictiveResult> {
    lagp_predict_init(x, data, n, None, seed)
}

fn lagp_predict_init(
    x: &[f64],
    data: &Dataset,
    n: usize,
    init: Option<&Hyperparams>,
    seed: u64,
) -> Result<PredictiveResult> {
    if n < 2 {
        return Err(Error::invalid(format!("neighborhood size {n} too small for a GP fit")));
    }
    let hood = nn_neighborhood(x, data, n, true)?;
    let sub = data.subset(&hood.indices);
    let (model, _) = fit_local_model(sub, init, seed)?;
    let xt = Mat::from_rows(vec![x.to_vec()]);
    model.predict(&xt)
}

/// When lengthscales are refit during the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitSchedule {
    /// Refit when log2(n) is an integer.
    PowersOfTwo,
    /// Refit every k-th size.
    Every(usize),
    /// Keep the n_min hyperparameters for the whole sweep.
    Never,
}

impl RefitSchedule {
    pub fn is_refit(&self, n: usize) -> bool {
        match self {
            RefitSchedule::PowersOfTwo => n.is_power_of_two(),
            RefitSchedule::Every(k) => *k > 0 && n % k == 0,
            RefitSchedule::Never => false,
        }
    }
}

/// Configuration of the neighborhood-size search.
#[derive(Debug, Clone)]
pub struct OlagpConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub schedule: RefitSchedule,
    pub seed: u64,
}

impl Default for OlagpConfig {
    fn default() -> Self {
        OlagpConfig { n_min: 12, n_max: 160, schedule: RefitSchedule::PowersOfTwo, seed: 0 }
    }
}

impl OlagpConfig {
    pub fn new(n_min: usize, n_max: usize) -> Result<Self> {
        let cfg = OlagpConfig { n_min, n_max, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_min < 2 {
            return Err(Error::invalid("n_min must be at least 2"));
        }
        if self.n_min >= self.n_max {
            return Err(Error::invalid(format!(
                "n_min {} must be below n_max {}",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }
}

/// One evaluated neighborhood size.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub n: usize,
    /// Squared error of the validation prediction; +inf when the extension
    /// at this size failed.
    pub se: f64,
    pub mu: f64,
    /// Profiled output scale at this size.
    pub tau2: f64,
}

/// Full record of one neighborhood-size search.
#[derive(Debug, Clone)]
pub struct OlagpTrace {
    pub nhat: usize,
    /// Index of the validation point x* in the training data.
    pub x_star: usize,
    pub entries: Vec<TraceEntry>,
    /// Hyperparameters adopted at each (re)fit size, the initial fit first.
    pub refits: Vec<(usize, Hyperparams)>,
    /// Sizes whose one-point extension failed; their points stay out of the
    /// working set for the rest of the sweep.
    pub skipped: Vec<usize>,
}

impl OlagpTrace {
    /// Hyperparameters in effect when size `n` was evaluated.
    pub fn hyp_at(&self, n: usize) -> &Hyperparams {
        let mut cur = &self.refits[0].1;
        for (rn, h) in &self.refits {
            if *rn <= n {
                cur = h;
            }
        }
        cur
    }
}

struct SweepState<'a> {
    data: &'a Dataset,
    /// Global row indices currently in the model, in insertion order.
    active: Vec<usize>,
    y_active: Vec<f64>,
    theta: Vec<f64>,
    g: f64,
    factor: CovFactor,
    /// Correlations between x* and the active rows at the current theta.
    kvec: Vec<f64>,
    x_star: Vec<f64>,
}

impl<'a> SweepState<'a> {
    fn corr(&self, a: &[f64], b: &[f64]) -> f64 {
        (-crate::kernel::scaled_sq_dist(a, b, &self.theta)).exp()
    }

    /// Correlation matrix over the active rows plus jitter, factorized.
    fn rebuild_factor(&mut self) -> Result<()> {
        let n = self.active.len();
        let mut c = Mat::zeros(n, n);
        for i in 0..n {
            let ri = self.data.x().row(self.active[i]);
            for j in 0..i {
                let v = self.corr(ri, self.data.x().row(self.active[j]));
                c.set(i, j, v);
                c.set(j, i, v);
            }
            c.set(i, i, 1.0 + self.g);
        }
        self.factor = CovFactor::factorize(&c)?;
        self.kvec = self
            .active
            .iter()
            .map(|&gi| self.corr(&self.x_star, self.data.x().row(gi)))
            .collect();
        Ok(())
    }

    fn predict_mean(&self) -> (f64, f64) {
        let alpha = self.factor.apply_inverse(&self.y_active);
        let mu = linalg::dot(&self.kvec, &alpha);
        let tau2 = (linalg::dot(&self.y_active, &alpha) / self.y_active.len() as f64).max(1e-300);
        (mu, tau2)
    }
}

/// Searches neighborhood sizes `n_min..=n_max` around the training point
/// nearest to `x`, scoring each by squared error against that point's held
/// response. Ties go to the smallest size.
pub fn olagp_search(x: &[f64], data: &Dataset, cfg: &OlagpConfig) -> Result<OlagpTrace> {
    cfg.validate()?;
    if data.n() <= cfg.n_max {
        return Err(Error::invalid(format!(
            "need more than n_max = {} training rows, have {}",
            cfg.n_max,
            data.n()
        )));
    }
    // x*: nearest training row to x (itself included when x is a training point)
    let star = nn_neighborhood(x, data, 1, false)?;
    let x_star_idx = star.indices[0];
    let x_star = data.x().row(x_star_idx).to_vec();
    let y_star = data.y()[x_star_idx];

    // ordered candidate rows around x*, excluding x* itself
    let hood = nn_neighborhood(&x_star, data, cfg.n_max, true)?;

    // initial fit at n_min
    let first: Vec<usize> = hood.indices[..cfg.n_min].to_vec();
    let sub = data.subset(&first);
    let fit_cfg = FitConfig::for_data(&sub).with_seed(cfg.seed);
    let out = gp::fit_mle(&sub, &gp::default_init(&sub), &fit_cfg)?;

    let identity1 = Mat::from_rows(vec![vec![1.0]]);
    let mut state = SweepState {
        data,
        active: first,
        y_active: sub.y().to_vec(),
        theta: out.hyp.theta.clone(),
        g: out.hyp.g,
        factor: CovFactor::factorize(&identity1).expect("1x1 identity factorizes"),
        kvec: Vec::new(),
        x_star: x_star.clone(),
    };
    if state.rebuild_factor().is_err() {
        state.g *= 10.0;
        state.rebuild_factor()?;
    }

    let mut refits = vec![(cfg.n_min, Hyperparams { tau2: out.hyp.tau2, theta: state.theta.clone(), g: state.g })];
    let mut entries = Vec::with_capacity(cfg.n_max - cfg.n_min + 1);
    let mut skipped = Vec::new();

    let (mu, tau2) = state.predict_mean();
    entries.push(TraceEntry { n: cfg.n_min, se: (y_star - mu) * (y_star - mu), mu, tau2 });

    for n in cfg.n_min + 1..=cfg.n_max {
        let cand = hood.indices[n - 1];
        let cand_row = data.x().row(cand);
        let cross: Vec<f64> = state
            .active
            .iter()
            .map(|&gi| state.corr(data.x().row(gi), cand_row))
            .collect();
        match state.factor.extend_in_place(&cross, 1.0 + state.g) {
            Ok(()) => {
                state.active.push(cand);
                state.y_active.push(data.y()[cand]);
                state.kvec.push(state.corr(&state.x_star, cand_row));
            }
            Err(_) => {
                skipped.push(n);
                entries.push(TraceEntry { n, se: f64::INFINITY, mu: f64::NAN, tau2: f64::NAN });
                continue;
            }
        }

        if cfg.schedule.is_refit(n) {
            let sub = data.subset(&state.active);
            let fit_cfg = FitConfig::for_data(&sub).with_seed(cfg.seed).with_multistarts(1);
            let warm = Hyperparams {
                tau2: 1.0,
                theta: state.theta.clone(),
                g: state.g,
            };
            if let Ok(out) = gp::fit_mle(&sub, &warm, &fit_cfg) {
                let old_theta = std::mem::replace(&mut state.theta, out.hyp.theta);
                if state.rebuild_factor().is_err() {
                    // keep the sweep alive at the previous hyperparameters
                    state.theta = old_theta;
                    state.rebuild_factor()?;
                } else {
                    refits.push((n, Hyperparams { tau2: out.hyp.tau2, theta: state.theta.clone(), g: state.g }));
                }
            }
        }

        let (mu, tau2) = state.predict_mean();
        entries.push(TraceEntry { n, se: (y_star - mu) * (y_star - mu), mu, tau2 });
    }

    let mut nhat = entries[0].n;
    let mut best = f64::INFINITY;
    for e in &entries {
        if e.se < best {
            best = e.se;
            nhat = e.n;
        }
    }

    Ok(OlagpTrace { nhat, x_star: x_star_idx, entries, refits, skipped })
}

/// Full per-location procedure: run the size search at x*, then refit a
/// fresh neighborhood of the chosen size around `x` itself (warm-started
/// from the sweep's final lengthscales) and predict.
pub fn olagp_predict(x: &[f64], data: &Dataset, cfg: &OlagpConfig) -> Result<PredictiveResult> {
    let trace = olagp_search(x, data, cfg)?;
    let warm = trace.refits.last().map(|(_, h)| h.clone());
    let mut pred = lagp_predict_init(x, data, trace.nhat, warm.as_ref(), cfg.seed)?;
    pred.nhat = Some(vec![trace.nhat]);
    Ok(pred)
}

/// A batch prediction method over one shared training set.
#[derive(Debug, Clone)]
pub enum Method {
    Lagp { n: usize, seed: u64 },
    Olagp(OlagpConfig),
}

/// Batch output: per-point predictions plus any per-point failures. Failed
/// points carry NaN mean/variance (and nhat 0 for the size-searching
/// method).
#[derive(Debug)]
pub struct BatchOutcome {
    pub result: PredictiveResult,
    pub failures: Vec<(usize, Error)>,
}

/// Applies a per-point method to every row of `xtest` as a deterministic
/// parallel map: results are ordered by row and identical for any worker
/// count.
pub fn batch_predict(xtest: &Mat, data: &Dataset, method: &Method) -> BatchOutcome {
    let m = xtest.rows();
    let per_point: Vec<Result<PredictiveResult>> = (0..m)
        .into_par_iter()
        .map(|i| match method {
            Method::Lagp { n, seed } => lagp_predict(xtest.row(i), data, *n, *seed),
            Method::Olagp(cfg) => olagp_predict(xtest.row(i), data, cfg),
        })
        .collect();

    let wants_nhat = matches!(method, Method::Olagp(_));
    let mut mean = Vec::with_capacity(m);
    let mut var = Vec::with_capacity(m);
    let mut nhat = if wants_nhat { Some(Vec::with_capacity(m)) } else { None };
    let mut failures = Vec::new();
    for (i, r) in per_point.into_iter().enumerate() {
        match r {
            Ok(p) => {
                mean.push(p.mean[0]);
                var.push(p.var[0]);
                if let Some(nh) = nhat.as_mut() {
                    nh.push(p.nhat.as_ref().map_or(0, |v| v[0]));
                }
            }
            Err(e) => {
                mean.push(f64::NAN);
                var.push(f64::NAN);
                if let Some(nh) = nhat.as_mut() {
                    nh.push(0);
                }
                failures.push((i, e));
            }
        }
    }
    BatchOutcome { result: PredictiveResult { mean, var, nhat }, failures }
}
