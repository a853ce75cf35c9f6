//! Classifier synthesis from phantom classes.
//!
//! Every real class `c` is tied to `R` phantom classes through softmax
//! weights `s_cr ∝ exp(−‖a_c − b_r‖²/σ²)`, and its linear classifier is the
//! convex combination `w_c = Σ_r s_cr v_r` of the phantom base classifiers.
//! The bases `v_r` are learned on seen-class data with a one-vs-other squared
//! hinge loss or a (structured) Crammer–Singer loss. Optionally the phantom
//! semantics `b_r = Σ_c β_rc a_c` are learned too, by alternating a `v` step
//! with a proximal-gradient `β` step.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset, SemanticMatrix};
use crate::error::{Result, ZslError};
use crate::eval::ScoreTable;
use crate::linalg::sq_euclidean_cross;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Squared hinge, one classifier against all others.
    OneVsOther,
    /// Crammer–Singer with unit margin.
    CrammerSinger,
    /// Crammer–Singer with margin `‖a_c − a_y‖₂`.
    Structured,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::OneVsOther => "ovo",
            LossVariant::CrammerSinger => "cs",
            LossVariant::Structured => "structured",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ovo" | "one-vs-other" | "o-vs-o" => Ok(LossVariant::OneVsOther),
            "cs" | "crammer-singer" => Ok(LossVariant::CrammerSinger),
            "structured" | "struct" => Ok(LossVariant::Structured),
            other => Err(ZslError::Config(format!("unknown SynC loss variant `{other}`"))),
        }
    }
}

/// Phantom classes: semantic vectors `b`, base classifiers `v` and, when
/// learned, the combination weights `beta` with `b = beta · A_seen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PhantomSet<T> {
    #[serde(with = "crate::report::zsfm_b64")]
    pub b: Array2<T>,
    /// `R × D`; zero columns until the bases are trained.
    #[serde(with = "crate::report::zsfm_b64")]
    pub v: Array2<T>,
    #[serde(default, with = "opt_block")]
    pub beta: Option<Array2<T>>,
}

impl<T: Scalar> PhantomSet<T> {
    pub fn count(&self) -> usize {
        self.b.nrows()
    }

    fn require_bases(&self, dim: usize) -> Result<()> {
        if self.v.nrows() != self.b.nrows() || self.v.ncols() != dim || self.b.nrows() == 0 {
            return Err(ZslError::arg(format!(
                "phantom bases not initialized for feature dimension {dim} (have {}x{})",
                self.v.nrows(),
                self.v.ncols()
            )));
        }
        Ok(())
    }
}

mod opt_block {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    #[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
    struct Wrap<T>(#[serde(with = "crate::report::zsfm_b64")] Array2<T>);

    pub fn serialize<S: Serializer, T: Scalar>(
        m: &Option<Array2<T>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|m| Wrap(m.clone())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Scalar>(
        d: D,
    ) -> Result<Option<Array2<T>>, D::Error> {
        Ok(Option::<Wrap<T>>::deserialize(d)?.map(|w| w.0))
    }
}

/// How phantom semantic vectors are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `b_r = a_r`; requires `R = S`.
    Identity,
    /// ℓ2-normalized k-means centroids; requires `R < S`.
    Kmeans,
    /// First `S` identity, the rest random convex combinations; requires `R > S`.
    Mixed,
}

/// Optimizer and model hyper-parameters for SynC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig<T> {
    pub sigma: T,
    pub lambda: T,
    pub loss: LossVariant,
    /// Penalize `Σ‖v_r‖²` instead of `Σ‖w_c‖²`.
    pub regularize_bases: bool,
    pub eta: T,
    pub gamma_reg: T,
    /// Target phantom norm; 1 for unit-normalized semantics.
    pub h: T,
    /// Rescale initial phantoms to unit length.
    pub normalize_phantoms: bool,
    pub phantoms: Option<usize>,
    pub init: InitStrategy,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: T,
    /// Scale of the diminishing subgradient step `a/√t` (Crammer–Singer).
    pub step_scale: T,
    pub outer_iter: usize,
    pub outer_tol: T,
    pub beta_steps: usize,
}

impl<T: Scalar> Default for SyncConfig<T> {
    fn default() -> Self {
        SyncConfig {
            sigma: T::one(),
            lambda: T::one(),
            loss: LossVariant::OneVsOther,
            regularize_bases: false,
            eta: T::zero(),
            gamma_reg: T::zero(),
            h: T::one(),
            normalize_phantoms: true,
            phantoms: None,
            init: InitStrategy::Identity,
            seed: 0,
            max_iter: 3000,
            tol: T::of(1e-6),
            step_scale: T::one(),
            outer_iter: 10,
            outer_tol: T::of(1e-5),
            beta_steps: 20,
        }
    }
}

impl<T: Scalar> SyncConfig<T> {
    fn check(&self) -> Result<()> {
        if !(self.sigma > T::zero()) {
            return Err(ZslError::arg(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.lambda > T::zero()) {
            return Err(ZslError::arg(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.eta < T::zero() || self.gamma_reg < T::zero() {
            return Err(ZslError::arg("eta and gamma_reg must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Trained SynC model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SyncModel<T> {
    pub phantoms: PhantomSet<T>,
    pub sigma: T,
    pub lambda: T,
    pub loss_variant: LossVariant,
    pub regularize_bases: bool,
    pub eta: T,
    pub gamma_reg: T,
    pub stats: TrainStats,
}

impl<T: Scalar> SyncModel<T> {
    /// Classifiers `w_c` for the given semantic rows.
    pub fn classifiers(&self, semantics: ArrayView2<T>) -> Result<Array2<T>> {
        let s = similarity_weights(semantics, self.phantoms.b.view(), self.sigma)?;
        synthesize_classifiers(s.view(), self.phantoms.v.view())
    }
}

/// Row-wise softmax of `−‖a_c − b_r‖² / σ²`.
pub fn similarity_weights<T: Scalar>(
    a: ArrayView2<T>,
    b: ArrayView2<T>,
    sigma: T,
) -> Result<Array2<T>> {
    if !(sigma > T::zero()) {
        return Err(ZslError::arg(format!("sigma must be positive, got {sigma}")));
    }
    let d = sq_euclidean_cross(a, b)?;
    let s2 = sigma * sigma;
    let mut out = d.mapv(|v| -v / s2);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z: T = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    Ok(out)
}

/// `w = s · v`.
pub fn synthesize_classifiers<T: Scalar>(s: ArrayView2<T>, v: ArrayView2<T>) -> Result<Array2<T>> {
    if s.ncols() != v.nrows() {
        return Err(ZslError::dim(format!(
            "{} similarity columns but {} base classifiers",
            s.ncols(),
            v.nrows()
        )));
    }
    Ok(s.dot(&v))
}

/// Fixed data of the seen-class training problem.
pub(crate) struct Problem<'a, T> {
    pub x: ArrayView2<'a, T>,
    /// Dense seen label per row, in `0..S`.
    pub y: &'a [usize],
    pub loss: LossVariant,
    /// `S × S` margins for the structured loss.
    pub delta: Option<Array2<T>>,
    pub lambda: T,
    pub regularize_bases: bool,
}

impl<'a, T: Scalar> Problem<'a, T> {
    pub fn new(
        dataset: &'a Dataset<T>,
        semantics_seen: ArrayView2<T>,
        loss: LossVariant,
        lambda: T,
        regularize_bases: bool,
    ) -> Result<Self> {
        let s = dataset.num_seen();
        if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= s) {
            return Err(ZslError::data(format!(
                "training data contains unseen class {}",
                dataset.id_map.original(bad)
            )));
        }
        let delta = match loss {
            LossVariant::Structured => {
                Some(sq_euclidean_cross(semantics_seen, semantics_seen)?.mapv(|v| v.sqrt()))
            }
            _ => None,
        };
        Ok(Problem {
            x: dataset.features.view(),
            y: &dataset.labels,
            loss,
            delta,
            lambda,
            regularize_bases,
        })
    }

    /// Data loss and its (sub)gradient with respect to `W` (`S × D`).
    pub fn loss_and_grad_w(&self, w: &Array2<T>) -> (T, Array2<T>) {
        let scores = self.x.dot(&w.t());
        let mut dm = Array2::<T>::zeros(scores.dim());
        let mut loss = T::zero();
        let one = T::one();
        match self.loss {
            LossVariant::OneVsOther => {
                for (n, row) in scores.axis_iter(Axis(0)).enumerate() {
                    for (c, &m) in row.iter().enumerate() {
                        let y = if self.y[n] == c { one } else { -one };
                        let margin = one - y * m;
                        if margin > T::zero() {
                            loss = loss + margin * margin;
                            dm[[n, c]] = -T::of(2.0) * y * margin;
                        }
                    }
                }
            }
            LossVariant::CrammerSinger | LossVariant::Structured => {
                for (n, row) in scores.axis_iter(Axis(0)).enumerate() {
                    let y = self.y[n];
                    let mut best: Option<(usize, T)> = None;
                    for (c, &m) in row.iter().enumerate() {
                        if c == y {
                            continue;
                        }
                        let margin = match &self.delta {
                            Some(d) => d[[c, y]],
                            None => one,
                        };
                        let val = margin + m - row[y];
                        if best.is_none_or(|(_, b)| val > b) {
                            best = Some((c, val));
                        }
                    }
                    if let Some((c, val)) = best {
                        if val > T::zero() {
                            loss = loss + val;
                            dm[[n, c]] = dm[[n, c]] + one;
                            dm[[n, y]] = dm[[n, y]] - one;
                        }
                    }
                }
            }
        }
        (loss, dm.t().dot(&self.x))
    }

    /// Objective and gradient with respect to `V`, with `s` fixed.
    pub fn objective_and_grad_v(&self, s: &Array2<T>, v: &Array2<T>) -> (T, Array2<T>) {
        let w = s.dot(v);
        let (loss, mut gw) = self.loss_and_grad_w(&w);
        let half = T::of(0.5);
        if self.regularize_bases {
            let reg = half * self.lambda * v.iter().map(|&t| t * t).sum::<T>();
            let g = s.t().dot(&gw) + &(v * self.lambda);
            (loss + reg, g)
        } else {
            let reg = half * self.lambda * w.iter().map(|&t| t * t).sum::<T>();
            gw.scaled_add(self.lambda, &w);
            (loss + reg, s.t().dot(&gw))
        }
    }
}

fn frob2<T: Scalar>(m: &Array2<T>) -> T {
    m.iter().map(|&v| v * v).sum()
}

fn rel_change<T: Scalar>(old: T, new: T) -> T {
    (old - new).abs() / old.abs().max(T::of(1e-12))
}

/// Minimizes the `v` objective from `v0` with `s` fixed.
///
/// Smooth (one-vs-other) losses use gradient descent with Armijo
/// backtracking; Crammer–Singer losses use a diminishing-step subgradient
/// method that returns the best iterate.
pub(crate) fn fit_bases<T: Scalar>(
    problem: &Problem<T>,
    s: &Array2<T>,
    v0: Array2<T>,
    max_iter: usize,
    tol: T,
    step_scale: T,
) -> (Array2<T>, TrainStats) {
    match problem.loss {
        LossVariant::OneVsOther => gradient_descent(problem, s, v0, max_iter, tol),
        _ => subgradient(problem, s, v0, max_iter, tol, step_scale),
    }
}

fn gradient_descent<T: Scalar>(
    problem: &Problem<T>,
    s: &Array2<T>,
    mut v: Array2<T>,
    max_iter: usize,
    tol: T,
) -> (Array2<T>, TrainStats) {
    let (mut f, mut g) = problem.objective_and_grad_v(s, &v);
    let mut step = T::one();
    let c1 = T::of(1e-4);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let gg = frob2(&g);
        if gg <= T::min_positive_value() {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &v - &(&g * step);
            let (ft, gt) = problem.objective_and_grad_v(s, &trial);
            if ft <= f - c1 * step * gg {
                accepted = Some((trial, ft, gt));
                break;
            }
            step = step * T::of(0.5);
        }
        let Some((nv, nf, ng)) = accepted else {
            // no step length decreases the objective: stationary up to round-off
            converged = true;
            break;
        };
        let change = rel_change(f, nf);
        v = nv;
        f = nf;
        g = ng;
        step = step * T::of(2.0);
        if change < tol {
            converged = true;
            break;
        }
    }
    (
        v,
        TrainStats {
            objective: f.as_f64(),
            iterations,
            converged,
        },
    )
}

fn subgradient<T: Scalar>(
    problem: &Problem<T>,
    s: &Array2<T>,
    mut v: Array2<T>,
    max_iter: usize,
    tol: T,
    step_scale: T,
) -> (Array2<T>, TrainStats) {
    let n = problem.x.nrows().max(1);
    let mean_norm = problem
        .x
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .sum::<T>()
        / T::of_usize(n);
    let a = step_scale / mean_norm.max(T::of(1e-12));
    let (f0, mut g) = problem.objective_and_grad_v(s, &v);
    let mut best_v = v.clone();
    let mut best_f = f0;
    let window = 100;
    let mut window_start_best = best_f;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=max_iter {
        iterations = t;
        let gn = frob2(&g).sqrt();
        if gn <= T::min_positive_value() {
            converged = true;
            break;
        }
        let step = a / T::of_usize(t).sqrt() / gn;
        v.scaled_add(-step, &g);
        let (f, ng) = problem.objective_and_grad_v(s, &v);
        g = ng;
        if f < best_f {
            best_f = f;
            best_v.assign(&v);
        }
        if t % window == 0 {
            if rel_change(window_start_best, best_f) < tol {
                converged = true;
                break;
            }
            window_start_best = best_f;
        }
    }
    (
        best_v,
        TrainStats {
            objective: best_f.as_f64(),
            iterations,
            converged,
        },
    )
}

/// Seen-class semantic rows of `semantics` in dense seen order.
pub(crate) fn seen_semantics<T: Scalar>(
    dataset: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
) -> Result<Array2<T>> {
    Ok(semantics.select_ids(&dataset.split.seen)?.vectors)
}

/// Objective value and gradient with respect to `v` for a model whose
/// phantoms are initialized; `s` is held fixed.
pub fn sync_objective_and_gradient<T: Scalar>(
    model: &SyncModel<T>,
    dataset: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
) -> Result<(T, Array2<T>)> {
    model.phantoms.require_bases(dataset.dim())?;
    let a_seen = seen_semantics(dataset, semantics)?;
    let problem = Problem::new(
        dataset,
        a_seen.view(),
        model.loss_variant,
        model.lambda,
        model.regularize_bases,
    )?;
    let s = similarity_weights(a_seen.view(), model.phantoms.b.view(), model.sigma)?;
    Ok(problem.objective_and_grad_v(&s, &model.phantoms.v))
}

/// Initial phantom semantics (and the matching `beta`) from seen semantics.
/// With `unit_norm` every phantom is rescaled to unit length, matching
/// ℓ2-normalized semantics; unnormalized spaces keep the combinations as-is.
pub fn init_phantoms<T: Scalar>(
    semantics_seen: ArrayView2<T>,
    r: usize,
    strategy: InitStrategy,
    seed: u64,
    unit_norm: bool,
) -> Result<PhantomSet<T>> {
    let s = semantics_seen.nrows();
    if r == 0 {
        return Err(ZslError::arg("number of phantom classes must be at least 1"));
    }
    let beta = match strategy {
        InitStrategy::Identity => {
            if r != s {
                return Err(ZslError::arg(format!(
                    "identity initialization needs R = S ({s}), got R = {r}"
                )));
            }
            Array2::eye(s)
        }
        InitStrategy::Kmeans => {
            if r >= s && s > 1 {
                return Err(ZslError::arg(format!(
                    "k-means initialization needs R < S ({s}), got R = {r}"
                )));
            }
            let assign = kmeans(semantics_seen, r, seed);
            let mut beta = Array2::<T>::zeros((r, s));
            for k in 0..r {
                let members: Vec<usize> = (0..s).filter(|&i| assign[i] == k).collect();
                let w = T::one() / T::of_usize(members.len());
                for i in members {
                    beta[[k, i]] = w;
                }
            }
            beta
        }
        InitStrategy::Mixed => {
            if r <= s {
                return Err(ZslError::arg(format!(
                    "mixed initialization needs R > S ({s}), got R = {r}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut beta = Array2::<T>::zeros((r, s));
            for i in 0..s {
                beta[[i, i]] = T::one();
            }
            for k in s..r {
                let w: Vec<f64> = (0..s).map(|_| rng.random::<f64>()).collect();
                let z: f64 = w.iter().sum();
                for (i, wi) in w.iter().enumerate() {
                    beta[[k, i]] = T::of(wi / z);
                }
            }
            beta
        }
    };
    let mut beta = beta;
    let mut b = beta.dot(&semantics_seen);
    for k in (0..r).filter(|_| unit_norm) {
        let norm = b.row(k).dot(&b.row(k)).sqrt();
        if !(norm > T::zero()) {
            return Err(ZslError::Numerical(format!("phantom {k} has a zero semantic vector")));
        }
        b.row_mut(k).mapv_inplace(|v| v / norm);
        beta.row_mut(k).mapv_inplace(|v| v / norm);
    }
    Ok(PhantomSet {
        b,
        v: Array2::zeros((r, 0)),
        beta: Some(beta),
    })
}

/// Cluster assignment by Lloyd iterations from k-means++ seeding.
pub(crate) fn kmeans<T: Scalar>(x: ArrayView2<T>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sq = |a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>| -> T {
        a.iter().zip(b.iter()).map(|(&p, &q)| (p - q) * (p - q)).sum()
    };
    let mut centers: Vec<Array1<T>> = vec![x.row(rng.random_range(0..n)).to_owned()];
    while centers.len() < k {
        let d: Vec<f64> = (0..n)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| sq(x.row(i), c.view()))
                    .fold(T::infinity(), T::min)
                    .as_f64()
            })
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    chosen = i;
                    break;
                }
                u -= di;
            }
            chosen
        };
        centers.push(x.row(pick).to_owned());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = T::infinity();
            for (c, center) in centers.iter().enumerate() {
                let d = sq(x.row(i), center.view());
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // re-seed empty clusters with the point farthest from its center
        for c in 0..k {
            if !assign.contains(&c) {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = sq(x.row(i), centers[assign[i]].view());
                        let dj = sq(x.row(j), centers[assign[j]].view());
                        di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
                    })
                    .unwrap();
                assign[far] = c;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            let mut m = Array1::<T>::zeros(x.ncols());
            for &i in &members {
                m += &x.row(i);
            }
            *center = m / T::of_usize(members.len());
        }
        if !changed {
            break;
        }
    }
    assign
}

fn initial_phantoms<T: Scalar>(a_seen: ArrayView2<T>, config: &SyncConfig<T>) -> Result<PhantomSet<T>> {
    let r = config.phantoms.unwrap_or(a_seen.nrows());
    init_phantoms(a_seen, r, config.init, config.seed, config.normalize_phantoms)
}

/// Learns the base classifiers with phantom semantics fixed at their initialization.
pub fn train_sync<T: Scalar>(
    dataset: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
    config: &SyncConfig<T>,
) -> Result<SyncModel<T>> {
    config.check()?;
    let a_seen = seen_semantics(dataset, semantics)?;
    let phantoms = initial_phantoms(a_seen.view(), config)?;
    train_sync_with_phantoms(dataset, a_seen.view(), phantoms, config)
}

/// Learns the base classifiers for a given phantom set.
pub fn train_sync_with_phantoms<T: Scalar>(
    dataset: &Dataset<T>,
    a_seen: ArrayView2<T>,
    mut phantoms: PhantomSet<T>,
    config: &SyncConfig<T>,
) -> Result<SyncModel<T>> {
    config.check()?;
    let problem = Problem::new(dataset, a_seen, config.loss, config.lambda, config.regularize_bases)?;
    let s = similarity_weights(a_seen, phantoms.b.view(), config.sigma)?;
    let v0 = Array2::zeros((phantoms.count(), dataset.dim()));
    let (v, stats) = fit_bases(&problem, &s, v0, config.max_iter, config.tol, config.step_scale);
    if !stats.converged {
        log::warn!(
            "SynC training stopped at the iteration cap ({}) before converging",
            stats.iterations
        );
    }
    phantoms.v = v;
    Ok(SyncModel {
        phantoms,
        sigma: config.sigma,
        lambda: config.lambda,
        loss_variant: config.loss,
        regularize_bases: config.regularize_bases,
        eta: config.eta,
        gamma_reg: config.gamma_reg,
        stats,
    })
}

/// The `β` sub-problem with `v` fixed: smooth part plus ℓ1 penalty.
pub(crate) struct BetaProblem<'a, 'p, T> {
    pub inner: &'a Problem<'p, T>,
    pub a_seen: ArrayView2<'a, T>,
    pub v: &'a Array2<T>,
    pub sigma: T,
    pub eta: T,
    pub gamma_reg: T,
    pub h: T,
}

impl<T: Scalar> BetaProblem<'_, '_, T> {
    /// Smooth part of the objective and its gradient with respect to `β`.
    pub fn smooth_and_grad(&self, beta: &Array2<T>) -> (T, Array2<T>) {
        let b = beta.dot(&self.a_seen);
        let s = similarity_weights(self.a_seen, b.view(), self.sigma).expect("shapes checked");
        let w = s.dot(self.v);
        let (loss, mut gw) = self.inner.loss_and_grad_w(&w);
        let half = T::of(0.5);
        let two = T::of(2.0);
        let mut f = loss;
        if self.inner.regularize_bases {
            f = f + half * self.inner.lambda * frob2(self.v);
        } else {
            f = f + half * self.inner.lambda * frob2(&w);
            gw.scaled_add(self.inner.lambda, &w);
        }
        let h2 = self.h * self.h;
        let mut db = Array2::<T>::zeros(b.dim());
        for (r, br) in b.axis_iter(Axis(0)).enumerate() {
            let excess = br.dot(&br) - h2;
            f = f + half * self.gamma_reg * excess * excess;
            db.row_mut(r).scaled_add(two * self.gamma_reg * excess, &br);
        }
        // chain rule through W = S·V and the row softmax
        let gs = gw.dot(&self.v.t());
        let s2 = self.sigma * self.sigma;
        for c in 0..s.nrows() {
            let mean: T = (0..s.ncols()).map(|r| s[[c, r]] * gs[[c, r]]).sum();
            for r in 0..s.ncols() {
                let gl = s[[c, r]] * (gs[[c, r]] - mean);
                if gl == T::zero() {
                    continue;
                }
                let coef = gl * two / s2;
                for j in 0..b.ncols() {
                    db[[r, j]] = db[[r, j]] + coef * (self.a_seen[[c, j]] - b[[r, j]]);
                }
            }
        }
        (f, db.dot(&self.a_seen.t()))
    }

    pub fn objective(&self, beta: &Array2<T>) -> T {
        let l1: T = beta.iter().map(|v| v.abs()).sum();
        self.smooth_and_grad(beta).0 + self.eta * l1
    }

    /// ISTA with backtracking for `steps` iterations.
    pub fn descend(&self, mut beta: Array2<T>, steps: usize) -> Array2<T> {
        let mut t = T::one();
        let (mut f, mut g) = self.smooth_and_grad(&beta);
        for _ in 0..steps {
            let mut moved = false;
            for _ in 0..60 {
                let mut cand = &beta - &(&g * t);
                let thr = self.eta * t;
                cand.mapv_inplace(|v| v.signum() * (v.abs() - thr).max(T::zero()));
                let diff = &cand - &beta;
                let (fc, gc) = self.smooth_and_grad(&cand);
                let bound = f + (&g * &diff).sum() + frob2(&diff) / (T::of(2.0) * t);
                if fc <= bound {
                    let before = self.eta * beta.iter().map(|v| v.abs()).sum::<T>() + f;
                    let after = self.eta * cand.iter().map(|v| v.abs()).sum::<T>() + fc;
                    if after <= before {
                        beta = cand;
                        f = fc;
                        g = gc;
                        moved = true;
                    }
                    break;
                }
                t = t * T::of(0.5);
            }
            if !moved {
                break;
            }
            t = t * T::of(2.0);
        }
        beta
    }
}

/// Diagnostics from phantom-semantics learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLearningReport {
    pub outer_iterations: usize,
    pub objectives: Vec<f64>,
    /// Non-zero `β` entries per phantom.
    pub nonzeros_per_phantom: Vec<usize>,
    pub b_norm_range: (f64, f64),
}

/// Alternates base-classifier learning with proximal-gradient updates of `β`.
pub fn learn_phantom_semantics<T: Scalar>(
    dataset: &Dataset<T>,
    semantics: &SemanticMatrix<T>,
    config: &SyncConfig<T>,
) -> Result<(SyncModel<T>, PhantomLearningReport)> {
    config.check()?;
    let a_seen = seen_semantics(dataset, semantics)?;
    let mut phantoms = initial_phantoms(a_seen.view(), config)?;
    let problem = Problem::new(
        dataset,
        a_seen.view(),
        config.loss,
        config.lambda,
        config.regularize_bases,
    )?;
    let mut beta = phantoms.beta.clone().expect("initialization sets beta");
    let mut v = Array2::zeros((phantoms.count(), dataset.dim()));
    let mut stats = TrainStats {
        objective: f64::NAN,
        iterations: 0,
        converged: false,
    };
    let mut objectives = Vec::new();
    let mut outer = 0;
    let mut prev: Option<T> = None;
    while outer < config.outer_iter.max(1) {
        outer += 1;
        let b = beta.dot(&a_seen);
        let s = similarity_weights(a_seen.view(), b.view(), config.sigma)?;
        let (nv, st) = fit_bases(&problem, &s, v, config.max_iter, config.tol, config.step_scale);
        v = nv;
        stats = TrainStats {
            iterations: stats.iterations + st.iterations,
            ..st
        };
        if config.beta_steps == 0 {
            objectives.push(st.objective);
            break;
        }
        let bp = BetaProblem {
            inner: &problem,
            a_seen: a_seen.view(),
            v: &v,
            sigma: config.sigma,
            eta: config.eta,
            gamma_reg: config.gamma_reg,
            h: config.h,
        };
        beta = bp.descend(beta, config.beta_steps);
        let j = bp.objective(&beta);
        objectives.push(j.as_f64());
        if let Some(p) = prev {
            if rel_change(p, j) < config.outer_tol {
                break;
            }
        }
        prev = Some(j);
    }
    phantoms.b = beta.dot(&a_seen);
    let norms: Vec<f64> = phantoms
        .b
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt().as_f64())
        .collect();
    let report = PhantomLearningReport {
        outer_iterations: outer,
        objectives,
        nonzeros_per_phantom: beta
            .axis_iter(Axis(0))
            .map(|r| r.iter().filter(|v| **v != T::zero()).count())
            .collect(),
        b_norm_range: (
            norms.iter().copied().fold(f64::INFINITY, f64::min),
            norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    phantoms.beta = Some(beta);
    phantoms.v = v;
    Ok((
        SyncModel {
            phantoms,
            sigma: config.sigma,
            lambda: config.lambda,
            loss_variant: config.loss,
            regularize_bases: config.regularize_bases,
            eta: config.eta,
            gamma_reg: config.gamma_reg,
            stats,
        },
        report,
    ))
}

/// Scores `w_c^T x` for every class in `restrict` (rows of `semantics_target`
/// matched by id); predictions are the argmax, ties to the smallest class id.
pub fn predict_sync<T: Scalar>(
    model: &SyncModel<T>,
    semantics_target: &SemanticMatrix<T>,
    x: ArrayView2<T>,
    restrict: &[ClassId],
) -> Result<(Vec<ClassId>, ScoreTable<T>)> {
    if restrict.is_empty() {
        return Err(ZslError::arg("empty candidate set"));
    }
    model.phantoms.require_bases(x.ncols())?;
    let target = semantics_target.select_ids(restrict)?;
    let w = model.classifiers(target.vectors.view())?;
    let scores = x.dot(&w.t());
    let table = ScoreTable::new(scores, restrict.to_vec(), None)?;
    Ok((table.argmax(), table))
}
