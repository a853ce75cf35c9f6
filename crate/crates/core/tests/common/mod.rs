// Shared oracles for the integration tests. Each one is written from the
// definitions, without reusing the library's solvers.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zsl_core::data::{ClassId, ClassSplit, Dataset, Partition, SemanticMatrix};
use zsl_core::sync::{init_phantoms, InitStrategy, LossVariant, SyncModel, TrainStats};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Euclidean projection onto `{x : 0 ≤ x ≤ cap, Σx = total}` by bisection on the shift.
pub fn project_capped_simplex(x: &Array1<f64>, cap: f64, total: f64) -> Array1<f64> {
    let mass = |tau: f64| x.iter().map(|&v| (v - tau).clamp(0.0, cap)).sum::<f64>();
    let mut lo = x.iter().cloned().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    x.mapv(|v| (v - tau).clamp(0.0, cap))
}

/// Accelerated projected gradient on the ν-SVR dual
/// `min ½(a−a')ᵀK(a−a') − tᵀ(a−a')` with `0 ≤ a, a' ≤ cap` and `Σa = Σa' = side_sum`.
/// Returns `a − a'`.
pub fn nu_svr_dual_oracle(k: ArrayView2<f64>, t: ArrayView1<f64>, cap: f64, side_sum: f64, iters: usize) -> Array1<f64> {
    let n = t.len();
    let lip = 2.0 * (0..n).map(|i| k.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;
    let start = Array1::from_elem(n, side_sum / n as f64);
    let (mut a, mut b) = (start.clone(), start);
    let (mut ya, mut yb) = (a.clone(), b.clone());
    let mut momentum: f64 = 1.0;
    for _ in 0..iters {
        let g = k.dot(&(&ya - &yb)) - &t;
        let na = project_capped_simplex(&(&ya - &(&g * step)), cap, side_sum);
        let nb = project_capped_simplex(&(&yb + &(&g * step)), cap, side_sum);
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let w = (momentum - 1.0) / next;
        ya = &na + &((&na - &a) * w);
        yb = &nb + &((&nb - &b) * w);
        a = na;
        b = nb;
        momentum = next;
    }
    &a - &b
}

pub fn quadratic_dual(k: ArrayView2<f64>, t: ArrayView1<f64>, beta: &Array1<f64>) -> f64 {
    let mut quad = 0.0;
    for i in 0..beta.len() {
        for j in 0..beta.len() {
            quad += beta[i] * k[[i, j]] * beta[j];
        }
    }
    0.5 * quad - t.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += h;
        let mut minus = x.clone();
        minus[[r, c]] -= h;
        g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, tiny)`.
pub fn relative_error(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Per-class accuracy of calibrated stacking at `gamma`, computed by direct
/// enumeration. Returns `(unseen accuracy, seen accuracy)`.
pub fn brute_force_point(
    scores: ArrayView2<f64>,
    seen: &[bool],
    labels: &[usize],
    gamma: f64,
) -> (f64, f64) {
    let c = scores.ncols();
    let mut hit = vec![0usize; c];
    let mut tot = vec![0usize; c];
    for (n, &y) in labels.iter().enumerate() {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..c {
            // adjusted score; a tie between sides goes to the unseen class
            let v = if seen[j] { scores[[n, j]] - gamma } else { scores[[n, j]] };
            let wins = v > best_val || (v == best_val && !seen[j] && seen[best]);
            if wins {
                best = j;
                best_val = v;
            }
        }
        tot[y] += 1;
        if best == y {
            hit[y] += 1;
        }
    }
    let mean = |want_seen: bool| {
        let cls: Vec<usize> = (0..c).filter(|&j| seen[j] == want_seen && tot[j] > 0).collect();
        cls.iter().map(|&j| hit[j] as f64 / tot[j] as f64).sum::<f64>() / cls.len() as f64
    };
    (mean(false), mean(true))
}

/// Random SynC instance: `S` seen classes plus one unseen, identity phantoms,
/// random bases.
pub fn toy_sync(rng: &mut rand_chacha::ChaCha8Rng, regularize_bases: bool) -> (SyncModel<f64>, Dataset<f64>, SemanticMatrix<f64>) {
    let s = rng.random_range(2..=4usize);
    let d = rng.random_range(2..=4usize);
    let a = rng.random_range(2..=3usize);
    let n = rng.random_range(4..=10usize);
    let x = random_matrix(rng, n, d);
    let labels: Vec<ClassId> = (0..n).map(|i| (i % s) as ClassId).collect();
    let split = ClassSplit::new((0..s as ClassId).collect(), vec![s as ClassId]).unwrap();
    let ds = Dataset::new(x, &labels, split, Partition::Train).unwrap();
    let sem = SemanticMatrix::new(random_matrix(rng, s + 1, a), (0..=s as ClassId).collect(), false).unwrap();
    let mut phantoms = init_phantoms(sem.vectors.slice(ndarray::s![..s, ..]), s, InitStrategy::Identity, 0, true).unwrap();
    phantoms.v = random_matrix(rng, s, d);
    let model = SyncModel {
        phantoms,
        sigma: rng.random_range(0.5..2.0),
        lambda: rng.random_range(0.1..2.0),
        loss_variant: LossVariant::OneVsOther,
        regularize_bases,
        eta: 0.0,
        gamma_reg: 0.0,
        stats: TrainStats { objective: 0.0, iterations: 0, converged: true },
    };
    (model, ds, sem)
}
