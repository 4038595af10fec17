//! Ask/tell Bayesian optimizer over a box, with a Gaussian-process surrogate.
//!
//! The surrogate is an isotropic RBF GP on inputs scaled to `[0, 1]` and
//! standardized outputs; its lengthscale is picked from a small grid by
//! marginal likelihood. Acquisition is maximized over a seeded candidate
//! set, so the whole optimizer is deterministic under its seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use crate::numeric::{backward_sub_t, cholesky, forward_sub, Scalar};

/// One search dimension `[lo, hi]`; `step` snaps values to `lo + k·step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dimension<F> {
    pub lo: F,
    pub hi: F,
    pub step: Option<F>,
}

impl<F: Scalar> Dimension<F> {
    pub fn new(lo: F, hi: F) -> Self {
        Dimension { lo, hi, step: None }
    }

    pub fn snap(&self, v: F) -> F {
        let v = v.max(self.lo).min(self.hi);
        match self.step {
            Some(s) if s > F::zero() => (self.lo + ((v - self.lo) / s).round() * s).min(self.hi),
            _ => v,
        }
    }

    fn width(&self) -> F {
        self.hi - self.lo
    }
}

/// What told values mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Goal<F> {
    Maximize,
    /// Values are observations; the objective is `-|value - target|`.
    Target(F),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Acquisition<F> {
    ExpectedImprovement,
    /// Maximize the surrogate mean, then perturb by `jitter` (fraction of
    /// each dimension's width).
    GreedyMean { jitter: F },
}

pub struct AskTell<F> {
    dims: Vec<Dimension<F>>,
    goal: Goal<F>,
    acquisition: Acquisition<F>,
    n_initial: usize,
    n_candidates: usize,
    rng: ChaCha8Rng,
    xs: Vec<Vec<F>>,
    ys: Vec<F>,
    asked: usize,
}

struct Gp<F> {
    xs: Vec<Vec<F>>,
    alpha: Vec<F>,
    l: Vec<Vec<F>>,
    lengthscale: F,
    mean: F,
    scale: F,
}

const NOISE: f64 = 1e-4;
const LENGTHSCALES: [f64; 6] = [0.03, 0.07, 0.15, 0.3, 0.6, 1.2];

fn rbf<F: Scalar>(a: &[F], b: &[F], ls: F) -> F {
    let d2 = a.iter().zip(b).fold(F::zero(), |s, (x, y)| s + (*x - *y) * (*x - *y));
    (-d2 / (F::lit(2.0) * ls * ls)).exp()
}

impl<F: Scalar> Gp<F> {
    fn fit(xs: &[Vec<F>], ys: &[F]) -> Option<Self> {
        let n = ys.len() as u64;
        let mean = ys.iter().fold(F::zero(), |s, v| s + *v) / F::from_count(n);
        let var = ys.iter().fold(F::zero(), |s, v| s + (*v - mean) * (*v - mean)) / F::from_count(n);
        let scale = if var > F::lit(1e-12) { var.sqrt() } else { F::one() };
        let z: Vec<F> = ys.iter().map(|v| (*v - mean) / scale).collect();
        let mut best: Option<(F, Self)> = None;
        for ls in LENGTHSCALES {
            let ls = F::lit(ls);
            let k: Vec<Vec<F>> = xs
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    xs.iter()
                        .enumerate()
                        .map(|(j, b)| rbf(a, b, ls) + if i == j { F::lit(NOISE) } else { F::zero() })
                        .collect()
                })
                .collect();
            let Some(l) = cholesky(&k) else { continue };
            let alpha = backward_sub_t(&l, &forward_sub(&l, &z));
            let fit = z.iter().zip(&alpha).fold(F::zero(), |s, (a, b)| s + *a * *b);
            let logdet = (0..l.len()).fold(F::zero(), |s, i| s + l[i][i].ln());
            let lml = -F::lit(0.5) * fit - logdet;
            if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                best = Some((
                    lml,
                    Gp {
                        xs: xs.to_vec(),
                        alpha,
                        l,
                        lengthscale: ls,
                        mean,
                        scale,
                    },
                ));
            }
        }
        best.map(|(_, gp)| gp)
    }

    /// Posterior mean and standard deviation in the original output units.
    fn predict(&self, x: &[F]) -> (F, F) {
        let k: Vec<F> = self.xs.iter().map(|a| rbf(a, x, self.lengthscale)).collect();
        let mu = k.iter().zip(&self.alpha).fold(F::zero(), |s, (a, b)| s + *a * *b);
        let v = forward_sub(&self.l, &k);
        let var = (F::one() - v.iter().fold(F::zero(), |s, a| s + *a * *a)).max(F::lit(1e-12));
        (self.mean + mu * self.scale, var.sqrt() * self.scale)
    }
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// `E[max(0, f - best)]` for `f ~ N(mu, sd²)`.
pub fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    if sd <= 0.0 {
        return (mu - best).max(0.0);
    }
    let z = (mu - best) / sd;
    (mu - best) * cdf(z) + sd * phi(z)
}

/// `E[max(0, b - |Z|)]` for `Z ~ N(m, s²)`: expected improvement of the
/// objective `-|Z|` over the incumbent distance `b`.
pub fn expected_closeness_gain(m: f64, s: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    if s <= 0.0 {
        return (b - m.abs()).max(0.0);
    }
    // ∫ z p(z) over [lo, hi]
    let first = |lo: f64, hi: f64| {
        let (a, c) = ((lo - m) / s, (hi - m) / s);
        m * (cdf(c) - cdf(a)) - s * (phi(c) - phi(a))
    };
    let mass = |lo: f64, hi: f64| cdf((hi - m) / s) - cdf((lo - m) / s);
    // (b - z) on [0, b] plus (b + z) on [-b, 0]
    let upper = b * mass(0.0, b) - first(0.0, b);
    let lower = b * mass(-b, 0.0) + first(-b, 0.0);
    (upper + lower).max(0.0)
}

impl<F: Scalar> AskTell<F> {
    pub fn new(dims: Vec<Dimension<F>>, goal: Goal<F>, acquisition: Acquisition<F>, n_initial: usize, seed: u64) -> Self {
        AskTell {
            dims,
            goal,
            acquisition,
            n_initial,
            n_candidates: 384,
            rng: ChaCha8Rng::seed_from_u64(seed),
            xs: Vec::new(),
            ys: Vec::new(),
            asked: 0,
        }
    }

    pub fn dims(&self) -> &[Dimension<F>] {
        &self.dims
    }

    fn objective(&self, y: F) -> F {
        match self.goal {
            Goal::Maximize => y,
            Goal::Target(t) => -(y - t).abs(),
        }
    }

    fn normalize(&self, x: &[F]) -> Vec<F> {
        x.iter()
            .zip(&self.dims)
            .map(|(v, d)| {
                if d.width() > F::zero() {
                    (*v - d.lo) / d.width()
                } else {
                    F::zero()
                }
            })
            .collect()
    }

    fn random_point(&mut self) -> Vec<F> {
        let dims = self.dims.clone();
        dims.iter()
            .map(|d| d.snap(d.lo + d.width() * F::lit(self.rng.gen::<f64>())))
            .collect()
    }

    fn perturb(&mut self, x: &[F], frac: f64) -> Vec<F> {
        let dims = self.dims.clone();
        x.iter()
            .zip(&dims)
            .map(|(v, d)| {
                let u: f64 = self.rng.gen_range(-1.0..=1.0);
                d.snap(*v + d.width() * F::lit(frac * u))
            })
            .collect()
    }

    /// Index of the best told point by objective; earliest wins ties.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<(usize, F)> = None;
        for (i, y) in self.ys.iter().enumerate() {
            let o = self.objective(*y);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((i, o));
            }
        }
        best.map(|b| b.0)
    }

    pub fn observations(&self) -> impl Iterator<Item = (&[F], F)> {
        self.xs.iter().map(|x| x.as_slice()).zip(self.ys.iter().copied())
    }

    /// Next point to evaluate.
    pub fn ask(&mut self) -> Vec<F> {
        self.asked += 1;
        if self.asked <= self.n_initial || self.ys.len() < 2 {
            return self.random_point();
        }
        let xn: Vec<Vec<F>> = self.xs.iter().map(|x| self.normalize(x)).collect();
        let Some(gp) = Gp::fit(&xn, &self.ys) else {
            return self.random_point();
        };

        let mut candidates: Vec<Vec<F>> = (0..self.n_candidates).map(|_| self.random_point()).collect();
        let mut order: Vec<usize> = (0..self.ys.len()).collect();
        order.sort_by(|&a, &b| {
            self.objective(self.ys[b])
                .partial_cmp(&self.objective(self.ys[a]))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in order.iter().take(3) {
            let x = self.xs[i].clone();
            for frac in [0.01, 0.03, 0.1] {
                for _ in 0..16 {
                    candidates.push(self.perturb(&x, frac));
                }
            }
        }

        let incumbent = self.objective(self.ys[order[0]]).as_f64();
        let score = |c: &[F]| -> f64 {
            let (mu, sd) = gp.predict(&self.normalize(c));
            let (mu, sd) = (mu.as_f64(), sd.as_f64());
            match (self.acquisition, self.goal) {
                (Acquisition::ExpectedImprovement, Goal::Maximize) => expected_improvement(mu, sd, incumbent),
                (Acquisition::ExpectedImprovement, Goal::Target(t)) => {
                    expected_closeness_gain(mu - t.as_f64(), sd, -incumbent)
                }
                (Acquisition::GreedyMean { .. }, Goal::Maximize) => mu,
                (Acquisition::GreedyMean { .. }, Goal::Target(t)) => -(mu - t.as_f64()).abs(),
            }
        };
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in candidates.iter().enumerate() {
            let s = score(c);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        let choice = candidates.swap_remove(best);
        match self.acquisition {
            Acquisition::GreedyMean { jitter } if jitter > F::zero() => self.perturb(&choice, jitter.as_f64()),
            _ => choice,
        }
    }

    pub fn tell(&mut self, x: Vec<F>, y: F) {
        debug_assert_eq!(x.len(), self.dims.len());
        self.xs.push(x);
        self.ys.push(y);
    }
}
