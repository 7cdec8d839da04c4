//! Derivative-free Nelder–Mead minimization with dimension-adaptive
//! coefficients.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the spread of simplex values is below this...
    pub ftol: f64,
    /// ...and every vertex lies within this distance of the best one.
    pub xtol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            ftol: 1e-8,
            xtol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub evals: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0`; the initial simplex is `x0` plus
    /// `step[i]` along each axis `i`.
    ///
    /// # Panics
    /// If `step.len() != x0.len()` or `x0` is empty.
    pub fn minimize<T: Real>(&self, mut f: impl FnMut(&[T]) -> T, x0: &[T], step: &[T]) -> Minimum<T> {
        let n = x0.len();
        assert!(n > 0 && step.len() == n, "need a non-empty start and one step per axis");
        let nf = T::count(n);
        let alpha = T::one();
        let gamma = T::one() + T::lit(2.0) / nf;
        let rho = T::lit(0.75) - T::lit(0.5) / nf;
        let shrink = T::one() - T::one() / nf;

        let mut evals = 0;
        let mut eval = |x: &[T], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            // NaN sorts last so it is replaced first.
            if v.is_nan() {
                T::infinity()
            } else {
                v
            }
        };

        let mut pts: Vec<Vec<T>> = Vec::with_capacity(n + 1);
        pts.push(x0.to_vec());
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += step[i];
            pts.push(p);
        }
        let mut vals: Vec<T> = pts.iter().map(|p| eval(p, &mut evals)).collect();

        let mut iterations = 0;
        loop {
            // Stable sort keeps ties in insertion order for determinism.
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("no NaN"));
            pts = order.iter().map(|&i| pts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let spread = (vals[n] - vals[0]).to_f64_lossy();
            let size = pts[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&pts[0]).map(|(&a, &b)| (a - b).abs().to_f64_lossy()))
                .fold(0.0, f64::max);
            if (spread <= self.ftol && size <= self.xtol) || evals >= self.max_evals {
                break;
            }
            iterations += 1;

            let centroid: Vec<T> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<T>() / nf).collect();
            let along = |t: T| -> Vec<T> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };

            let xr = along(-alpha);
            let fr = eval(&xr, &mut evals);
            if fr < vals[0] {
                let xe = along(-alpha * gamma);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    pts[n] = xe;
                    vals[n] = fe;
                } else {
                    pts[n] = xr;
                    vals[n] = fr;
                }
                continue;
            }
            if fr < vals[n - 1] {
                pts[n] = xr;
                vals[n] = fr;
                continue;
            }
            // Outside contraction must match the reflection, inside must
            // beat the worst vertex.
            let outside = fr < vals[n];
            let xc = if outside { along(-alpha * rho) } else { along(rho) };
            let fc = eval(&xc, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < vals[n]) {
                pts[n] = xc;
                vals[n] = fc;
                continue;
            }
            for i in 1..=n {
                pts[i] = (0..n).map(|j| pts[0][j] + shrink * (pts[i][j] - pts[0][j])).collect();
                vals[i] = eval(&pts[i], &mut evals);
            }
        }
        Minimum {
            x: pts.swap_remove(0),
            value: vals[0],
            iterations,
            evals,
        }
    }
}
