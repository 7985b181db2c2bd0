//! Sequential minimal optimization for the epsilon-SVR dual, in the
//! doubled-variable form with second-order working set selection.

use crate::scalar::Scalar;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct Solution<T> {
    /// `alpha_i - alpha_i^*` per training point.
    pub theta: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `min 1/2 θᵀKθ + ε Σ|θ| - yᵀθ` subject to `Σθ = 0`, `|θ| ≤ C`,
/// where `kernel` is the row-major `n x n` Gram matrix.
pub(crate) fn solve<T: Scalar>(
    kernel: &[T],
    n: usize,
    targets: &[T],
    c: T,
    epsilon: T,
    tol: T,
    max_iter: usize,
) -> Solution<T> {
    // variable t < n carries alpha (sign +1), t >= n carries alpha^* (sign -1);
    // each half of `grad` is stored separately
    let mut pos = vec![T::zero(); n];
    let mut neg = vec![T::zero(); n];
    let mut gpos: Vec<T> = targets.iter().map(|&y| epsilon - y).collect();
    let mut gneg: Vec<T> = targets.iter().map(|&y| epsilon + y).collect();
    let diag: Vec<T> = (0..n).map(|a| kernel[a * n + a]).collect();
    let tau = T::lit(TAU);
    let two = T::lit(2.0);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: maximal violating index in I_up, scored by -sign * grad
        let mut gmax = T::neg_infinity();
        let mut i = (usize::MAX, true);
        for t in 0..n {
            if pos[t] < c && -gpos[t] >= gmax {
                gmax = -gpos[t];
                i = (t, true);
            }
        }
        for t in 0..n {
            if neg[t] > T::zero() && gneg[t] >= gmax {
                gmax = gneg[t];
                i = (t, false);
            }
        }
        if i.0 == usize::MAX {
            converged = true;
            break;
        }
        let (ii, ipos) = i;
        let row_i = &kernel[ii * n..(ii + 1) * n];
        let si = if ipos { T::one() } else { -T::one() };
        // j: second-order choice in I_low, scored by sign * grad
        let mut gmax2 = T::neg_infinity();
        let mut best = T::infinity();
        let mut j = (usize::MAX, true);
        let mut consider = |t: usize, tpos: bool, v: T| {
            if v >= gmax2 {
                gmax2 = v;
            }
            let diff = gmax + v;
            if diff > T::zero() {
                let st = if tpos { T::one() } else { -T::one() };
                // Q_ii + Q_tt - 2 y_i y_t Q_it with Q_ab = s_a s_b K_ab
                let mut quad = diag[ii] + diag[t] - two * si * st * (si * st * row_i[t]);
                if quad <= T::zero() {
                    quad = tau;
                }
                let obj = -(diff * diff) / quad;
                if obj <= best {
                    best = obj;
                    j = (t, tpos);
                }
            }
        };
        for t in 0..n {
            if pos[t] > T::zero() {
                consider(t, true, gpos[t]);
            }
        }
        for t in 0..n {
            if neg[t] < c {
                consider(t, false, -gneg[t]);
            }
        }
        if gmax + gmax2 < tol || j.0 == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let (jj, jpos) = j;
        let sj = if jpos { T::one() } else { -T::one() };
        let get = |p: bool, k: usize, pos: &[T], neg: &[T]| if p { pos[k] } else { neg[k] };
        let (old_i, old_j) = (get(ipos, ii, &pos, &neg), get(jpos, jj, &pos, &neg));
        let (gi, gj) = (get(ipos, ii, &gpos, &gneg), get(jpos, jj, &gpos, &gneg));
        let (mut alpha_i, mut alpha_j) = (old_i, old_j);
        let qij = si * sj * row_i[jj];
        if si != sj {
            let mut quad = diag[ii] + diag[jj] + two * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-gi - gj) / quad;
            let diff = alpha_i - alpha_j;
            alpha_i += delta;
            alpha_j += delta;
            if diff > T::zero() {
                if alpha_j < T::zero() {
                    alpha_j = T::zero();
                    alpha_i = diff;
                }
            } else if alpha_i < T::zero() {
                alpha_i = T::zero();
                alpha_j = -diff;
            }
            if diff > T::zero() {
                if alpha_i > c {
                    alpha_i = c;
                    alpha_j = c - diff;
                }
            } else if alpha_j > c {
                alpha_j = c;
                alpha_i = c + diff;
            }
        } else {
            let mut quad = diag[ii] + diag[jj] - two * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (gi - gj) / quad;
            let sum = alpha_i + alpha_j;
            alpha_i -= delta;
            alpha_j += delta;
            if sum > c {
                if alpha_i > c {
                    alpha_i = c;
                    alpha_j = sum - c;
                }
            } else if alpha_j < T::zero() {
                alpha_j = T::zero();
                alpha_i = sum;
            }
            if sum > c {
                if alpha_j > c {
                    alpha_j = c;
                    alpha_i = sum - c;
                }
            } else if alpha_i < T::zero() {
                alpha_i = T::zero();
                alpha_j = sum;
            }
        }
        if ipos {
            pos[ii] = alpha_i
        } else {
            neg[ii] = alpha_i
        }
        if jpos {
            pos[jj] = alpha_j
        } else {
            neg[jj] = alpha_j
        }
        // grad_t += Q_ti d_i + Q_tj d_j; the theta change is s d
        let (di, dj) = (si * (alpha_i - old_i), sj * (alpha_j - old_j));
        let row_j = &kernel[jj * n..(jj + 1) * n];
        for t in 0..n {
            let u = row_i[t] * di + row_j[t] * dj;
            gpos[t] += u;
            gneg[t] -= u;
        }
        debug_assert!(pos.iter().chain(&neg).all(|&a| a >= T::zero() && a <= c));
        debug_assert!({
            let s: T = pos.iter().zip(&neg).map(|(&p, &q)| p - q).sum();
            s.abs() <= T::lit(1e-9) * (T::one() + c * T::lit(n as f64))
        });
    }
    let theta = pos.iter().zip(&neg).map(|(&p, &q)| p - q).collect();
    Solution {
        theta,
        iterations,
        converged,
    }
}

/// Midpoint of the intercepts minimizing the epsilon-insensitive loss of the
/// residuals `r`: the n-th and (n+1)-th smallest of `{r ± ε}`.
pub(crate) fn midpoint_bias<T: Scalar>(residuals: &[T], epsilon: T) -> T {
    let mut pts: Vec<T> = residuals
        .iter()
        .flat_map(|&r| [r - epsilon, r + epsilon])
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let n = residuals.len();
    (pts[n - 1] + pts[n]) / T::lit(2.0)
}

/// Dual objective `1/2 θᵀKθ + ε Σ|θ| - yᵀθ` (minimization form).
pub(crate) fn dual_objective<T: Scalar>(
    kernel: &[T],
    n: usize,
    targets: &[T],
    theta: &[T],
    epsilon: T,
) -> T {
    let mut quad = T::zero();
    for a in 0..n {
        for b in 0..n {
            quad += theta[a] * kernel[a * n + b] * theta[b];
        }
    }
    let lin: T = theta
        .iter()
        .zip(targets)
        .map(|(&t, &y)| epsilon * t.abs() - y * t)
        .sum();
    quad / T::lit(2.0) + lin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_fit() {
        // points 0 and 1 with targets 0 and 1, linear kernel, eps 0
        let k = [0.0f64, 0.0, 0.0, 1.0];
        let s = solve(&k, 2, &[0.0, 1.0], 1e3, 0.0, 1e-9, 10_000);
        assert!(s.converged);
        assert!((s.theta[1] - 1.0).abs() < 1e-9 && (s.theta[0] + 1.0).abs() < 1e-9);
        let r: Vec<f64> = (0..2)
            .map(|i| [0.0, 1.0][i] - s.theta[1] * k[i * 2 + 1])
            .collect();
        assert!(midpoint_bias(&r, 0.0).abs() < 1e-9);
    }

    #[test]
    fn wide_tube_gives_zero_coefficients() {
        let k = [1.0, 0.5, 0.5, 1.0];
        let s = solve(&k, 2, &[0.1, 0.2], 10.0, 0.5, 1e-9, 100);
        assert_eq!(s.theta, vec![0.0, 0.0]);
        assert!((midpoint_bias(&[0.1f64, 0.2], 0.5) - 0.15).abs() < 1e-15);
    }
}
