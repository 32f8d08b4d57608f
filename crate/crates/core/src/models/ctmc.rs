//! Two-state continuous-time Markov chain.
//!
//! States are labelled 1 and 2 (stored as indices 0 and 1). `lambda` is the
//! 1→2 intensity and `mu` the 2→1 intensity.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{OdosError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub p: [[f64; 2]; 2],
    /// Set when λ = μ = 0 and dt > 0: the chain never moves and the identity is returned.
    pub degenerate: bool,
}

impl TransitionMatrix {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.p[from][to]
    }

    pub fn mul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        let mut p = [[0.0; 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..2).map(|k| self.p[i][k] * other.p[k][j]).sum();
            }
        }
        TransitionMatrix {
            p,
            degenerate: self.degenerate && other.degenerate,
        }
    }
}

fn check_rates(lambda: f64, mu: f64, dt: f64) -> Result<()> {
    if !(lambda >= 0.0 && mu >= 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(OdosError::InvalidArgument(format!(
            "intensities must be finite and non-negative (λ = {lambda}, μ = {mu})"
        )));
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(OdosError::InvalidArgument(format!(
            "elapsed time must be finite and non-negative, got {dt}"
        )));
    }
    Ok(())
}

/// P(dt) = exp(Q dt) in closed form.
pub fn ctmc_transition_matrix(lambda: f64, mu: f64, dt: f64) -> Result<TransitionMatrix> {
    check_rates(lambda, mu, dt)?;
    Ok(transition_unchecked(lambda, mu, dt))
}

pub(crate) fn transition_unchecked(lambda: f64, mu: f64, dt: f64) -> TransitionMatrix {
    let total = lambda + mu;
    if dt == 0.0 || total == 0.0 {
        return TransitionMatrix {
            p: [[1.0, 0.0], [0.0, 1.0]],
            degenerate: dt > 0.0,
        };
    }
    // 1 - e^{-(λ+μ)dt} without cancellation for small dt
    let decay = -(-total * dt).exp_m1();
    let p12 = lambda / total * decay;
    let p21 = mu / total * decay;
    TransitionMatrix {
        p: [[1.0 - p12, p12], [p21, 1.0 - p21]],
        degenerate: false,
    }
}

/// Partial derivatives of P(dt): `[d/dλ, d/dμ]`, each a 2×2 matrix.
pub fn transition_gradient(lambda: f64, mu: f64, dt: f64) -> [[[f64; 2]; 2]; 2] {
    let total = lambda + mu;
    if dt == 0.0 {
        return [[[0.0; 2]; 2]; 2];
    }
    if total == 0.0 {
        // first-order expansion around the absorbing point: p12 ≈ λ dt, p21 ≈ μ dt
        return [
            [[-dt, dt], [0.0, 0.0]],
            [[0.0, 0.0], [dt, -dt]],
        ];
    }
    let e = (-total * dt).exp();
    let decay = -(-total * dt).exp_m1();
    let s2 = total * total;
    let dp12_dl = decay * mu / s2 + lambda * dt * e / total;
    let dp12_dm = -lambda * decay / s2 + lambda * dt * e / total;
    let dp21_dl = -mu * decay / s2 + mu * dt * e / total;
    let dp21_dm = decay * lambda / s2 + mu * dt * e / total;
    [
        [[-dp12_dl, dp12_dl], [dp21_dl, -dp21_dl]],
        [[-dp12_dm, dp12_dm], [dp21_dm, -dp21_dm]],
    ]
}

/// State law at elapsed time `dt` starting from `initial`.
pub fn marginal(initial: [f64; 2], lambda: f64, mu: f64, dt: f64) -> [f64; 2] {
    let p = transition_unchecked(lambda, mu, dt);
    [
        initial[0] * p.p[0][0] + initial[1] * p.p[1][0],
        initial[0] * p.p[0][1] + initial[1] * p.p[1][1],
    ]
}

/// Exact path simulation read at increasing `times`, starting in `state` at `start`.
pub fn simulate_path<R: Rng + ?Sized>(
    lambda: f64,
    mu: f64,
    mut state: usize,
    start: f64,
    times: &[f64],
    rng: &mut R,
) -> Vec<usize> {
    let mut now = start;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        // memorylessness lets the holding clock restart at each read time
        loop {
            let rate = if state == 0 { lambda } else { mu };
            if rate == 0.0 {
                break;
            }
            let hold: f64 = Exp::new(rate).expect("positive rate").sample(rng);
            if now + hold > target {
                break;
            }
            now += hold;
            state = 1 - state;
        }
        now = target;
        out.push(state);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn zero_time_is_identity() {
        let m = ctmc_transition_matrix(1.3, 0.4, 0.0).unwrap();
        assert_eq!(m.p, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(!m.degenerate);
    }

    #[test]
    fn stationary_limit() {
        let m = ctmc_transition_matrix(1.0, 1.0, 50.0).unwrap();
        for row in m.p {
            assert!((row[0] - 0.5).abs() < 1e-12);
            assert!((row[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_entry() {
        let m = ctmc_transition_matrix(1.0, 2.0, std::f64::consts::LN_2 / 3.0).unwrap();
        assert!((m.get(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert!((m.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_chain_flagged() {
        let m = ctmc_transition_matrix(0.0, 0.0, 2.0).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.p, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(ctmc_transition_matrix(-1.0, 0.0, 1.0).is_err());
        assert!(ctmc_transition_matrix(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (l, m, dt) = (0.7, 1.9, 0.8);
        let g = transition_gradient(l, m, dt);
        let h = 1e-6;
        for (param, grad) in g.iter().enumerate() {
            let (lp, mp) = if param == 0 { (l + h, m) } else { (l, m + h) };
            let (lm, mm) = if param == 0 { (l - h, m) } else { (l, m - h) };
            let up = transition_unchecked(lp, mp, dt);
            let dn = transition_unchecked(lm, mm, dt);
            for i in 0..2 {
                for j in 0..2 {
                    let fd = (up.p[i][j] - dn.p[i][j]) / (2.0 * h);
                    assert!((fd - grad[i][j]).abs() < 1e-8, "{param} {i}{j}");
                }
            }
        }
    }

    #[test]
    fn absorbing_state_never_leaves() {
        let mut rng = rng_from_seed(3);
        let path = simulate_path(0.0, 5.0, 0, 0.0, &[0.5, 1.0, 7.0], &mut rng);
        assert_eq!(path, vec![0, 0, 0]);
    }

    #[test]
    fn simulated_paths_follow_transition_matrix() {
        let (l, m, dt) = (1.0, 2.0, 0.4);
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        let moved = (0..n)
            .filter(|_| simulate_path(l, m, 0, 0.0, &[dt], &mut rng)[0] == 1)
            .count();
        let p = transition_unchecked(l, m, dt).p[0][1];
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((moved as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_chapman_kolmogorov(
            l in 0.0f64..5.0, m in 0.0f64..5.0, a in 0.0f64..3.0, b in 0.0f64..3.0
        ) {
            let pa = transition_unchecked(l, m, a);
            let pb = transition_unchecked(l, m, b);
            let pab = transition_unchecked(l, m, a + b);
            for row in pab.p {
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
            let prod = pa.mul(&pb);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((prod.p[i][j] - pab.p[i][j]).abs() < 1e-10);
                }
            }
        }
    }
}
