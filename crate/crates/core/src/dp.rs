//! Dynamic-programming kernels over the `2^N` joint state space.
//!
//! States are bitmasks (bit `i` set iff patient `i` is in state 1). Because
//! patients transition independently given the action, one step of the
//! joint chain factors into `N` pairwise updates, so both directions cost
//! `O(N 2^N)` instead of `O(4^N)`.

use crate::model::PatientParams;

/// Replaces `values[s]` with `E[values[S'] | S = s, action]`.
pub fn backward_step(params: &[PatientParams], action_mask: usize, values: &mut [f64]) {
    debug_assert_eq!(values.len(), 1 << params.len());
    for (i, pp) in params.iter().enumerate() {
        let bit = 1 << i;
        let up = if action_mask & bit != 0 { pp.p + pp.tau } else { pp.p };
        let down = pp.q;
        for s0 in (0..values.len()).filter(|s| s & bit == 0) {
            let s1 = s0 | bit;
            let (a, b) = (values[s0], values[s1]);
            values[s0] = (1.0 - up) * a + up * b;
            values[s1] = down * a + (1.0 - down) * b;
        }
    }
}

/// Pushes a mass vector one step forward under a fixed action.
pub fn forward_step(params: &[PatientParams], action_mask: usize, mass: &mut [f64]) {
    debug_assert_eq!(mass.len(), 1 << params.len());
    for (i, pp) in params.iter().enumerate() {
        let bit = 1 << i;
        let up = if action_mask & bit != 0 { pp.p + pp.tau } else { pp.p };
        let down = pp.q;
        for s0 in (0..mass.len()).filter(|s| s & bit == 0) {
            let s1 = s0 | bit;
            let (a, b) = (mass[s0], mass[s1]);
            mass[s0] = (1.0 - up) * a + down * b;
            mass[s1] = up * a + (1.0 - down) * b;
        }
    }
}

/// Number of patients in state 1.
pub fn reward_of(mask: usize) -> f64 {
    mask.count_ones() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive `4^N` transition matrix.
    fn kernel(params: &[PatientParams], action: usize) -> Vec<Vec<f64>> {
        let n = params.len();
        let size = 1 << n;
        let mut k = vec![vec![0.0; size]; size];
        for s in 0..size {
            for s2 in 0..size {
                k[s][s2] = (0..n)
                    .map(|i| {
                        let pp = &params[i];
                        let up = pp.p + if action >> i & 1 == 1 { pp.tau } else { 0.0 };
                        match (s >> i & 1, s2 >> i & 1) {
                            (0, 1) => up,
                            (0, _) => 1.0 - up,
                            (_, 0) => pp.q,
                            _ => 1.0 - pp.q,
                        }
                    })
                    .product();
            }
        }
        k
    }

    #[test]
    fn factored_steps_match_full_kernel() {
        let params = [
            PatientParams::new(0.1, 0.3, 0.4),
            PatientParams::new(0.25, 0.05, 0.2),
            PatientParams::new(0.0, 0.9, 1.0),
        ];
        for action in 0..8 {
            let k = kernel(&params, action);
            let f: Vec<f64> = (0..8).map(|s| (s * s) as f64 * 0.1 + 1.0).collect();
            let mut back = f.clone();
            backward_step(&params, action, &mut back);
            let m: Vec<f64> = (0..8).map(|s| (s + 1) as f64 / 36.0).collect();
            let mut fwd = m.clone();
            forward_step(&params, action, &mut fwd);
            for s in 0..8 {
                let want_b: f64 = (0..8).map(|s2| k[s][s2] * f[s2]).sum();
                let want_f: f64 = (0..8).map(|s0| m[s0] * k[s0][s]).sum();
                assert!((back[s] - want_b).abs() < 1e-14);
                assert!((fwd[s] - want_f).abs() < 1e-14);
            }
        }
    }
}
