use crate::error::{Error, Result};
use crate::math::log_sum_exp;

use super::BmParams;

/// Enumeration cap for the exact oracles.
pub const MAX_EXACT_UNITS: usize = 20;

/// The full Boltzmann distribution of a small machine, enumerated over its
/// active units. State `s` sets `z[active[j]] = (s >> j) & 1`; inactive units
/// are always zero.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub active: Vec<usize>,
    pub num_nodes: usize,
    pub energies: Vec<f64>,
    pub log_z: f64,
}

impl ExactDistribution {
    pub fn num_states(&self) -> usize {
        self.energies.len()
    }

    pub fn log_prob(&self, state: usize) -> f64 {
        -self.energies[state] - self.log_z
    }

    pub fn probs(&self) -> Vec<f64> {
        self.energies.iter().map(|e| (-e - self.log_z).exp()).collect()
    }

    pub fn state_bits(&self, state: usize) -> Vec<u8> {
        let mut z = vec![0u8; self.num_nodes];
        self.write_state(state, &mut z);
        z
    }

    pub fn write_state(&self, state: usize, z: &mut [u8]) {
        z.fill(0);
        for (j, &node) in self.active.iter().enumerate() {
            z[node] = ((state >> j) & 1) as u8;
        }
    }

    pub fn state_index(&self, z: &[u8]) -> usize {
        self.active
            .iter()
            .enumerate()
            .fold(0, |s, (j, &node)| s | ((z[node] as usize & 1) << j))
    }
}

fn check_cap(params: &BmParams) -> Result<Vec<usize>> {
    let active = params.conn().active_nodes();
    if active.len() > MAX_EXACT_UNITS {
        return Err(Error::SizeCap { active: active.len(), cap: MAX_EXACT_UNITS });
    }
    Ok(active)
}

/// Enumerates all `2^n` configurations of the active units.
pub fn exact_distribution(params: &BmParams) -> Result<ExactDistribution> {
    let active = check_cap(params)?;
    let n = params.num_nodes();
    let count = 1usize << active.len();
    let mut z = vec![0u8; n];
    let mut energies = Vec::with_capacity(count);
    // Gray-code walk: one unit flips per step, energy updated by its local field.
    let mut h = 0.0;
    energies.push(h);
    let mut gray_energy = vec![0.0; count];
    for step in 1..count {
        let j = step.trailing_zeros() as usize;
        let node = active[j];
        let field = params.local_field(&z, node);
        if z[node] == 0 {
            z[node] = 1;
            h += field;
        } else {
            z[node] = 0;
            h -= field;
        }
        let gray = step ^ (step >> 1);
        gray_energy[gray] = h;
    }
    if count > 1 {
        energies = gray_energy;
    }
    let neg: Vec<f64> = energies.iter().map(|e| -e).collect();
    let log_z = log_sum_exp(&neg);
    Ok(ExactDistribution { active, num_nodes: n, energies, log_z })
}

/// `log Σ_z exp(-H(z))` by enumeration.
pub fn exact_log_z(params: &BmParams) -> Result<f64> {
    Ok(exact_distribution(params)?.log_z)
}

/// Exact `(⟨z_l⟩, ⟨z_l z_m⟩)` under the Boltzmann distribution.
pub fn exact_moments(params: &BmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let dist = exact_distribution(params)?;
    let mut mean = vec![0.0; params.num_nodes()];
    let mut corr = vec![0.0; params.num_edges()];
    let mut z = vec![0u8; params.num_nodes()];
    let edges = params.conn().edges();
    for s in 0..dist.num_states() {
        let p = (-dist.energies[s] - dist.log_z).exp();
        dist.write_state(s, &mut z);
        for &node in &dist.active {
            if z[node] != 0 {
                mean[node] += p;
            }
        }
        for (c, &(l, m)) in corr.iter_mut().zip(edges) {
            if z[l] != 0 && z[m] != 0 {
                *c += p;
            }
        }
    }
    Ok((mean, corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_bernoulli, build_chimera, build_complete, mask_nodes};
    use crate::math::softplus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn trivial_partition_functions() {
        let p = BmParams::zeros(Arc::new(build_bernoulli(1).unwrap()));
        assert!((exact_log_z(&p).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = BmParams::zeros(Arc::new(build_complete(2).unwrap()));
        assert!((exact_log_z(&p).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gray_walk_matches_direct_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = BmParams::random(Arc::new(build_chimera(1, 1, 4).unwrap()), 1.0, 1.0, &mut rng);
        let d = exact_distribution(&p).unwrap();
        for s in 0..d.num_states() {
            let z = d.state_bits(s);
            assert!((d.energies[s] - p.energy_bits(&z)).abs() < 1e-12);
            assert_eq!(d.state_index(&z), s);
        }
        let total: f64 = d.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = BmParams::random(Arc::new(build_bernoulli(12).unwrap()), 3.0, 0.0, &mut rng);
        let closed: f64 = p.b.iter().map(|&b| softplus(-b)).sum();
        assert!((exact_log_z(&p).unwrap() - closed).abs() < 1e-10);
    }

    #[test]
    fn chimera_pair_fixture() {
        // 16-unit two-cell patch, params U[-1,1] from a fixed seed.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let p = BmParams::random(Arc::new(build_chimera(1, 2, 4).unwrap()), 1.0, 1.0, &mut rng);
        let lz = exact_log_z(&p).unwrap();
        // Independent check: plain sum over states in binary order.
        let mut acc = Vec::new();
        for s in 0..(1usize << 16) {
            let z: Vec<u8> = (0..16).map(|j| ((s >> j) & 1) as u8).collect();
            acc.push(-p.energy_bits(&z));
        }
        assert!((lz - log_sum_exp(&acc)).abs() < 1e-10);
        assert!((lz - 9.566_518_665_647_102).abs() < 1e-9, "fixture drifted: {lz}");
    }

    #[test]
    fn moments_limits() {
        let conn = Arc::new(build_chimera(1, 1, 4).unwrap());
        let (m, c) = exact_moments(&BmParams::zeros(conn.clone())).unwrap();
        assert!(m.iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!(c.iter().all(|&x| (x - 0.25).abs() < 1e-12));

        let single = BmParams::new(Arc::new(build_bernoulli(1).unwrap()), vec![3f64.ln()], vec![]).unwrap();
        let (m, _) = exact_moments(&single).unwrap();
        assert!((m[0] - 0.25).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = BmParams::random(conn, 4.0, 4.0, &mut rng);
        let (m, _) = exact_moments(&p).unwrap();
        assert!(m.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn masked_units_stay_zero() {
        let conn = Arc::new(mask_nodes(&build_chimera(1, 1, 4).unwrap(), &[0, 5]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = BmParams::random(conn, 1.0, 1.0, &mut rng);
        let d = exact_distribution(&p).unwrap();
        assert_eq!(d.num_states(), 64);
        let (m, _) = exact_moments(&p).unwrap();
        assert_eq!(m[0], 0.0);
        assert_eq!(m[5], 0.0);
    }

    #[test]
    fn cap_enforced() {
        let p = BmParams::zeros(Arc::new(build_bernoulli(21).unwrap()));
        assert!(matches!(exact_log_z(&p), Err(Error::SizeCap { .. })));
    }
}
