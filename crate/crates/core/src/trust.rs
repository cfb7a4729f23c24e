//! Trust propagation over the vouch graph.
//!
//! Every voucher implicitly vouches for a sink with the intensity of
//! `sink_vouch` regular vouchees, so a vouch `(u, v)` weighs
//! `1 / (sink_vouch + outdeg(u))` and every row of the vouch matrix sums to
//! less than one. Trust is then the fixed point of
//! `t = min(p + β·Vᵀ·t, 1)`, reached by plain iteration; the iteration is a
//! β-contraction in ℓ₁, so `T(ε) = ⌈ln(U/ε) / ln(1/β)⌉` steps leave an error
//! of at most ε.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::UserId;
use crate::error::{Error, Result};

/// Binary vouches plus the sink intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct VouchSet {
    users: Vec<UserId>,
    vouches: BTreeSet<(UserId, UserId)>,
    sink_vouch: f64,
}

impl VouchSet {
    /// Duplicate vouches collapse; self-vouches and unknown ids are rejected.
    pub fn new(
        users: impl IntoIterator<Item = UserId>,
        vouches: impl IntoIterator<Item = (UserId, UserId)>,
        sink_vouch: f64,
    ) -> Result<Self> {
        if !(sink_vouch > 0.0 && sink_vouch.is_finite()) {
            return Err(Error::config(format!("sink_vouch must be positive, got {sink_vouch}")));
        }
        let users: BTreeSet<UserId> = users.into_iter().collect();
        let mut set = BTreeSet::new();
        for (voucher, vouchee) in vouches {
            if voucher == vouchee {
                return Err(Error::data(format!("user {voucher} vouches for themselves")));
            }
            for id in [voucher, vouchee] {
                if !users.contains(&id) {
                    return Err(Error::data(format!("vouch references unknown user {id}")));
                }
            }
            set.insert((voucher, vouchee));
        }
        Ok(VouchSet {
            users: users.into_iter().collect(),
            vouches: set,
            sink_vouch,
        })
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn vouches(&self) -> &BTreeSet<(UserId, UserId)> {
        &self.vouches
    }

    pub fn sink_vouch(&self) -> f64 {
        self.sink_vouch
    }

    /// The same set with every vouch given by `user` removed.
    pub fn without_vouches_of(&self, user: UserId) -> VouchSet {
        VouchSet {
            users: self.users.clone(),
            vouches: self.vouches.iter().copied().filter(|&(u, _)| u != user).collect(),
            sink_vouch: self.sink_vouch,
        }
    }
}

/// Row-substochastic weighted vouches, indexed by position in `users`.
#[derive(Debug, Clone, PartialEq)]
pub struct VouchMatrix {
    users: Vec<UserId>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl VouchMatrix {
    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Outgoing `(vouchee index, weight)` pairs of the user at `index`.
    pub fn row(&self, index: usize) -> &[(usize, f64)] {
        &self.rows[index]
    }

    pub fn weight(&self, voucher: UserId, vouchee: UserId) -> f64 {
        let (Some(i), Some(j)) = (self.index_of(voucher), self.index_of(vouchee)) else {
            return 0.0;
        };
        self.rows[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn index_of(&self, user: UserId) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    /// `Vᵀ·t`
    fn transpose_mul(&self, trust: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let t = trust[i];
            if t == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[j] += w * t;
            }
        }
    }
}

pub fn build_vouch_matrix(vouch_set: &VouchSet) -> VouchMatrix {
    let users = vouch_set.users.clone();
    let index: BTreeMap<UserId, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); users.len()];
    for &(voucher, vouchee) in &vouch_set.vouches {
        rows[index[&voucher]].push((index[&vouchee], 0.0));
    }
    for row in &mut rows {
        let weight = 1.0 / (vouch_set.sink_vouch + row.len() as f64);
        row.iter_mut().for_each(|entry| entry.1 = weight);
    }
    VouchMatrix { users, rows }
}

/// Converged trust scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub users: Vec<UserId>,
    pub pretrust: Vec<f64>,
    pub decay: f64,
    pub trust: Vec<f64>,
    pub epsilon: f64,
    pub iterations_run: usize,
}

impl TrustState {
    pub fn get(&self, user: UserId) -> f64 {
        self.users
            .binary_search(&user)
            .map_or(0.0, |i| self.trust[i])
    }

    pub fn as_map(&self) -> BTreeMap<UserId, f64> {
        self.users.iter().copied().zip(self.trust.iter().copied()).collect()
    }
}

/// Iteration count guaranteeing an ℓ₁ error of at most `epsilon`.
pub fn iterations_for(n_users: usize, decay: f64, epsilon: f64) -> usize {
    if n_users == 0 {
        return 0;
    }
    let t = ((n_users as f64 / epsilon).ln() / (1.0 / decay).ln()).ceil();
    t.max(0.0) as usize
}

/// Runs exactly `iterations` steps of `t ← min(p + β·Vᵀ·t, 1)` from `t = p`.
pub fn lipschitrust_iterate(
    pretrust: &[f64],
    matrix: &VouchMatrix,
    decay: f64,
    iterations: usize,
) -> Vec<f64> {
    assert_eq!(pretrust.len(), matrix.len(), "one pretrust entry per user");
    let mut trust = pretrust.to_vec();
    let mut propagated = vec![0.0; trust.len()];
    for _ in 0..iterations {
        matrix.transpose_mul(&trust, &mut propagated);
        for ((t, &p), &v) in trust.iter_mut().zip(pretrust).zip(&propagated) {
            *t = (p + decay * v).min(1.0);
        }
    }
    trust
}

pub fn lipschitrust(
    pretrust: &[f64],
    matrix: &VouchMatrix,
    decay: f64,
    epsilon: f64,
) -> Result<TrustState> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::config(format!("decay must lie in (0, 1), got {decay}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("error must be positive, got {epsilon}")));
    }
    if let Some(p) = pretrust.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::data(format!("pretrust {p} outside [0, 1]")));
    }
    let iterations = iterations_for(matrix.len(), decay, epsilon);
    let trust = lipschitrust_iterate(pretrust, matrix, decay, iterations);
    Ok(TrustState {
        users: matrix.users.clone(),
        pretrust: pretrust.to_vec(),
        decay,
        trust,
        epsilon,
        iterations_run: iterations,
    })
}

/// Pretrust vector aligned with `matrix.users()`.
pub fn pretrust_vector(matrix: &VouchMatrix, pretrusted: &BTreeSet<UserId>, value: f64) -> Vec<f64> {
    matrix
        .users()
        .iter()
        .map(|u| if pretrusted.contains(u) { value } else { 0.0 })
        .collect()
}
