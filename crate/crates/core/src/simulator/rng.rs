//! Counter-based random streams. Every array in an experiment comes from its
//! own ChaCha stream, addressed by replicate, role and slot, so results do not
//! depend on scheduling.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub(crate) enum Role {
    Beta = 0,
    TestPoints = 1,
    W1 = 2,
    W2 = 3,
    X = 4,
    Eps = 5,
    ThetaF = 6,
    ThetaTest = 7,
}

/// Replicate `None` addresses draws shared by the whole experiment.
pub(crate) fn stream(seed: u64, replicate: Option<u32>, role: Role, slot: u16) -> ChaCha8Rng {
    let rep = replicate.map_or(0, |r| u64::from(r) + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((rep << 24) | (u64::from(role as u8) << 16) | u64::from(slot));
    rng
}

/// Slot of member `member` on the base (`copy = false`) or copy side.
pub(crate) fn slot(member: usize, copy: bool) -> u16 {
    (member * 2 + usize::from(copy)) as u16
}

pub(crate) fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Filled column by column.
pub(crate) fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
    let v = normal_vec(rng, rows * cols, 1.0);
    Mat::from_fn(rows, cols, |i, j| v[i + j * rows])
}
