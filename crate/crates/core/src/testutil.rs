use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{random, CMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, n: usize) -> CMatrix {
    random::ginibre(r, n, n)
}

pub fn random_hermitian(r: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let g = random::ginibre(r, n, n);
    (&g + g.adjoint()).scale(0.5)
}
