//! Seeded random sampling: Haar unitaries, states, Kraus sets, and seed derivation.
//!
//! Every random object in the crate comes from a [`ChaCha8Rng`]; seeds are
//! derived from one root seed by hashing a purpose string, and per-setting
//! streams are selected with the ChaCha stream counter so that results do not
//! depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::{CMatrix, CVector, C64};

/// Derive a child seed from `root` and a purpose label.
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(root: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose))
}

/// Independent stream for one experimental setting.
pub fn setting_rng(seed: u64, setting_id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(setting_id);
    r
}

fn normal_c64<R: Rng + ?Sized>(r: &mut R) -> C64 {
    let re: f64 = r.sample(StandardNormal);
    let im: f64 = r.sample(StandardNormal);
    C64::new(re, im)
}

/// Matrix of i.i.d. standard complex Gaussians.
pub fn ginibre<R: Rng + ?Sized>(r: &mut R, rows: usize, cols: usize) -> CMatrix {
    // fill row-major so the stream order is independent of storage layout
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = normal_c64(r);
        }
    }
    m
}

/// Haar-random unitary (QR of a Ginibre matrix with the phase fix).
pub fn haar_unitary<R: Rng + ?Sized>(r: &mut R, d: usize) -> CMatrix {
    let qr = ginibre(r, d, d).qr();
    let (mut q, rr) = qr.unpack();
    for c in 0..d {
        let diag = rr[(c, c)];
        let phase = if diag.norm() > 0.0 {
            diag / diag.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for row in 0..d {
            q[(row, c)] *= phase;
        }
    }
    q
}

/// Haar-random pure state.
pub fn haar_state<R: Rng + ?Sized>(r: &mut R, d: usize) -> CVector {
    let v = CVector::from_fn(d, |_, _| normal_c64(r));
    let n = v.norm();
    v / C64::new(n, 0.0)
}

/// Random density matrix `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(r: &mut R, d: usize) -> CMatrix {
    let g = ginibre(r, d, d);
    let rho = &g * g.adjoint();
    let t = rho.trace();
    rho / t
}

/// Kraus operators of a random channel: `rank` blocks of a Haar isometry
/// `C^d -> C^d ⊗ C^rank` taken from the first `d` columns of a Haar unitary.
pub fn random_kraus<R: Rng + ?Sized>(r: &mut R, d: usize, rank: usize) -> Vec<CMatrix> {
    let u = haar_unitary(r, d * rank);
    // rows indexed by (out, k) with k fastest
    (0..rank)
        .map(|k| CMatrix::from_fn(d, d, |out, inp| u[(out * rank + k, inp)]))
        .collect()
}

/// Unitary with the given first column (normalized `v`).
pub fn unitary_with_first_column(v: &CVector) -> CMatrix {
    let d = v.len();
    let mut cols: Vec<CVector> = vec![v.clone() / C64::new(v.norm(), 0.0)];
    for k in 0..d {
        if cols.len() == d {
            break;
        }
        let mut e = CVector::zeros(d);
        e[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dotc(&e);
                e -= c * proj;
            }
        }
        let n = e.norm();
        if n > 1e-8 {
            cols.push(e / C64::new(n, 0.0));
        }
    }
    CMatrix::from_columns(&cols)
}
