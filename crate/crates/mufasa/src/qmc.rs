//! Low-discrepancy designs: Sobol sequences (optionally digitally shifted)
//! and maximin Latin hypercubes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const BITS: u32 = 32;

/// Primitive polynomials and initial direction numbers (Joe–Kuo), one row
/// per dimension. The polynomial is encoded with its leading and trailing
/// bits set; dimension 0 is the van der Corput sequence.
const DIRECTIONS: &[(u32, &[u32])] = &[
    (1, &[1]),
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

/// Largest supported dimension.
pub const MAX_DIM: usize = DIRECTIONS.len();

/// Sobol sequence generator in Gray-code order, with an optional per-dimension
/// random digital shift (XOR scramble).
#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
    directions: Vec<[u32; BITS as usize]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidInput(format!("Sobol dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        let directions = DIRECTIONS[..dim].iter().map(|&(poly, m)| direction_numbers(poly, m)).collect();
        Ok(Self { dim, directions, state: vec![0; dim], shift: vec![0; dim], index: 0 })
    }

    /// Sobol sequence with a digital shift drawn from `seed`.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        let mut s = Self::new(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.shift = (0..dim).map(|_| rng.random::<u32>()).collect();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Next point in `[0, 1)^dim`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let out = self.state.iter().zip(&self.shift).map(|(&s, &h)| (s ^ h) as f64 * scale).collect();
        // advance using the lowest zero bit of the current index
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS as usize {
            for (s, v) in self.state.iter_mut().zip(&self.directions) {
                *s ^= v[c];
            }
        }
        self.index += 1;
        out
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

fn direction_numbers(poly: u32, init: &[u32]) -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    let degree = (31 - poly.leading_zeros()) as usize;
    if degree == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS as usize - 1 - k);
        }
        return v;
    }
    let mut m = vec![0u32; BITS as usize];
    m[..degree].copy_from_slice(&init[..degree]);
    for k in degree..BITS as usize {
        let mut mk = m[k - degree] ^ (m[k - degree] << degree);
        for j in 1..degree {
            if (poly >> (degree - j)) & 1 == 1 {
                mk ^= m[k - j] << j;
            }
        }
        m[k] = mk;
    }
    for k in 0..BITS as usize {
        v[k] = m[k] << (BITS as usize - 1 - k);
    }
    v
}

/// Map a unit-cube point to the box `bounds`.
pub fn scale_to_bounds(u: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(&t, &(lo, hi))| lo + t * (hi - lo)).collect()
}

/// Latin hypercube with the best maximin distance among `candidates` random
/// permutations.
pub fn maximin_lhs(n: usize, dim: usize, candidates: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..candidates.max(1) {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cols.push(perm.iter().map(|&k| (k as f64 + rng.random::<f64>()) / n as f64).collect());
        }
        let pts: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            for j in 0..i {
                let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                dmin = dmin.min(d);
            }
        }
        if best.as_ref().is_none_or(|(b, _)| dmin > *b) {
            best = Some((dmin, pts));
        }
    }
    best.map(|(_, p)| p).unwrap_or_default()
}
