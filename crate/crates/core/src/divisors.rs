//! Divisor counting and the generalized divisor set
//! D(l) = { q in Z^n : q_1^{-1} l_1 = ... = q_n^{-1} l_n in Z^m },
//! where l_j is the j-th column of the m x n index array l.
//! For mn = 1 this is the set of integers dividing l.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SalemError};
use crate::qsets::QSetSpec;

/// Exact divisor count via trial division.
pub fn tau(l: u64) -> Result<u64> {
    if l == 0 {
        return Err(SalemError::Domain("tau(0) is undefined".into()));
    }
    let mut count = 0u64;
    let mut d = 1u64;
    while d * d <= l {
        if l % d == 0 {
            count += if d * d == l { 1 } else { 2 };
        }
        d += 1;
    }
    Ok(count)
}

/// Ascending positive divisors of l.
pub fn divisors(l: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u64;
    while d * d <= l {
        if l % d == 0 {
            small.push(d);
            if d * d != l {
                large.push(l / d);
            }
        }
        d += 1;
    }
    large.reverse();
    small.extend(large);
    small
}

/// tau sieve for 1..=limit; index 0 is unused (0).
pub fn tau_sieve(limit: usize) -> Vec<u32> {
    let mut counts = vec![0u32; limit + 1];
    for d in 1..=limit {
        for multiple in (d..=limit).step_by(d) {
            counts[multiple] += 1;
        }
    }
    counts
}

const SIEVE_MAGIC: &[u8; 8] = b"TAUSIEVE";

/// Loads a persisted sieve (little-endian u32 counts) or builds and stores one.
pub fn load_or_build_tau_sieve(limit: usize, cache_dir: Option<&Path>) -> Result<Vec<u32>> {
    let cache_path = cache_dir.map(|d| d.join(format!("tau_{limit}.bin")));
    if let Some(path) = &cache_path {
        if let Ok(mut f) = std::fs::File::open(path) {
            let mut magic = [0u8; 8];
            if f.read_exact(&mut magic).is_ok() && &magic == SIEVE_MAGIC {
                let mut bytes = Vec::new();
                f.read_to_end(&mut bytes)?;
                if bytes.len() == (limit + 1) * 4 {
                    let counts = bytes
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    return Ok(counts);
                }
            }
        }
    }
    let counts = tau_sieve(limit);
    if let Some(path) = &cache_path {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(SIEVE_MAGIC)?;
        for &c in &counts {
            f.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(counts)
}

/// ln tau(L) * ln ln L / ln L. The limsup of this ratio is ln 2.
pub fn wigert_ratio(l: u64) -> Result<f64> {
    if l < 16 {
        return Err(SalemError::Domain(format!(
            "wigert_ratio undefined/unstable below 16 (got {l})"
        )));
    }
    let t = tau(l)? as f64;
    let ll = (l as f64).ln();
    Ok(t.ln() * ll.ln() / ll)
}

/// Same ratio from a precomputed tau value (sieve-driven sweeps).
pub fn wigert_ratio_with_tau(l: u64, tau_l: u64) -> f64 {
    let ll = (l as f64).ln();
    (tau_l as f64).ln() * ll.ln() / ll
}

/// An mn-index array l, row-major: (l_11, ..., l_1n, ..., l_m1, ..., l_mn).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivisorQuery {
    pub m: usize,
    pub n: usize,
    pub ell: Vec<i64>,
}

impl DivisorQuery {
    pub fn new(m: usize, n: usize, ell: Vec<i64>) -> Result<Self> {
        if m == 0 || n == 0 || ell.len() != m * n {
            return Err(SalemError::Input(format!(
                "divisor query needs m*n = {} entries, got {}",
                m * n,
                ell.len()
            )));
        }
        Ok(DivisorQuery { m, n, ell })
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> i64 {
        self.ell[i * self.n + j]
    }

    /// Column l_j = (l_1j, ..., l_mj).
    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.m).map(|i| self.entry(i, j)).collect()
    }

    /// |l| = max_ij |l_ij|.
    pub fn max_abs(&self) -> i64 {
        self.ell.iter().map(|v| v.abs()).max().unwrap()
    }

    /// Lexicographically first (i0, j0) attaining |l|.
    pub fn pivot(&self) -> (usize, usize) {
        let target = self.max_abs();
        for i in 0..self.m {
            for j in 0..self.n {
                if self.entry(i, j).abs() == target {
                    return (i, j);
                }
            }
        }
        unreachable!()
    }
}

/// Membership test for q in D(l); returns the witness k with l_ij = k_i q_j.
pub fn divisor_set_contains(q: &[i64], query: &DivisorQuery) -> Result<Option<Vec<i64>>> {
    if q.len() != query.n {
        return Err(SalemError::Input(format!(
            "q has {} coordinates, expected n = {}",
            q.len(),
            query.n
        )));
    }
    if q.iter().any(|&c| c == 0) {
        return Err(SalemError::Domain("q has a zero coordinate".into()));
    }
    let mut witness = Vec::with_capacity(query.m);
    for i in 0..query.m {
        let l0 = query.entry(i, 0);
        if l0 % q[0] != 0 {
            return Ok(None);
        }
        let k = l0 / q[0];
        for j in 1..query.n {
            if k.checked_mul(q[j]) != Some(query.entry(i, j)) {
                return Ok(None);
            }
        }
        witness.push(k);
    }
    Ok(Some(witness))
}

/// Enumerates Q(M) ∩ D(l) by walking the divisors of the pivot entry |l|,
/// reconstructing the other coordinates from column ratios, and filtering by
/// window membership. D(0) = Z^n, so l = 0 yields the whole window.
pub fn divisor_window(query: &DivisorQuery, spec: &QSetSpec, m_val: f64) -> Result<Vec<Vec<i64>>> {
    if spec.n != query.n {
        return Err(SalemError::Input("Q dimension disagrees with query n".into()));
    }
    if query.ell.iter().all(|&v| v == 0) {
        return spec.window(m_val);
    }
    let (i0, j0) = query.pivot();
    let pivot_val = query.entry(i0, j0);
    let mut out = Vec::new();
    for d in divisors(pivot_val.unsigned_abs()) {
        for sign in [1i64, -1] {
            let qj0 = sign * d as i64;
            // remaining coordinates forced by q_j = l_{i0 j} q_{j0} / l_{i0 j0}
            let mut q = vec![0i64; query.n];
            let mut ok = true;
            for j in 0..query.n {
                if j == j0 {
                    q[j] = qj0;
                    continue;
                }
                let num = query.entry(i0, j) as i128 * qj0 as i128;
                if num % pivot_val as i128 != 0 {
                    ok = false;
                    break;
                }
                let qj = num / pivot_val as i128;
                if qj == 0 || qj.unsigned_abs() > i64::MAX as u128 {
                    ok = false;
                    break;
                }
                q[j] = qj as i64;
            }
            if !ok {
                continue;
            }
            if divisor_set_contains(&q, query)?.is_some() && spec.window_contains(&q, m_val) {
                out.push(q);
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// All of D(l) within the box |q_j| <= radius (brute force; test oracle and
/// cardinality sweeps).
pub fn divisor_box(query: &DivisorQuery, radius: i64) -> Result<Vec<Vec<i64>>> {
    let mut out = Vec::new();
    let mut q = vec![-radius; query.n];
    loop {
        if q.iter().all(|&c| c != 0) && divisor_set_contains(&q, query)?.is_some() {
            out.push(q.clone());
        }
        // odometer
        let mut pos = query.n;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            q[pos] += 1;
            if q[pos] <= radius {
                break;
            }
            q[pos] = -radius;
        }
    }
}
