//! Availability of replicated and erasure-coded files when every host is
//! independently up with probability `mu`.
//!
//! Failure probabilities are summed on the lower binomial tail directly, so
//! values around 1e-12 keep full relative precision even when `mu` is close
//! to one.

use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::{is_decodable, BlockSet, TannerGraph};

/// Largest `n + m` for the exact per-graph availability.
pub const EXACT_BLOCK_LIMIT: usize = 20;

/// Binomial coefficients are exact integers up to this many trials.
const EXACT_BINOMIAL_LIMIT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AvailabilityError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{blocks} blocks exceed the exact-enumeration limit of {limit}")]
    SizeLimitExceeded { blocks: usize, limit: usize },
}

fn check_mu(mu: f64) -> Result<(), AvailabilityError> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(AvailabilityError::Domain(format!("mu = {mu} outside [0, 1]")));
    }
    Ok(())
}

/// `C(n, k) p^k q^(n - k)`, exact coefficient where it fits, log-space beyond.
fn binomial_term(n: usize, k: usize, p: f64, q: f64) -> f64 {
    if n <= EXACT_BINOMIAL_LIMIT {
        binomial_exact(n, k) as f64 * p.powi(k as i32) * q.powi((n - k) as i32)
    } else {
        if (p == 0.0 && k > 0) || (q == 0.0 && k < n) {
            return 0.0;
        }
        let ln_c = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
        let ln_p = if k == 0 { 0.0 } else { k as f64 * p.ln() };
        let ln_q = if k == n { 0.0 } else { (n - k) as f64 * q.ln() };
        (ln_c + ln_p + ln_q).exp()
    }
}

pub fn binomial_exact(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    // Each partial product is itself a binomial coefficient, so the division
    // is exact.
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// P(fewer than `need` of `total` hosts are up).
fn lower_tail(mu: f64, total: usize, need: usize) -> f64 {
    let q = 1.0 - mu;
    (0..need.min(total + 1)).map(|i| binomial_term(total, i, mu, q)).sum::<f64>().min(1.0)
}

/// P(at least `need` of `total` hosts are up).
fn upper_tail(mu: f64, total: usize, need: usize) -> f64 {
    let q = 1.0 - mu;
    (need..=total).map(|i| binomial_term(total, i, mu, q)).sum::<f64>().min(1.0)
}

fn check_copies(copies: u32) -> Result<(), AvailabilityError> {
    if copies == 0 {
        return Err(AvailabilityError::Domain("replication needs at least one copy".into()));
    }
    Ok(())
}

/// `1 - (1 - mu)^S`.
pub fn replication_availability(mu: f64, copies: u32) -> Result<f64, AvailabilityError> {
    Ok(1.0 - replication_failure(mu, copies)?)
}

pub fn replication_failure(mu: f64, copies: u32) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_copies(copies)?;
    Ok((1.0 - mu).powi(copies as i32))
}

/// Replication availability as the explicit sum over the number of live
/// copies, `sum_{i=1..S} C(S, i) mu^i (1 - mu)^(S - i)`.
pub fn replication_availability_sum(mu: f64, copies: u32) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_copies(copies)?;
    Ok(upper_tail(mu, copies as usize, 1))
}

fn check_code(n: usize) -> Result<(), AvailabilityError> {
    if n == 0 {
        return Err(AvailabilityError::Domain("n must be at least 1".into()));
    }
    Ok(())
}

/// Probability that at least `n` of the `n + m` blocks survive.
pub fn erasure_availability(mu: f64, n: usize, m: usize) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_code(n)?;
    Ok(upper_tail(mu, n + m, n))
}

pub fn erasure_failure(mu: f64, n: usize, m: usize) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_code(n)?;
    Ok(lower_tail(mu, n + m, n))
}

/// `n / (n + m)`.
pub fn code_rate(n: usize, m: usize) -> f64 {
    n as f64 / (n + m) as f64
}

/// Optimal-code parameters with the same block count as an LDPC code that
/// needs `f * n` blocks: `n' = f n` rounded up, `m' = n + m - n'`.
pub fn ldpc_equivalent_params(f: f64, n: usize, m: usize) -> Result<(usize, usize), AvailabilityError> {
    check_code(n)?;
    if !(f >= 1.0) {
        return Err(AvailabilityError::Domain(format!("overhead factor {f} < 1")));
    }
    // Absorb representation error: 1.1 * 10 is 11.000000000000002.
    let needed = (f * n as f64 - 1e-9).ceil() as usize;
    if needed > n + m {
        return Err(AvailabilityError::Domain(format!(
            "f * n = {} exceeds n + m = {}",
            f * n as f64,
            n + m
        )));
    }
    Ok((needed, n + m - needed))
}

fn check_fmax(n: usize, m: usize, f_max_blocks: usize) -> Result<(), AvailabilityError> {
    check_code(n)?;
    if f_max_blocks < n || f_max_blocks > n + m {
        return Err(AvailabilityError::Domain(format!(
            "f_max_blocks = {f_max_blocks} outside [{n}, {}]",
            n + m
        )));
    }
    Ok(())
}

/// Availability guaranteed by the worst case: the file survives whenever at
/// least `f_max_blocks` blocks do.
pub fn ldpc_availability_bound(
    mu: f64,
    n: usize,
    m: usize,
    f_max_blocks: usize,
) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_fmax(n, m, f_max_blocks)?;
    Ok(upper_tail(mu, n + m, f_max_blocks))
}

pub fn ldpc_failure_bound(mu: f64, n: usize, m: usize, f_max_blocks: usize) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    check_fmax(n, m, f_max_blocks)?;
    Ok(lower_tail(mu, n + m, f_max_blocks))
}

/// Number of decodable block subsets of each size, by enumerating all
/// `2^(n+m)` subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodableProfile {
    pub by_size: Vec<u64>,
}

impl DecodableProfile {
    pub fn of(graph: &TannerGraph) -> Result<DecodableProfile, AvailabilityError> {
        let total = graph.total_blocks();
        if total > EXACT_BLOCK_LIMIT {
            return Err(AvailabilityError::SizeLimitExceeded {
                blocks: total,
                limit: EXACT_BLOCK_LIMIT,
            });
        }
        let mut by_size = vec![0u64; total + 1];
        for mask in 0u64..(1 << total) {
            if is_decodable(graph, BlockSet::from_mask(mask)) {
                by_size[mask.count_ones() as usize] += 1;
            }
        }
        Ok(DecodableProfile { by_size })
    }

    fn total(&self) -> usize {
        self.by_size.len() - 1
    }

    pub fn availability(&self, mu: f64) -> Result<f64, AvailabilityError> {
        check_mu(mu)?;
        let total = self.total();
        let q = 1.0 - mu;
        Ok(self
            .by_size
            .iter()
            .enumerate()
            .map(|(s, &c)| c as f64 * mu.powi(s as i32) * q.powi((total - s) as i32))
            .sum())
    }

    /// Summed over the undecodable subsets, for precision near `mu = 1`.
    pub fn failure(&self, mu: f64) -> Result<f64, AvailabilityError> {
        check_mu(mu)?;
        let total = self.total();
        let q = 1.0 - mu;
        Ok(self
            .by_size
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                let bad = binomial_exact(total, s) as u64 - c;
                bad as f64 * mu.powi(s as i32) * q.powi((total - s) as i32)
            })
            .sum())
    }
}

/// Exact probability that a file coded with `graph` decodes, each block
/// being up independently with probability `mu`.
pub fn exact_graph_availability(graph: &TannerGraph, mu: f64) -> Result<f64, AvailabilityError> {
    check_mu(mu)?;
    DecodableProfile::of(graph)?.availability(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Failure rate against stretch factor: replication vs an LDPC code
    /// with a fixed overhead factor.
    Stretch,
    /// Failure rate against `n` for a set of code rates.
    Rate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    pub figure: Figure,
    pub mus: Vec<f64>,
    /// Stretch figure: data blocks of the LDPC code.
    pub n: usize,
    /// Stretch figure: assumed overhead factor.
    pub overhead: f64,
    pub max_copies: u32,
    pub max_m: usize,
    /// Rate figure: rates as (numerator, denominator).
    pub rates: Vec<(usize, usize)>,
    pub n_max: usize,
}

impl CurveConfig {
    pub fn stretch() -> CurveConfig {
        CurveConfig {
            figure: Figure::Stretch,
            mus: vec![0.5, 0.95, 0.99],
            n: 8,
            overhead: 1.1,
            max_copies: 4,
            max_m: 24,
            rates: Vec::new(),
            n_max: 0,
        }
    }

    pub fn rate() -> CurveConfig {
        CurveConfig {
            figure: Figure::Rate,
            mus: vec![0.95],
            n: 0,
            overhead: 1.0,
            max_copies: 0,
            max_m: 0,
            rates: vec![(1, 3), (1, 2), (4, 7), (2, 3)],
            n_max: 32,
        }
    }

    fn validate(&self) -> Result<(), AvailabilityError> {
        if self.mus.is_empty() {
            return Err(AvailabilityError::Domain("no mu values".into()));
        }
        for &mu in &self.mus {
            check_mu(mu)?;
        }
        match self.figure {
            Figure::Stretch => {
                check_code(self.n)?;
                if !(self.overhead >= 1.0) {
                    return Err(AvailabilityError::Domain("overhead factor below 1".into()));
                }
            }
            Figure::Rate => {
                if self.rates.iter().any(|&(a, b)| a == 0 || a > b) {
                    return Err(AvailabilityError::Domain("rates must lie in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub scheme: String,
    pub mu: f64,
    pub x: f64,
    pub failure: f64,
}

pub fn emit_failure_curves(cfg: &CurveConfig) -> Result<Vec<CurveRow>, AvailabilityError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    match cfg.figure {
        Figure::Stretch => {
            let ldpc = format!("ldpc_n={}_f={}", cfg.n, cfg.overhead);
            for &mu in &cfg.mus {
                for copies in 1..=cfg.max_copies {
                    rows.push(CurveRow {
                        scheme: "replication".into(),
                        mu,
                        x: f64::from(copies),
                        failure: replication_failure(mu, copies)?,
                    });
                }
                for m in 0..=cfg.max_m {
                    let Ok((n_eq, m_eq)) = ldpc_equivalent_params(cfg.overhead, cfg.n, m) else {
                        continue;
                    };
                    rows.push(CurveRow {
                        scheme: ldpc.clone(),
                        mu,
                        x: (cfg.n + m) as f64 / cfg.n as f64,
                        failure: erasure_failure(mu, n_eq, m_eq)?,
                    });
                }
            }
        }
        Figure::Rate => {
            for &mu in &cfg.mus {
                for &(num, den) in &cfg.rates {
                    for n in 1..=cfg.n_max {
                        // m = n (1 - R) / R must be a whole number.
                        if (n * (den - num)) % num != 0 {
                            continue;
                        }
                        let m = n * (den - num) / num;
                        rows.push(CurveRow {
                            scheme: format!("rate_{num}/{den}"),
                            mu,
                            x: n as f64,
                            failure: erasure_failure(mu, n, m)?,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn curves_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("scheme,mu,x,failure\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.16e}", r.scheme, r.mu, r.x, r.failure);
    }
    out
}
