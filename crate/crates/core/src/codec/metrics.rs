use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{low_mask, BlockSet, TannerGraph};
use super::peel::{is_decodable, peel_closure};
use super::CodecError;

/// Largest `n + m` for which `compute_fmax` enumerates subsets.
pub const FMAX_BLOCK_LIMIT: usize = 30;

/// Certified quality of a graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeMetrics {
    /// Any `f_max_blocks` of the `n + m` blocks decode.
    pub f_max_blocks: usize,
    pub f_avg: f64,
    pub f_avg_err: f64,
    pub samples: usize,
}

impl CodeMetrics {
    pub fn f_max(&self, n: usize) -> f64 {
        self.f_max_blocks as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmaxReport {
    pub f_max_blocks: usize,
    /// A set of `n + m - f_max_blocks + 1` missing blocks that does not
    /// decode, proving `f_max_blocks - 1` blocks are not always enough.
    pub witness: BlockSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvgOverhead {
    pub f_avg: f64,
    pub f_avg_err: f64,
    pub samples: usize,
}

/// Iterates all `k`-bit subsets of the low `bits` bits in increasing order.
fn for_each_subset(bits: usize, k: usize, mut f: impl FnMut(u64) -> bool) -> bool {
    if k > bits {
        return true;
    }
    if k == 0 {
        return f(0);
    }
    let limit = low_mask(bits);
    let mut x = low_mask(k);
    loop {
        if !f(x) {
            return false;
        }
        // Gosper's hack: next integer with the same popcount.
        let c = x & x.wrapping_neg();
        let r = x + c;
        if r > limit || r == 0 {
            return true;
        }
        x = (((r ^ x) >> 2) / c) | r;
        if x > limit {
            return true;
        }
    }
}

/// Smallest number of missing blocks in `1..=max_missing` for which some
/// missing set fails to decode, with that set.
fn first_failing_level(graph: &TannerGraph, max_missing: usize) -> Option<(usize, BlockSet)> {
    let total = graph.total_blocks();
    let full = low_mask(total);
    let data = low_mask(graph.n());
    for missing in 1..=max_missing.min(total) {
        let mut witness = None;
        for_each_subset(total, missing, |lost| {
            if lost & data == 0 {
                return true;
            }
            if peel_closure(graph, full & !lost) != data {
                witness = Some(BlockSet::from_mask(lost));
                return false;
            }
            true
        });
        if let Some(w) = witness {
            return Some((missing, w));
        }
    }
    None
}

/// Worst-case block count: the smallest `k` such that every `k`-subset of
/// the blocks decodes.
///
/// Missing-block counts are tried upward from one; the first count with a
/// failing pattern `j` gives `k = n + m - j + 1`.
pub fn compute_fmax(graph: &TannerGraph) -> Result<FmaxReport, CodecError> {
    let total = graph.total_blocks();
    if total > FMAX_BLOCK_LIMIT {
        return Err(CodecError::SizeLimitExceeded {
            blocks: total,
            limit: FMAX_BLOCK_LIMIT,
        });
    }
    // Losing m + 1 blocks always leaves fewer than n, so this terminates.
    let (missing, witness) =
        first_failing_level(graph, total).expect("losing m + 1 blocks always fails");
    Ok(FmaxReport {
        f_max_blocks: total - missing + 1,
        witness,
    })
}

/// Monte Carlo estimate of the average overhead factor: the mean number of
/// blocks drawn in uniformly random order until the data decodes, over `n`.
pub fn estimate_avg_overhead(
    graph: &TannerGraph,
    samples: usize,
    seed: u64,
) -> Result<AvgOverhead, CodecError> {
    if samples == 0 {
        return Err(CodecError::InvalidParameter("samples must be at least 1".into()));
    }
    let n = graph.n();
    let total = graph.total_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    let mut consumed_total = 0u64;
    for _ in 0..samples {
        order.shuffle(&mut rng);
        let mut have = BlockSet::empty();
        let mut consumed = 0;
        for &b in &order {
            have.insert(b);
            consumed += 1;
            if consumed >= n && is_decodable(graph, have) {
                break;
            }
        }
        consumed_total += consumed as u64;
    }
    let f_avg = consumed_total as f64 / samples as f64 / n as f64;
    Ok(AvgOverhead {
        f_avg,
        f_avg_err: f_avg / (samples as f64).sqrt(),
        samples,
    })
}

fn check_probability(p: f64) -> Result<(), CodecError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(CodecError::InvalidParameter(format!(
            "edge probability {p} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Random graph with each (coding, data) edge present with probability `p`.
/// A coding row that comes out empty is redrawn.
pub fn generate_graph(n: usize, m: usize, p: f64, seed: u64) -> Result<TannerGraph, CodecError> {
    check_probability(p)?;
    if n == 0 {
        return Err(CodecError::InvalidGraph("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_graph(n, m, p, &mut rng)?)
}

fn random_graph(n: usize, m: usize, p: f64, rng: &mut impl Rng) -> Result<TannerGraph, CodecError> {
    let edges = (0..m)
        .map(|_| loop {
            let row: Vec<usize> = (0..n).filter(|_| rng.gen::<f64>() < p).collect();
            if !row.is_empty() {
                break row;
            }
        })
        .collect();
    TannerGraph::new(n, edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub n: usize,
    pub m: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub budget: usize,
    pub seed: u64,
    /// Samples used to break `f_max` ties.
    pub tie_samples: usize,
    /// Samples for the reported `f_avg`.
    pub final_samples: usize,
}

impl SearchConfig {
    pub fn new(n: usize, m: usize, budget: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            n,
            m,
            p_min: 0.4,
            p_max: 0.6,
            budget,
            seed,
            tie_samples: 1000,
            final_samples: 10_000,
        }
    }
}

fn overhead_seed(seed: u64, graph: &TannerGraph) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ graph.fingerprint()
}

/// Keeps the best of `budget` random graphs: lowest `f_max_blocks`, then
/// lowest estimated `f_avg`, then lowest fingerprint.
pub fn search_best_graph(cfg: &SearchConfig) -> Result<(TannerGraph, CodeMetrics), CodecError> {
    if cfg.budget == 0 {
        return Err(CodecError::InvalidParameter("budget must be at least 1".into()));
    }
    check_probability(cfg.p_min)?;
    check_probability(cfg.p_max)?;
    if cfg.p_min > cfg.p_max {
        return Err(CodecError::InvalidParameter("p_min > p_max".into()));
    }
    let total = cfg.n + cfg.m;
    if total > FMAX_BLOCK_LIMIT {
        return Err(CodecError::SizeLimitExceeded {
            blocks: total,
            limit: FMAX_BLOCK_LIMIT,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(TannerGraph, usize, f64, u64)> = None;

    for _ in 0..cfg.budget {
        let p = if cfg.p_min == cfg.p_max {
            cfg.p_min
        } else {
            rng.gen_range(cfg.p_min..cfg.p_max)
        };
        let graph_seed = rng.gen::<u64>();
        let graph = generate_graph(cfg.n, cfg.m, p, graph_seed)?;

        let blocks = match &best {
            None => compute_fmax(&graph)?.f_max_blocks,
            Some((_, best_blocks, _, _)) => {
                // Only candidates at least as good as the incumbent matter:
                // those survive every loss of up to `total - best_blocks`.
                let tolerated = total - best_blocks;
                if first_failing_level(&graph, tolerated).is_some() {
                    continue;
                }
                compute_fmax(&graph)?.f_max_blocks
            }
        };

        let f_avg = estimate_avg_overhead(&graph, cfg.tie_samples, overhead_seed(cfg.seed, &graph))?.f_avg;
        let fp = graph.fingerprint();
        let better = match &best {
            None => true,
            Some((_, b_blocks, b_avg, b_fp)) => (blocks, f_avg, fp) < (*b_blocks, *b_avg, *b_fp),
        };
        if better {
            best = Some((graph, blocks, f_avg, fp));
        }
    }

    let (graph, blocks, _, _) = best.expect("budget >= 1");
    let avg = estimate_avg_overhead(&graph, cfg.final_samples, overhead_seed(cfg.seed, &graph))?;
    Ok((
        graph,
        CodeMetrics {
            f_max_blocks: blocks,
            f_avg: avg.f_avg,
            f_avg_err: avg.f_avg_err,
            samples: avg.samples,
        },
    ))
}

/// Full metrics for a fixed graph.
pub fn evaluate_graph(graph: &TannerGraph, samples: usize, seed: u64) -> Result<CodeMetrics, CodecError> {
    let fmax = compute_fmax(graph)?;
    let avg = estimate_avg_overhead(graph, samples, seed)?;
    Ok(CodeMetrics {
        f_max_blocks: fmax.f_max_blocks,
        f_avg: avg.f_avg,
        f_avg_err: avg.f_avg_err,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_enumeration_counts() {
        let mut count = 0;
        for_each_subset(14, 3, |_| {
            count += 1;
            true
        });
        assert_eq!(count, 364);
        let mut zero = 0;
        for_each_subset(5, 0, |_| {
            zero += 1;
            true
        });
        assert_eq!(zero, 1);
        let mut all = Vec::new();
        for_each_subset(3, 3, |x| {
            all.push(x);
            true
        });
        assert_eq!(all, vec![0b111]);
    }

    #[test]
    fn fmax_trivial_graphs() {
        assert_eq!(compute_fmax(&TannerGraph::uncoded(1).unwrap()).unwrap().f_max_blocks, 1);
        let g = TannerGraph::new(1, vec![vec![0]]).unwrap();
        assert_eq!(compute_fmax(&g).unwrap().f_max_blocks, 1);
        let g = TannerGraph::new(2, vec![vec![0, 1]]).unwrap();
        assert_eq!(compute_fmax(&g).unwrap().f_max_blocks, 2);
    }

    #[test]
    fn fmax_two_by_two() {
        let weak = TannerGraph::new(2, vec![vec![0], vec![1]]).unwrap();
        let report = compute_fmax(&weak).unwrap();
        assert_eq!(report.f_max_blocks, 3);
        // Losing d0 and its only copy c0 is fatal.
        assert_eq!(report.witness.iter().collect::<Vec<_>>(), vec![0, 2]);
        let g = TannerGraph::new(2, vec![vec![0, 1], vec![0]]).unwrap();
        assert_eq!(compute_fmax(&g).unwrap().f_max_blocks, 3);
    }

    #[test]
    fn fmax_size_limit() {
        let g = TannerGraph::new(20, vec![vec![0]; 11]).unwrap();
        assert!(matches!(compute_fmax(&g), Err(CodecError::SizeLimitExceeded { .. })));
    }

    #[test]
    fn avg_overhead_without_coding_is_one() {
        let g = TannerGraph::uncoded(5).unwrap();
        for seed in 0..5 {
            let avg = estimate_avg_overhead(&g, 50, seed).unwrap();
            assert_eq!(avg.f_avg, 1.0);
        }
    }

    #[test]
    fn avg_overhead_of_parity_code_is_one() {
        let g = TannerGraph::new(2, vec![vec![0, 1]]).unwrap();
        let avg = estimate_avg_overhead(&g, 500, 3).unwrap();
        assert_eq!(avg.f_avg, 1.0);
        assert!((avg.f_avg_err - 1.0 / 500f64.sqrt()).abs() < 1e-15);
        assert!(estimate_avg_overhead(&g, 0, 3).is_err());
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_graph(3, 2, 0.5, 99).unwrap();
        let b = generate_graph(3, 2, 0.5, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_graph(1, 1, 0.01, 5).unwrap().edges(), &[vec![0]]);
        assert!(generate_graph(3, 2, 0.0, 1).is_err());
        assert!(generate_graph(3, 2, 1.0, 1).is_err());
    }

    #[test]
    fn search_budget_one_returns_the_only_candidate() {
        let cfg = SearchConfig {
            final_samples: 200,
            tie_samples: 50,
            ..SearchConfig::new(4, 3, 1, 11)
        };
        let (g, metrics) = search_best_graph(&cfg).unwrap();
        assert_eq!(metrics.f_max_blocks, compute_fmax(&g).unwrap().f_max_blocks);
        assert_eq!(metrics.samples, 200);
    }
}
