use std::collections::BTreeMap;

use ldpc_store::codec::{
    compute_fmax, default_graph, encode, generate_graph, is_decodable, peel_decode, BlockSet, TannerGraph,
};
use proptest::prelude::*;

fn removed(total: usize, gone: &[usize]) -> BlockSet {
    let mut have = BlockSet::full(total);
    for &i in gone {
        have.remove(i);
    }
    have
}

fn graph_strategy() -> impl Strategy<Value = TannerGraph> {
    (1usize..=6, 1usize..=5, 0.2f64..0.8, any::<u64>())
        .prop_map(|(n, m, p, seed)| generate_graph(n, m, p, seed).unwrap())
}

proptest! {
    #[test]
    fn decode_matches_decodability(g in graph_strategy(), mask in any::<u64>(), len in 0usize..40, fill in any::<u8>()) {
        let n = g.n();
        let total = g.total_blocks();
        let mask = mask & ((1 << total) - 1);
        let data: Vec<Vec<u8>> = (0..n).map(|i| (0..len).map(|k| fill ^ (i * 31 + k) as u8).collect()).collect();
        let coding = encode(&g, &data).unwrap();
        let have: BTreeMap<usize, Vec<u8>> = data
            .iter()
            .chain(&coding)
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(i, b)| (i, b.clone()))
            .collect();
        match peel_decode(&g, have) {
            Ok(out) => {
                prop_assert!(is_decodable(&g, BlockSet::from_mask(mask)));
                prop_assert_eq!(out.data, data);
            }
            Err(_) => prop_assert!(!is_decodable(&g, BlockSet::from_mask(mask))),
        }
    }

    #[test]
    fn decodability_is_monotone(g in graph_strategy(), mask in any::<u64>(), extra in 0usize..12) {
        let total = g.total_blocks();
        let mask = mask & ((1 << total) - 1);
        let more = mask | 1 << (extra % total);
        if is_decodable(&g, BlockSet::from_mask(mask)) {
            prop_assert!(is_decodable(&g, BlockSet::from_mask(more)));
        }
    }

    #[test]
    fn fmax_is_sound(g in graph_strategy()) {
        let total = g.total_blocks();
        let report = compute_fmax(&g).unwrap();
        // Every subset of f_max_blocks blocks decodes.
        for mask in 0u64..1 << total {
            if mask.count_ones() as usize >= report.f_max_blocks {
                prop_assert!(is_decodable(&g, BlockSet::from_mask(mask)), "{:#x}", mask);
            }
        }
        // The witness is one block too many to lose.
        prop_assert_eq!(report.witness.len(), total - report.f_max_blocks + 1);
        prop_assert!(!is_decodable(&g, report.witness.complement(total)));
    }
}

#[test]
fn default_graph_survives_every_triple_loss() {
    let g = default_graph();
    let mut triples = 0;
    for a in 0..14 {
        for b in a + 1..14 {
            for c in b + 1..14 {
                assert!(is_decodable(&g, removed(14, &[a, b, c])), "{a} {b} {c}");
                triples += 1;
            }
        }
    }
    assert_eq!(triples, 364);
}

#[test]
fn default_graph_pairs_and_quadruples() {
    let g = default_graph();
    let mut pairs = 0;
    let mut fatal_quads = 0;
    for a in 0..14 {
        for b in a + 1..14 {
            assert!(is_decodable(&g, removed(14, &[a, b])));
            pairs += 1;
            for c in b + 1..14 {
                for d in c + 1..14 {
                    fatal_quads += usize::from(!is_decodable(&g, removed(14, &[a, b, c, d])));
                }
            }
        }
    }
    assert_eq!(pairs, 91);
    assert!(fatal_quads > 0);
    assert_eq!(compute_fmax(&g).unwrap().f_max_blocks, 11);
}

#[test]
fn every_single_block_of_a_small_graph_is_needed_when_uncoded() {
    let g = TannerGraph::uncoded(4).unwrap();
    assert_eq!(compute_fmax(&g).unwrap().f_max_blocks, 4);
    for i in 0..4 {
        assert!(!is_decodable(&g, removed(4, &[i])));
    }
}
