use std::collections::BTreeMap;

use super::graph::{low_mask, BlockSet, TannerGraph};
use super::CodecError;

pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

/// Computes the `m` coding blocks of `data`. Coding block `j` is the XOR of
/// the data blocks in `graph.edges()[j]`.
pub fn encode<B: AsRef<[u8]>>(graph: &TannerGraph, data: &[B]) -> Result<Vec<Vec<u8>>, CodecError> {
    if data.len() != graph.n() {
        return Err(CodecError::BlockCount {
            expected: graph.n(),
            got: data.len(),
        });
    }
    let len = data[0].as_ref().len();
    if let Some(bad) = data.iter().position(|b| b.as_ref().len() != len) {
        return Err(CodecError::LengthMismatch {
            index: bad,
            expected: len,
            got: data[bad].as_ref().len(),
        });
    }
    Ok(graph
        .edges()
        .iter()
        .map(|row| {
            let mut out = data[row[0]].as_ref().to_vec();
            for &i in &row[1..] {
                xor_into(&mut out, data[i].as_ref());
            }
            out
        })
        .collect())
}

/// Data blocks reachable by peeling from `have`, as a mask over `[0, n)`.
pub(crate) fn peel_closure(graph: &TannerGraph, have: u64) -> u64 {
    let n = graph.n();
    let masks = graph.masks();
    let mut known = have & low_mask(n);
    let mut pending = have >> n;
    loop {
        let mut progress = false;
        let mut rest = pending;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let unknown = masks[j] & !known;
            if unknown == 0 {
                pending &= !(1 << j);
            } else if unknown & (unknown - 1) == 0 {
                known |= unknown;
                pending &= !(1 << j);
                progress = true;
            }
        }
        if !progress {
            return known;
        }
    }
}

/// Data blocks that peeling from `have` recovers, including those held.
pub fn recoverable(graph: &TannerGraph, have: BlockSet) -> BlockSet {
    BlockSet::from_mask(peel_closure(graph, have.mask()))
}

/// Whether peeling from `have` recovers every data block.
pub fn is_decodable(graph: &TannerGraph, have: BlockSet) -> bool {
    peel_closure(graph, have.mask()) == low_mask(graph.n())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeelOutcome {
    pub data: Vec<Vec<u8>>,
    /// Block-sized XOR operations performed.
    pub xors: usize,
}

/// Reconstructs the `n` data blocks from whatever blocks are in `have`.
///
/// Any coding block with exactly one unknown data neighbour is XORed with
/// its known neighbours to produce that data block; this repeats until no
/// such coding block is left.
pub fn peel_decode(
    graph: &TannerGraph,
    mut have: BTreeMap<usize, Vec<u8>>,
) -> Result<PeelOutcome, CodecError> {
    let n = graph.n();
    let (recovered, xors) = {
        let borrowed: BTreeMap<usize, &[u8]> = have.iter().map(|(&i, b)| (i, b.as_slice())).collect();
        peel_recover(graph, &borrowed)?
    };
    let mut recovered = recovered.into_iter();
    let data = (0..n)
        .map(|i| have.remove(&i).unwrap_or_else(|| recovered.next().expect("one per missing index").1))
        .collect();
    Ok(PeelOutcome { data, xors })
}

/// Like [`peel_decode`] but borrows the blocks and returns only the data
/// blocks missing from `have`, keyed by index, plus the XOR count.
pub fn peel_recover(
    graph: &TannerGraph,
    have: &BTreeMap<usize, &[u8]>,
) -> Result<(BTreeMap<usize, Vec<u8>>, usize), CodecError> {
    let n = graph.n();
    let total = graph.total_blocks();
    if let Some(&bad) = have.keys().find(|&&i| i >= total) {
        return Err(CodecError::InvalidBlockSet(format!("index {bad} out of range {total}")));
    }
    if let Some(len) = have.values().next().map(|b| b.len()) {
        if let Some((&bad, b)) = have.iter().find(|(_, b)| b.len() != len) {
            return Err(CodecError::LengthMismatch {
                index: bad,
                expected: len,
                got: b.len(),
            });
        }
    }
    let missing = (0..n).filter(|i| !have.contains_key(i)).fold(0u64, |m, i| m | 1 << i);
    let known = peel_closure(graph, have.keys().fold(0u64, |m, &i| m | 1 << i));
    if known != low_mask(n) {
        return Err(CodecError::NotDecodable {
            missing: (0..n).filter(|i| known >> i & 1 == 0).collect(),
        });
    }

    let mut recovered: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    let mut used = 0u64;
    let mut xors = 0;
    while recovered.len() < missing.count_ones() as usize {
        for (j, row) in graph.edges().iter().enumerate() {
            let Some(coding) = have.get(&(n + j)) else { continue };
            if used >> j & 1 == 1 {
                continue;
            }
            let known = |i: usize| have.contains_key(&i) || recovered.contains_key(&i);
            let mut unknown = row.iter().filter(|&&i| !known(i));
            let (Some(&target), None) = (unknown.next(), unknown.next()) else {
                continue;
            };
            let mut block = coding.to_vec();
            for &i in row.iter().filter(|&&i| i != target) {
                let src = have.get(&i).copied().unwrap_or_else(|| recovered[&i].as_slice());
                xor_into(&mut block, src);
                xors += 1;
            }
            recovered.insert(target, block);
            used |= 1 << j;
        }
    }
    Ok((recovered, xors))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The three-data, two-coding example: c1 = d1 + d2, c2 = d2 + d3 (zero
    /// based: c0 = {0, 1}, c1 = {1, 2}).
    fn small_graph() -> TannerGraph {
        TannerGraph::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap()
    }

    #[test]
    fn encode_xor_of_neighbours() {
        let g = small_graph();
        let coded = encode(&g, &[vec![1u8], vec![0], vec![1]]).unwrap();
        assert_eq!(coded, vec![vec![1], vec![1]]);
    }

    #[test]
    fn encode_zero_is_zero() {
        let g = small_graph();
        assert_eq!(encode(&g, &vec![vec![0u8; 5]; 3]).unwrap(), vec![vec![0u8; 5]; 2]);
    }

    #[test]
    fn encode_bytewise_by_hand() {
        let g = TannerGraph::new(2, vec![vec![0, 1]]).unwrap();
        let coded = encode(&g, &[vec![0xFF; 4], vec![0x0F; 4]]).unwrap();
        assert_eq!(coded, vec![vec![0xF0; 4]]);
    }

    #[test]
    fn encode_errors() {
        let g = small_graph();
        assert!(matches!(
            encode(&g, &vec![vec![0u8]; 2]),
            Err(CodecError::BlockCount { expected: 3, got: 2 })
        ));
        assert!(matches!(
            encode(&g, &[vec![0u8], vec![0u8, 1], vec![0u8]]),
            Err(CodecError::LengthMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn decodability_of_two_plus_one_graph() {
        // Every 2-subset of {d0, d1, c0} decodes, no 1-subset does.
        let g = TannerGraph::new(2, vec![vec![0, 1]]).unwrap();
        for mask in 0u64..8 {
            let expect = mask.count_ones() >= 2;
            assert_eq!(is_decodable(&g, BlockSet::from_mask(mask)), expect, "mask {mask:03b}");
        }
    }

    #[test]
    fn all_data_present_needs_no_xor() {
        let g = small_graph();
        let have: BTreeMap<usize, Vec<u8>> = (0..3).map(|i| (i, vec![i as u8; 4])).collect();
        let out = peel_decode(&g, have).unwrap();
        assert_eq!(out.xors, 0);
        assert_eq!(out.data, vec![vec![0; 4], vec![1; 4], vec![2; 4]]);
    }

    #[test]
    fn solves_missing_first_block() {
        // d1 missing, d2 = 0, c1 = 1 -> d1 = 1.
        let g = small_graph();
        let have: BTreeMap<usize, Vec<u8>> =
            [(1, vec![0u8]), (2, vec![1u8]), (3, vec![1u8])].into_iter().collect();
        let out = peel_decode(&g, have).unwrap();
        assert_eq!(out.data, vec![vec![1], vec![0], vec![1]]);
        assert_eq!(out.xors, 1);
    }

    #[test]
    fn chained_peeling() {
        // d1 and d2 missing; c1 = d2 + d3 gives d2, then c0 = d1 + d2 gives d1.
        let g = small_graph();
        let d = [vec![7u8, 1], vec![3u8, 9], vec![5u8, 5]];
        let c = encode(&g, &d).unwrap();
        let have: BTreeMap<usize, Vec<u8>> =
            [(2, d[2].clone()), (3, c[0].clone()), (4, c[1].clone())].into_iter().collect();
        assert_eq!(peel_decode(&g, have).unwrap().data, d.to_vec());
    }

    #[test]
    fn stall_reports_missing() {
        let g = small_graph();
        let have: BTreeMap<usize, Vec<u8>> = [(1, vec![0u8]), (3, vec![0u8])].into_iter().collect();
        assert_eq!(
            peel_decode(&g, have),
            Err(CodecError::NotDecodable { missing: vec![2] })
        );
    }

    #[test]
    fn decode_rejects_mixed_lengths() {
        let g = small_graph();
        let have: BTreeMap<usize, Vec<u8>> = [(0, vec![0u8]), (1, vec![0u8, 0])].into_iter().collect();
        assert!(matches!(peel_decode(&g, have), Err(CodecError::LengthMismatch { .. })));
    }

    #[test]
    fn recover_returns_only_missing_blocks() {
        let g = small_graph();
        let data = vec![vec![1u8, 2], vec![4, 8], vec![16, 32]];
        let coding = encode(&g, &data).unwrap();
        let have: BTreeMap<usize, &[u8]> = [(1, data[1].as_slice()), (3, coding[0].as_slice()), (4, coding[1].as_slice())]
            .into_iter()
            .collect();
        let (recovered, xors) = peel_recover(&g, &have).unwrap();
        assert_eq!(recovered, [(0, data[0].clone()), (2, data[2].clone())].into_iter().collect());
        assert_eq!(xors, 2);
        let none: BTreeMap<usize, &[u8]> = [(3, coding[0].as_slice())].into_iter().collect();
        assert_eq!(peel_recover(&g, &none), Err(CodecError::NotDecodable { missing: vec![0, 1, 2] }));
    }
}
