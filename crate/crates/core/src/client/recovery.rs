use crate::codec::{is_decodable, recoverable, BlockSet, TannerGraph};

/// Above this many candidate coding chunks the exhaustive search is skipped
/// and the greedy plan is returned as is.
pub const EXHAUSTIVE_CANDIDATE_LIMIT: usize = 20;

/// Picks coding chunks to fetch so that `have` plus the picks peel-decode.
///
/// `have` holds the blocks already in hand, `available` the coding chunks
/// that may still be fetched. The result has minimum size and, among
/// minimum-size sets, is the lexicographically first. `None` when even all
/// of `available` does not suffice.
pub fn plan_recovery(graph: &TannerGraph, have: BlockSet, available: BlockSet) -> Option<Vec<usize>> {
    if is_decodable(graph, have) {
        return Some(Vec::new());
    }
    let candidates: Vec<usize> = available
        .iter()
        .filter(|&i| i >= graph.n() && i < graph.total_blocks() && !have.contains(i))
        .collect();
    let greedy = greedy_plan(graph, have, &candidates)?;
    if candidates.len() > EXHAUSTIVE_CANDIDATE_LIMIT {
        return Some(greedy);
    }
    for k in 1..greedy.len() {
        if let Some(found) = first_combination(&candidates, k, |pick| {
            let mut set = have;
            pick.iter().for_each(|&i| set.insert(i));
            is_decodable(graph, set)
        }) {
            return Some(found);
        }
    }
    // Greedy may be minimal in size yet not lexicographically first.
    first_combination(&candidates, greedy.len(), |pick| {
        let mut set = have;
        pick.iter().for_each(|&i| set.insert(i));
        is_decodable(graph, set)
    })
}

/// Adds the lowest-index candidate that grows the peeled set until the data
/// is covered, falling back to the lowest remaining candidate on a stall.
fn greedy_plan(graph: &TannerGraph, have: BlockSet, candidates: &[usize]) -> Option<Vec<usize>> {
    let mut all = have;
    candidates.iter().for_each(|&i| all.insert(i));
    if !is_decodable(graph, all) {
        return None;
    }
    let mut set = have;
    let mut picked = Vec::new();
    while !is_decodable(graph, set) {
        let known = recoverable(graph, set).len();
        let useful = candidates.iter().copied().find(|&c| {
            !set.contains(c) && {
                let mut next = set;
                next.insert(c);
                recoverable(graph, next).len() > known
            }
        });
        let pick = useful.or_else(|| candidates.iter().copied().find(|&c| !set.contains(c)))?;
        set.insert(pick);
        picked.push(pick);
    }
    picked.sort_unstable();
    Some(picked)
}

/// First `k`-subset of `items` (in lexicographic order) accepted by `accept`.
fn first_combination(items: &[usize], k: usize, mut accept: impl FnMut(&[usize]) -> bool) -> Option<Vec<usize>> {
    if k > items.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut pick = vec![0; k];
    loop {
        for (p, &i) in pick.iter_mut().zip(&idx) {
            *p = items[i];
        }
        if accept(&pick) {
            return Some(pick);
        }
        let mut i = k;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if idx[i] < items.len() - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
