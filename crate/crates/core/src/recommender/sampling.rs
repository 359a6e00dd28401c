//! Uniform sampling from the complement of a sorted id set.

use std::collections::HashMap;

use rand::Rng;

/// Sample `k` distinct ids uniformly from `0..n_items` minus
/// `excluded_sorted` (ascending, distinct). Returns at most the number of
/// eligible ids, sorted ascending.
///
/// Works rank-space first (partial Fisher-Yates over `0..eligible`), then
/// maps each rank through the sorted exclusion list, so nothing proportional
/// to the catalog is materialized.
pub fn sample_excluding(
    excluded_sorted: &[u32],
    n_items: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<u32> {
    debug_assert!(excluded_sorted.windows(2).all(|w| w[0] < w[1]));
    let eligible = n_items - excluded_sorted.len();
    let take = k.min(eligible);
    let mut swapped: HashMap<usize, usize> = HashMap::new();
    let mut ranks = Vec::with_capacity(take);
    for i in 0..take {
        let j = rng.gen_range(i..eligible);
        let vi = swapped.get(&i).copied().unwrap_or(i);
        let vj = swapped.get(&j).copied().unwrap_or(j);
        swapped.insert(j, vi);
        ranks.push(vj);
    }
    let mut items: Vec<u32> = ranks
        .into_iter()
        .map(|rank| {
            // rank-th id not in the exclusion list
            let mut id = rank;
            for &ex in excluded_sorted {
                if (ex as usize) <= id {
                    id += 1;
                } else {
                    break;
                }
            }
            id as u32
        })
        .collect();
    items.sort_unstable();
    items
}
