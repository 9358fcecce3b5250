//! Exhaustive split-point search, used to check the greedy scheduler.

use crate::time::Micros;

/// TTFT if compute takes chunks `[0, k)` and io takes `[k, n)`, both sides
/// running back to back from t = 0.
pub fn split_ttft(compute: &[Micros], fetch: &[Micros], k: usize) -> Micros {
    let c: Micros = compute[..k].iter().copied().sum();
    let f: Micros = fetch[k..].iter().copied().sum();
    c.max(f)
}

/// Best split point over every `k` in `[0, n]`, ties broken toward smaller `k`.
///
/// # Panics
///
/// If the two duration lists differ in length.
pub fn oracle_best_split(compute: &[Micros], fetch: &[Micros]) -> (usize, Micros) {
    assert_eq!(compute.len(), fetch.len(), "per-chunk duration lists differ in length");
    let n = compute.len();
    let mut fetch_suffix: Micros = fetch.iter().copied().sum();
    let mut compute_prefix = Micros::ZERO;
    let mut best = (0, fetch_suffix);
    for k in 1..=n {
        compute_prefix += compute[k - 1];
        fetch_suffix = fetch_suffix - fetch[k - 1];
        let ttft = compute_prefix.max(fetch_suffix);
        if ttft < best.1 {
            best = (k, ttft);
        }
    }
    best
}

/// Greediness allowance for a cake run that merged at `merge_point`: the
/// larger of the compute step on either side of the merge point and the
/// longest single fetch.
pub fn greedy_slack(compute: &[Micros], fetch: &[Micros], merge_point: usize) -> Micros {
    let n = compute.len();
    let boundary_compute = [merge_point.checked_sub(1), (merge_point < n).then_some(merge_point)]
        .into_iter()
        .flatten()
        .map(|i| compute[i])
        .max()
        .unwrap_or(Micros::ZERO);
    let max_fetch = fetch.iter().copied().max().unwrap_or(Micros::ZERO);
    boundary_compute.max(max_fetch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn us(v: &[u64]) -> Vec<Micros> {
        v.iter().map(|&x| Micros(x)).collect()
    }

    #[test]
    fn four_chunk_instance() {
        let compute = us(&[10, 20, 30, 40]);
        let fetch = us(&[25, 25, 25, 25]);
        let by_k: Vec<u64> = (0..=4).map(|k| split_ttft(&compute, &fetch, k).0).collect();
        assert_eq!(by_k, vec![100, 75, 50, 60, 100]);
        assert_eq!(oracle_best_split(&compute, &fetch), (2, Micros(50)));
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(oracle_best_split(&us(&[5, 5, 5]), &us(&[0, 0, 0])), (0, Micros(0)));
        assert_eq!(oracle_best_split(&us(&[10]), &us(&[25])), (1, Micros(10)));
        assert_eq!(oracle_best_split(&[], &[]), (0, Micros(0)));
    }

    #[test]
    fn ties_prefer_smaller_k() {
        // k=1 -> max(10,10)=10, k=2 -> max(20,0)=20, k=0 -> 20
        assert_eq!(oracle_best_split(&us(&[10, 10]), &us(&[10, 10])), (1, Micros(10)));
        // k=0 and k=1 both give 10
        assert_eq!(oracle_best_split(&us(&[10, 50]), &us(&[0, 10])), (0, Micros(10)));
    }

    #[test]
    fn matches_brute_force() {
        let compute = us(&[3, 9, 1, 14, 6, 6, 2]);
        let fetch = us(&[7, 2, 8, 8, 1, 5, 9]);
        let brute = (0..=7).map(|k| (split_ttft(&compute, &fetch, k), k)).min().unwrap();
        assert_eq!(oracle_best_split(&compute, &fetch), (brute.1, brute.0));
    }
}
