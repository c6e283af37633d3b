//! Rendering of collective payloads into directed per-edge byte volumes.

/// Turns one collective over `members` into directed `(src, dst, bytes)`
/// edges.
pub trait CollectiveRenderer: Send + Sync {
    fn allreduce_edges(&self, members: &[usize], payload: u64) -> Vec<(usize, usize, u64)>;
}

/// Ring AllReduce: reduce-scatter then all-gather around the ring of
/// `members`, each a sequence of `k - 1` steps over `k` chunks.
#[derive(Debug, Clone, Copy, Default)]
pub struct RingAllReduce;

/// Sizes of the `k` chunks a payload is split into. The first `payload % k`
/// chunks carry one extra byte.
pub fn chunk_sizes(payload: u64, k: usize) -> Vec<u64> {
    let k64 = k as u64;
    let base = payload / k64;
    let extra = (payload % k64) as usize;
    (0..k).map(|i| base + u64::from(i < extra)).collect()
}

impl CollectiveRenderer for RingAllReduce {
    fn allreduce_edges(&self, members: &[usize], payload: u64) -> Vec<(usize, usize, u64)> {
        let k = members.len();
        if k < 2 || payload == 0 {
            return Vec::new();
        }
        let chunks = chunk_sizes(payload, k);
        // Position i never sends chunk (i+1) in reduce-scatter nor chunk
        // (i+2) in all-gather; every other chunk crosses i -> i+1 once per
        // phase.
        (0..k)
            .map(|i| {
                let skipped = chunks[(i + 1) % k] + chunks[(i + 2) % k];
                (members[i], members[(i + 1) % k], 2 * payload - skipped)
            })
            .collect()
    }
}
