use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::table::ResultTable;

pub const DEFAULT_SAMPLE_CAP: usize = 100_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Sorted uniform sample of `cap` row indices out of `rows`, or all rows
/// when there are at most `cap`.
pub fn sample_indices(rows: usize, cap: usize, seed: u64) -> Vec<usize> {
    if rows <= cap {
        return (0..rows).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, rows, cap).into_vec();
    picked.sort_unstable();
    picked
}

/// Returns the sampled table and its row count.
pub fn sample_table(table: &ResultTable, cap: usize, seed: u64) -> (ResultTable, usize) {
    if table.row_count() <= cap {
        return (table.clone(), table.row_count());
    }
    let rows = sample_indices(table.row_count(), cap, seed);
    let n = rows.len();
    (table.select_rows(&rows), n)
}
