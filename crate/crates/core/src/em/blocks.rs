//! Block layouts for the bootstrap training strategies.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;

use crate::model::IndicatorAssignment;

/// Number of neighbourhoods drawn per local-bootstrap iteration.
pub const LOCAL_BLOCKS: usize = 10;
/// Width of each local neighbourhood.
pub const LOCAL_WIDTH: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    /// Token ranges (0-based, end-exclusive), in processing order.
    pub blocks: Vec<Range<usize>>,
    /// Values of positions outside the active block.
    pub fixed_z: IndicatorAssignment,
}

impl BlockSpec {
    pub fn new(blocks: Vec<Range<usize>>, n: usize) -> Self {
        BlockSpec {
            blocks,
            fixed_z: IndicatorAssignment::zeros(n),
        }
    }

    /// Sorted union of all block positions.
    pub fn free_positions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.blocks.iter().flat_map(|r| r.clone()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn block_positions(&self, k: usize) -> Vec<usize> {
        self.blocks[k].clone().collect()
    }
}

/// `ceil(n / l)` consecutive blocks of length `l`; the last may be shorter.
pub fn partition_blocks(n: usize, l: usize) -> BlockSpec {
    assert!(l >= 1, "block length must be positive");
    let blocks = (0..n).step_by(l).map(|s| s..(s + l).min(n)).collect();
    BlockSpec::new(blocks, n)
}

/// Window of `LOCAL_WIDTH` tokens centred on `center`, shifted inward at the
/// document edges; the whole document when it is shorter than the window.
pub fn local_window(center: usize, n: usize) -> Range<usize> {
    if n <= LOCAL_WIDTH {
        return 0..n;
    }
    let half = LOCAL_WIDTH / 2;
    let start = center.saturating_sub(half).min(n - LOCAL_WIDTH);
    start..start + LOCAL_WIDTH
}

/// Draws `LOCAL_BLOCKS` centres (without replacement when `n >= LOCAL_BLOCKS`)
/// and returns their windows in sampling order.
pub fn sample_local_blocks<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BlockSpec {
    assert!(n >= 1, "document must have at least one token");
    let centers: Vec<usize> = if n >= LOCAL_BLOCKS {
        index::sample(rng, n, LOCAL_BLOCKS).into_vec()
    } else {
        (0..LOCAL_BLOCKS).map(|_| rng.random_range(0..n)).collect()
    };
    BlockSpec::new(centers.into_iter().map(|c| local_window(c, n)).collect(), n)
}
