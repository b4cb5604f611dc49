//! Layer vocabulary: convolution, batch normalisation, pooling, dense and
//! softmax cross-entropy. Each layer is a pair of forward/backward kernels
//! over row-major buffers; [`crate::Tape`] records them.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use batchnorm::{BatchNormState, BatchStats, BnMode, BN_EPS, BN_MOMENTUM};
pub use conv::ConvSpec;
pub use dense::DenseSpec;
pub use loss::softmax;
pub use pool::{PoolKind, PoolSpec};

/// Output indices `o` for which `o * stride + offset` lands in `[0, len)`.
pub(crate) fn valid_range(out: usize, stride: usize, offset: isize, len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out as isize) };
    let lo = lo.min(out as isize);
    (lo as usize, hi.max(lo) as usize)
}

#[cfg(test)]
mod tests {
    use super::valid_range;

    #[test]
    fn valid_range_matches_brute_force() {
        for out in 1..6 {
            for stride in 1..4 {
                for offset in -4isize..4 {
                    for len in 1..9 {
                        let expect: alloc::vec::Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * stride) as isize + offset;
                                i >= 0 && i < len as isize
                            })
                            .collect();
                        let (lo, hi) = valid_range(out, stride, offset, len);
                        let got: alloc::vec::Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, expect, "out {out} stride {stride} offset {offset} len {len}");
                    }
                }
            }
        }
    }
}
