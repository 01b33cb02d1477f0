//! Seed derivation. Every random stream in a run is keyed off the run seed
//! so results do not depend on the order streams are created in.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Epoch = 3,
    Synth = 4,
}

/// Seed for item `index` of `stream` under `base`.
pub fn derive(base: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(base ^ mix(stream as u64)).wrapping_add(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(1, Stream::Split, 0), derive(1, Stream::Init, 0));
        assert_ne!(derive(1, Stream::Split, 0), derive(1, Stream::Split, 1));
        assert_ne!(derive(1, Stream::Split, 0), derive(2, Stream::Split, 0));
        assert_eq!(derive(7, Stream::Epoch, 3), derive(7, Stream::Epoch, 3));
    }
}
