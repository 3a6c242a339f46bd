//! Seed derivation. Every random stream in a run is a pure function of the
//! master seed.

const INIT_STREAM: u64 = 0x696e_6974; // "init"
const PARTITION_STREAM: u64 = 0x7061_7274; // "part"

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(base: u64, stream: u64) -> u64 {
    mix(mix(base) ^ mix(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Seed for the shared initial parameters.
pub fn init_seed(master: u64) -> u64 {
    derive(master, INIT_STREAM)
}

/// Seed for a node's own initial parameters when initialization is not shared.
pub fn node_init_seed(master: u64, node: u32) -> u64 {
    derive(init_seed(master), u64::from(node))
}

pub fn partition_seed(master: u64) -> u64 {
    derive(master, PARTITION_STREAM)
}

/// Per-node training seed: `master ⊕ mix(node)`.
pub fn node_seed(master: u64, node: u32) -> u64 {
    master ^ mix(u64::from(node))
}

/// Seed for a node's local training in round `t`.
pub fn training_seed(master: u64, node: u32, round: u32) -> u64 {
    derive(node_seed(master, node), u64::from(round))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let seeds = [
            init_seed(7),
            partition_seed(7),
            node_seed(7, 1),
            node_seed(7, 2),
            training_seed(7, 1, 1),
            training_seed(7, 1, 2),
            training_seed(7, 2, 1),
        ];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(training_seed(7, 3, 4), training_seed(7, 3, 4));
    }
}
