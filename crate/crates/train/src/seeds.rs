//! Sub-seeds: every random stream is keyed by the run seed, a stage name and
//! an index, hashed with SHA-256.

use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams() {
        let a = derive_seed(7, "segmentor", 0);
        assert_eq!(a, derive_seed(7, "segmentor", 0));
        assert_ne!(a, derive_seed(8, "segmentor", 0));
        assert_ne!(a, derive_seed(7, "segmentor", 1));
        assert_ne!(a, derive_seed(7, "gae", 0));
        assert_ne!(derive_seed(7, "ab", 0), derive_seed(7, "a", 0));
    }
}
