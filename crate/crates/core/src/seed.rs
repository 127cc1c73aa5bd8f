use sha2::{Digest, Sha256};

/// Independent seed for a named stage: the first eight bytes, little-endian,
/// of `SHA-256(seed_le || stage)`.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
