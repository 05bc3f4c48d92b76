//! Named child RNG streams derived from one root seed.

use sha2::{Digest, Sha256};

/// Seed for the stream `name` under `root`, e.g. `"bench/session1/labeled"`.
/// Adding a new consumer never shifts the seeds of existing ones.
pub fn child_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
