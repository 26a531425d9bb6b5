//! Named substreams derived from a single root seed.
//!
//! All randomness in the pipeline flows through this module. A substream is
//! identified by a list of string tags (module name, dataset name, ...) and
//! optionally a draw index; the tags are hashed together with the root seed
//! into a ChaCha key. Two properties follow:
//!
//! - modules can be re-run in isolation and still see the same stream, and
//! - indexed draws are independently computable, so a stream of length n is
//!   always a prefix of the stream of length m > n.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn seed_bytes(root: u64, tags: &[&str], index: Option<u64>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for tag in tags {
        // Length prefix keeps ["ab","c"] distinct from ["a","bc"].
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
    }
    if let Some(i) = index {
        hasher.update([0xff]);
        hasher.update(i.to_le_bytes());
    }
    hasher.finalize().into()
}

/// RNG for the substream named by `tags`.
pub fn substream(root: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(root, tags, None))
}

/// RNG for the `index`-th draw of the substream named by `tags`.
///
/// Each index yields an independent generator, so draws can be computed in
/// any order (or in parallel) without changing their values.
pub fn substream_indexed(root: u64, tags: &[&str], index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_bytes(root, tags, Some(index)))
}
