use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, fixed so stream names map to the same keys on every platform.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent generator for `(seed, name, counter)`.
///
/// The key mixes the run seed with the stream name; the counter selects the
/// ChaCha stream, so e.g. step 17 of the "train" stream can be replayed
/// without drawing steps 0..17 first.
pub fn stream_rng(seed: u64, name: &str, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&(name.len() as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(counter);
    rng
}
