//! Counter-based random streams.
//!
//! Every pulse draws from its own Philox4x64-10 stream keyed on
//! `(seed, domain)` with the pulse index in the counter, so the random
//! numbers a pulse sees do not depend on how pulses are scheduled across
//! threads. Re-creating the stream for a pulse reproduces it exactly.

use rand::RngCore;

const MUL_0: u64 = 0xD2E7_470E_E14C_6C93;
const MUL_1: u64 = 0xCA5A_8263_9512_1157;
const WEYL_0: u64 = 0x9E37_79B9_7F4A_7C15;
const WEYL_1: u64 = 0xBB67_AE85_84CA_A73B;
const ROUNDS: usize = 10;

/// Domain tags separating independent uses of one user seed.
pub mod domain {
    pub const PULSE: u64 = 0x0050_554c_5345;
    pub const HBT_SPLIT: u64 = 0x4842_5453;
    pub const SWEEP_SEED: u64 = 0x5357_4550;
}

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = u128::from(a) * u128::from(b);
    ((p >> 64) as u64, p as u64)
}

/// The Philox4x64 bijection with 10 rounds.
pub fn philox4x64(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..ROUNDS {
        if round > 0 {
            k[0] = k[0].wrapping_add(WEYL_0);
            k[1] = k[1].wrapping_add(WEYL_1);
        }
        let (hi0, lo0) = mulhilo(MUL_0, c[0]);
        let (hi1, lo1) = mulhilo(MUL_1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// A random stream identified by `(seed, domain, stream)`.
///
/// Output block `j` of the stream is `philox([stream, j, 0, 0], [seed, domain])`.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: [u64; 2],
    stream: u64,
    block: u64,
    buf: [u64; 4],
    pos: usize,
}

impl CounterRng {
    pub fn new(seed: u64, domain: u64, stream: u64) -> Self {
        Self {
            key: [seed, domain],
            stream,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    /// Stream for the randomness of pulse `pulse_index`.
    pub fn for_pulse(seed: u64, pulse_index: u64) -> Self {
        Self::new(seed, domain::PULSE, pulse_index)
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    fn refill(&mut self) {
        self.buf = philox4x64([self.stream, self.block, 0, 0], self.key);
        self.block = self.block.wrapping_add(1);
        self.pos = 0;
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        if self.pos == 4 {
            self.refill();
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Derive an independent 64-bit seed from a parent seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    philox4x64([index, 0, 0, 0], [seed, domain::SWEEP_SEED])[0]
}
