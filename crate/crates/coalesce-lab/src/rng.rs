//! Counter-based random number generation.
//!
//! Every draw is a pure function of `(seed, stream, counter, cell)`, so a
//! simulation step can ask for "the" Gaussian of particle p at step s and
//! always get the same value, no matter how replicas are scheduled across
//! threads or how many draws other particles consumed. This is what makes
//! replica output bit-stable under any worker count.
//!
//! The word function is the splitmix64 finalizer applied to a keyed chain;
//! it is not cryptographic, just well-mixed and fast.

use std::f64::consts::PI;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn unit_open(w: u64) -> f64 {
    // (0,1): 52 high bits, offset by half a lattice cell so neither
    // endpoint can occur (2^52 - 0.5 is exactly representable)
    ((w >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Root of one independent draw stream (one per replica, test, or arm).
#[derive(Clone, Copy, Debug)]
pub struct StreamRng {
    base: u64,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        StreamRng {
            base: mix(mix(seed ^ GOLDEN) ^ stream.wrapping_mul(GOLDEN)),
        }
    }

    /// Key all draws belonging to one time step.
    #[inline]
    pub fn at_step(self, step: u64) -> StepRng {
        StepRng {
            key: mix(self.base ^ step.wrapping_mul(GOLDEN)),
        }
    }
}

/// Per-step key; draws are addressed by (particle, slot).
#[derive(Clone, Copy, Debug)]
pub struct StepRng {
    key: u64,
}

const SLOT_GAUSS_A: u64 = 0;
const SLOT_GAUSS_B: u64 = 1;
const SLOT_BRIDGE: u64 = 2;

impl StepRng {
    #[inline]
    pub fn word(self, particle: u64, slot: u64) -> u64 {
        debug_assert!(slot < 4);
        mix(self.key ^ ((particle << 2) | slot).wrapping_mul(GOLDEN))
    }

    /// Fair coin for the lattice walk.
    #[inline]
    pub fn coin(self, particle: u64) -> bool {
        self.word(particle, 0) & 1 == 1
    }

    /// Uniform in (0,1) for the bridge-merge decision.
    #[inline]
    pub fn bridge_uniform(self, particle: u64) -> f64 {
        unit_open(self.word(particle, SLOT_BRIDGE))
    }

    /// Standard normal via Box-Muller on two keyed uniforms.
    #[inline]
    pub fn normal(self, particle: u64) -> f64 {
        let u1 = unit_open(self.word(particle, SLOT_GAUSS_A));
        let u2 = unit_open(self.word(particle, SLOT_GAUSS_B));
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// Small sequential generator for shuffles, bootstrap resamples, and
/// self-tests; splitmix64.
#[derive(Clone, Debug)]
pub struct SeqRng {
    state: u64,
}

impl SeqRng {
    pub fn new(seed: u64) -> Self {
        SeqRng { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    /// Uniform index in [0, n) via 128-bit multiply (tiny modulo bias-free enough
    /// for calibration work is not needed; use Lemire reduction).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
