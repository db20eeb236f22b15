//! Deterministic pseudo-random source.
//!
//! The generator is SplitMix64 run in counter mode: every draw mixes
//! `base + counter` through the splitmix finalizer, so a stream is a pure
//! function of (seed, stream id, draw index) built entirely from 64-bit
//! integer arithmetic. Streams split by index never collide with their
//! parent, and output is identical on every platform.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct DetRng {
    base: u64,
    counter: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { base: mix(seed ^ GOLDEN), counter: 0 }
    }

    /// Derive an independent child stream. Children of distinct indices, and
    /// the parent itself, produce unrelated sequences.
    pub fn split(&self, index: u64) -> DetRng {
        DetRng {
            base: mix(self.base ^ mix(index.wrapping_mul(GOLDEN) ^ 0x5851_f42d_4c95_7f2d)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix(self.base.wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Modulo bias is irrelevant at the n used here.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. Used only for weight initialization;
    /// dataset pixels stay on the transcendental-free path.
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, _c) = sin_cos_portable(2.0 * std::f64::consts::PI * u2 - std::f64::consts::PI);
        r * s
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// sin/cos by Taylor series, valid for |x| <= pi.
///
/// libm sin/cos differ in the last ulp between platforms; dataset pixels must
/// be bitwise reproducible, so rotations go through this fixed polynomial.
pub fn sin_cos_portable(x: f64) -> (f64, f64) {
    debug_assert!(x.abs() <= std::f64::consts::PI + 1e-12);
    let x2 = x * x;
    // Horner evaluation of the series through x^23 / x^22; the truncation
    // error at |x| = pi is below 1e-12.
    let mut s = -1.0 / 25_852_016_738_884_976_640_000.0; // -1/23!
    for inv in [
        1.0 / 51_090_942_171_709_440_000.0, // 1/21!
        -1.0 / 121_645_100_408_832_000.0,   // -1/19!
        1.0 / 355_687_428_096_000.0,      // 1/17!
        -1.0 / 1_307_674_368_000.0,       // -1/15!
        1.0 / 6_227_020_800.0,            // 1/13!
        -1.0 / 39_916_800.0,              // -1/11!
        1.0 / 362_880.0,                  // 1/9!
        -1.0 / 5_040.0,                   // -1/7!
        1.0 / 120.0,                      // 1/5!
        -1.0 / 6.0,                       // -1/3!
        1.0,
    ] {
        s = s * x2 + inv;
    }
    let sin = s * x;

    let mut c = 1.0 / 1_124_000_727_777_607_680_000.0; // 1/22!
    for inv in [
        -1.0 / 2_432_902_008_176_640_000.0, // -1/20!
        1.0 / 6_402_373_705_728_000.0,      // 1/18!
        -1.0 / 20_922_789_888_000.0,   // -1/16!
        1.0 / 87_178_291_200.0,        // 1/14!
        -1.0 / 479_001_600.0,          // -1/12!
        1.0 / 3_628_800.0,             // 1/10!
        -1.0 / 40_320.0,               // -1/8!
        1.0 / 720.0,                   // 1/6!
        -1.0 / 24.0,                   // -1/4!
        1.0 / 2.0,                     // 1/2!
        -1.0,
    ] {
        c = c * x2 + inv;
    }
    let cos = -c;
    (sin, cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = DetRng::new(7);
        let mut b = DetRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_streams_differ_from_parent_and_each_other() {
        let parent = DetRng::new(3);
        let mut c0 = parent.split(0);
        let mut c1 = parent.split(1);
        let mut p = parent.clone();
        let (a, b, c) = (p.next_u64(), c0.next_u64(), c1.next_u64());
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = DetRng::new(11);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn portable_sincos_matches_libm() {
        for i in -100..=100 {
            let x = i as f64 * std::f64::consts::PI / 100.0;
            let (s, c) = sin_cos_portable(x);
            assert!((s - x.sin()).abs() < 1e-11, "sin({x}) = {s}");
            assert!((c - x.cos()).abs() < 1e-11, "cos({x}) = {c}");
        }
    }

    #[test]
    fn normal_has_sane_moments() {
        let mut r = DetRng::new(5);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
