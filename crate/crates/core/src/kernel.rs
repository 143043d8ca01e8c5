//! Dense f64 kernels shared by every hot loop.
//!
//! `tanh` here is a pure-Rust evaluation (rational minimax on the small
//! range, exp-based elsewhere) so that encoded hypervectors are bit-identical
//! across platforms regardless of the system libm, and so that slice loops
//! vectorize. It agrees with the libm result to within 2 ulp.
//!
//! Reductions use eight fixed partial sums combined in a fixed tree, which
//! keeps them deterministic while letting the compiler use SIMD lanes.

const LANES: usize = 8;

// 1.5 * 2^52: adding and subtracting rounds to the nearest integer.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const TWO_52: f64 = 4_503_599_627_370_496.0;
const SMALL_RANGE: f64 = 0.625;
const SATURATION: f64 = 20.0;

#[inline(always)]
fn exp_bounded(y: f64) -> f64 {
    // Valid for y in [0, 2 * SATURATION].
    let k = (y * std::f64::consts::LOG2_E + ROUND_MAGIC) - ROUND_MAGIC;
    let r = (y - k * 6.931_457_519_531_25E-1) - k * 1.428_606_820_309_417_232_12E-6;
    let rr = r * r;
    let p = r
        * ((1.261_771_930_748_105_908_78E-4 * rr + 3.029_944_077_074_419_613_00E-2) * rr
            + 9.999_999_999_999_999_999_10E-1);
    let q = ((3.001_985_051_386_644_550_42E-6 * rr + 2.524_483_403_496_841_041_92E-3) * rr
        + 2.272_655_482_081_550_287_66E-1)
        * rr
        + 2.000_000_000_000_000_000_09E0;
    let er = 1.0 + 2.0 * p / (q - p);
    let bits = ((k + 1023.0 + TWO_52).to_bits() & 0x7ff) << 52;
    er * f64::from_bits(bits)
}

/// Small-range rational form, written for signed `x`: every operation is
/// sign-symmetric, so the result is exactly `−f(−x)`.
#[inline(always)]
fn tanh_small(x: f64) -> f64 {
    let z = x * x;
    let p = (-9.643_991_794_250_522_386_28E-1 * z - 9.928_772_310_019_185_865_64E1) * z
        - 1.614_687_684_417_084_479_52E3;
    let q = ((z + 1.128_116_784_916_329_314_02E2) * z + 2.235_488_390_601_004_485_83E3) * z
        + 4.844_063_053_251_254_860_48E3;
    x + x * z * p / q
}

#[inline(always)]
fn tanh_general(x: f64) -> f64 {
    let a = x.abs().min(SATURATION);
    let small = tanh_small(a);
    let e = exp_bounded(2.0 * a);
    let large = 1.0 - 2.0 / (e + 1.0);
    let t = if a < SMALL_RANGE { small } else { large };
    t.copysign(x)
}

/// Hyperbolic tangent of a finite argument.
#[inline]
pub fn tanh(x: f64) -> f64 {
    tanh_general(x)
}

/// `max_t |u[t]|`.
pub fn abs_max(u: &[f64]) -> f64 {
    let mut m = [0.0f64; LANES];
    let chunks = u.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            let a = c[l].abs();
            m[l] = if a > m[l] { a } else { m[l] };
        }
    }
    let mut peak = 0.0f64;
    for a in m.into_iter().chain(tail.iter().map(|v| v.abs())) {
        peak = if a > peak { a } else { peak };
    }
    peak
}

/// True when every `scale·u[t]` lies in the small range. `peak` bounds
/// `|u[t]|`; rounding is monotone, so the product bound carries over.
#[inline]
fn small_range(scale: f64, peak: f64) -> bool {
    scale.abs() * peak < SMALL_RANGE
}

/// `out[t] = tanh(scale * u[t])`.
pub fn tanh_scaled(scale: f64, u: &[f64], out: &mut [f64]) {
    tanh_scaled_bounded(scale, u, abs_max(u), out);
}

/// [`tanh_scaled`] with a precomputed bound `peak ≥ max |u[t]|`.
pub fn tanh_scaled_bounded(scale: f64, u: &[f64], peak: f64, out: &mut [f64]) {
    assert_eq!(u.len(), out.len());
    if small_range(scale, peak) {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = tanh_small(scale * v);
        }
    } else {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = tanh_general(scale * v);
        }
    }
}

/// `acc[t] += tanh(scale * u[t])` without materializing the activations.
pub fn tanh_scaled_accumulate(scale: f64, u: &[f64], peak: f64, acc: &mut [f64]) {
    assert_eq!(u.len(), acc.len());
    if small_range(scale, peak) {
        for (a, &v) in acc.iter_mut().zip(u) {
            *a += tanh_small(scale * v);
        }
    } else {
        for (a, &v) in acc.iter_mut().zip(u) {
            *a += tanh_general(scale * v);
        }
    }
}

/// Backward of `h = tanh(scale·u)` with respect to `u`, recomputing `h`:
/// `du += scale · dh ⊙ (1 − h²)`.
pub fn tanh_backward_accumulate(scale: f64, u: &[f64], peak: f64, dh: &[f64], du: &mut [f64]) {
    assert_eq!(u.len(), du.len());
    assert_eq!(dh.len(), du.len());
    if small_range(scale, peak) {
        for ((d, &g), &v) in du.iter_mut().zip(dh).zip(u) {
            let h = tanh_small(scale * v);
            *d += scale * (g * (1.0 - h * h));
        }
    } else {
        for ((d, &g), &v) in du.iter_mut().zip(dh).zip(u) {
            let h = tanh_general(scale * v);
            *d += scale * (g * (1.0 - h * h));
        }
    }
}

#[inline]
fn combine(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    combine(acc) + tail
}

pub fn sum_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    sum_sq(a).sqrt()
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// `acc += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], acc: &mut [f64]) {
    assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

pub fn scale_into(alpha: f64, x: &[f64], out: &mut [f64]) {
    assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o = alpha * v;
    }
}

pub fn mul_assign(acc: &mut [f64], x: &[f64]) {
    assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a *= v;
    }
}

/// `out = a ⊙ b`.
pub fn mul_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    assert_eq!(a.len(), out.len());
    assert_eq!(b.len(), out.len());
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}
