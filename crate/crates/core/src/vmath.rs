//! Single precision `exp` and `ln` over slices through glibc's vector math
//! library. The 16-lane AVX-512 variants are used when the CPU has them,
//! otherwise the 4-lane SSE ones. Tails are padded so every element goes
//! through the same routine regardless of its position.

use std::arch::asm;
use std::arch::x86_64::{__m128, __m512, _mm512_loadu_ps, _mm512_storeu_ps, _mm_loadu_ps, _mm_storeu_ps};

// Declared without a signature: SIMD arguments are not allowed in Rust FFI
// declarations, so the calls go through `call4` and `call16`, which follow
// the vector ABI (argument and result in the first vector register).
#[link(name = "mvec")]
extern "C" {
    fn _ZGVbN4v_expf();
    fn _ZGVbN4v_logf();
    fn _ZGVeN16v_expf();
    fn _ZGVeN16v_logf();
}

/// # Safety
/// `f` must be a 4-lane libmvec routine.
unsafe fn call4(f: unsafe extern "C" fn(), x: __m128) -> __m128 {
    let out;
    // SAFETY: the vector ABI passes and returns in xmm0 and preserves what
    // the C ABI preserves; asm! keeps the stack aligned for calls
    unsafe { asm!("call {f}", f = in(reg) f, inout("xmm0") x => out, clobber_abi("C")) };
    out
}

/// # Safety
/// `f` must be a 16-lane libmvec routine and the CPU must have AVX-512F.
#[target_feature(enable = "avx512f")]
unsafe fn call16(f: unsafe extern "C" fn(), x: __m512) -> __m512 {
    let out;
    // SAFETY: as in `call4`, with zmm0
    unsafe { asm!("call {f}", f = in(reg) f, inout("zmm0") x => out, clobber_abi("C")) };
    out
}

#[derive(Clone, Copy)]
enum Op {
    Exp,
    Ln,
}

pub(crate) fn exp_in_place(xs: &mut [f32]) {
    apply(xs, Op::Exp);
}

pub(crate) fn ln_in_place(xs: &mut [f32]) {
    apply(xs, Op::Ln);
}

fn apply(xs: &mut [f32], op: Op) {
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at run time
        unsafe { apply16(xs, op) }
    } else {
        apply4(xs, op);
    }
}

#[target_feature(enable = "avx512f")]
fn apply16(xs: &mut [f32], op: Op) {
    let f: unsafe extern "C" fn() = match op {
        Op::Exp => _ZGVeN16v_expf,
        Op::Ln => _ZGVeN16v_logf,
    };
    let mut chunks = xs.chunks_exact_mut(16);
    for c in &mut chunks {
        // SAFETY: `c` holds exactly 16 floats; the loads and stores are unaligned
        unsafe { _mm512_storeu_ps(c.as_mut_ptr(), call16(f, _mm512_loadu_ps(c.as_ptr()))) }
    }
    let tail = chunks.into_remainder();
    if !tail.is_empty() {
        let mut buf = [1.0f32; 16];
        buf[..tail.len()].copy_from_slice(tail);
        // SAFETY: as above, on a stack buffer of 16 floats
        unsafe { _mm512_storeu_ps(buf.as_mut_ptr(), call16(f, _mm512_loadu_ps(buf.as_ptr()))) }
        tail.copy_from_slice(&buf[..tail.len()]);
    }
}

fn apply4(xs: &mut [f32], op: Op) {
    let f: unsafe extern "C" fn() = match op {
        Op::Exp => _ZGVbN4v_expf,
        Op::Ln => _ZGVbN4v_logf,
    };
    let mut chunks = xs.chunks_exact_mut(4);
    for c in &mut chunks {
        // SAFETY: `c` holds exactly 4 floats; SSE2 is part of the x86_64 baseline
        unsafe { _mm_storeu_ps(c.as_mut_ptr(), call4(f, _mm_loadu_ps(c.as_ptr()))) }
    }
    let tail = chunks.into_remainder();
    if !tail.is_empty() {
        let mut buf = [1.0f32; 4];
        buf[..tail.len()].copy_from_slice(tail);
        // SAFETY: as above, on a stack buffer of 4 floats
        unsafe { _mm_storeu_ps(buf.as_mut_ptr(), call4(f, _mm_loadu_ps(buf.as_ptr()))) }
        tail.copy_from_slice(&buf[..tail.len()]);
    }
}
