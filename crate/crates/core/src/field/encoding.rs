//! Frequency encoding `v -> [v, sin(2^0 pi v), cos(2^0 pi v), ...]`, applied
//! per component, plus its forward tangent and reverse passes.

use crate::real::Real;

/// Encoded width of a `dim`-vector with `freqs` frequencies.
pub const fn encoded_len(dim: usize, freqs: usize) -> usize {
    dim * (1 + 2 * freqs)
}

#[inline]
fn freq<T: Real>(i: usize) -> T {
    T::of((1u64 << i) as f64 * std::f64::consts::PI)
}

/// Encode `values` into `out` (length `encoded_len(values.len(), freqs)`).
pub fn encode_into<T: Real>(values: &[T], freqs: usize, out: &mut [T]) {
    let w = 1 + 2 * freqs;
    debug_assert_eq!(out.len(), values.len() * w);
    for (c, &v) in values.iter().enumerate() {
        let block = &mut out[c * w..(c + 1) * w];
        block[0] = v;
        for i in 0..freqs {
            let (s, co) = (freq::<T>(i) * v).sin_cos();
            block[1 + 2 * i] = s;
            block[2 + 2 * i] = co;
        }
    }
}

/// Positional encoding of a vector, returned as a new `Vec`.
pub fn positional_encode<T: Real>(values: &[T], freqs: usize) -> Vec<T> {
    let mut out = vec![T::zero(); encoded_len(values.len(), freqs)];
    encode_into(values, freqs, &mut out);
    out
}

/// Tangent of the encoding in direction `dot`, reading the sines and
/// cosines from `encoded` (the output of [`encode_into`]).
pub fn encode_tangent_into<T: Real>(encoded: &[T], dot: &[T], freqs: usize, out: &mut [T]) {
    let w = 1 + 2 * freqs;
    for (c, &vd) in dot.iter().enumerate() {
        let e = &encoded[c * w..(c + 1) * w];
        let block = &mut out[c * w..(c + 1) * w];
        block[0] = vd;
        for i in 0..freqs {
            let a = freq::<T>(i) * vd;
            block[1 + 2 * i] = a * e[2 + 2 * i];
            block[2 + 2 * i] = -a * e[1 + 2 * i];
        }
    }
}

/// Adds the cotangent of the encoded values given the cotangent of the
/// encoding. `encoded` is the forward output.
pub fn encode_backward<T: Real>(encoded: &[T], freqs: usize, out_bar: &[T], values_bar: &mut [T]) {
    let w = 1 + 2 * freqs;
    for (c, vb) in values_bar.iter_mut().enumerate() {
        let e = &encoded[c * w..(c + 1) * w];
        let block = &out_bar[c * w..(c + 1) * w];
        let mut acc = block[0];
        for i in 0..freqs {
            let a = freq::<T>(i);
            acc += a * (e[2 + 2 * i] * block[1 + 2 * i] - e[1 + 2 * i] * block[2 + 2 * i]);
        }
        *vb += acc;
    }
}

/// Reverse pass through the tangent of the encoding for one tangent
/// direction: given the cotangent of the encoded tangent, adds the
/// contributions to the cotangents of the values and of `dot`.
pub fn encode_tangent_backward<T: Real>(
    encoded: &[T],
    dot: &[T],
    freqs: usize,
    out_dot_bar: &[T],
    values_bar: &mut [T],
    dot_bar: &mut [T],
) {
    let w = 1 + 2 * freqs;
    for (c, &vd) in dot.iter().enumerate() {
        let e = &encoded[c * w..(c + 1) * w];
        let block = &out_dot_bar[c * w..(c + 1) * w];
        let mut d_acc = block[0];
        let mut v_acc = T::zero();
        for i in 0..freqs {
            let a = freq::<T>(i);
            let (s, co) = (e[1 + 2 * i], e[2 + 2 * i]);
            let (bs, bc) = (block[1 + 2 * i], block[2 + 2 * i]);
            d_acc += a * (co * bs - s * bc);
            v_acc -= a * a * vd * (s * bs + co * bc);
        }
        dot_bar[c] += d_acc;
        values_bar[c] += v_acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_two_frequencies() {
        assert_eq!(positional_encode(&[0.0f64], 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_input_one_frequency() {
        let e = positional_encode(&[0.5f64], 1);
        assert_eq!(e[0], 0.5);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!(e[2].abs() < 1e-15);
    }

    #[test]
    fn no_frequencies_is_identity() {
        let v = [0.3f64, -2.0, 7.5];
        assert_eq!(positional_encode(&v, 0), v.to_vec());
    }

    #[test]
    fn output_length() {
        assert_eq!(positional_encode(&[0.1f32; 32], 2).len(), 160);
        assert_eq!(encoded_len(3, 4), 27);
    }

    #[test]
    fn reverse_passes_match_finite_differences() {
        let v = [0.37f64, -0.81];
        let vd = [0.6f64, -1.3];
        let freqs = 3;
        let n = encoded_len(2, freqs);
        let bar: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let dbar: Vec<f64> = (0..n).map(|i| ((i * 3 % 4) as f64 - 1.5) * 0.2).collect();
        // L(v, vd) = <bar, enc(v)> + <dbar, d enc(v)[vd]>
        let loss = |v: &[f64], vd: &[f64]| {
            let e = positional_encode(v, freqs);
            let mut t = vec![0.0; n];
            encode_tangent_into(&e, vd, freqs, &mut t);
            e.iter().zip(&bar).map(|(a, b)| a * b).sum::<f64>() + t.iter().zip(&dbar).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut vb = vec![0.0; 2];
        let mut vdb = vec![0.0; 2];
        let e = positional_encode(&v, freqs);
        encode_backward(&e, freqs, &bar, &mut vb);
        encode_tangent_backward(&e, &vd, freqs, &dbar, &mut vb, &mut vdb);
        let h = 1e-6;
        for c in 0..2 {
            let mut p = v;
            let mut m = v;
            p[c] += h;
            m[c] -= h;
            let fd = (loss(&p, &vd) - loss(&m, &vd)) / (2.0 * h);
            assert!((fd - vb[c]).abs() < 1e-6, "value {c}: {fd} vs {}", vb[c]);
            let mut p = vd;
            let mut m = vd;
            p[c] += h;
            m[c] -= h;
            let fd = (loss(&v, &p) - loss(&v, &m)) / (2.0 * h);
            assert!((fd - vdb[c]).abs() < 1e-6, "tangent {c}: {fd} vs {}", vdb[c]);
        }
    }
}
