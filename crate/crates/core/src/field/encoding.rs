use std::f64::consts::PI;

/// Output width of [`positional_encode`] for `freqs` frequency bands.
pub fn encoded_dim(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Raw coordinates followed by `sin`/`cos` of `2^l * pi * x` for
/// `l = 0..freqs`, ordered band by band: `[x, sin(x), cos(x), sin(2x), ...]`
/// where each entry is a 3-vector.
pub fn positional_encode(x: [f64; 3], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(freqs));
    out.extend_from_slice(&x);
    encode_into(x, freqs, &mut out);
    out
}

pub(crate) fn encode_into(x: [f64; 3], freqs: usize, out: &mut Vec<f64>) {
    for l in 0..freqs {
        let f = (1u64 << l) as f64 * PI;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
}
