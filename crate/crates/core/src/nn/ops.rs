//! Dense kernels. Fixed accumulation order keeps results bit-reproducible.

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four interleaved partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Numerically stable softmax over the entries with `keep[i] == true`; the rest get 0.
pub fn masked_softmax(logits: &[f64], keep: impl Fn(usize) -> bool, out: &mut [f64]) {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, (o, &z)) in out.iter_mut().zip(logits).enumerate() {
        *o = if keep(i) { (z - max).exp() } else { 0.0 };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
