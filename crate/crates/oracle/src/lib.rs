//! Deliberately naive reference implementations.
//!
//! Everything here is written as plain scalar loops over flat slices, with
//! no shared code with the optimized crates. Tests compare the real
//! kernels against these. Feature layouts are `[c][p]` with `p` a flat
//! pixel index; all arithmetic is `f64`.

const EPS: f64 = 1e-8;

pub fn masked_average_pooling(
    features: &[f32],
    mask: &[f32],
    c: usize,
    hw: usize,
) -> Option<Vec<f64>> {
    let mut total = 0.0;
    for p in 0..hw {
        total += mask[p] as f64;
    }
    if total == 0.0 {
        return None;
    }
    let mut out = vec![0.0; c];
    for k in 0..c {
        for p in 0..hw {
            out[k] += features[k * hw + p] as f64 * mask[p] as f64;
        }
        out[k] /= total;
    }
    Some(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let v = dot / (na.sqrt() * nb.sqrt() + EPS);
    v.max(-1.0).min(1.0)
}

fn column(data: &[f32], c: usize, hw: usize, p: usize) -> Vec<f64> {
    (0..c).map(|k| data[k * hw + p] as f64).collect()
}

pub fn cosine_map(proto: &[f32], features: &[f32], c: usize, hw: usize) -> Vec<f64> {
    let proto: Vec<f64> = proto.iter().map(|&v| v as f64).collect();
    (0..hw)
        .map(|p| cosine(&proto, &column(features, c, hw, p)))
        .collect()
}

pub fn cosine_field_map(field: &[f32], features: &[f32], c: usize, hw: usize) -> Vec<f64> {
    (0..hw)
        .map(|p| cosine(&column(field, c, hw, p), &column(features, c, hw, p)))
        .collect()
}

/// `(e^{t f}, e^{t b})` normalized per pixel.
pub fn pairwise_softmax(fg: &[f64], bg: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut pf = Vec::new();
    let mut pb = Vec::new();
    for i in 0..fg.len() {
        let ef = (t * fg[i]).exp();
        let eb = (t * bg[i]).exp();
        pf.push(ef / (ef + eb));
        pb.push(eb / (ef + eb));
    }
    (pf, pb)
}

/// `(n x k) * (k x m)`, textbook triple loop.
pub fn matmul(a: &[f32], b: &[f32], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] as f64 * b[t * m + j] as f64;
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Adaptive background aggregation computed pixel by pixel: every query
/// pixel gets the softmax(dot product)-weighted mean of the selected
/// background columns. Output layout `[c][p]`.
pub fn adaptive_background(features: &[f32], bg_pixels: &[usize], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        let q = column(features, c, hw, p);
        let mut logits = Vec::new();
        for &b in bg_pixels {
            let f = column(features, c, hw, b);
            let mut d = 0.0;
            for k in 0..c {
                d += f[k] * q[k];
            }
            logits.push(d);
        }
        let mut max = f64::NEG_INFINITY;
        for &l in &logits {
            if l > max {
                max = l;
            }
        }
        let mut z = 0.0;
        for &l in &logits {
            z += (l - max).exp();
        }
        for (i, &b) in bg_pixels.iter().enumerate() {
            let w = (logits[i] - max).exp() / z;
            for k in 0..c {
                out[k * hw + p] += w * features[k * hw + b] as f64;
            }
        }
    }
    out
}

/// Matching BCE: per pixel, fg probability from a 2-way softmax of the fg
/// and bg cosines, cross entropy against `gt`, averaged over pixels.
/// `bg_field` is `[c][p]`; `features` are `f64` so callers can perturb them.
pub fn matching_bce(
    fg_proto: &[f64],
    bg_field: &[f64],
    features: &[f64],
    gt: &[f32],
    c: usize,
    hw: usize,
    t: f64,
) -> f64 {
    let mut total = 0.0;
    for p in 0..hw {
        let q: Vec<f64> = (0..c).map(|k| features[k * hw + p]).collect();
        let b: Vec<f64> = (0..c).map(|k| bg_field[k * hw + p]).collect();
        let f = cosine(fg_proto, &q);
        let g = cosine(&b, &q);
        let ef = (t * f).exp();
        let eb = (t * g).exp();
        let prob = ef / (ef + eb);
        let y = gt[p] as f64;
        total -= y * prob.ln() + (1.0 - y) * (1.0 - prob).ln();
    }
    total / hw as f64
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Foreground IoU of `pred > threshold` against a binary `gt`; an empty
/// union counts as a perfect match.
pub fn iou(pred: &[f32], gt: &[f32], threshold: f64) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..pred.len() {
        let a = pred[i] as f64 > threshold;
        let b = gt[i] > 0.0;
        if a && b {
            inter += 1;
        }
        if a || b {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn mae_all(pred: &[f32], gt: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] as f64 - gt[i] as f64).abs();
    }
    s / pred.len() as f64
}

/// MAE over pixels that are positive in both `gt` and `pred > threshold`.
pub fn mae_tp(pred: &[f32], gt: &[f32], threshold: f64) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if gt[i] > 0.0 && pred[i] as f64 > threshold {
            s += (pred[i] as f64 - gt[i] as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(s / n as f64)
    }
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn top_k(scores: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // selection sort, on purpose
    for i in 0..idx.len() {
        let mut best = i;
        for j in i + 1..idx.len() {
            let (a, b) = (scores[idx[j]], scores[idx[best]]);
            if a > b || (a == b && idx[j] < idx[best]) {
                best = j;
            }
        }
        idx.swap(i, best);
    }
    idx.truncate(k.min(scores.len()));
    idx
}

/// Filled bounding box of the nonzero pixels, found by a min/max scan.
pub fn bounding_box(mask: &[f32], h: usize, w: usize) -> Option<Vec<f32>> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] > 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return None;
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            if r >= r0 && r <= r1 && c >= c0 && c <= c1 {
                out[r * w + c] = 1.0;
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn top_k_breaks_ties_low_index_first() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.1], 3), vec![1, 0, 2]);
    }
}
