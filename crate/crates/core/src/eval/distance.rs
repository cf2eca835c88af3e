use crate::error::{Error, Result};
use crate::grid::Mask;

/// Exact squared distance of a 1-D sampled function's lower envelope
/// (Felzenszwalb & Huttenlocher).
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // skip leading infinities so parabola intersections stay finite
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let inter = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        let mut s = inter(v[k]);
        // z[0] = −∞ stops the scan at the first parabola
        while s <= z[k] {
            k -= 1;
            s = inter(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest set pixel of
/// `mask` (infinite everywhere if the mask is empty). Exact: all values are
/// integers.
pub fn squared_distance_transform(mask: &Mask) -> Vec<f64> {
    let (h, w) = mask.dims();
    let n = h.max(w);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    let mut tmp: Vec<f64> = mask.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            tmp[y * w + x] = col_out[y];
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        envelope_1d(&tmp[y * w..(y + 1) * w], &mut out[y * w..(y + 1) * w], &mut v, &mut z);
    }
    out
}

/// Euclidean distance transform (see [`squared_distance_transform`]).
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    squared_distance_transform(mask).into_iter().map(f64::sqrt).collect()
}

/// Directed distance `max_{a ∈ A} min_{b ∈ B} ‖a − b‖`.
fn directed(a: &Mask, dt_b: &[f64]) -> f64 {
    a.data()
        .iter()
        .zip(dt_b)
        .filter(|(set, _)| **set)
        .map(|(_, d)| *d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance in pixels between two non-empty masks.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    a.same_dims(b, "hausdorff masks")?;
    if a.is_empty_mask() || b.is_empty_mask() {
        return Err(Error::InvalidData("hausdorff distance needs two non-empty masks".into()));
    }
    let dt_a = squared_distance_transform(a);
    let dt_b = squared_distance_transform(b);
    Ok(directed(a, &dt_b).max(directed(b, &dt_a)))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn brute_sq(mask: &Mask) -> Vec<f64> {
        let pts = mask.points();
        Mask::from_fn(mask.height(), mask.width(), |_, _| false)
            .data()
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let (y, x) = ((i / mask.width()) as f64, (i % mask.width()) as f64);
                pts.iter()
                    .map(|&(py, px)| (y - py as f64).powi(2) + (x - px as f64).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, p) in [(1, 1, 1.0), (5, 9, 0.1), (17, 13, 0.02), (32, 32, 0.005), (8, 8, 0.0)] {
            let m = Mask::from_fn(h, w, |_, _| rng.random::<f64>() < p);
            assert_eq!(squared_distance_transform(&m), brute_sq(&m), "{h}x{w} p={p}");
        }
    }

    #[test]
    fn hausdorff_cases() {
        let a = Mask::from_fn(6, 6, |y, x| y == 0 && x == 0);
        let b = Mask::from_fn(6, 6, |y, x| y == 3 && x == 4);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert!(hausdorff(&a, &Mask::filled(6, 6, false)).is_err());
        assert!(hausdorff(&a, &Mask::filled(5, 6, true)).is_err());
    }
}
