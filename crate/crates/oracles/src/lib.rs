//! Brute-force reference implementations for the test suites.
//!
//! Everything here works on plain `Vec<f64>` data with textbook algorithms
//! (Gauss–Jordan elimination, exhaustive enumeration, linear scans) and shares
//! no code with `mbs-core`, so agreement between the two is meaningful.
//! Samples are passed as a list of input vectors (the columns of `X`).

pub type Mat = Vec<Vec<f64>>;

/// `Σ_s x_s x_sᵀ`.
pub fn gram(samples: &[Vec<f64>]) -> Mat {
    let d = samples.first().map_or(0, Vec::len);
    let mut h = vec![vec![0.0; d]; d];
    for x in samples {
        for i in 0..d {
            for j in 0..d {
                h[i][j] += x[i] * x[j];
            }
        }
    }
    h
}

/// Gauss–Jordan inverse with partial pivoting; `None` when singular.
pub fn dense_inverse(a: &Mat) -> Option<Mat> {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot = m[col].clone();
                    for (x, p) in m[r].iter_mut().zip(&pivot) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

/// `Σ_s Σ_r ((w_old − w_new)_r · x_s)²`, summed per sample.
pub fn layer_error(w_old: &Mat, w_new: &Mat, samples: &[Vec<f64>]) -> f64 {
    let mut e = 0.0;
    for x in samples {
        for (a, b) in w_old.iter().zip(w_new) {
            let ya: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
            let yb: f64 = b.iter().zip(x).map(|(p, q)| p * q).sum();
            e += (ya - yb) * (ya - yb);
        }
    }
    e
}

/// Kept weights minimizing `Σ_s (w·x_s − ŵ_K·x_{s,K})²`; pruned entries are 0.
/// Solves the normal equations `H_KK ŵ_K = (H w)_K`, adding a `1e-8` ridge if
/// `H_KK` is singular.
pub fn least_squares_refit(w_row: &[f64], samples: &[Vec<f64>], keep: &[usize]) -> Vec<f64> {
    let h = gram(samples);
    let hw = mat_vec(&h, w_row);
    let sub: Mat = keep
        .iter()
        .map(|&i| keep.iter().map(|&j| h[i][j]).collect())
        .collect();
    let inv = dense_inverse(&sub).unwrap_or_else(|| {
        let mut ridged = sub.clone();
        for (i, r) in ridged.iter_mut().enumerate() {
            r[i] += 1e-8;
        }
        dense_inverse(&ridged).expect("ridge makes the system nonsingular")
    });
    let rhs: Vec<f64> = keep.iter().map(|&i| hw[i]).collect();
    let sol = mat_vec(&inv, &rhs);
    let mut out = vec![0.0; w_row.len()];
    for (&i, v) in keep.iter().zip(sol) {
        out[i] = v;
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum layer error over every per-row keep-set of size `k_per_row`, each
/// with its optimal least-squares refit. Returns the best mask and error, or
/// `None` if `in_dim > 12`.
pub fn exhaustive_best_mask(
    w: &Mat,
    samples: &[Vec<f64>],
    k_per_row: usize,
) -> Option<(Vec<Vec<bool>>, f64)> {
    let d = w.first().map_or(0, Vec::len);
    if d > 12 || k_per_row > d {
        return None;
    }
    let sets = combinations(d, k_per_row);
    let mut mask = Vec::with_capacity(w.len());
    let mut total = 0.0;
    for row in w {
        let mut best: Option<(f64, &Vec<usize>)> = None;
        for keep in &sets {
            let refit = least_squares_refit(row, samples, keep);
            let e = layer_error(&vec![row.clone()], &vec![refit], samples);
            if best.is_none_or(|(b, _)| e < b) {
                best = Some((e, keep));
            }
        }
        let (e, keep) = best.expect("at least one keep-set");
        total += e;
        mask.push((0..d).map(|c| keep.contains(&c)).collect());
    }
    Some((mask, total))
}

/// Index of the level `zero + scale·ℓ` (ℓ < 2^bits) closest to `value`;
/// equidistant levels resolve to the even index.
pub fn nearest_level(value: f64, scale: f64, zero: f64, bits: u32) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for l in 0..(1u32 << bits) {
        let d = (value - (zero + scale * f64::from(l))).abs();
        if d < best_d || (d == best_d && l % 2 == 0 && best % 2 == 1) {
            best = l;
            best_d = d;
        }
    }
    best
}

/// RMS distance between planar point sets after the best rigid alignment
/// (translation plus rotation or reflection).
pub fn procrustes_rms(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len() as f64;
    let centre = |p: &[[f64; 2]]| {
        let cx = p.iter().map(|q| q[0]).sum::<f64>() / n;
        let cy = p.iter().map(|q| q[1]).sum::<f64>() / n;
        p.iter().map(|q| [q[0] - cx, q[1] - cy]).collect::<Vec<_>>()
    };
    let (a, b) = (centre(a), centre(b));
    let rms_after = |reflect: bool| {
        let b: Vec<[f64; 2]> = b
            .iter()
            .map(|q| if reflect { [q[0], -q[1]] } else { *q })
            .collect();
        // rotation angle maximizing Σ aᵢ·R bᵢ
        let (mut s, mut c) = (0.0, 0.0);
        for (p, q) in a.iter().zip(&b) {
            c += p[0] * q[0] + p[1] * q[1];
            s += p[1] * q[0] - p[0] * q[1];
        }
        let t = s.atan2(c);
        let (st, ct) = t.sin_cos();
        let sq: f64 = a
            .iter()
            .zip(&b)
            .map(|(p, q)| {
                let r = [ct * q[0] - st * q[1], st * q[0] + ct * q[1]];
                (p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)
            })
            .sum();
        (sq / n).sqrt()
    };
    rms_after(false).min(rms_after(true))
}

/// A k-gram MLP held entirely in f64: `embedding[token][e]`, then linear
/// layers `(weights[out][in], bias[out])` with ReLU between them.
pub struct Mlp {
    pub embedding: Mat,
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl Mlp {
    pub fn logits(&self, context: &[u8]) -> Vec<f64> {
        let mut x: Vec<f64> = context
            .iter()
            .flat_map(|&t| self.embedding[t as usize].iter().copied())
            .collect();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut y: Vec<f64> = mat_vec(w, &x).iter().zip(b).map(|(p, q)| p + q).collect();
            if i + 1 < self.layers.len() {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            x = y;
        }
        x
    }

    /// Mean `−ln softmax(logits)[target]`.
    pub fn mean_loss(&self, examples: &[(Vec<u8>, u8)]) -> f64 {
        let mut total = 0.0;
        for (ctx, target) in examples {
            let z = self.logits(ctx);
            let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[*target as usize];
        }
        total / examples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.5],
            vec![-0.3, 2.0],
            vec![0.7, -1.1],
            vec![0.2, 0.4],
        ]
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn inverse_round_trip() {
        let a = vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ];
        let inv = dense_inverse(&a).unwrap();
        for i in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| inv[r][i]).collect();
            let e = mat_vec(&a, &col);
            for (j, v) in e.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(dense_inverse(&vec![vec![1.0, 2.0], vec![2.0, 4.0]]).is_none());
    }

    #[test]
    fn refit_cases() {
        let x = samples();
        let w = [0.8, -0.6];
        assert!(least_squares_refit(&w, &x, &[0, 1])
            .iter()
            .zip(&w)
            .all(|(a, b)| (a - b).abs() < 1e-12));
        // single kept column: projection coefficient (Σ y x₀)/(Σ x₀²)
        let y: Vec<f64> = x.iter().map(|s| w[0] * s[0] + w[1] * s[1]).collect();
        let num: f64 = y.iter().zip(&x).map(|(y, s)| y * s[0]).sum();
        let den: f64 = x.iter().map(|s| s[0] * s[0]).sum();
        let r = least_squares_refit(&w, &x, &[0]);
        assert!((r[0] - num / den).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        // identical columns are singular and take the ridge path
        let dup: Vec<Vec<f64>> = x.iter().map(|s| vec![s[0], s[0]]).collect();
        let r = least_squares_refit(&w, &dup, &[0, 1]);
        assert!((r[0] + r[1] - (w[0] + w[1])).abs() < 1e-6);
    }

    #[test]
    fn exhaustive_cases() {
        let x = samples();
        let w = vec![vec![0.8, -0.6]];
        let (mask, e) = exhaustive_best_mask(&w, &x, 1).unwrap();
        let e0 = layer_error(&w, &vec![least_squares_refit(&w[0], &x, &[0])], &x);
        let e1 = layer_error(&w, &vec![least_squares_refit(&w[0], &x, &[1])], &x);
        assert_eq!(e, e0.min(e1));
        assert_eq!(
            mask[0],
            if e0 <= e1 {
                vec![true, false]
            } else {
                vec![false, true]
            }
        );
        assert!(exhaustive_best_mask(&w, &x, 2).unwrap().1 < 1e-20);
        assert!(exhaustive_best_mask(&vec![vec![0.0; 13]], &[vec![0.0; 13]], 1).is_none());
        assert_eq!(combinations(6, 3).len(), 20);
    }

    #[test]
    fn level_cases() {
        assert_eq!(nearest_level(3.0, 1.0, 0.0, 3), 3);
        assert_eq!(nearest_level(2.5, 1.0, 0.0, 3), 2);
        assert_eq!(nearest_level(3.5, 1.0, 0.0, 3), 4);
        assert_eq!(nearest_level(-9.0, 1.0, 0.0, 3), 0);
        assert_eq!(nearest_level(9.0, 1.0, 0.0, 3), 7);
    }

    #[test]
    fn procrustes_cases() {
        let a = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let t = 0.7f64;
        let rot: Vec<[f64; 2]> = a
            .iter()
            .map(|p| {
                [
                    t.cos() * p[0] - t.sin() * p[1] + 5.0,
                    t.sin() * p[0] + t.cos() * p[1] - 2.0,
                ]
            })
            .collect();
        assert!(procrustes_rms(&a, &rot) < 1e-12);
        let refl: Vec<[f64; 2]> = a.iter().map(|p| [-p[0], p[1]]).collect();
        assert!(procrustes_rms(&a, &refl) < 1e-12);
        let bent = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 2.0]];
        assert!(procrustes_rms(&a, &bent) > 0.1);
    }

    #[test]
    fn mlp_loss_uniform() {
        let mlp = Mlp {
            embedding: vec![vec![0.0; 2]; 256],
            layers: vec![(vec![vec![0.0; 4]; 256], vec![0.0; 256])],
        };
        assert!((mlp.mean_loss(&[(vec![1, 2], 7)]) - 256f64.ln()).abs() < 1e-12);
    }
}
