//! Independent metric oracles: brute-force average precision and a direct
//! windowed SSIM.

#![allow(dead_code)]

/// Average precision as the mean, over positive pixels, of the precision at
/// that pixel's own score (every pixel scoring at least as high counts).
pub fn brute_ap(scores: &[f64], truth: &[u8]) -> f64 {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| truth[i] != 0).collect();
    let mut total = 0.0;
    for &i in &positives {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = above.iter().filter(|&&j| truth[j] != 0).count();
        total += tp as f64 / above.len() as f64;
    }
    total / positives.len() as f64
}

/// Direct windowed SSIM: 2-D Gaussian built in place, moments from centred sums.
pub fn reference_ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let norm = |v: &[f32]| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        if hi == lo {
            vec![0.5; v.len()]
        } else {
            v.iter().map(|&x| (x as f64 - lo) / (hi - lo)).collect()
        }
    };
    let (a, b) = (norm(a), norm(b));
    let k = 11usize;
    let mut win = vec![0.0f64; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            win[y * k + x] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let at = |m: &[f64], y: usize, x: usize| m[(oy + y) * w + ox + x];
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    ma += win[y * k + x] * at(&a, y, x);
                    mb += win[y * k + x] * at(&b, y, x);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let (da, db) = (at(&a, y, x) - ma, at(&b, y, x) - mb);
                    va += win[y * k + x] * da * da;
                    vb += win[y * k + x] * db * db;
                    cov += win[y * k + x] * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Probability that a random positive outranks a random negative, by
/// enumerating every pair.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Brute-force lesion oracle: the largest gap between the mean intensity inside
/// a disc and the mean outside it, over every disc centre.
pub fn inside_outside_contrast(image: &[f32], side: usize, radius: f64) -> f64 {
    let total: f64 = image.iter().map(|&v| v as f64).sum();
    let mut best = f64::NEG_INFINITY;
    for cy in 0..side {
        for cx in 0..side {
            let (mut sum, mut count) = (0.0f64, 0usize);
            for y in 0..side {
                for x in 0..side {
                    let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                    if dx * dx + dy * dy < radius * radius {
                        sum += image[y * side + x] as f64;
                        count += 1;
                    }
                }
            }
            let outside = (total - sum) / (image.len() - count) as f64;
            best = best.max(sum / count as f64 - outside);
        }
    }
    best
}
