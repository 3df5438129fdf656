//! Independent scalar-loop oracles shared by the test targets.
#![allow(dead_code)]

use pffnet::Tensor;

/// Scalar-loop PSNR.
pub fn naive_psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        sum += (a.data()[i] - b.data()[i]).powi(2);
    }
    10.0 * (1.0 / (sum / a.len() as f64)).log10()
}

/// Direct 11x11 windowed SSIM with a 2-D Gaussian built in place.
pub fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let d = a.dims();
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    for c in 0..d.c {
        let mut sum = 0.0;
        let mut count = 0;
        for y in 0..=d.h - 11 {
            for x in 0..=d.w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / total;
                        let (p, q) = (a.at(0, c, y + i, x + j), b.at(0, c, y + i, x + j));
                        ma += wgt * p;
                        mb += wgt * q;
                        saa += wgt * p * p;
                        sbb += wgt * q * q;
                        sab += wgt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / d.c as f64
}
