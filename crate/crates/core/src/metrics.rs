//! Full-reference quality metrics: PSNR and SSIM in the `[0, 1]` domain.

use std::fmt::{self, Write as _};

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in decibels; identical images have no finite
/// value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// `10 log10(peak^2 / mse)` from a mean squared error.
pub fn psnr_from_mse(mse: f64, peak: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (peak * peak / mse).log10())
    }
}

/// PSNR over every element of two equally shaped tensors.
pub fn psnr_tensor<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Psnr> {
    a.dims().expect("psnr", b.dims())?;
    if a.is_empty() {
        return Err(Error::invalid("psnr of empty images"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / a.len() as f64, peak))
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<Psnr> {
    psnr_tensor(&a.to_tensor::<f64>(), &b.to_tensor::<f64>(), peak)
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one channel pair over all fully contained windows.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let product = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let aa = filter_valid(&product(|x, _| x * x), h, w, taps);
    let bb = filter_valid(&product(|_, y| y * y), h, w, taps);
    let ab = filter_valid(&product(|x, y| x * y), h, w, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM averaged over every `(item, channel)` plane.
pub fn ssim_tensor<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.dims().expect("ssim", b.dims())?;
    let d = a.dims();
    if d.h < SSIM_WINDOW || d.w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            d.h, d.w
        )));
    }
    if d.n * d.c == 0 {
        return Err(Error::invalid("ssim of empty images"));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let to64 = |p: &[T]| p.iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let mut total = 0.0;
    for n in 0..d.n {
        for c in 0..d.c {
            total += ssim_plane(&to64(a.plane(n, c)), &to64(b.plane(n, c)), d.h, d.w, &taps);
        }
    }
    Ok(total / (d.n * d.c) as f64)
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_tensor(&a.to_tensor::<f64>(), &b.to_tensor::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricEntry {
    pub index: usize,
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

/// Per-image metrics in input order plus their means. Infinite PSNR
/// entries are counted separately and excluded from the PSNR mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
    /// Pairs that could not be scored, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub mean_psnr: Option<f64>,
    pub infinite_psnr: usize,
    pub mean_ssim: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn from_entries(entries: Vec<MetricEntry>, skipped: Vec<(usize, String)>) -> Self {
        MetricReport {
            mean_psnr: mean(entries.iter().filter_map(|e| e.psnr.db())),
            infinite_psnr: entries.iter().filter(|e| e.psnr.is_infinite()).count(),
            mean_ssim: mean(entries.iter().map(|e| e.ssim)),
            entries,
            skipped,
        }
    }

    fn fmt_opt(v: Option<f64>) -> String {
        v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# ssim: per-channel mean, gaussian window 11x11 sigma 1.5\n");
        out.push_str("index\tname\tpsnr_db\tssim\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", e.index, e.name, e.psnr, e.ssim);
        }
        let _ = writeln!(
            out,
            "mean\t{} finite, {} infinite\t{}\t{}",
            self.entries.len() - self.infinite_psnr,
            self.infinite_psnr,
            Self::fmt_opt(self.mean_psnr),
            Self::fmt_opt(self.mean_ssim)
        );
        for (i, why) in &self.skipped {
            let _ = writeln!(out, "# skipped {i}: {why}");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:>5}  {:<width$}  {:>10}  {:>8}\n", "#", "name", "PSNR (dB)", "SSIM");
        for e in &self.entries {
            let _ = writeln!(out, "{:>5}  {:<width$}  {:>10}  {:>8.4}", e.index, e.name, e.psnr.to_string(), e.ssim);
        }
        let _ = writeln!(
            out,
            "{:>5}  {:<width$}  {:>10}  {:>8}",
            "mean",
            format!("({} inf)", self.infinite_psnr),
            Self::fmt_opt(self.mean_psnr),
            Self::fmt_opt(self.mean_ssim)
        );
        out.push_str("SSIM averaged over colour channels.\n");
        out
    }
}

/// Score `(restored, truth)` pairs. Pairs that fail (e.g. mismatched
/// extents) are logged and skipped.
pub fn evaluate_pairs(pairs: &[(ImageBuffer, ImageBuffer)]) -> MetricReport {
    let mut entries = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for (index, (restored, truth)) in pairs.iter().enumerate() {
        let name = restored
            .source()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("image{index}"));
        match psnr(restored, truth, 1.0).and_then(|p| Ok((p, ssim(restored, truth)?))) {
            Ok((psnr, ssim)) => entries.push(MetricEntry { index, name, psnr, ssim }),
            Err(e) => {
                log::warn!("skipping pair {index} ({name}): {e}");
                skipped.push((index, e.to_string()));
            }
        }
    }
    MetricReport::from_entries(entries, skipped)
}
