//! Edit quality metrics: PSNR outside the sketches, Intersection-over-Sketch, SSIM.

use serde::{Deserialize, Serialize};

use crate::field::RadianceField;
use crate::render::{render_view, RenderOptions};
use crate::sketch::{Mask, SketchSet};

pub const PSNR_CAP: f64 = 60.0;

/// The nine IoS thresholds 25/255, 50/255, ..., 225/255.
pub fn ios_thresholds() -> [f64; 9] {
    std::array::from_fn(|i| 25.0 * (i + 1) as f64 / 255.0)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR over pixels outside `mask`; capped at 60 dB, including when no pixel is left.
pub fn psnr_outside_sketch(a: &[[f64; 3]], b: &[[f64; 3]], mask: &Mask) -> f64 {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), mask.as_slice().len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, q), &m) in a.iter().zip(b).zip(mask.as_slice()) {
        if m {
            continue;
        }
        sum += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
        n += 3;
    }
    if n == 0 {
        return PSNR_CAP;
    }
    psnr_from_mse(sum / n as f64)
}

pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    psnr_from_mse(sum / (3 * a.len().max(1)) as f64)
}

/// Fraction of mask pixels with alpha above `tau`; `None` for an empty mask.
pub fn ios_view(mask: &Mask, alpha: &[f64], tau: f64) -> Option<f64> {
    assert_eq!(alpha.len(), mask.as_slice().len());
    let total = mask.count();
    if total == 0 {
        return None;
    }
    let hit = mask.as_slice().iter().zip(alpha).filter(|(&m, &a)| m && a > tau).count();
    Some(hit as f64 / total as f64)
}

/// IoS at each threshold, averaged over the views with non-empty masks.
pub fn ios_per_threshold(masks: &[&Mask], alphas: &[&[f64]]) -> [f64; 9] {
    assert_eq!(masks.len(), alphas.len());
    let thresholds = ios_thresholds();
    let mut out = [0.0; 9];
    let used: Vec<usize> = (0..masks.len())
        .filter(|&i| {
            let empty = masks[i].count() == 0;
            if empty {
                log::warn!("sketch view {i} has an empty mask; skipped in IoS");
            }
            !empty
        })
        .collect();
    if used.is_empty() {
        return out;
    }
    for (k, &tau) in thresholds.iter().enumerate() {
        let s: f64 = used.iter().map(|&i| ios_view(masks[i], alphas[i], tau).unwrap()).sum();
        out[k] = s / used.len() as f64;
    }
    out
}

/// Intersection-over-Sketch: mean over the nine thresholds of the view-averaged IoS.
pub fn ios(masks: &[&Mask], alphas: &[&[f64]]) -> f64 {
    ios_per_threshold(masks, alphas).iter().sum::<f64>() / 9.0
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_WINDOW: usize = 11;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter keeping only windows that fit inside the image.
fn filter_valid(img: &[f64], w: usize, h: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, g: &[f64]) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let f = |v: &[f64]| filter_valid(v, w, h, g).0;
    let mu_a = f(a);
    let mu_b = f(b);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (s_aa, s_bb, s_ab) = (f(&aa), f(&bb), f(&ab));
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// SSIM of two RGB images in `[0, 1]`: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over valid window positions and then over channels.
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &[[f64; 3]], b: &[[f64; 3]], width: usize, height: usize) -> f64 {
    assert_eq!(a.len(), width * height);
    assert_eq!(b.len(), width * height);
    let mut size = SSIM_WINDOW.min(width).min(height);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size.max(1));
    (0..3)
        .map(|c| {
            let ca: Vec<f64> = a.iter().map(|p| p[c]).collect();
            let cb: Vec<f64> = b.iter().map(|p| p[c]).collect();
            ssim_channel(&ca, &cb, width, height, &g)
        })
        .sum::<f64>()
        / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub psnr: f64,
    /// `None` when the view's mask is empty.
    pub ios: Option<f64>,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_view: Vec<Option<f64>>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_hash: String,
    pub edited_hash: String,
    pub sketch_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: MetricSummary,
    pub ios: MetricSummary,
    pub ssim: MetricSummary,
    pub provenance: Provenance,
}

fn summary(values: Vec<Option<f64>>) -> MetricSummary {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    MetricSummary { per_view: values, mean }
}

/// Renders both fields from every sketch view and scores the edit.
///
/// SSIM compares the base render with the edited render whose masked pixels
/// are replaced by the base, so it measures preservation like the PSNR.
pub fn evaluate(base: &RadianceField, edited: &RadianceField, sketches: &SketchSet, opts: &RenderOptions) -> EvalReport {
    let views: Vec<ViewMetrics> = sketches
        .views()
        .iter()
        .map(|v| {
            let cam = v.camera();
            let rb = render_view(base, cam, opts);
            let re = render_view(edited, cam, opts);
            let mask = v.mask();
            let blended: Vec<[f64; 3]> =
                re.rgb.iter().zip(&rb.rgb).zip(mask.as_slice()).map(|((e, b), &m)| if m { *b } else { *e }).collect();
            let ios_v = ios_view(mask, &re.alpha, 0.0).map(|_| {
                ios_thresholds().iter().map(|&t| ios_view(mask, &re.alpha, t).unwrap()).sum::<f64>() / 9.0
            });
            if ios_v.is_none() {
                log::warn!("sketch view has an empty mask; skipped in IoS");
            }
            ViewMetrics {
                psnr: psnr_outside_sketch(&rb.rgb, &re.rgb, mask),
                ios: ios_v,
                ssim: ssim(&rb.rgb, &blended, cam.width(), cam.height()),
            }
        })
        .collect();
    EvalReport {
        psnr: summary(views.iter().map(|v| Some(v.psnr)).collect()),
        ios: summary(views.iter().map(|v| v.ios).collect()),
        ssim: summary(views.iter().map(|v| Some(v.ssim)).collect()),
        provenance: Provenance {
            base_hash: base.content_hash(),
            edited_hash: edited.content_hash(),
            sketch_hash: sketches.content_hash(),
        },
    }
}

impl EvalReport {
    /// Plain-text table, one row per view plus the means.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = format!("{:<6} {:>10} {:>8} {:>8}\n", "view", "psnr_db", "ios", "ssim");
        for i in 0..self.psnr.per_view.len() {
            s.push_str(&format!(
                "{:<6} {:>10} {:>8} {:>8}\n",
                i,
                fmt(self.psnr.per_view[i]),
                fmt(self.ios.per_view[i]),
                fmt(self.ssim.per_view[i])
            ));
        }
        s.push_str(&format!(
            "{:<6} {:>10.4} {:>8.4} {:>8.4}\n",
            "mean", self.psnr.mean, self.ios.mean, self.ssim.mean
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = vec![[0.5; 3]; 16];
        let mask = Mask::from_fn(4, 4, |x, _| x == 0);
        assert_eq!(psnr_outside_sketch(&a, &a, &mask), 60.0);
        let mut b = a.clone();
        for y in 0..4 {
            b[y * 4] = [0.0; 3];
        }
        assert_eq!(psnr_outside_sketch(&a, &b, &mask), 60.0);
        let c: Vec<[f64; 3]> = a.iter().map(|p| p.map(|v| v + 0.1)).collect();
        assert!((psnr_outside_sketch(&a, &c, &mask) - 20.0).abs() < 1e-9);
        assert_eq!(psnr_outside_sketch(&a, &c, &mask), psnr_outside_sketch(&c, &a, &mask));
    }

    #[test]
    fn ios_examples() {
        let mask = Mask::from_fn(8, 8, |x, y| x > 2 && y < 5);
        let ones = vec![1.0; 64];
        let zeros = vec![0.0; 64];
        assert_eq!(ios(&[&mask], &[&ones]), 1.0);
        assert_eq!(ios(&[&mask], &[&zeros]), 0.0);
        let stair: Vec<f64> = (0..64).map(|i| if mask.as_slice()[i] { 100.0 / 255.0 } else { 0.0 }).collect();
        assert_eq!(ios_per_threshold(&[&mask], &[&stair]), [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ios(&[&mask], &[&stair]), 3.0 / 9.0);
    }

    #[test]
    fn ios_skips_empty_masks() {
        let full = Mask::from_fn(4, 4, |_, _| true);
        let empty = Mask::new(4, 4);
        let a = vec![1.0; 16];
        assert_eq!(ios(&[&full, &empty], &[&a, &a]), 1.0);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a: Vec<[f64; 3]> = (0..400).map(|i| [(i % 7) as f64 / 7.0, (i % 3) as f64 / 3.0, 0.2]).collect();
        assert!((ssim(&a, &a, 20, 20) - 1.0).abs() < 1e-12);
        let (c1, c2) = (0.3, 0.7);
        let x = vec![[c1; 3]; 400];
        let y = vec![[c2; 3]; 400];
        let k = SSIM_K1 * SSIM_K1;
        let expect = (2.0 * c1 * c2 + k) / (c1 * c1 + c2 * c2 + k);
        assert!((ssim(&x, &y, 20, 20) - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_checkerboard_negative() {
        let a: Vec<[f64; 3]> = (0..256).map(|i| if (i % 16 + i / 16) % 2 == 0 { [1.0; 3] } else { [0.0; 3] }).collect();
        let b: Vec<[f64; 3]> = a.iter().map(|p| p.map(|v| 1.0 - v)).collect();
        assert!(ssim(&a, &b, 16, 16) < 0.0);
    }
}
