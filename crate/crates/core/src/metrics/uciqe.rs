use crate::imgcore::{rgb_pixel_to_hsv, srgb_pixel_to_lab, Frame};

pub const UCIQE_COEFFS: [f64; 3] = [0.4680, 0.2745, 0.2576];

/// Population mean and standard deviation; exactly zero spread when every
/// value is identical.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.iter().all(|&x| x == v[0]) {
        return (v[0], 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Underwater colour image quality: weighted sum of the chroma standard
/// deviation, the luma contrast between the brightest and darkest 1 % of
/// pixels, and the mean HSV saturation.
///
/// Lightness and chroma are divided by 100 so all three terms share a
/// roughly unit range.
pub fn uciqe(frame: &Frame) -> f64 {
    let n = frame.height() * frame.width();
    let mut chroma = Vec::with_capacity(n);
    let mut light = Vec::with_capacity(n);
    let mut sat = 0.0;
    for p in frame.data().chunks_exact(3) {
        let rgb = [p[0] as f64, p[1] as f64, p[2] as f64];
        let lab = srgb_pixel_to_lab(rgb);
        chroma.push(lab[1].hypot(lab[2]) / 100.0);
        light.push(lab[0] / 100.0);
        sat += rgb_pixel_to_hsv(rgb)[1];
    }
    let (_, sigma_c) = mean_std(&chroma);
    light.sort_by(f64::total_cmp);
    let k = (n / 100).max(1);
    let top = light[n - k..].iter().sum::<f64>() / k as f64;
    let bottom = light[..k].iter().sum::<f64>() / k as f64;
    let [c1, c2, c3] = UCIQE_COEFFS;
    c1 * sigma_c + c2 * (top - bottom) + c3 * sat / n as f64
}
