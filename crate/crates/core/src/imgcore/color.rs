//! sRGB <-> CIELab (D65) and RGB <-> HSV conversions.

use super::frame::{Frame, HsvFrame, LabFrame};

const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mat_vec(&SRGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE_D65[0] * lab_f_inv(fx),
        WHITE_D65[1] * lab_f_inv(fy),
        WHITE_D65[2] * lab_f_inv(fz),
    ];
    mat_vec(&XYZ_TO_SRGB, xyz).map(linear_to_srgb)
}

/// Returns `(h, s, v)` with hue as a fraction of a full turn.
pub fn rgb_pixel_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_pixel_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn map_pixels(frame: &Frame, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(frame.data().len());
    for p in frame.data().chunks_exact(3) {
        let q = f([p[0] as f64, p[1] as f64, p[2] as f64]);
        out.extend(q.iter().map(|&v| v as f32));
    }
    out
}

pub fn rgb_to_lab(frame: &Frame) -> LabFrame {
    LabFrame {
        height: frame.height(),
        width: frame.width(),
        data: map_pixels(frame, srgb_pixel_to_lab),
    }
}

pub fn rgb_to_hsv(frame: &Frame) -> HsvFrame {
    HsvFrame {
        height: frame.height(),
        width: frame.width(),
        data: map_pixels(frame, rgb_pixel_to_hsv),
    }
}

pub fn lab_to_rgb(lab: &LabFrame) -> Frame {
    Frame::from_fn(lab.height, lab.width, |y, x, c| {
        let p = lab.pixel(y, x);
        lab_pixel_to_srgb([p[0] as f64, p[1] as f64, p[2] as f64])[c] as f32
    })
}

pub fn hsv_to_rgb(hsv: &HsvFrame) -> Frame {
    Frame::from_fn(hsv.height, hsv.width, |y, x, c| {
        let p = hsv.pixel(y, x);
        hsv_pixel_to_rgb([p[0] as f64, p[1] as f64, p[2] as f64])[c] as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn black_has_zero_lightness() {
        let lab = srgb_pixel_to_lab([0.0, 0.0, 0.0]);
        assert!(lab.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn white_is_neutral() {
        let lab = srgb_pixel_to_lab([1.0, 1.0, 1.0]);
        assert!((lab[0] - 100.0).abs() < 1e-3);
        assert!(lab[1].abs() < 1e-2 && lab[2].abs() < 1e-2);
    }

    #[test]
    fn pure_red_matches_reference() {
        // skimage.color.rgb2lab([[[1, 0, 0]]]) with the D65 illuminant.
        let lab = srgb_pixel_to_lab([1.0, 0.0, 0.0]);
        let reference = [53.240_587_94, 80.092_308_24, 67.202_751_04];
        for (v, r) in lab.iter().zip(reference) {
            assert!((v - r).abs() < 0.5, "{lab:?}");
        }
    }

    #[test]
    fn gray_has_zero_saturation() {
        for g in [0.0, 0.2, 0.7, 1.0] {
            assert_eq!(rgb_pixel_to_hsv([g, g, g])[1], 0.0);
        }
    }

    #[test]
    fn conversions_preserve_dims() {
        let f = Frame::from_fn(9, 13, |y, x, c| ((y + 2 * x + c) % 7) as f32 / 7.0);
        let lab = rgb_to_lab(&f);
        let hsv = rgb_to_hsv(&f);
        assert_eq!((lab.height(), lab.width()), (9, 13));
        assert_eq!((hsv.height(), hsv.width()), (9, 13));
        assert_eq!(rgb_to_lab(&f), lab);
    }

    proptest! {
        #[test]
        fn lab_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let back = lab_pixel_to_srgb(srgb_pixel_to_lab([r, g, b]));
            for (v, o) in back.iter().zip([r, g, b]) {
                prop_assert!((v - o).abs() < 1e-3);
            }
        }

        #[test]
        fn hsv_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hsv = rgb_pixel_to_hsv([r, g, b]);
            prop_assert!(hsv.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = hsv_pixel_to_rgb(hsv);
            for (v, o) in back.iter().zip([r, g, b]) {
                prop_assert!((v - o).abs() < 1e-3);
            }
        }

        #[test]
        fn frame_round_trips(seed in 0u64..1000) {
            let f = Frame::from_fn(4, 4, |y, x, c| (((seed as usize + 7 * y + 3 * x + 11 * c) * 37) % 101) as f32 / 100.0);
            let rgb = lab_to_rgb(&rgb_to_lab(&f));
            let hsv = hsv_to_rgb(&rgb_to_hsv(&f));
            for ((a, b), c) in f.data().iter().zip(rgb.data()).zip(hsv.data()) {
                prop_assert!((a - b).abs() < 1e-3);
                prop_assert!((a - c).abs() < 1e-3);
            }
        }
    }
}
