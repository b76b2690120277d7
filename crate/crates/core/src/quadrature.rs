//! Adaptive Gauss-Kronrod (7/15) quadrature, plus a log-scale wrapper for
//! integrands of the form `exp(g(r))` whose magnitude overflows `f64`.
#![allow(clippy::excessive_precision)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive integration of `f` over `[a, b]` to the given relative tolerance
/// (with an absolute floor of `1e-300`). Returns the integral and the error
/// estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let mut intervals = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|(_, _, (v, _))| v).sum();
        let err: f64 = intervals.iter().map(|(_, _, (_, e))| e).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            break;
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, (_, _, (_, e)))| if *e > acc.1 { (i, *e) } else { acc });
        let (lo, hi, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        intervals.push((lo, mid, gk15(&f, lo, mid)));
        intervals.push((mid, hi, gk15(&f, mid, hi)));
    }
    let total = intervals.iter().map(|(_, _, (v, _))| v).sum();
    let err = intervals.iter().map(|(_, _, (_, e))| e).sum();
    (total, err)
}

/// Golden-section search for the maximizer of a unimodal `g` on `[a, b]`.
fn argmax_unimodal<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

/// `log \int_lo^hi exp(g(r)) dr` for unimodal `g`; `hi = f64::INFINITY`
/// is allowed provided `g(r) -> -inf`. The integrand is shifted by its
/// maximum before integration and truncated where it falls below
/// `exp(-60)` of the peak.
pub fn log_integral<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    const DROP: f64 = 60.0;
    // Bracket the mode and the right cut-off.
    let upper = if hi.is_finite() {
        hi
    } else {
        let mut best = g(lo);
        let mut step = 1.0;
        let mut r = lo + step;
        loop {
            let v = g(r);
            if v > best {
                best = v;
            } else if v < best - DROP {
                break r;
            }
            step *= 2.0;
            r = lo + step;
            if !r.is_finite() {
                break r;
            }
        }
    };
    let mode = argmax_unimodal(&g, lo, upper);
    let peak = g(mode).max(g(lo)).max(if hi.is_finite() { g(hi) } else { f64::NEG_INFINITY });
    let right = if hi.is_finite() {
        hi
    } else {
        let mut step = 1e-3 * (1.0 + mode.abs());
        let mut r = mode + step;
        while g(r) > peak - DROP && r < upper {
            step *= 1.5;
            r = mode + step;
        }
        r.min(upper)
    };
    let shifted = |r: f64| (g(r) - peak).exp();
    let (left_part, _) = integrate(shifted, lo, mode.clamp(lo, right), rel_tol);
    let (right_part, _) = integrate(shifted, mode.clamp(lo, right), right, rel_tol);
    peak + (left_part + right_part).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let (v, _) = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_on_half_line() {
        let l = log_integral(|x| -0.5 * x * x, 0.0, f64::INFINITY, 1e-12);
        let expect = (0.5 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((l - expect).abs() < 1e-10, "{l} vs {expect}");
    }

    #[test]
    fn sharply_peaked_large_scale() {
        // Gamma(1001) = \int r^1000 e^{-r} dr
        let l = log_integral(|r: f64| 1000.0 * r.ln() - r, 0.0, f64::INFINITY, 1e-12);
        let lgamma: f64 = (1..=1000).map(|k| (k as f64).ln()).sum();
        assert!((l - lgamma).abs() < 1e-9, "{l} vs {lgamma}");
    }
}
