//! Adaptive Gauss-Kronrod (7/15) quadrature for vector-valued integrands.

// Tabulated to more digits than f64 holds; rounding is left to the compiler.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod nodes (and the centre).
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    /// Absolute floor for component `k` is `abs_frac * |I_0|`.
    pub abs_frac: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-11,
            abs_frac: 1e-15,
            max_intervals: 2000,
        }
    }
}

struct Piece<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

fn gk15<const N: usize, F: Fn(f64) -> [f64; N]>(f: &F, a: f64, b: f64) -> ([f64; N], [f64; N]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    let fc = f(c);
    for k in 0..N {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for i in 0..7 {
        let dx = h * XGK[i];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for k in 0..N {
            let s = f1[k] + f2[k];
            kron[k] += WGK[i] * s;
            if i % 2 == 1 {
                gauss[k] += WG[i / 2] * s;
            }
        }
    }
    let mut err = [0.0; N];
    for k in 0..N {
        kron[k] *= h;
        gauss[k] *= h;
        err[k] = (kron[k] - gauss[k]).abs();
    }
    (kron, err)
}

/// Integrates `f` over the consecutive finite intervals given by
/// `breakpoints`, splitting the worst interval until every component meets
/// `err_k <= max(rel |I_k|, abs_frac |I_0|)`.
///
/// Returns the integral and the summed error estimate.
pub fn integrate<const N: usize, F>(f: F, breakpoints: &[f64], tol: Tolerance) -> ([f64; N], [f64; N])
where
    F: Fn(f64) -> [f64; N],
{
    let mut pieces: Vec<Piece<N>> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (value, error) = gk15(&f, w[0], w[1]);
            Piece {
                a: w[0],
                b: w[1],
                value,
                error,
            }
        })
        .collect();
    loop {
        let (total, total_err) = sum_pieces(&pieces);
        let mut target = [0.0; N];
        for k in 0..N {
            target[k] = (tol.rel * total[k].abs())
                .max(tol.abs_frac * total[0].abs())
                .max(f64::MIN_POSITIVE);
        }
        if pieces.len() >= tol.max_intervals || (0..N).all(|k| total_err[k] <= target[k]) {
            return (total, total_err);
        }
        let score = |p: &Piece<N>| (0..N).map(|k| p.error[k] / target[k]).fold(0.0, f64::max);
        let worst = (0..pieces.len())
            .max_by(|&i, &j| score(&pieces[i]).total_cmp(&score(&pieces[j])))
            .expect("at least one interval");
        let Piece { a, b, value, .. } = pieces.swap_remove(worst);
        let mid = 0.5 * (a + b);
        if !(mid > a && mid < b) {
            // Interval exhausted at machine precision; nothing more to gain here.
            pieces.push(Piece {
                a,
                b,
                value,
                error: [0.0; N],
            });
            continue;
        }
        for (lo, hi) in [(a, mid), (mid, b)] {
            let (value, error) = gk15(&f, lo, hi);
            pieces.push(Piece {
                a: lo,
                b: hi,
                value,
                error,
            });
        }
    }
}

fn sum_pieces<const N: usize>(pieces: &[Piece<N>]) -> ([f64; N], [f64; N]) {
    let mut sum = [0.0; N];
    let mut err = [0.0; N];
    for p in pieces {
        for k in 0..N {
            sum[k] += p.value[k];
            err[k] += p.error[k];
        }
    }
    (sum, err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let (v, _) = integrate(|x| [x * x, x.powi(5)], &[0.0, 2.0], Tolerance::default());
        assert!((v[0] - 8.0 / 3.0).abs() < 1e-14);
        assert!((v[1] - 64.0 / 6.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_tail() {
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (v, _) = integrate(|x| [phi(x)], &[1.0, 40.0], Tolerance::default());
        let exact = 0.5 * libm::erfc(1.0 / std::f64::consts::SQRT_2);
        assert!(((v[0] - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn sharp_feature() {
        let (v, _) = integrate(|x| [1.0 / (1e-4 + x * x)], &[-1.0, 1.0], Tolerance::default());
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!(((v[0] - exact) / exact).abs() < 1e-10);
    }
}
