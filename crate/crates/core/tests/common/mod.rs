//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, e) = gk15(f, a, b);
        if e <= tol.max(1e-300) || e <= 1e-14 * v.abs() || !e.is_finite() || depth > 30 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.7 * tol, depth + 1) + rec(f, m, b, 0.7 * tol, depth + 1)
    }
    rec(&f, a, b, tol, 0)
}

/// K_ν(z) from ∫₀^∞ e^{−z cosh t} cosh(νt) dt by adaptive quadrature.
pub fn bessel_k_integral(nu: f64, z: f64) -> f64 {
    let upper = ((60.0 + nu * 40.0) / z).max(2.0).ln() + 6.0;
    let f = |t: f64| {
        let a = (nu * t).abs();
        (-z * t.cosh() + a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2).exp()
    };
    let rough = integrate(f, 0.0, upper, 1e-3);
    integrate(f, 0.0, upper, 1e-15 * rough)
}

/// Airy Ai(x) from its Maclaurin series, for moderate x.
pub fn airy_ai(x: f64) -> f64 {
    let c1 = 0.355_028_053_887_817_24;
    let c2 = 0.258_819_403_792_806_8;
    let x3 = x * x * x;
    let (mut f, mut g) = (1.0, x);
    let (mut tf, mut tg) = (1.0, x);
    for k in 1..200 {
        let k = k as f64;
        tf *= x3 / ((3.0 * k - 1.0) * (3.0 * k));
        tg *= x3 / ((3.0 * k) * (3.0 * k + 1.0));
        f += tf;
        g += tg;
        if tf.abs() < 1e-18 * f.abs() && tg.abs() < 1e-18 * g.abs() {
            break;
        }
    }
    c1 * f - c2 * g
}

/// Five-point central difference.
pub fn derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

pub fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}
