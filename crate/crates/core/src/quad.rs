//! Fixed-order Gauss–Legendre quadrature.

const NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Eight-point rule on `[a, b]` as `(node, weight)` pairs.
pub fn gauss_legendre(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    (0..8).map(move |k| {
        let (x, w) = (NODES[k % 4], WEIGHTS[k % 4]);
        let s = if k < 4 { -1.0 } else { 1.0 };
        (c + s * h * x, h * w)
    })
}
