//! Small monotone root finders and quadrature wrappers.

/// Solves `f(x) = target` for a monotone `f` on `[lo, hi]` by bisection.
///
/// `increasing` gives the direction of monotonicity. Infinite endpoints are
/// replaced by a bracket found by doubling away from the finite one.
pub fn monotone_solve<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    lo: f64,
    hi: f64,
    increasing: bool,
    tol: f64,
) -> f64 {
    let below = |x: f64| if increasing { f(x) < target } else { f(x) > target };
    let (mut a, mut b) = (lo, hi);
    if a == f64::NEG_INFINITY {
        let mut step = 1.0;
        a = b - step;
        while below(a) == false {
            step *= 2.0;
            a = b - step;
            if step > 1e15 {
                break;
            }
        }
    }
    if b == f64::INFINITY {
        let mut step = 1.0;
        b = a + step;
        while below(b) {
            step *= 2.0;
            b = a + step;
            if step > 1e15 {
                break;
            }
        }
    }
    // invariant: below(a) or a is the left end, !below(b) or b is the right end
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if below(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Integral of a continuous function over `[a, b]` to an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    quadrature::integrate(f, a, b, tol).integral
}

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Fixed 8-point Gauss rule; exact for polynomials of degree 15.
pub fn gauss8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
        * h
}
