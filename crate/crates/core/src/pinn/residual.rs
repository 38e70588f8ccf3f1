use crate::params::{RdParams, reaction_rhs};

use super::PinnError;

/// Anything that maps a point to `(u, v)`. Implemented by the network and by
/// closures, so analytic fields can stand in for it in tests.
pub trait Surrogate {
    fn eval(&self, x: f64, y: f64) -> (f64, f64);
}

impl Surrogate for crate::nn::Mlp {
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        self.forward(x, y)
    }
}

impl<F: Fn(f64, f64) -> (f64, f64)> Surrogate for F {
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        self(x, y)
    }
}

/// Offsets of the 5-point stencil in the order the loss assembles them:
/// centre, +x, -x, +y, -y.
pub(crate) const STENCIL: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

/// Steady-state PDE residual `(f_u, f_v)` of a surrogate at `(x, y)`, with
/// the Laplacians taken by a 5-point stencil of spacing `h`.
pub fn residual<S: Surrogate + ?Sized>(
    net: &S,
    p: &RdParams,
    x: f64,
    y: f64,
    h: f64,
) -> Result<(f64, f64), PinnError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(PinnError::Config(format!("stencil spacing must be positive, got {h}")));
    }
    if p.beta() == 0.0 {
        return Err(PinnError::ZeroBeta);
    }
    let vals: Vec<(f64, f64)> = STENCIL.iter().map(|o| net.eval(x + o[0] * h, y + o[1] * h)).collect();
    let (u, v) = vals[0];
    let inv_h2 = 1.0 / (h * h);
    let lap_u = (vals[1].0 + vals[2].0 + vals[3].0 + vals[4].0 - 4.0 * u) * inv_h2;
    let lap_v = (vals[1].1 + vals[2].1 + vals[3].1 + vals[4].1 - 4.0 * v) * inv_h2;
    Ok(reaction_rhs(u, v, lap_u, lap_v, p))
}

/// Partial derivatives of `(f_u, f_v)` with respect to the local values, the
/// Laplacians and the trainable PDE parameters, following the literal
/// expression graph (including the `alpha*r1/beta` coupling).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ResidualPartials {
    pub fu: f64,
    pub fv: f64,
    pub dfu_du: f64,
    pub dfu_dv: f64,
    pub dfu_dlap: f64,
    pub dfv_du: f64,
    pub dfv_dv: f64,
    pub dfv_dlap: f64,
    /// d f_u / d (D1, D2, alpha, beta, r1)
    pub dfu_dp: [f64; 5],
    /// d f_v / d (D1, D2, alpha, beta, r1)
    pub dfv_dp: [f64; 5],
}

#[inline]
pub(crate) fn residual_partials(u: f64, v: f64, lap_u: f64, lap_v: f64, p: &RdParams) -> ResidualPartials {
    let (d1, d2, alpha, beta, r1, r2) = (p.d1(), p.d2(), p.alpha(), p.beta(), p.r1(), p.r2());
    let gamma = p.gamma();
    let (fu, fv) = reaction_rhs(u, v, lap_u, lap_v, p);
    // f_v's middle term is beta*v*s with s = 1 + t*u*v and t = alpha*r1/beta.
    let t = alpha * r1 / beta;
    let s = 1.0 + t * u * v;
    let bv = beta * v;
    let dfv_dt = bv * u * v;
    ResidualPartials {
        fu,
        fv,
        dfu_du: alpha * (1.0 - r1 * v * v) - v * r2,
        dfu_dv: -2.0 * alpha * u * r1 * v + (1.0 - r2 * u),
        dfu_dlap: d1 * d2,
        dfv_du: bv * t * v + gamma + r2 * v,
        dfv_dv: beta * s + bv * t * u + u * r2,
        dfv_dlap: d2,
        dfu_dp: [d2 * lap_u, d1 * lap_u, u * (1.0 - r1 * v * v), 0.0, -alpha * u * v * v],
        dfv_dp: [
            0.0,
            lap_v,
            dfv_dt * (r1 / beta) - u,
            v * s - dfv_dt * alpha * r1 / (beta * beta),
            dfv_dt * (alpha / beta),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, DEFAULT_LAYERS};
    use crate::params::{params_for_pattern, ParamId, PatternId};

    #[test]
    fn zero_network_has_zero_residual() {
        let net = Mlp::zeros(&DEFAULT_LAYERS, 100.0).unwrap();
        for id in PatternId::ALL {
            let r = residual(&net, &params_for_pattern(id), 12.0, -40.0, 4.0).unwrap();
            assert_eq!(r, (0.0, 0.0));
        }
    }

    #[test]
    fn quadratic_fixture() {
        let p = params_for_pattern(PatternId::P);
        let field = |x: f64, y: f64| (x * x + y * y, 0.0);
        for &(x, y, h) in &[(1.0, 2.0, 0.5), (-30.0, 7.5, 4.08), (0.0, 0.0, 1.0)] {
            let (fu, fv) = residual(&field, &p, x, y, h).unwrap();
            let r2 = x * x + y * y;
            assert!((fu - (4.0 * p.d1() * p.d2() + p.alpha() * r2)).abs() < 1e-9 * (1.0 + r2));
            assert!((fv - r2 * p.gamma()).abs() < 1e-9 * (1.0 + r2));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params_for_pattern(PatternId::Q);
        let f = |_: f64, _: f64| (1.0, 1.0);
        assert!(matches!(residual(&f, &p, 0.0, 0.0, 0.0), Err(PinnError::Config(_))));
    }

    #[test]
    fn partials_match_finite_differences() {
        let p = params_for_pattern(PatternId::R).with(ParamId::R1, 1.3).unwrap();
        let (u, v, lu, lv) = (0.7, -0.4, 0.2, -0.35);
        let a = residual_partials(u, v, lu, lv, &p);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> (f64, f64), x: f64| {
            let (a, b) = f(x + h);
            let (c, d) = f(x - h);
            ((a - c) / (2.0 * h), (b - d) / (2.0 * h))
        };
        let close = |x: f64, y: f64| (x - y).abs() < 1e-7 * (1.0 + x.abs());
        let du = fd(&|x| reaction_rhs(x, v, lu, lv, &p), u);
        assert!(close(du.0, a.dfu_du) && close(du.1, a.dfv_du));
        let dv = fd(&|x| reaction_rhs(u, x, lu, lv, &p), v);
        assert!(close(dv.0, a.dfu_dv) && close(dv.1, a.dfv_dv));
        let dlu = fd(&|x| reaction_rhs(u, v, x, lv, &p), lu);
        assert!(close(dlu.0, a.dfu_dlap));
        let dlv = fd(&|x| reaction_rhs(u, v, lu, x, &p), lv);
        assert!(close(dlv.1, a.dfv_dlap));
        for (k, &id) in ParamId::TRAINABLE.iter().enumerate() {
            let g = fd(&|x| reaction_rhs(u, v, lu, lv, &p.with(id, x).unwrap()), p.get(id));
            assert!(close(g.0, a.dfu_dp[k]), "{id}: {} vs {}", g.0, a.dfu_dp[k]);
            assert!(close(g.1, a.dfv_dp[k]), "{id}: {} vs {}", g.1, a.dfv_dp[k]);
        }
    }
}
