//! Residual operators for 2-D incompressible Navier-Stokes and 3-D RANS.
//!
//! Residual formulas are written once over [`ScalarOps`], so the same code
//! evaluates plain reals (for reporting and oracles) and tape nodes (inside
//! training losses).
//!
//! Network output order: 2-D `(u, v, p)`; 3-D `(u, v, w, p, u'u', u'v',
//! u'w', v'v', v'w', w'w')`. Input order: 2-D `(x, y, t)`; 3-D `(x, y, z, t)`.

use ndarray::Array2;

use crate::diffengine::{JetLayout, Real, ScalarOps, Tape, Var};
use crate::error::{Error, Result};
use crate::mlp::{Mlp, NetworkParams, ParamVars};

/// Continuity and momentum residuals at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBundle<T = f64> {
    pub continuity: T,
    pub momentum_x: T,
    pub momentum_y: T,
    pub momentum_z: Option<T>,
}

impl<T: Clone> ResidualBundle<T> {
    /// Momentum residuals in axis order, then continuity.
    pub fn components(&self) -> Vec<T> {
        let mut v = vec![self.momentum_x.clone(), self.momentum_y.clone()];
        v.extend(self.momentum_z.clone());
        v.push(self.continuity.clone());
        v
    }
}

impl ResidualBundle<f64> {
    pub fn max_abs(&self) -> f64 {
        self.components().into_iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|e| e.is_finite())
    }
}

/// Viscous coefficient: a known `1/Re` or a trainable value.
#[derive(Clone, Copy, Debug)]
pub enum Viscosity<T> {
    Known(f64),
    Learned(T),
}

/// Fields and partials entering the 2-D Navier-Stokes residuals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowState2D<T = f64> {
    pub u: T,
    pub v: T,
    pub p: T,
    pub u_t: T,
    pub u_x: T,
    pub u_y: T,
    pub u_xx: T,
    pub u_yy: T,
    pub v_t: T,
    pub v_x: T,
    pub v_y: T,
    pub v_xx: T,
    pub v_yy: T,
    pub p_x: T,
    pub p_y: T,
}

/// Mean-flow fields and partials for the 3-D RANS residuals.
///
/// `grad[i][j]` is ∂u_i/∂x_j, `second[i][j]` is ∂²u_i/∂x_j².
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState3D<T = f64> {
    pub vel: [T; 3],
    pub p: T,
    pub vel_t: [T; 3],
    pub grad: [[T; 3]; 3],
    pub second: [[T; 3]; 3],
    pub grad_p: [T; 3],
    /// `None` means the Reynolds stresses are identically zero.
    pub stresses: Option<StressGradients<T>>,
}

/// `div[i][j]` = ∂τ_ij/∂x_j for the symmetric Reynolds-stress tensor τ.
#[derive(Clone, Debug, PartialEq)]
pub struct StressGradients<T = f64> {
    pub div: [[T; 3]; 3],
}

/// Index of stress component τ_ij among the six unique outputs
/// `(u'u', u'v', u'w', v'v', v'w', w'w')`.
pub fn stress_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => unreachable!("stress index out of range"),
    }
}

fn viscous<O: ScalarOps>(ops: &mut O, lap: &O::T, nu: &Viscosity<O::T>) -> O::T {
    match nu {
        Viscosity::Known(c) => ops.scale(lap, *c),
        Viscosity::Learned(l) => ops.mul(lap, l),
    }
}

/// 2-D incompressible Navier-Stokes residuals:
///
/// ```text
/// e_c  = u_x + v_y
/// e_mx = u_t + p_x + u u_x + v u_y − ν (u_xx + u_yy)
/// e_my = v_t + p_y + u v_x + v v_y − ν (v_xx + v_yy)
/// ```
pub fn ns2d_terms<O: ScalarOps>(ops: &mut O, s: &FlowState2D<O::T>, nu: &Viscosity<O::T>) -> ResidualBundle<O::T> {
    let continuity = ops.add(&s.u_x, &s.v_y);
    let momentum = |ops: &mut O, f_t: &O::T, g_p: &O::T, f_x: &O::T, f_y: &O::T, f_xx: &O::T, f_yy: &O::T| {
        let a = ops.add(f_t, g_p);
        let uc = ops.mul(&s.u, f_x);
        let a = ops.add(&a, &uc);
        let vc = ops.mul(&s.v, f_y);
        let a = ops.add(&a, &vc);
        let lap = ops.add(f_xx, f_yy);
        let visc = viscous(ops, &lap, nu);
        ops.sub(&a, &visc)
    };
    let momentum_x = momentum(ops, &s.u_t, &s.p_x, &s.u_x, &s.u_y, &s.u_xx, &s.u_yy);
    let momentum_y = momentum(ops, &s.v_t, &s.p_y, &s.v_x, &s.v_y, &s.v_xx, &s.v_yy);
    ResidualBundle {
        continuity,
        momentum_x,
        momentum_y,
        momentum_z: None,
    }
}

/// 3-D RANS residuals; component `i` of momentum reads
///
/// ```text
/// ∂u_i/∂t + ∂p/∂x_i + Σ_j u_j ∂u_i/∂x_j − ν Σ_j ∂²u_i/∂x_j² + Σ_j ∂τ_ij/∂x_j
/// ```
///
/// and continuity is `Σ_j ∂u_j/∂x_j`.
pub fn rans3d_terms<O: ScalarOps>(ops: &mut O, s: &FlowState3D<O::T>, nu: &Viscosity<O::T>) -> ResidualBundle<O::T> {
    let c = ops.add(&s.grad[0][0], &s.grad[1][1]);
    let continuity = ops.add(&c, &s.grad[2][2]);
    let mut mom = Vec::with_capacity(3);
    for i in 0..3 {
        let mut a = ops.add(&s.vel_t[i], &s.grad_p[i]);
        for j in 0..3 {
            let conv = ops.mul(&s.vel[j], &s.grad[i][j]);
            a = ops.add(&a, &conv);
        }
        let lap = ops.add(&s.second[i][0], &s.second[i][1]);
        let lap = ops.add(&lap, &s.second[i][2]);
        let visc = viscous(ops, &lap, nu);
        a = ops.sub(&a, &visc);
        if let Some(st) = &s.stresses {
            for j in 0..3 {
                a = ops.add(&a, &st.div[i][j]);
            }
        }
        mom.push(a);
    }
    let mut it = mom.into_iter();
    ResidualBundle {
        continuity,
        momentum_x: it.next().unwrap(),
        momentum_y: it.next().unwrap(),
        momentum_z: it.next(),
    }
}

/// Residuals of the 2-D state at its own Reynolds number.
pub fn ns2d_residuals(state: &FlowState2D, re: f64) -> Result<ResidualBundle> {
    if !(re > 0.0) {
        return Err(Error::config(format!("Reynolds number must be positive, got {re}")));
    }
    Ok(ns2d_terms(&mut Real, state, &Viscosity::Known(1.0 / re)))
}

/// Residuals of the 3-D state; `viscosity` stands for `1/Re` or the learned coefficient.
pub fn rans3d_residuals(state: &FlowState3D, viscosity: f64) -> ResidualBundle {
    rans3d_terms(&mut Real, state, &Viscosity::Known(viscosity))
}

/// How the Reynolds-stress outputs enter the RANS residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StressModel {
    /// Stress outputs of the network contribute their divergence.
    Learned,
    /// Stresses are identically zero (laminar reduction); stress outputs are ignored.
    Zero,
}

impl StressModel {
    pub fn name(self) -> &'static str {
        match self {
            StressModel::Learned => "learned",
            StressModel::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "learned" => Ok(StressModel::Learned),
            "zero" => Ok(StressModel::Zero),
            o => Err(Error::config(format!("unknown stress model `{o}` (expected learned or zero)"))),
        }
    }
}

/// Governing equations used by a physics-informed run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhysicsRegime {
    Ns2d { re: f64 },
    Rans3d { re: f64, stresses: StressModel },
    /// Viscous coefficient learned as the network's extra parameter.
    Rans3dInverse { stresses: StressModel },
}

impl PhysicsRegime {
    pub fn name(&self) -> &'static str {
        match self {
            PhysicsRegime::Ns2d { .. } => "ns2d",
            PhysicsRegime::Rans3d { .. } => "rans3d",
            PhysicsRegime::Rans3dInverse { .. } => "rans3d_inverse",
        }
    }

    pub fn is_3d(&self) -> bool {
        !matches!(self, PhysicsRegime::Ns2d { .. })
    }

    pub fn n_inputs(&self) -> usize {
        if self.is_3d() {
            4
        } else {
            3
        }
    }

    /// Velocity and pressure, plus six Reynolds-stress outputs when learned.
    pub fn n_outputs(&self) -> usize {
        match self {
            PhysicsRegime::Ns2d { .. } => 3,
            PhysicsRegime::Rans3d { stresses, .. } | PhysicsRegime::Rans3dInverse { stresses } => match stresses {
                StressModel::Learned => 10,
                StressModel::Zero => 4,
            },
        }
    }

    /// Number of velocity components (data targets of a PINN).
    pub fn n_velocity(&self) -> usize {
        if self.is_3d() {
            3
        } else {
            2
        }
    }

    pub fn pressure_index(&self) -> usize {
        self.n_velocity()
    }

    pub fn spatial_axes(&self) -> Vec<usize> {
        (0..self.n_velocity()).collect()
    }

    pub fn time_axis(&self) -> usize {
        self.n_velocity()
    }

    pub fn needs_coefficient(&self) -> bool {
        matches!(self, PhysicsRegime::Rans3dInverse { .. })
    }

    /// Jet layout needed to assemble residuals for `batch` points.
    pub fn layout(&self, batch: usize) -> JetLayout {
        JetLayout::with_second(batch, self.n_inputs(), self.spatial_axes())
    }

    pub fn check_network(&self, net: &Mlp) -> Result<()> {
        let c = net.config();
        if c.n_inputs != self.n_inputs() {
            return Err(Error::Dimension {
                what: "network inputs for regime",
                expected: self.n_inputs(),
                got: c.n_inputs,
            });
        }
        if c.n_outputs != self.n_outputs() {
            return Err(Error::Dimension {
                what: "network outputs for regime",
                expected: self.n_outputs(),
                got: c.n_outputs,
            });
        }
        if self.needs_coefficient() != c.coefficient_init.is_some() {
            return Err(Error::config(format!(
                "regime {} {} a trainable coefficient",
                self.name(),
                if self.needs_coefficient() { "requires" } else { "does not use" }
            )));
        }
        Ok(())
    }
}

/// Derivative component selector used to pull fields out of a jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comp {
    Value,
    D1(usize),
    D2(usize),
}

/// Builds the residual state for `regime` from a component accessor
/// `get(component, output_column)` and returns the residual terms.
pub fn regime_terms<O: ScalarOps>(
    ops: &mut O,
    regime: &PhysicsRegime,
    coefficient: Option<O::T>,
    mut get: impl FnMut(&mut O, Comp, usize) -> O::T,
) -> Result<ResidualBundle<O::T>> {
    match *regime {
        PhysicsRegime::Ns2d { re } => {
            if !(re > 0.0) {
                return Err(Error::config(format!("Reynolds number must be positive, got {re}")));
            }
            let (x, y, t) = (0, 1, 2);
            let s = FlowState2D {
                u: get(ops, Comp::Value, 0),
                v: get(ops, Comp::Value, 1),
                p: get(ops, Comp::Value, 2),
                u_t: get(ops, Comp::D1(t), 0),
                u_x: get(ops, Comp::D1(x), 0),
                u_y: get(ops, Comp::D1(y), 0),
                u_xx: get(ops, Comp::D2(x), 0),
                u_yy: get(ops, Comp::D2(y), 0),
                v_t: get(ops, Comp::D1(t), 1),
                v_x: get(ops, Comp::D1(x), 1),
                v_y: get(ops, Comp::D1(y), 1),
                v_xx: get(ops, Comp::D2(x), 1),
                v_yy: get(ops, Comp::D2(y), 1),
                p_x: get(ops, Comp::D1(x), 2),
                p_y: get(ops, Comp::D1(y), 2),
            };
            Ok(ns2d_terms(ops, &s, &Viscosity::Known(1.0 / re)))
        }
        PhysicsRegime::Rans3d { re, stresses } => {
            if !(re > 0.0) {
                return Err(Error::config(format!("Reynolds number must be positive, got {re}")));
            }
            let s = state_3d(ops, stresses, &mut get);
            Ok(rans3d_terms(ops, &s, &Viscosity::Known(1.0 / re)))
        }
        PhysicsRegime::Rans3dInverse { stresses } => {
            let lam = coefficient.ok_or_else(|| Error::config("inverse regime needs the trainable coefficient"))?;
            let s = state_3d(ops, stresses, &mut get);
            Ok(rans3d_terms(ops, &s, &Viscosity::Learned(lam)))
        }
    }
}

fn state_3d<O: ScalarOps>(
    ops: &mut O,
    stresses: StressModel,
    get: &mut impl FnMut(&mut O, Comp, usize) -> O::T,
) -> FlowState3D<O::T> {
    let t = 3;
    let vel = [0, 1, 2].map(|i| get(ops, Comp::Value, i));
    let p = get(ops, Comp::Value, 3);
    let vel_t = [0, 1, 2].map(|i| get(ops, Comp::D1(t), i));
    let grad = [0, 1, 2].map(|i| [0, 1, 2].map(|j| get(ops, Comp::D1(j), i)));
    let second = [0, 1, 2].map(|i| [0, 1, 2].map(|j| get(ops, Comp::D2(j), i)));
    let grad_p = [0, 1, 2].map(|j| get(ops, Comp::D1(j), 3));
    let stresses = match stresses {
        StressModel::Zero => None,
        StressModel::Learned => Some(StressGradients {
            div: [0, 1, 2].map(|i| [0, 1, 2].map(|j| get(ops, Comp::D1(j), 4 + stress_index(i, j)))),
        }),
    };
    FlowState3D {
        vel,
        p,
        vel_t,
        grad,
        second,
        grad_p,
        stresses,
    }
}

/// Residuals at each collocation point, from the network's input derivatives.
pub fn collocation_residuals(
    net: &Mlp,
    params: &NetworkParams,
    points: &[Vec<f64>],
    regime: &PhysicsRegime,
) -> Result<Vec<ResidualBundle>> {
    regime.check_network(net)?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let n_in = regime.n_inputs();
    for p in points {
        if p.len() != n_in {
            return Err(Error::Dimension {
                what: "collocation point width",
                expected: n_in,
                got: p.len(),
            });
        }
    }
    let b = points.len();
    let x = Array2::from_shape_fn((b, n_in), |(r, c)| points[r][c]);
    let layout = regime.layout(b);
    let mut tape = Tape::new();
    let pv = params.constants(&mut tape);
    let out = net.record(&mut tape, &pv, x.view(), &layout)?;
    let o = tape.value(out);
    (0..b)
        .map(|r| {
            let get = |_: &mut Real, c: Comp, k: usize| {
                let comp = match c {
                    Comp::Value => 0,
                    Comp::D1(a) => layout.first_component(a).expect("first partial"),
                    Comp::D2(a) => layout.second_component(a).expect("second partial"),
                };
                o[[comp * b + r, k]]
            };
            regime_terms(&mut Real, regime, params.coefficient, get)
        })
        .collect()
}

/// Residual columns (batch × 1 each) recorded on `tape` for a jet output block.
pub fn residuals_on_tape(
    tape: &mut Tape,
    out: Var,
    layout: &JetLayout,
    regime: &PhysicsRegime,
    pv: &ParamVars,
) -> Result<ResidualBundle<Var>> {
    let get = |t: &mut Tape, c: Comp, k: usize| {
        let comp = match c {
            Comp::Value => 0,
            Comp::D1(a) => layout.first_component(a).expect("first partial"),
            Comp::D2(a) => layout.second_component(a).expect("second partial"),
        };
        t.component(out, layout, comp, k)
    };
    regime_terms(tape, regime, pv.coefficient, get)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero3() -> FlowState3D {
        FlowState3D {
            vel: [0.0; 3],
            p: 0.0,
            vel_t: [0.0; 3],
            grad: [[0.0; 3]; 3],
            second: [[0.0; 3]; 3],
            grad_p: [0.0; 3],
            stresses: None,
        }
    }

    #[test]
    fn uniform_flow_has_no_residual() {
        let s = FlowState2D {
            u: 1.0,
            p: 3.0,
            ..Default::default()
        };
        let r = ns2d_residuals(&s, 100.0).unwrap();
        assert_eq!(r.components(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn divergence_free_shear() {
        let s = FlowState2D {
            u_x: 1.0,
            v_y: -1.0,
            ..Default::default()
        };
        assert_eq!(ns2d_residuals(&s, 100.0).unwrap().continuity, 0.0);
    }

    #[test]
    fn convective_term() {
        let s = FlowState2D {
            u: 1.0,
            u_x: 1.0,
            ..Default::default()
        };
        assert_eq!(ns2d_residuals(&s, 100.0).unwrap().momentum_x, 1.0);
    }

    #[test]
    fn viscous_term_scales_with_inverse_re() {
        let s = FlowState2D {
            v_xx: 2.0,
            v_yy: 3.0,
            ..Default::default()
        };
        let r = ns2d_residuals(&s, 50.0).unwrap();
        assert!((r.momentum_y + 5.0 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_re_rejected() {
        assert!(ns2d_residuals(&FlowState2D::default(), 0.0).is_err());
        assert!(ns2d_residuals(&FlowState2D::default(), -3.0).is_err());
    }

    #[test]
    fn quiescent_3d() {
        let r = rans3d_residuals(&zero3(), 0.1);
        assert_eq!(r.components(), vec![0.0; 4]);
    }

    #[test]
    fn stress_symmetry_indexing() {
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(stress_index(i, j), stress_index(j, i));
            }
        }
        let mut seen: Vec<_> = (0..3).flat_map(|i| (i..3).map(move |j| stress_index(i, j))).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    proptest::proptest! {
        #[test]
        fn zero_stress_reduces_to_laminar(vals in proptest::collection::vec(-5.0f64..5.0, 38), nu in 0.001f64..1.0) {
            let mut it = vals.into_iter();
            let mut n = || it.next().unwrap();
            let mut s = FlowState3D {
                vel: [n(), n(), n()],
                p: n(),
                vel_t: [n(), n(), n()],
                grad: [[n(), n(), n()], [n(), n(), n()], [n(), n(), n()]],
                second: [[n(), n(), n()], [n(), n(), n()], [n(), n(), n()]],
                grad_p: [n(), n(), n()],
                stresses: None,
            };
            let laminar = rans3d_residuals(&s, nu);
            s.stresses = Some(StressGradients { div: [[0.0; 3]; 3] });
            let rans = rans3d_residuals(&s, nu);
            proptest::prop_assert_eq!(laminar, rans);
        }

        #[test]
        fn continuity_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0, k in -4.0f64..4.0) {
            let st = |ux: f64, vy: f64| FlowState2D { u_x: ux, v_y: vy, ..Default::default() };
            let e = |s: &FlowState2D| ns2d_residuals(s, 10.0).unwrap().continuity;
            let lhs = e(&st(k * a + c, k * b + d));
            let rhs = k * e(&st(a, b)) + e(&st(c, d));
            proptest::prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
