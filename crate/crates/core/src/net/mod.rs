//! Small dense networks with hand-written reverse mode.
//!
//! Every field in the solver is the same architecture: `[t; x]` goes through
//! two SiLU hidden layers of width 64 and a linear read-out. Parameters live
//! in one flat vector so that optimizers, checkpoints and finite-difference
//! checks can treat a network as a plain `&[f64]`.
//!
//! Evaluation is batched (one row per query point). Two tapes are offered:
//! [`Tape`] records a plain forward pass, and [`DivTape`] additionally
//! pushes one forward-mode tangent per spatial input through the network so
//! that the exact divergence `Σᵢ ∂outᵢ/∂xᵢ` is available together with its
//! parameter gradient (forward-over-reverse).

mod adam;
mod bundle;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bundle::{NetBundle, NetId, CHECKPOINT_MAGIC};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

pub const HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl MlpShape {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        if in_dim < 2 || hidden == 0 || out_dim == 0 {
            return Err(Error::Shape(format!(
                "need in_dim >= 2 (time plus space), hidden >= 1, out_dim >= 1; got {in_dim}/{hidden}/{out_dim}"
            )));
        }
        Ok(MlpShape { in_dim, hidden, out_dim })
    }

    /// Number of spatial inputs (everything after the time column).
    pub fn space_dim(&self) -> usize {
        self.in_dim - 1
    }

    pub fn num_params(&self) -> usize {
        let (i, h, o) = (self.in_dim, self.hidden, self.out_dim);
        h * i + h + h * h + h + o * h + o
    }

    fn offsets(&self) -> [usize; 7] {
        let (i, h, o) = (self.in_dim, self.hidden, self.out_dim);
        let mut off = [0; 7];
        let sizes = [h * i, h, h * h, h, o * h, o];
        for k in 0..6 {
            off[k + 1] = off[k] + sizes[k];
        }
        off
    }
}

/// Weights and biases of one network, flattened in the order
/// `W₁, b₁, W₂, b₂, W₃, b₃` (row-major matrices, rows = outputs).
///
/// Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    shape: MlpShape,
    data: Vec<f64>,
}

pub struct Layers<'a> {
    pub w1: ArrayView2<'a, f64>,
    pub b1: ArrayView1<'a, f64>,
    pub w2: ArrayView2<'a, f64>,
    pub b2: ArrayView1<'a, f64>,
    pub w3: ArrayView2<'a, f64>,
    pub b3: ArrayView1<'a, f64>,
}

pub struct LayersMut<'a> {
    pub w1: ArrayViewMut2<'a, f64>,
    pub b1: ArrayViewMut1<'a, f64>,
    pub w2: ArrayViewMut2<'a, f64>,
    pub b2: ArrayViewMut1<'a, f64>,
    pub w3: ArrayViewMut2<'a, f64>,
    pub b3: ArrayViewMut1<'a, f64>,
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Self {
        MlpParams {
            shape,
            data: vec![0.0; shape.num_params()],
        }
    }

    pub fn from_vec(shape: MlpShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(Error::Shape(format!(
                "{} values for a network with {} parameters",
                data.len(),
                shape.num_params()
            )));
        }
        Ok(MlpParams { shape, data })
    }

    /// Uniform fan-in initialization `U(±√(6/fan_in))`, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut p = MlpParams::zeros(shape);
        let fans = [shape.in_dim, shape.hidden, shape.hidden];
        let l = p.layers_mut();
        for (w, fan) in [l.w1, l.w2, l.w3].into_iter().zip(fans) {
            let bound = (6.0 / fan as f64).sqrt();
            let mut w = w;
            w.map_inplace(|v| *v = rng.random_range(-bound..bound));
        }
        p
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        assert_eq!(self.shape, other.shape, "axpy on differently shaped networks");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &MlpParams) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn layers(&self) -> Layers<'_> {
        let MlpShape { in_dim, hidden, out_dim } = self.shape;
        let off = self.shape.offsets();
        let d = &self.data;
        let mat = |k: usize, r: usize, c: usize| {
            ArrayView2::from_shape((r, c), &d[off[k]..off[k + 1]]).expect("consistent layout")
        };
        let vec = |k: usize| ArrayView1::from(&d[off[k]..off[k + 1]]);
        Layers {
            w1: mat(0, hidden, in_dim),
            b1: vec(1),
            w2: mat(2, hidden, hidden),
            b2: vec(3),
            w3: mat(4, out_dim, hidden),
            b3: vec(5),
        }
    }

    pub fn layers_mut(&mut self) -> LayersMut<'_> {
        let MlpShape { in_dim, hidden, out_dim } = self.shape;
        let off = self.shape.offsets();
        let (w1, rest) = self.data.split_at_mut(off[1]);
        let (b1, rest) = rest.split_at_mut(off[2] - off[1]);
        let (w2, rest) = rest.split_at_mut(off[3] - off[2]);
        let (b2, rest) = rest.split_at_mut(off[4] - off[3]);
        let (w3, b3) = rest.split_at_mut(off[5] - off[4]);
        LayersMut {
            w1: ArrayViewMut2::from_shape((hidden, in_dim), w1).expect("consistent layout"),
            b1: ArrayViewMut1::from(b1),
            w2: ArrayViewMut2::from_shape((hidden, hidden), w2).expect("consistent layout"),
            b2: ArrayViewMut1::from(b2),
            w3: ArrayViewMut2::from_shape((out_dim, hidden), w3).expect("consistent layout"),
            b3: ArrayViewMut1::from(b3),
        }
    }

    fn check_input(&self, input: &ArrayView2<f64>) {
        assert_eq!(
            input.ncols(),
            self.shape.in_dim,
            "network expects {} input columns",
            self.shape.in_dim
        );
    }

    /// Batched forward pass; row `b` of `input` is `[t, x₁, …, x_d]`.
    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.tape(input).out
    }

    pub fn tape(&self, input: ArrayView2<f64>) -> Tape {
        self.check_input(&input);
        let l = self.layers();
        let mut a1 = input.dot(&l.w1.t());
        a1 += &l.b1;
        let h1 = a1.mapv(silu);
        let mut a2 = h1.dot(&l.w2.t());
        a2 += &l.b2;
        let h2 = a2.mapv(silu);
        let mut out = h2.dot(&l.w3.t());
        out += &l.b3;
        Tape {
            input: input.to_owned(),
            a1,
            h1,
            a2,
            h2,
            out,
        }
    }

    /// Accumulates `∂L/∂params` into `grad` given `g_out = ∂L/∂out`.
    pub fn backward(&self, tape: &Tape, g_out: ArrayView2<f64>, grad: &mut MlpParams) {
        let l = self.layers();
        let g = grad.layers_mut();
        let LayersMut { mut w1, mut b1, mut w2, mut b2, mut w3, mut b3 } = g;

        general_mat_mul(1.0, &g_out.t(), &tape.h2, 1.0, &mut w3);
        b3 += &g_out.sum_axis(Axis(0));

        let mut ga2 = g_out.dot(&l.w3);
        Zip::from(&mut ga2).and(&tape.a2).for_each(|g, &a| *g *= silu_prime(a));
        general_mat_mul(1.0, &ga2.t(), &tape.h1, 1.0, &mut w2);
        b2 += &ga2.sum_axis(Axis(0));

        let mut ga1 = ga2.dot(&l.w2);
        Zip::from(&mut ga1).and(&tape.a1).for_each(|g, &a| *g *= silu_prime(a));
        general_mat_mul(1.0, &ga1.t(), &tape.input, 1.0, &mut w1);
        b1 += &ga1.sum_axis(Axis(0));
    }

    /// Forward pass plus spatial-divergence tangents. Requires
    /// `out_dim == in_dim - 1` (a vector field over space).
    pub fn div_tape(&self, input: ArrayView2<f64>) -> DivTape {
        assert_eq!(
            self.shape.out_dim,
            self.shape.space_dim(),
            "divergence needs a vector field (out_dim == space dim)"
        );
        let tape = self.tape(input);
        let l = self.layers();
        let s1p = tape.a1.mapv(silu_prime);
        let s2p = tape.a2.mapv(silu_prime);
        let n = tape.input.nrows();
        let mut div = Array1::zeros(n);
        let mut dh1 = Vec::with_capacity(self.shape.space_dim());
        let mut da2 = Vec::with_capacity(self.shape.space_dim());
        let mut dh2 = Vec::with_capacity(self.shape.space_dim());
        for i in 0..self.shape.space_dim() {
            let col = l.w1.column(i + 1);
            let t1 = &s1p * &col;
            let t2 = t1.dot(&l.w2.t());
            let t3 = &t2 * &s2p;
            div += &t3.dot(&l.w3.row(i));
            dh1.push(t1);
            da2.push(t2);
            dh2.push(t3);
        }
        DivTape {
            tape,
            s1p,
            s2p,
            dh1,
            da2,
            dh2,
            div,
        }
    }

    /// Accumulates the gradient of `L(out, div)` given `g_out = ∂L/∂out`
    /// and `g_div = ∂L/∂div`.
    pub fn backward_div(
        &self,
        dt: &DivTape,
        g_out: ArrayView2<f64>,
        g_div: ArrayView1<f64>,
        grad: &mut MlpParams,
    ) {
        let l = self.layers();
        let tape = &dt.tape;
        let LayersMut { mut w1, mut b1, mut w2, mut b2, mut w3, mut b3 } = grad.layers_mut();
        let d = self.shape.space_dim();

        general_mat_mul(1.0, &g_out.t(), &tape.h2, 1.0, &mut w3);
        b3 += &g_out.sum_axis(Axis(0));
        let mut gh2 = g_out.dot(&l.w3);

        // ga2 collects the primal adjoint; g_da2[i] the tangent adjoints.
        let mut ga2 = Array2::zeros(gh2.raw_dim());
        Zip::from(&mut ga2).and(&gh2).and(&dt.s2p).for_each(|g, &h, &sp| *g = h * sp);
        let mut g_da2 = Vec::with_capacity(d);
        for i in 0..d {
            // div = Σᵢ dh2[i]·w3[i, :]
            let mut w3_row = w3.row_mut(i);
            w3_row += &dt.dh2[i].t().dot(&g_div);
            let w3i = l.w3.row(i);
            // g_dh2[i] = g_div ⊗ w3[i, :]; reuse gh2 as scratch.
            Zip::from(gh2.rows_mut()).and(&g_div).for_each(|mut row, &gd| {
                row.assign(&w3i);
                row *= gd;
            });
            let mut gda = Array2::zeros(gh2.raw_dim());
            Zip::from(&mut gda)
                .and(&mut ga2)
                .and(&gh2)
                .and(&tape.a2)
                .and(&dt.da2[i])
                .and(&dt.s2p)
                .for_each(|gt, gp, &gdh2, &a, &ta, &sp| {
                    *gt = gdh2 * sp;
                    *gp += gdh2 * ta * silu_second(a);
                });
            g_da2.push(gda);
        }

        general_mat_mul(1.0, &ga2.t(), &tape.h1, 1.0, &mut w2);
        for i in 0..d {
            general_mat_mul(1.0, &g_da2[i].t(), &dt.dh1[i], 1.0, &mut w2);
        }
        b2 += &ga2.sum_axis(Axis(0));

        let mut ga1 = ga2.dot(&l.w2);
        Zip::from(&mut ga1).and(&dt.s1p).for_each(|g, &sp| *g *= sp);
        let mut g_w1_cols = Array2::<f64>::zeros((self.shape.hidden, d));
        for i in 0..d {
            let gdh1 = g_da2[i].dot(&l.w2);
            let col = l.w1.column(i + 1);
            let mut acc = g_w1_cols.column_mut(i);
            Zip::from(ga1.rows_mut())
                .and(gdh1.rows())
                .and(tape.a1.rows())
                .and(dt.s1p.rows())
                .for_each(|mut ga, gt, a, sp| {
                    Zip::from(&mut ga)
                        .and(&gt)
                        .and(&a)
                        .and(&sp)
                        .and(&col)
                        .and(&mut acc)
                        .for_each(|ga, &gt, &a, &sp, &c, acc| {
                            *ga += gt * c * silu_second(a);
                            *acc += gt * sp;
                        });
                });
        }
        general_mat_mul(1.0, &ga1.t(), &tape.input, 1.0, &mut w1);
        let mut spatial = w1.slice_mut(s![.., 1..]);
        spatial += &g_w1_cols;
        b1 += &ga1.sum_axis(Axis(0));
    }

    /// Single-point evaluation.
    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let input = single_input(t, x);
        self.forward(input.view()).row(0).to_vec()
    }
}

fn single_input(t: f64, x: &[f64]) -> Array2<f64> {
    let mut row = Vec::with_capacity(x.len() + 1);
    row.push(t);
    row.extend_from_slice(x);
    Array2::from_shape_vec((1, row.len()), row).expect("one row")
}

/// Recorded activations of a batched forward pass.
pub struct Tape {
    pub input: Array2<f64>,
    pub a1: Array2<f64>,
    pub h1: Array2<f64>,
    pub a2: Array2<f64>,
    pub h2: Array2<f64>,
    pub out: Array2<f64>,
}

/// Forward pass plus the tangents needed for the divergence.
pub struct DivTape {
    pub tape: Tape,
    s1p: Array2<f64>,
    s2p: Array2<f64>,
    dh1: Vec<Array2<f64>>,
    da2: Vec<Array2<f64>>,
    dh2: Vec<Array2<f64>>,
    /// `Σᵢ ∂outᵢ/∂xᵢ` per row.
    pub div: Array1<f64>,
}

impl DivTape {
    pub fn out(&self) -> &Array2<f64> {
        &self.tape.out
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[inline]
fn silu_second(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))
}

/// `W₃·silu(W₂·silu(W₁·[t; x] + b₁) + b₂) + b₃`.
pub fn mlp_forward(params: &MlpParams, t: f64, x: &[f64]) -> Vec<f64> {
    params.eval(t, x)
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss adjoint `∂L/∂out` for each input row.
pub fn param_grad(params: &MlpParams, input: ArrayView2<f64>, adjoint: ArrayView2<f64>) -> MlpParams {
    let tape = params.tape(input);
    let mut grad = MlpParams::zeros(params.shape());
    params.backward(&tape, adjoint, &mut grad);
    grad
}

/// Exact `∇ₓ·net(t, x)` for a vector-valued network.
pub fn spatial_divergence(params: &MlpParams, t: f64, x: &[f64]) -> f64 {
    let input = single_input(t, x);
    params.div_tape(input.view()).div[0]
}

/// Exact spatial Jacobian, `jac[o][i] = ∂outₒ/∂xᵢ`, by forward-mode tangents.
pub fn spatial_jacobian(params: &MlpParams, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
    let input = single_input(t, x);
    let tape = params.tape(input.view());
    let l = params.layers();
    let s1p = tape.a1.row(0).mapv(silu_prime);
    let s2p = tape.a2.row(0).mapv(silu_prime);
    let mut jac = vec![vec![0.0; x.len()]; params.shape().out_dim];
    for i in 0..x.len() {
        let dh1 = &s1p * &l.w1.column(i + 1);
        let dh2 = &l.w2.dot(&dh1) * &s2p;
        let dout = l.w3.dot(&dh2);
        for (o, v) in dout.iter().enumerate() {
            jac[o][i] = *v;
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_net(seed: u64, out_dim: usize) -> MlpParams {
        let mut rng = substream(seed, 0);
        let mut p = MlpParams::init(MlpShape::new(3, 16, out_dim).unwrap(), &mut rng);
        // Non-zero biases so every code path is exercised.
        let l = p.layers_mut();
        for v in l.b1.into_iter().chain(l.b2) {
            *v = rng.random_range(-0.5..0.5);
        }
        p
    }

    fn random_inputs(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = substream(seed, 1);
        Array2::from_shape_fn((n, 3), |(_, c)| {
            if c == 0 {
                rng.random_range(0.0..1.0)
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(MlpShape::new(3, HIDDEN, 2).unwrap());
        assert_eq!(mlp_forward(&p, 0.3, &[1.0, -4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn bias_passthrough() {
        let mut p = MlpParams::zeros(MlpShape::new(3, HIDDEN, 2).unwrap());
        p.layers_mut().b3.assign(&ndarray::arr1(&[1.5, -2.0]));
        p.layers_mut().w3.fill(0.7);
        // With W₁ = W₂ = 0 and zero hidden biases every hidden unit is silu(0) = 0.
        assert_eq!(mlp_forward(&p, 0.9, &[3.0, 3.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(MlpShape::new(1, 4, 1).is_err());
        let shape = MlpShape::new(3, 4, 2).unwrap();
        assert!(MlpParams::from_vec(shape, vec![0.0; 3]).is_err());
    }

    #[test]
    fn first_order_remainder_is_second_order() {
        let p = random_net(3, 2);
        let (t, x) = (0.4, [0.7, -1.2]);
        let eps = 1e-4;
        let base = p.eval(t, &x);
        let jac = spatial_jacobian(&p, t, &x);
        for i in 0..2 {
            let mut moved = x;
            moved[i] += eps;
            let f = p.eval(t, &moved);
            for o in 0..2 {
                let rem = (f[o] - base[o] - eps * jac[o][i]).abs();
                assert!(rem < 10.0 * eps * eps, "o={o} i={i}: {rem}");
            }
        }
        let div = spatial_divergence(&p, t, &x);
        assert!((div - (jac[0][0] + jac[1][1])).abs() < 1e-12);
    }

    #[test]
    fn param_grad_of_half_squared_norm_at_zero() {
        let p = MlpParams::zeros(MlpShape::new(3, 8, 2).unwrap());
        let input = random_inputs(0, 5);
        let out = p.forward(input.view());
        let g = param_grad(&p, input.view(), out.view());
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_readout_gradient() {
        // With W₁ = W₂ = 0 and b₂ = c the hidden layer is the constant
        // silu(c), so out = W₃·silu(c) + b₃ and ∂out/∂W₃ = silu(c).
        let shape = MlpShape::new(3, 4, 1).unwrap();
        let mut p = MlpParams::zeros(shape);
        p.layers_mut().b2.assign(&ndarray::arr1(&[0.3, -1.0, 2.0, 0.5]));
        let input = random_inputs(1, 1);
        let g = param_grad(&p, input.view(), ndarray::arr2(&[[1.0]]).view());
        let expected: Vec<f64> = [0.3, -1.0, 2.0, 0.5].iter().map(|&c| silu(c)).collect();
        assert_eq!(g.layers().w3.row(0).to_vec(), expected);
    }

    #[test]
    fn param_grad_matches_central_differences() {
        let p = random_net(5, 2);
        let input = random_inputs(5, 7);
        let weights = random_inputs(6, 7).slice(s![.., 1..]).to_owned();
        let loss = |q: &MlpParams| (&q.forward(input.view()) * &weights).sum();
        let g = param_grad(&p, input.view(), weights.view());
        let mut rng = substream(7, 0);
        for _ in 0..20 {
            let k = rng.random_range(0..p.as_slice().len());
            let h = 1e-5;
            let mut plus = p.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let exact = g.as_slice()[k];
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{k}: {fd} vs {exact}");
        }
    }

    #[test]
    fn divergence_of_constant_field_is_zero() {
        let mut p = MlpParams::zeros(MlpShape::new(3, 8, 2).unwrap());
        p.layers_mut().b3.assign(&ndarray::arr1(&[3.0, -1.0]));
        assert_eq!(spatial_divergence(&p, 0.5, &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn divergence_of_linear_field_is_trace() {
        // Realize x ↦ A·x with A = [[1,2],[3,4]] on the region where every
        // hidden pre-activation is large and positive (silu ≈ identity up to
        // exponentially small terms): shift by a big bias and subtract it back.
        let shape = MlpShape::new(3, 2, 2).unwrap();
        let mut p = MlpParams::zeros(shape);
        let big = 60.0;
        {
            let mut l = p.layers_mut();
            l.w1.assign(&ndarray::arr2(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]));
            l.b1.fill(big);
            l.w2.assign(&ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]));
            l.w3.assign(&ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]));
            l.b3.assign(&ndarray::arr1(&[-3.0 * big, -7.0 * big]));
        }
        let d = spatial_divergence(&p, 0.2, &[0.5, -0.25]);
        assert!((d - 5.0).abs() < 1e-12, "{d}");
    }

    fn fd_divergence(p: &MlpParams, t: f64, x: [f64; 2], eps: f64) -> f64 {
        (0..2)
            .map(|i| {
                let mut xp = x;
                xp[i] += eps;
                let mut xm = x;
                xm[i] -= eps;
                (p.eval(t, &xp)[i] - p.eval(t, &xm)[i]) / (2.0 * eps)
            })
            .sum()
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let p = random_net(11, 2);
        let input = random_inputs(11, 100);
        let tape = p.div_tape(input.view());
        for (b, row) in input.rows().into_iter().enumerate() {
            let fd = fd_divergence(&p, row[0], [row[1], row[2]], 1e-4);
            assert!((tape.div[b] - fd).abs() < 1e-5, "{b}: {} vs {fd}", tape.div[b]);
        }
    }

    #[test]
    fn divergence_parameter_gradient_matches_finite_differences() {
        let p = random_net(13, 2);
        let input = random_inputs(13, 6);
        let w_out = random_inputs(14, 6).slice(s![.., 1..]).to_owned();
        let w_div = random_inputs(15, 6).column(1).to_owned();
        let loss = |q: &MlpParams| {
            let t = q.div_tape(input.view());
            (t.out() * &w_out).sum() + t.div.dot(&w_div)
        };
        let tape = p.div_tape(input.view());
        let mut g = MlpParams::zeros(p.shape());
        p.backward_div(&tape, w_out.view(), w_div.view(), &mut g);
        let h = 1e-5;
        for k in 0..p.as_slice().len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let exact = g.as_slice()[k];
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-2), "{k}: {fd} vs {exact}");
        }
    }

    #[test]
    fn silu_derivatives() {
        for &z in &[-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 40.0] {
            let h = 1e-5;
            let d1 = (silu(z + h) - silu(z - h)) / (2.0 * h);
            let d2 = (silu_prime(z + h) - silu_prime(z - h)) / (2.0 * h);
            assert!((d1 - silu_prime(z)).abs() < 1e-8);
            assert!((d2 - silu_second(z)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn divergence_ignores_output_shift(seed in 0u64..500, c0 in -5.0..5.0f64, c1 in -5.0..5.0f64,
                                           t in 0.0..1.0f64, x0 in -4.0..4.0f64, x1 in -4.0..4.0f64) {
            let p = random_net(seed, 2);
            let mut shifted = p.clone();
            {
                let mut l = shifted.layers_mut();
                l.b3[0] += c0;
                l.b3[1] += c1;
            }
            prop_assert_eq!(spatial_divergence(&p, t, &[x0, x1]), spatial_divergence(&shifted, t, &[x0, x1]));
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..500, t in 0.0..1.0f64, x0 in -4.0..4.0f64) {
            let p = random_net(seed, 2);
            let a = mlp_forward(&p, t, &[x0, 1.0]);
            let b = mlp_forward(&p, t, &[x0, 1.0]);
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
