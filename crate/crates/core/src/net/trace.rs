//! Batched evaluation trace with reverse-mode parameter gradients.
//!
//! A forward pass pushes a *stack* of rows through the network: for a batch
//! of `B` points and `nc` requested coordinates the stack has `B (1 + 2 nc)`
//! rows laid out as
//!
//! ```text
//! [ values (B) | d1 coord 0 (B) .. d1 coord nc-1 | d2 coord 0 (B) .. d2 coord nc-1 ]
//! ```
//!
//! Linear layers act on every row (bias only on value rows); `tanh` layers
//! apply the second-order jet rule elementwise. The trace keeps each layer's
//! input stack and hidden pre-activations, and the reverse pass runs the
//! adjoint of the jet rule, so losses containing `c'` and `c''` are
//! differentiated exactly with respect to weights and biases.

use ndarray::{s, Array2};

use super::{FlatGradient, MLPParams};
use crate::error::{Error, Result};
use crate::transform::AffineTransform;

/// Network outputs (or their adjoints) for a batch, in stack layout.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    batch: usize,
    coords: Vec<usize>,
    data: Vec<f64>,
}

impl JetBatch {
    pub fn zeros(batch: usize, coords: &[usize]) -> Self {
        Self {
            batch,
            coords: coords.to_vec(),
            data: vec![0.0; batch * (1 + 2 * coords.len())],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    fn slot(&self, coord: usize) -> usize {
        self.coords
            .iter()
            .position(|&c| c == coord)
            .unwrap_or_else(|| panic!("coordinate {coord} was not traced"))
    }

    pub fn values(&self) -> &[f64] {
        &self.data[..self.batch]
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.batch]
    }

    pub fn d1(&self, coord: usize) -> &[f64] {
        let q = self.slot(coord);
        let o = self.batch * (1 + q);
        &self.data[o..o + self.batch]
    }

    pub fn d1_mut(&mut self, coord: usize) -> &mut [f64] {
        let q = self.slot(coord);
        let o = self.batch * (1 + q);
        &mut self.data[o..o + self.batch]
    }

    pub fn d2(&self, coord: usize) -> &[f64] {
        let q = self.slot(coord);
        let o = self.batch * (1 + self.coords.len() + q);
        &self.data[o..o + self.batch]
    }

    pub fn d2_mut(&mut self, coord: usize) -> &mut [f64] {
        let q = self.slot(coord);
        let o = self.batch * (1 + self.coords.len() + q);
        &mut self.data[o..o + self.batch]
    }
}

/// A scalar that is linear in the network's output jet at one point:
/// `value * c + sum_k d1[k] * dc/dx_k + d2[k] * d2c/dx_k^2`.
///
/// Boundary observables are `c` itself; residual observables are the
/// differential operator applied to `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub point: Vec<f64>,
    pub kind: ObservableKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservableKind {
    Value,
    Linear {
        value: f64,
        d1: [f64; 2],
        d2: [f64; 2],
    },
}

impl Observable {
    pub fn value(point: Vec<f64>) -> Self {
        Self {
            point,
            kind: ObservableKind::Value,
        }
    }

    pub fn linear(point: Vec<f64>, value: f64, d1: [f64; 2], d2: [f64; 2]) -> Self {
        Self {
            point,
            kind: ObservableKind::Linear { value, d1, d2 },
        }
    }

    fn weights(&self) -> (f64, [f64; 2], [f64; 2]) {
        match self.kind {
            ObservableKind::Value => (1.0, [0.0; 2], [0.0; 2]),
            ObservableKind::Linear { value, d1, d2 } => (value, d1, d2),
        }
    }

    /// Evaluate against a traced jet at batch index `i`.
    pub fn eval(&self, out: &JetBatch, i: usize) -> f64 {
        let (v, d1, d2) = self.weights();
        let mut acc = v * out.values()[i];
        for &c in out.coords() {
            acc += d1[c] * out.d1(c)[i] + d2[c] * out.d2(c)[i];
        }
        acc
    }
}

/// Scalar loss of a batch of network output jets.
pub trait OutputLoss {
    /// Loss value and its adjoint with respect to every entry of `out`.
    fn evaluate(&self, out: &JetBatch) -> Result<(f64, JetBatch)>;
}

pub struct Trace<'a> {
    params: &'a MLPParams,
    batch: usize,
    coords: Vec<usize>,
    /// Input stack of every affine layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation stacks of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: JetBatch,
}

fn check_finite(a: &Array2<f64>, layer: usize, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: Some(layer),
            context: format!("non-finite {what}"),
        })
    }
}

impl<'a> Trace<'a> {
    /// Forward pass of `x -> net(T(x))` for the rows of `x`, tracking first
    /// and second derivatives along each coordinate in `coords`.
    pub fn forward(
        params: &'a MLPParams,
        transform: &AffineTransform,
        x: &Array2<f64>,
        coords: &[usize],
    ) -> Result<Self> {
        let d0 = params.input_dim();
        if x.ncols() != d0 {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {d0}",
                x.ncols()
            )));
        }
        if transform.dim() != d0 {
            return Err(Error::Shape(format!(
                "transform is {}-d, network input is {d0}-d",
                transform.dim()
            )));
        }
        if let Some(&c) = coords.iter().find(|&&c| c >= d0) {
            return Err(Error::Shape(format!("coordinate {c} out of range for {d0}-d input")));
        }
        let b = x.nrows();
        let nc = coords.len();
        let rows = b * (1 + 2 * nc);

        let mut z = Array2::<f64>::zeros((rows, d0));
        for i in 0..b {
            for k in 0..d0 {
                z[[i, k]] = transform.map_coord(k, x[[i, k]]);
            }
        }
        for (q, &c) in coords.iter().enumerate() {
            let a = transform.scale()[c];
            for i in 0..b {
                z[[b * (1 + q) + i, c]] = a;
            }
        }

        let last = params.num_layers() - 1;
        let mut inputs = Vec::with_capacity(params.num_layers());
        let mut pre = Vec::with_capacity(last);
        for l in 0..=last {
            let w = &params.weights[l];
            let mut s_mat = z.dot(w);
            if !s_mat.is_standard_layout() {
                s_mat = s_mat.as_standard_layout().into_owned();
            }
            {
                let bias = &params.biases[l];
                let mut vals = s_mat.slice_mut(s![..b, ..]);
                vals += bias;
            }
            check_finite(&s_mat, l + 1, "pre-activation")?;
            inputs.push(z);
            if l < last {
                z = tanh_forward(&s_mat, b, nc);
                pre.push(s_mat);
            } else {
                let output = JetBatch {
                    batch: b,
                    coords: coords.to_vec(),
                    data: s_mat.into_raw_vec(),
                };
                return Ok(Self {
                    params,
                    batch: b,
                    coords: coords.to_vec(),
                    inputs,
                    pre,
                    output,
                });
            }
        }
        unreachable!("network has at least one layer")
    }

    pub fn output(&self) -> &JetBatch {
        &self.output
    }

    pub fn values(&self) -> Vec<f64> {
        self.output.values().to_vec()
    }

    /// Reverse pass. `seed` is the adjoint of the output stack; `sink` is
    /// called once per layer, last layer first, with `(layer, input stack,
    /// adjoint of the pre-activation stack)`.
    fn reverse(
        &self,
        seed: &JetBatch,
        mut sink: impl FnMut(usize, &Array2<f64>, &Array2<f64>),
    ) -> Result<()> {
        assert_eq!(seed.batch, self.batch, "seed batch size mismatch");
        assert_eq!(seed.coords, self.coords, "seed coordinates mismatch");
        let rows = self.output.data.len();
        let mut g = Array2::from_shape_vec((rows, 1), seed.data.clone())
            .expect("stack layout is consistent");
        check_finite(&g, self.params.num_layers(), "loss adjoint")?;
        for l in (0..self.params.num_layers()).rev() {
            sink(l, &self.inputs[l], &g);
            if l == 0 {
                break;
            }
            let mut gz = g.dot(&self.params.weights[l].t());
            if !gz.is_standard_layout() {
                gz = gz.as_standard_layout().into_owned();
            }
            tanh_reverse(
                &self.pre[l - 1],
                &self.inputs[l],
                &mut gz,
                self.batch,
                self.coords.len(),
            );
            check_finite(&gz, l, "adjoint")?;
            g = gz;
        }
        Ok(())
    }

    /// Gradient of `sum_rows seed * output` with respect to all parameters.
    pub fn gradient(&self, seed: &JetBatch) -> Result<FlatGradient> {
        let offs = self.params.layer_offsets();
        let mut grad = FlatGradient::zeros(self.params.num_params());
        let b = self.batch;
        self.reverse(seed, |l, z, g| {
            let dw = z.t().dot(g);
            let (din, dout) = dw.dim();
            let o = offs[l];
            let out = &mut grad.values[o..o + din * dout + dout];
            for (dst, src) in out[..din * dout].iter_mut().zip(dw.iter()) {
                *dst += src;
            }
            for row in g.slice(s![..b, ..]).rows() {
                for (dst, src) in out[din * dout..].iter_mut().zip(row.iter()) {
                    *dst += src;
                }
            }
        })?;
        Ok(grad)
    }

    /// One gradient row per batch point: row `i` differentiates only the
    /// seeded outputs belonging to point `i`.
    pub fn per_point_gradients(&self, seed: &JetBatch) -> Result<Array2<f64>> {
        let offs = self.params.layer_offsets();
        let b = self.batch;
        let blocks = 1 + 2 * self.coords.len();
        let mut jac = Array2::<f64>::zeros((b, self.params.num_params()));
        self.reverse(seed, |l, z, g| {
            let din = z.ncols();
            let dout = g.ncols();
            let o = offs[l];
            for i in 0..b {
                let mut row = jac.row_mut(i);
                let row = row.as_slice_mut().expect("standard layout");
                let out = &mut row[o..o + din * dout + dout];
                for blk in 0..blocks {
                    let r = blk * b + i;
                    let zr = z.row(r);
                    let gr = g.row(r);
                    for (a, &za) in zr.iter().enumerate() {
                        if za == 0.0 {
                            continue;
                        }
                        let dst = &mut out[a * dout..(a + 1) * dout];
                        for (d, &gv) in dst.iter_mut().zip(gr.iter()) {
                            *d += za * gv;
                        }
                    }
                }
                for (d, &gv) in out[din * dout..].iter_mut().zip(g.row(i).iter()) {
                    *d += gv;
                }
            }
        })?;
        Ok(jac)
    }
}

/// Elementwise jet rule for `tanh` over a stack.
fn tanh_forward(s_mat: &Array2<f64>, b: usize, nc: usize) -> Array2<f64> {
    let cols = s_mat.ncols();
    let mut out = Array2::<f64>::zeros(s_mat.raw_dim());
    let src = s_mat.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for i in 0..b {
        for j in 0..cols {
            let v = i * cols + j;
            let t = src[v].tanh();
            let sech2 = 1.0 - t * t;
            dst[v] = t;
            for q in 0..nc {
                let r1 = (b * (1 + q) + i) * cols + j;
                let r2 = (b * (1 + nc + q) + i) * cols + j;
                let s1 = src[r1];
                dst[r1] = sech2 * s1;
                dst[r2] = sech2 * src[r2] - 2.0 * t * sech2 * s1 * s1;
            }
        }
    }
    out
}

/// Adjoint of [`tanh_forward`]. `act` is the activation stack the forward
/// pass produced; `g` holds the activation adjoint on entry and the
/// pre-activation adjoint on exit.
fn tanh_reverse(pre: &Array2<f64>, act: &Array2<f64>, g: &mut Array2<f64>, b: usize, nc: usize) {
    let cols = pre.ncols();
    let s_all = pre.as_slice().expect("standard layout");
    let t_all = act.as_slice().expect("standard layout");
    let g_all = g.as_slice_mut().expect("standard layout");
    for i in 0..b {
        for j in 0..cols {
            let v = i * cols + j;
            let t = t_all[v];
            let sech2 = 1.0 - t * t;
            let mut gv = g_all[v] * sech2;
            for q in 0..nc {
                let r1 = (b * (1 + q) + i) * cols + j;
                let r2 = (b * (1 + nc + q) + i) * cols + j;
                let (s1, s2) = (s_all[r1], s_all[r2]);
                let (g1, g2) = (g_all[r1], g_all[r2]);
                g_all[r2] = g2 * sech2;
                g_all[r1] = g1 * sech2 - 4.0 * t * sech2 * s1 * g2;
                gv += -2.0 * t * sech2 * s1 * g1
                    + g2 * (-2.0 * t * sech2 * s2 - 2.0 * sech2 * (sech2 - 2.0 * t * t) * s1 * s1);
            }
            g_all[v] = gv;
        }
    }
}

fn stack_points(points: &[Vec<f64>], d0: usize) -> Result<Array2<f64>> {
    let mut x = Array2::<f64>::zeros((points.len(), d0));
    for (i, p) in points.iter().enumerate() {
        if p.len() != d0 {
            return Err(Error::Shape(format!(
                "point {i} has {} coordinates, expected {d0}",
                p.len()
            )));
        }
        for (k, &v) in p.iter().enumerate() {
            x[[i, k]] = v;
        }
    }
    Ok(x)
}

/// Gradient of `loss(net(T(x)))` with respect to all parameters.
///
/// Derivatives along every input coordinate are traced so the loss may use
/// any `c'`/`c''` entry.
pub fn param_gradient(
    params: &MLPParams,
    transform: &AffineTransform,
    x: &Array2<f64>,
    loss: &impl OutputLoss,
) -> Result<(f64, FlatGradient)> {
    let coords: Vec<usize> = (0..params.input_dim()).collect();
    let tr = Trace::forward(params, transform, x, &coords)?;
    let (value, seed) = loss.evaluate(tr.output())?;
    if !value.is_finite() {
        return Err(Error::numeric("loss is not finite"));
    }
    let grad = tr.gradient(&seed)?;
    Ok((value, grad))
}

/// Jacobian of a list of observables with respect to all parameters, one
/// row per observable in flat parameter order.
pub fn param_jacobian(
    params: &MLPParams,
    transform: &AffineTransform,
    observables: &[Observable],
) -> Result<Array2<f64>> {
    let d0 = params.input_dim();
    let coords: Vec<usize> = (0..d0).collect();
    let points: Vec<Vec<f64>> = observables.iter().map(|o| o.point.clone()).collect();
    let x = stack_points(&points, d0)?;
    let tr = Trace::forward(params, transform, &x, &coords)?;
    let mut seed = JetBatch::zeros(observables.len(), &coords);
    for (i, o) in observables.iter().enumerate() {
        let (v, d1, d2) = o.weights();
        seed.values_mut()[i] = v;
        for &c in &coords {
            seed.d1_mut(c)[i] = d1[c];
            seed.d2_mut(c)[i] = d2[c];
        }
    }
    tr.per_point_gradients(&seed)
}

/// Evaluate observables without differentiating.
pub fn eval_observables(
    params: &MLPParams,
    transform: &AffineTransform,
    observables: &[Observable],
) -> Result<Vec<f64>> {
    let d0 = params.input_dim();
    let coords: Vec<usize> = (0..d0).collect();
    let points: Vec<Vec<f64>> = observables.iter().map(|o| o.point.clone()).collect();
    let x = stack_points(&points, d0)?;
    let tr = Trace::forward(params, transform, &x, &coords)?;
    Ok(observables
        .iter()
        .enumerate()
        .map(|(i, o)| o.eval(tr.output(), i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct MeanSquare;

    impl OutputLoss for MeanSquare {
        fn evaluate(&self, out: &JetBatch) -> Result<(f64, JetBatch)> {
            let n = out.batch() as f64;
            let mut seed = JetBatch::zeros(out.batch(), out.coords());
            let mut acc = 0.0;
            for (i, &v) in out.values().iter().enumerate() {
                acc += v * v / n;
                seed.values_mut()[i] = 2.0 * v / n;
            }
            Ok((acc, seed))
        }
    }

    #[test]
    fn trace_matches_scalar_jets() {
        let p = MLPParams::init_xavier(&[1, 5, 4, 1], 2).unwrap();
        let t = AffineTransform::scalar(3.0, -0.5).unwrap();
        let x = array![[0.1], [0.45], [0.9]];
        let tr = Trace::forward(&p, &t, &x, &[0]).unwrap();
        for i in 0..3 {
            let j = p.forward_jet_with(&t, &[x[[i, 0]]], 0).unwrap();
            let out = tr.output();
            assert!((out.values()[i] - j.v).abs() <= 1e-14 * j.v.abs().max(1.0));
            assert!((out.d1(0)[i] - j.d1).abs() <= 1e-13 * j.d1.abs().max(1.0));
            assert!((out.d2(0)[i] - j.d2).abs() <= 1e-13 * j.d2.abs().max(1.0));
        }
    }

    #[test]
    fn zero_net_mean_square_gradient_vanishes_beyond_first_layer() {
        let p = MLPParams::zeros(&[1, 4, 3, 1]).unwrap();
        let t = AffineTransform::identity(1);
        let x = array![[0.2], [0.8]];
        let (loss, g) = param_gradient(&p, &t, &x, &MeanSquare).unwrap();
        assert_eq!(loss, 0.0);
        let offs = p.layer_offsets();
        assert!(g.values[offs[1]..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_point_rows_sum_to_batch_gradient() {
        let p = MLPParams::init_xavier(&[2, 3, 3, 1], 4).unwrap();
        let t = AffineTransform::new(vec![2.0, 1.0], vec![0.0, -1.0]).unwrap();
        let x = array![[0.1, 0.3], [0.5, -0.2], [0.9, 0.7]];
        let tr = Trace::forward(&p, &t, &x, &[0, 1]).unwrap();
        let mut seed = JetBatch::zeros(3, &[0, 1]);
        for i in 0..3 {
            seed.values_mut()[i] = 0.3 * i as f64 + 0.1;
            seed.d1_mut(1)[i] = 1.0;
            seed.d2_mut(0)[i] = -0.5;
            seed.d2_mut(1)[i] = -0.25;
        }
        let total = tr.gradient(&seed).unwrap();
        let rows = tr.per_point_gradients(&seed).unwrap();
        for (k, &g) in total.values.iter().enumerate() {
            let s: f64 = rows.column(k).sum();
            assert!((s - g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }

    #[test]
    fn identical_points_identical_rows() {
        let p = MLPParams::init_xavier(&[1, 4, 1], 8).unwrap();
        let t = AffineTransform::identity(1);
        let obs = vec![
            Observable::linear(vec![0.3], 0.0, [1.0, 0.0], [-0.01, 0.0]),
            Observable::linear(vec![0.3], 0.0, [1.0, 0.0], [-0.01, 0.0]),
        ];
        let j = param_jacobian(&p, &t, &obs).unwrap();
        assert_eq!(j.row(0), j.row(1));
    }

    #[test]
    fn non_finite_reports_layer() {
        let mut p = MLPParams::init_xavier(&[1, 3, 3, 1], 1).unwrap();
        p.weights[1][[0, 0]] = f64::NAN;
        let t = AffineTransform::identity(1);
        match Trace::forward(&p, &t, &array![[0.5]], &[0]) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, Some(2)),
            other => panic!("expected numeric error, got {:?}", other.err()),
        }
    }
}
