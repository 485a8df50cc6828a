//! Fully connected tanh networks.
//!
//! `MLPParams` holds `L + 1` affine layers; every layer but the last is
//! followed by `tanh`. Inputs are row vectors, so layer `l` maps
//! `z -> z W_l + b_l` with `W_l` of shape `d_l x d_{l+1}`.
//!
//! Two evaluation paths exist: a scalar [`Jet`] path (`forward_jet`) and the
//! batched [`trace`] used for training, which also carries the reverse pass.

mod jet;
pub mod trace;

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::{self, BoxMuller};
use crate::transform::AffineTransform;

pub use jet::Jet;
pub use trace::{Observable, ObservableKind};

#[derive(Clone, Debug, PartialEq)]
pub struct MLPParams {
    dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Gradient (or any parameter-space vector) in flat layout: layer-major,
/// weights before biases within a layer, weights row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient {
    pub values: Vec<f64>,
}

impl FlatGradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(format!(
            "network needs at least input and output widths, got {dims:?}"
        )));
    }
    if let Some(k) = dims.iter().position(|&d| d < 1) {
        return Err(Error::Config(format!("layer width d_{k} must be >= 1 in {dims:?}")));
    }
    if !(1..=2).contains(&dims[0]) {
        return Err(Error::Config(format!("input width must be 1 or 2, got {}", dims[0])));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "output width must be 1, got {}",
            dims.last().unwrap()
        )));
    }
    Ok(())
}

impl MLPParams {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let weights = dims.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Xavier-normal weights, `N(0, 2 / (d_l + d_{l+1}))`, zero biases.
    ///
    /// Layer `l` draws from its own stream `(seed, l)`, so a layer's weights do
    /// not depend on the sizes of the other layers.
    pub fn init_xavier(dims: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let (fan_in, fan_out) = w.dim();
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let mut normal = BoxMuller::new(rng::stream(seed, l as u64));
            // row-major fill keeps the draw order tied to the flat layout
            for x in w.iter_mut() {
                *x = std * normal.sample();
            }
        }
        Ok(p)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of affine layers, `L + 1`.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offset of layer `l`'s weight block in the flat layout.
    pub(crate) fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.num_layers());
        let mut o = 0;
        for w in self.dims.windows(2) {
            offs.push(o);
            o += w[0] * w[1] + w[1];
        }
        offs
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn unflatten(dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network has {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for x in w.iter_mut() {
                *x = it.next().unwrap();
            }
            for x in b.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Batched forward pass, one output per row of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let t = AffineTransform::identity(self.input_dim());
        self.forward_with(&t, x)
    }

    /// Forward pass of `x -> net(T(x))`.
    pub fn forward_with(&self, transform: &AffineTransform, x: &Array2<f64>) -> Result<Vec<f64>> {
        let tr = trace::Trace::forward(self, transform, x, &[])?;
        Ok(tr.values())
    }

    /// `(c, dc/dx_coord, d2c/dx_coord^2)` at one point via scalar jets.
    pub fn forward_jet(&self, x: &[f64], coord: usize) -> Result<Jet> {
        let t = AffineTransform::identity(self.input_dim());
        self.forward_jet_with(&t, x, coord)
    }

    /// Jet of `x -> net(T(x))`, derivatives in the physical coordinate.
    pub fn forward_jet_with(
        &self,
        transform: &AffineTransform,
        x: &[f64],
        coord: usize,
    ) -> Result<Jet> {
        if x.len() != self.input_dim() || transform.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut z = transform.seed_jets(x, coord)?;
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next: Vec<Jet> = b.iter().map(|&bj| Jet::constant(bj)).collect();
            for (i, zi) in z.iter().enumerate() {
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += *zi * w[[i, j]];
                }
            }
            if l < last {
                for nj in next.iter_mut() {
                    *nj = nj.tanh();
                }
            }
            if next.iter().any(|j| !j.is_finite()) {
                return Err(Error::Numeric {
                    layer: Some(l + 1),
                    context: "non-finite jet".into(),
                });
            }
            z = next;
        }
        Ok(z[0])
    }

    /// Plain-text serialization; see `docs/params-format.md`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# cdpinn mlp parameters\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims = {}", dims.join(" "));
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            for (r, row) in w.rows().into_iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(s, "w.{l}.{r} = {}", vals.join(" "));
            }
            let vals: Vec<String> = b.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(s, "b.{l} = {}", vals.join(" "));
        }
        s
    }
}

/// 17 significant digits: round-trips every finite f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_floats(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("line {line}: bad number {t:?}: {e}")))
        })
        .collect()
}

impl FromStr for MLPParams {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut params: Option<MLPParams> = None;
        let mut seen_w: Vec<Vec<bool>> = Vec::new();
        let mut seen_b: Vec<bool> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (key, val) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = values")))?;
            let key = key.trim();
            if key == "dims" {
                let dims = val
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("line {line}: bad dims: {e}")))?;
                let p = MLPParams::zeros(&dims)?;
                seen_w = p.weights.iter().map(|w| vec![false; w.nrows()]).collect();
                seen_b = vec![false; p.biases.len()];
                params = Some(p);
                continue;
            }
            let p = params
                .as_mut()
                .ok_or_else(|| Error::Config(format!("line {line}: `dims` must come first")))?;
            let vals = parse_floats(line, val)?;
            let parts: Vec<&str> = key.split('.').collect();
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("line {line}: bad key {key:?}")))
            };
            match parts.as_slice() {
                ["w", l, r] => {
                    let (l, r) = (idx(l)?, idx(r)?);
                    let w = p.weights.get_mut(l).ok_or_else(|| {
                        Error::Config(format!("line {line}: layer {l} out of range"))
                    })?;
                    if r >= w.nrows() || vals.len() != w.ncols() {
                        return Err(Error::Config(format!(
                            "line {line}: row {key} does not fit a {}x{} matrix",
                            w.nrows(),
                            w.ncols()
                        )));
                    }
                    w.row_mut(r).assign(&Array1::from(vals));
                    seen_w[l][r] = true;
                }
                ["b", l] => {
                    let l = idx(l)?;
                    let b = p.biases.get_mut(l).ok_or_else(|| {
                        Error::Config(format!("line {line}: layer {l} out of range"))
                    })?;
                    if vals.len() != b.len() {
                        return Err(Error::Config(format!(
                            "line {line}: bias {key} needs {} values",
                            b.len()
                        )));
                    }
                    b.assign(&Array1::from(vals));
                    seen_b[l] = true;
                }
                _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
            }
        }
        let p = params.ok_or_else(|| Error::Config("missing `dims` line".into()))?;
        if seen_w.iter().flatten().any(|s| !s) || seen_b.iter().any(|s| !s) {
            return Err(Error::Config("parameter file is missing rows".into()));
        }
        if !p.is_finite() {
            return Err(Error::numeric("parameter file contains non-finite values"));
        }
        Ok(p)
    }
}
