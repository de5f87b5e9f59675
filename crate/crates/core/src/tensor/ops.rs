use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Elementwise single-input primitives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Silu,
    /// `x^p` for a fixed real exponent.
    Powf(f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Offsets visited when walking `shape` in row-major order with per-axis `strides`.
fn strided_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Result shape of broadcasting `a` against `b` (trailing-aligned, extents equal or 1).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each element of `out_shape`, the offset of the broadcast source in `in_shape`.
/// `None` when no broadcasting is needed.
fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Option<Vec<usize>> {
    if out_shape == in_shape {
        return None;
    }
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let mut st = vec![0; rank];
    for i in pad..rank {
        if in_shape[i - pad] != 1 {
            st[i] = in_strides[i - pad];
        }
    }
    Some(strided_offsets(out_shape, &st))
}

/// Sums `g` (shaped like the broadcast output) back onto the source shape.
fn unbroadcast(g: &Tensor, in_shape: &[usize], map: &Option<Vec<usize>>) -> Tensor {
    match map {
        None => g.clone(),
        Some(map) => {
            let mut out = vec![0.0; in_shape.iter().product()];
            for (&gi, &m) in g.data().iter().zip(map) {
                out[m] += gi;
            }
            Tensor::from_parts(in_shape.to_vec(), out)
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn last_axis(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&d) if d > 0 => Ok((shape.iter().product::<usize>() / d, d)),
        _ => Err(Error::domain(op, "needs a non-empty last axis")),
    }
}

fn hwc(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::domain(op, format!("expected H×W×C tensor, got {shape:?}"))),
    }
}

impl Tape {
    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        let name = match op {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Silu => "silu",
            Unary::Powf(_) => "powf",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
        };
        match op {
            Unary::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::domain("log", format!("non-positive input {bad}")));
                }
            }
            Unary::Powf(p) => {
                let frac = p.fract() != 0.0;
                for &v in x.data() {
                    if (v < 0.0 && frac) || (v == 0.0 && p < 0.0) {
                        return Err(Error::domain("powf", format!("{v}^{p} undefined")));
                    }
                }
            }
            _ => {}
        }
        let y = x.map(|v| match op {
            Unary::Neg => -v,
            Unary::Exp => v.exp(),
            Unary::Log => v.ln(),
            Unary::Sigmoid => sigmoid(v),
            Unary::Softplus => softplus(v),
            Unary::Silu => v * sigmoid(v),
            Unary::Powf(p) => v.powf(p),
            Unary::Scale(s) => v * s,
            Unary::AddScalar(s) => v + s,
        });
        self.record(name, y, &[a], move |g, ins, out| {
            let x = ins[0];
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(x.data())
                .zip(out.data())
                .map(|((&g, &x), &y)| {
                    g * match op {
                        Unary::Neg => -1.0,
                        Unary::Exp => y,
                        Unary::Log => 1.0 / x,
                        Unary::Sigmoid => y * (1.0 - y),
                        Unary::Softplus => sigmoid(x),
                        Unary::Silu => {
                            let s = sigmoid(x);
                            s * (1.0 + x * (1.0 - s))
                        }
                        Unary::Powf(p) => {
                            if p == 0.0 {
                                0.0
                            } else {
                                p * x.powf(p - 1.0)
                            }
                        }
                        Unary::Scale(s) => s,
                        Unary::AddScalar(_) => 1.0,
                    }
                })
                .collect();
            vec![Tensor::from_parts(x.shape().to_vec(), d)]
        })
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (xa, xb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(xa.shape(), xb.shape())
            .ok_or_else(|| Error::shape(name, xa.shape(), xb.shape()))?;
        if op == Binary::Div && xb.data().contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let map_a = broadcast_offsets(&out_shape, xa.shape());
        let map_b = broadcast_offsets(&out_shape, xb.shape());
        let n: usize = out_shape.iter().product();
        let (da, db) = (xa.data(), xb.data());
        let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let (u, v) = (da[ia(i)], db[ib(i)]);
                match op {
                    Binary::Add => u + v,
                    Binary::Sub => u - v,
                    Binary::Mul => u * v,
                    Binary::Div => u / v,
                }
            })
            .collect();
        let y = Tensor::from_parts(out_shape, y);
        self.record(name, y, &[a, b], move |g, ins, _| {
            let (xa, xb) = (ins[0], ins[1]);
            let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
            let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
            let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                Binary::Add => (g.data().to_vec(), g.data().to_vec()),
                Binary::Sub => (g.data().to_vec(), g.data().iter().map(|v| -v).collect()),
                Binary::Mul => g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| (gi * xb.data()[ib(i)], gi * xa.data()[ia(i)]))
                    .unzip(),
                Binary::Div => g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let (u, v) = (xa.data()[ia(i)], xb.data()[ib(i)]);
                        (gi / v, -gi * u / (v * v))
                    })
                    .unzip(),
            };
            let shape = g.shape().to_vec();
            vec![
                unbroadcast(&Tensor::from_parts(shape.clone(), ga), xa.shape(), &map_a),
                unbroadcast(&Tensor::from_parts(shape, gb), xb.shape(), &map_b),
            ]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Silu, a)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(Unary::Powf(p), a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Scale(s), a)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(s), a)
    }

    /// Reduces over `axes`, dropping them from the shape. `Max` routes the
    /// gradient to the first maximal element.
    pub fn reduce(&mut self, op: Reduce, a: Var, axes: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&ax| ax >= shape.len()) {
            return Err(Error::domain("reduce", format!("axes {axes:?} invalid for {shape:?}")));
        }
        if axes.iter().any(|&ax| shape[ax] == 0) || x.is_empty() {
            return Err(Error::domain("reduce", "empty reduction axis"));
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &e)| e)
            .collect();
        let out_full_strides = {
            let kept = strides(&out_shape);
            let mut st = vec![0; shape.len()];
            let mut k = 0;
            for (i, s) in st.iter_mut().enumerate() {
                if !axes.contains(&i) {
                    *s = kept[k];
                    k += 1;
                }
            }
            st
        };
        let map = strided_offsets(&shape, &out_full_strides);
        let count = (x.len() / out_shape.iter().product::<usize>().max(1)) as f64;
        let n_out: usize = out_shape.iter().product();
        let (y, argmax) = match op {
            Reduce::Sum | Reduce::Mean => {
                let mut y = vec![0.0; n_out];
                for (&v, &m) in x.data().iter().zip(&map) {
                    y[m] += v;
                }
                if op == Reduce::Mean {
                    y.iter_mut().for_each(|v| *v /= count);
                }
                (y, vec![])
            }
            Reduce::Max => {
                let mut y = vec![f64::NEG_INFINITY; n_out];
                let mut arg = vec![usize::MAX; n_out];
                for (i, (&v, &m)) in x.data().iter().zip(&map).enumerate() {
                    if arg[m] == usize::MAX || v > y[m] {
                        y[m] = v;
                        arg[m] = i;
                    }
                }
                (y, arg)
            }
        };
        let name = match op {
            Reduce::Sum => "sum",
            Reduce::Mean => "mean",
            Reduce::Max => "max",
        };
        let y = Tensor::from_parts(out_shape, y);
        self.record(name, y, &[a], move |g, ins, _| {
            let x = ins[0];
            let mut d = vec![0.0; x.len()];
            match op {
                Reduce::Sum => map.iter().zip(d.iter_mut()).for_each(|(&m, di)| *di = g.data()[m]),
                Reduce::Mean => map
                    .iter()
                    .zip(d.iter_mut())
                    .for_each(|(&m, di)| *di = g.data()[m] / count),
                Reduce::Max => {
                    for (o, &i) in argmax.iter().enumerate() {
                        d[i] += g.data()[o];
                    }
                }
            }
            vec![Tensor::from_parts(x.shape().to_vec(), d)]
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.reduce(Reduce::Sum, a, &axes)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        if axes.is_empty() {
            return Ok(a);
        }
        self.reduce(Reduce::Mean, a, &axes)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        let (m, k, n) = match (xa.shape(), xb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(Error::shape("matmul", sa, sb)),
        };
        let y = Tensor::from_parts(vec![m, n], matmul_raw(xa.data(), xb.data(), m, k, n));
        self.record("matmul", y, &[a, b], move |g, ins, _| {
            let (xa, xb) = (ins[0], ins[1]);
            let bt = transpose_raw(xb.data(), k, n);
            let at = transpose_raw(xa.data(), m, k);
            vec![
                Tensor::from_parts(vec![m, k], matmul_raw(g.data(), &bt, m, n, k)),
                Tensor::from_parts(vec![k, n], matmul_raw(&at, g.data(), k, m, n)),
            ]
        })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = match *x.shape() {
            [m, n] => (m, n),
            _ => return Err(Error::domain("transpose", format!("expected matrix, got {:?}", x.shape()))),
        };
        let y = Tensor::from_parts(vec![n, m], transpose_raw(x.data(), m, n));
        self.record("transpose", y, &[a], move |g, _, _| {
            vec![Tensor::from_parts(vec![m, n], transpose_raw(g.data(), n, m))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let y = x.reshape(shape.to_vec())?;
        let in_shape = x.shape().to_vec();
        self.record("reshape", y, &[a], move |g, _, _| {
            vec![Tensor::from_parts(in_shape.clone(), g.data().to_vec())]
        })
    }

    /// `x·W (+ b)` over the last axis of `x`, any leading shape.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, k) = last_axis(&shape, "linear")?;
        let n = match *self.shape(w) {
            [k2, n] if k2 == k => n,
            _ => return Err(Error::shape("linear", &shape, self.shape(w))),
        };
        let x2 = if shape.len() == 2 { x } else { self.reshape(x, &[rows, k])? };
        let mut y = self.matmul(x2, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = n;
        if out_shape.len() == 2 {
            Ok(y)
        } else {
            self.reshape(y, &out_shape)
        }
    }

    /// Normalizes over the last axis to zero mean and unit variance, then `·gain + bias`.
    pub fn layernorm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::domain("layernorm", "eps must be positive"));
        }
        let x = self.value(a);
        let (rows, d) = last_axis(x.shape(), "layernorm")?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape("layernorm", x.shape(), self.shape(gain)));
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut y = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let shape = x.shape().to_vec();
        let y = Tensor::from_parts(shape.clone(), y);
        self.record("layernorm", y, &[a, gain, bias], move |g, ins, _| {
            let gv = ins[1].data();
            let mut dx = vec![0.0; rows * d];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            for r in 0..rows {
                let gr = &g.data()[r * d..(r + 1) * d];
                let xh = &xhat[r * d..(r + 1) * d];
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for j in 0..d {
                    let dxh = gr[j] * gv[j];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                    dg[j] += gr[j] * xh[j];
                    db[j] += gr[j];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for j in 0..d {
                    dx[r * d + j] = inv_std[r] * (gr[j] * gv[j] - m1 - xh[j] * m2);
                }
            }
            vec![
                Tensor::from_parts(shape.clone(), dx),
                Tensor::from_parts(vec![d], dg),
                Tensor::from_parts(vec![d], db),
            ]
        })
    }

    /// Per-channel 3×3 correlation with zero "same" padding.
    pub fn depthwise_conv2d(&mut self, a: Var, kernels: Var) -> Result<Var> {
        let x = self.value(a);
        let (h, w, c) = hwc(x.shape(), "depthwise_conv2d")?;
        if self.shape(kernels) != [3, 3, c] {
            return Err(Error::shape("depthwise_conv2d", x.shape(), self.shape(kernels)));
        }
        let k = self.value(kernels).data();
        let xd = x.data();
        let mut y = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                let out = &mut y[(i * w + j) * c..(i * w + j + 1) * c];
                for di in 0..3 {
                    let ii = i as isize + di as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..3 {
                        let jj = j as isize + dj as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let src = (ii as usize * w + jj as usize) * c;
                        let kk = (di * 3 + dj) * c;
                        for ch in 0..c {
                            out[ch] += xd[src + ch] * k[kk + ch];
                        }
                    }
                }
            }
        }
        let y = Tensor::from_parts(vec![h, w, c], y);
        self.record("depthwise_conv2d", y, &[a, kernels], move |g, ins, _| {
            let (xd, k) = (ins[0].data(), ins[1].data());
            let gd = g.data();
            let mut dx = vec![0.0; h * w * c];
            let mut dk = vec![0.0; 9 * c];
            for i in 0..h {
                for j in 0..w {
                    let go = &gd[(i * w + j) * c..(i * w + j + 1) * c];
                    for di in 0..3 {
                        let ii = i as isize + di as isize - 1;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for dj in 0..3 {
                            let jj = j as isize + dj as isize - 1;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let src = (ii as usize * w + jj as usize) * c;
                            let kk = (di * 3 + dj) * c;
                            for ch in 0..c {
                                dx[src + ch] += go[ch] * k[kk + ch];
                                dk[kk + ch] += go[ch] * xd[src + ch];
                            }
                        }
                    }
                }
            }
            vec![
                Tensor::from_parts(vec![h, w, c], dx),
                Tensor::from_parts(vec![3, 3, c], dk),
            ]
        })
    }

    /// `out[m] = x[index[m]]` over the leading axis of a matrix.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (rows, c) = match *x.shape() {
            [r, c] => (r, c),
            _ => return Err(Error::domain("gather_rows", format!("expected matrix, got {:?}", x.shape()))),
        };
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::domain("gather_rows", format!("row {bad} out of range {rows}")));
        }
        let mut y = Vec::with_capacity(index.len() * c);
        for &i in index {
            y.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let index = index.to_vec();
        let y = Tensor::from_parts(vec![index.len(), c], y);
        self.record("gather_rows", y, &[a], move |g, _, _| {
            let mut d = vec![0.0; rows * c];
            for (m, &i) in index.iter().enumerate() {
                for ch in 0..c {
                    d[i * c + ch] += g.data()[m * c + ch];
                }
            }
            vec![Tensor::from_parts(vec![rows, c], d)]
        })
    }

    /// Joins along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", &sa, &sb));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = sa[..sa.len() - 1].iter().product::<usize>();
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            y.extend_from_slice(&xa[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&xb[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let y = Tensor::from_parts(shape, y);
        self.record("concat_last", y, &[a, b], move |g, _, _| {
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for r in 0..rows {
                let row = &g.data()[r * (ca + cb)..(r + 1) * (ca + cb)];
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![
                Tensor::from_parts(sa.clone(), ga),
                Tensor::from_parts(sb.clone(), gb),
            ]
        })
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, c) = last_axis(&shape, "narrow_last")?;
        if start + len > c || len == 0 {
            return Err(Error::domain("narrow_last", format!("[{start}, {}) outside {c}", start + len)));
        }
        let x = self.value(a).data();
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&x[r * c + start..r * c + start + len]);
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let y = Tensor::from_parts(out_shape, y);
        self.record("narrow_last", y, &[a], move |g, _, _| {
            let mut d = vec![0.0; rows * c];
            for r in 0..rows {
                d[r * c + start..r * c + start + len]
                    .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            vec![Tensor::from_parts(shape.clone(), d)]
        })
    }

    /// `H×W×C → H/f × W/f × (f·f·C)`, channel order `(di, dj, c)`.
    pub fn space_to_depth(&mut self, a: Var, f: usize) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(a), "space_to_depth")?;
        if f == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::domain("space_to_depth", format!("{h}×{w} not divisible by {f}")));
        }
        let (ho, wo, co) = (h / f, w / f, f * f * c);
        let src_of = move |o: usize| {
            let ch = o % co;
            let pix = o / co;
            let (i, j) = (pix / wo, pix % wo);
            let (di, rem) = (ch / (f * c), ch % (f * c));
            let (dj, cc) = (rem / c, rem % c);
            ((i * f + di) * w + j * f + dj) * c + cc
        };
        let x = self.value(a).data();
        let y: Vec<f64> = (0..ho * wo * co).map(|o| x[src_of(o)]).collect();
        let y = Tensor::from_parts(vec![ho, wo, co], y);
        self.record("space_to_depth", y, &[a], move |g, _, _| {
            let mut d = vec![0.0; h * w * c];
            for (o, &gv) in g.data().iter().enumerate() {
                d[src_of(o)] = gv;
            }
            vec![Tensor::from_parts(vec![h, w, c], d)]
        })
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, a: Var, f: usize) -> Result<Var> {
        let (h, w, c) = hwc(self.shape(a), "upsample_nearest")?;
        if f == 0 {
            return Err(Error::domain("upsample_nearest", "factor must be positive"));
        }
        let (ho, wo) = (h * f, w * f);
        let x = self.value(a).data();
        let mut y = vec![0.0; ho * wo * c];
        for i in 0..ho {
            for j in 0..wo {
                let src = ((i / f) * w + j / f) * c;
                y[(i * wo + j) * c..(i * wo + j + 1) * c].copy_from_slice(&x[src..src + c]);
            }
        }
        let y = Tensor::from_parts(vec![ho, wo, c], y);
        self.record("upsample_nearest", y, &[a], move |g, _, _| {
            let mut d = vec![0.0; h * w * c];
            for i in 0..ho {
                for j in 0..wo {
                    let src = ((i / f) * w + j / f) * c;
                    for ch in 0..c {
                        d[src + ch] += g.data()[(i * wo + j) * c + ch];
                    }
                }
            }
            vec![Tensor::from_parts(vec![h, w, c], d)]
        })
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (rows, k) = last_axis(x.shape(), "log_softmax")?;
        let mut y = vec![0.0; rows * k];
        for r in 0..rows {
            let row = &x.data()[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..k {
                y[r * k + j] = row[j] - lse;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        self.record("log_softmax", y, &[a], move |g, _, out| {
            let mut d = vec![0.0; rows * k];
            for r in 0..rows {
                let gr = &g.data()[r * k..(r + 1) * k];
                let s: f64 = gr.iter().sum();
                for j in 0..k {
                    d[r * k + j] = gr[j] - out.data()[r * k + j].exp() * s;
                }
            }
            vec![Tensor::from_parts(out.shape().to_vec(), d)]
        })
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (rows, k) = last_axis(x.shape(), "softmax")?;
        let mut y = vec![0.0; rows * k];
        for r in 0..rows {
            let row = &x.data()[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..k {
                let e = (row[j] - m).exp();
                y[r * k + j] = e;
                s += e;
            }
            y[r * k..(r + 1) * k].iter_mut().for_each(|v| *v /= s);
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        self.record("softmax", y, &[a], move |g, _, out| {
            let mut d = vec![0.0; rows * k];
            for r in 0..rows {
                let gr = &g.data()[r * k..(r + 1) * k];
                let pr = &out.data()[r * k..(r + 1) * k];
                let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for j in 0..k {
                    d[r * k + j] = pr[j] * (gr[j] - dot);
                }
            }
            vec![Tensor::from_parts(out.shape().to_vec(), d)]
        })
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(Error::domain("stack", "nothing to stack"));
        };
        let inner = self.shape(first).to_vec();
        let mut data = Vec::new();
        for &v in items {
            if self.shape(v) != inner.as_slice() {
                return Err(Error::shape("stack", &inner, self.shape(v)));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&inner);
        let m: usize = inner.iter().product();
        let y = Tensor::from_parts(shape, data);
        self.record("stack", y, items, move |g, ins, _| {
            g.data()
                .chunks(m.max(1))
                .zip(ins)
                .map(|(c, x)| Tensor::from_parts(x.shape().to_vec(), c.to_vec()))
                .collect()
        })
    }

    /// Selects one entry of the last axis per leading position.
    pub fn pick_last(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, k) = last_axis(&shape, "pick_last")?;
        if index.len() != rows {
            return Err(Error::shape("pick_last", &shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= k) {
            return Err(Error::domain("pick_last", format!("index {bad} out of range {k}")));
        }
        let x = self.value(a).data();
        let y: Vec<f64> = index.iter().enumerate().map(|(r, &i)| x[r * k + i]).collect();
        let index = index.to_vec();
        let y = Tensor::from_parts(shape[..shape.len() - 1].to_vec(), y);
        self.record("pick_last", y, &[a], move |g, _, _| {
            let mut d = vec![0.0; rows * k];
            for (r, &i) in index.iter().enumerate() {
                d[r * k + i] = g.data()[r];
            }
            vec![Tensor::from_parts(shape.clone(), d)]
        })
    }
}

/// Index of the first maximum along the last axis, per leading position.
pub(crate) fn argmax_last(t: &Tensor) -> Vec<usize> {
    let k = *t.shape().last().expect("argmax of scalar");
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
