use super::{grad_buf, Graph, Node, Op, Var};
use crate::autograd::ste;
use crate::error::{Error, Result};
use crate::quant::QuantizerSpec;
use crate::tensor::Tensor;

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// `factor * x + offset`
    pub fn affine(&mut self, x: Var, factor: f64, offset: f64) -> Var {
        let out = self.value(x).map(|v| factor * v + offset);
        let rg = self.needs(&[x]);
        self.push(out, rg, Op::Affine(x, factor))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    /// Adds a `[n]` bias to every row of `[m, n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.rank() != 2 || tb.rank() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let n = tb.len();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(out, rg, Op::AddBias(x, bias)))
    }

    /// Valid (unpadded), stride-1 1-D convolution.
    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, k]`, `b: [c_out]`
    /// gives `[batch, c_out, len - k + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 3 || tw.rank() != 3 || tx.shape()[1] != tw.shape()[1] {
            return Err(shape_err("conv1d", tx.shape(), tw.shape()));
        }
        if tb.shape() != [tw.shape()[0]] {
            return Err(shape_err("conv1d bias", tw.shape(), tb.shape()));
        }
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, k) = (tw.shape()[0], tw.shape()[2]);
        if k == 0 || k > len {
            return Err(shape_err("conv1d", tx.shape(), tw.shape()));
        }
        let out_len = len - k + 1;
        let mut out = vec![0.0; batch * c_out * out_len];
        let (xd, wd, bd) = (tx.data(), tw.data(), tb.data());
        for bi in 0..batch {
            for co in 0..c_out {
                let y = &mut out[(bi * c_out + co) * out_len..][..out_len];
                y.fill(bd[co]);
                for ci in 0..c_in {
                    let xrow = &xd[(bi * c_in + ci) * len..][..len];
                    let wrow = &wd[(co * c_in + ci) * k..][..k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        for (yv, &xv) in y.iter_mut().zip(&xrow[kk..kk + out_len]) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![batch, c_out, out_len], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(out, rg, Op::Conv1d { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        let rg = self.needs(&[x]);
        self.push(out, rg, Op::Relu(x))
    }

    /// Non-overlapping max pooling along the last axis of `[batch, c, len]`;
    /// a trailing remainder shorter than `size` is dropped.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 3 || size == 0 || tx.shape()[2] < size {
            return Err(shape_err("max_pool1d", tx.shape(), &[size]));
        }
        let (rows, len) = (tx.shape()[0] * tx.shape()[1], tx.shape()[2]);
        let out_len = len / size;
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &tx.data()[r * len..(r + 1) * len];
            for j in 0..out_len {
                let mut best = j * size;
                for i in j * size + 1..(j + 1) * size {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let out = Tensor::new(vec![tx.shape()[0], tx.shape()[1], out_len], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::MaxPool1d { x, argmax }))
    }

    /// Mean over the last axis: `[batch, c, len] -> [batch, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 3 || tx.shape()[2] == 0 {
            return Err(shape_err("global_avg_pool", tx.shape(), &[]));
        }
        let len = tx.shape()[2];
        let data = tx
            .data()
            .chunks(len)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect();
        let out = Tensor::new(vec![tx.shape()[0], tx.shape()[1]], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::GlobalAvgPool(x)))
    }

    /// Softmax over the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(shape_err("softmax", tx.shape(), &[]));
        }
        let n = tx.shape()[1];
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, rg, Op::Softmax(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// `ln(1 + e^x)`
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let rg = self.needs(&[x]);
        self.push(out, rg, Op::Softplus(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.needs(&[x]);
        self.push(out, rg, Op::Tanh(x))
    }

    /// Weighted cross-entropy of `[batch, classes]` logits:
    /// `sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.shape()[0] != labels.len() {
            return Err(shape_err("cross_entropy", tl.shape(), &[labels.len()]));
        }
        let c = tl.shape()[1];
        if class_weights.len() != c {
            return Err(shape_err(
                "cross_entropy weights",
                tl.shape(),
                &[class_weights.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut total = 0.0;
        let mut wsum = 0.0;
        let mut sample_weights = Vec::with_capacity(labels.len());
        for (row, &y) in probs.chunks_mut(c).zip(labels) {
            let lse = log_sum_exp(row);
            let nll = lse - row[y];
            softmax_in_place(row);
            let w = class_weights[y];
            total += w * nll;
            wsum += w;
            sample_weights.push(w);
        }
        if wsum <= 0.0 {
            return Err(Error::Config(
                "class weights of the batch sum to zero".into(),
            ));
        }
        for w in &mut sample_weights {
            *w /= wsum;
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / wsum),
            rg,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                sample_weights,
            },
        ))
    }

    /// Straight-through quantization of `x`.
    ///
    /// `gamma`/`mu` carry the curve parameters of the gamma kinds, either a
    /// single value (`[1]`) shared by every element or one value per channel
    /// of a `[batch, channels, len]` input. Linear and log specs take no
    /// parameter tensors. Forward yields `dequantize(quantize(x))`; backward
    /// differentiates the continuous curve as if rounding were the identity.
    pub fn quantize(
        &mut self,
        x: Var,
        spec: &QuantizerSpec,
        gamma: Option<Var>,
        mu: Option<Var>,
    ) -> Result<Var> {
        let kind = spec.kind();
        let learnable = kind.has_learnable_params();
        if !learnable && (gamma.is_some() || mu.is_some()) {
            return Err(Error::Config(format!(
                "{} quantizer takes no gamma/mu tensors",
                kind.as_str()
            )));
        }
        if mu.is_some() && spec.mu().is_none() {
            return Err(Error::Config("gamma_unsigned has no offset mu".into()));
        }
        let tx = self.value(x);
        let units_n = match (gamma, mu) {
            (Some(g), _) => self.value(g).len(),
            (None, Some(m)) => self.value(m).len(),
            (None, None) => 1,
        };
        if let (Some(g), Some(m)) = (gamma, mu) {
            if self.value(g).len() != self.value(m).len() {
                return Err(shape_err("quantize params", self.shape(g), self.shape(m)));
            }
        }
        let unit_len = if units_n == 1 {
            tx.len().max(1)
        } else {
            if tx.rank() != 3 || tx.shape()[1] != units_n {
                return Err(shape_err("quantize per-channel", tx.shape(), &[units_n]));
            }
            tx.shape()[2]
        };
        let mut units = Vec::with_capacity(units_n);
        for u in 0..units_n {
            let spec_u = if learnable {
                let g = gamma
                    .map(|g| self.value(g).data()[u])
                    .or(spec.gamma())
                    .unwrap_or(1.0);
                let m = mu
                    .map(|m| self.value(m).data()[u])
                    .or(spec.mu())
                    .unwrap_or(0.0);
                spec.with_params(g, m)?
            } else {
                *spec
            };
            units.push(spec_u);
        }
        let out = ste::forward_units(tx, &units, unit_len)?;
        let mut inputs = vec![x];
        inputs.extend(gamma);
        inputs.extend(mu);
        let rg = self.needs(&inputs);
        Ok(self.push(
            out,
            rg,
            Op::Quantize {
                x,
                gamma,
                mu,
                units,
                unit_len,
            },
        ))
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

pub(super) fn backward_node(op: &Op, value: &Tensor, grad: &[f64], nodes: &mut [Node]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(ga) = grad_buf(nodes, *v) {
                    for (x, g) in ga.iter_mut().zip(grad) {
                        *x += g;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            if let Some(ga) = grad_buf(nodes, *a) {
                for ((x, g), o) in ga.iter_mut().zip(grad).zip(&bv) {
                    *x += g * o;
                }
            }
            if let Some(gb) = grad_buf(nodes, *b) {
                for ((x, g), o) in gb.iter_mut().zip(grad).zip(&av) {
                    *x += g * o;
                }
            }
        }
        Op::Affine(x, factor) => {
            if let Some(gx) = grad_buf(nodes, *x) {
                for (v, g) in gx.iter_mut().zip(grad) {
                    *v += factor * g;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
            let n = nodes[b.0].value.shape()[1];
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            if let Some(ga) = grad_buf(nodes, *a) {
                // dA = dY * B^T
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = grad_buf(nodes, *b) {
                // dB = A^T * dY
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = av[i * k + p];
                        for (o, g) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * g;
                        }
                    }
                }
            }
        }
        Op::AddBias(x, b) => {
            let n = nodes[b.0].value.len();
            if let Some(gx) = grad_buf(nodes, *x) {
                for (v, g) in gx.iter_mut().zip(grad) {
                    *v += g;
                }
            }
            if let Some(gb) = grad_buf(nodes, *b) {
                for row in grad.chunks(n) {
                    for (v, g) in gb.iter_mut().zip(row) {
                        *v += g;
                    }
                }
            }
        }
        Op::Conv1d { x, w, b } => conv1d_backward(*x, *w, *b, value, grad, nodes),
        Op::Relu(x) => {
            if let Some(gx) = grad_buf(nodes, *x) {
                for ((v, g), y) in gx.iter_mut().zip(grad).zip(value.data()) {
                    if *y > 0.0 {
                        *v += g;
                    }
                }
            }
        }
        Op::MaxPool1d { x, argmax } => {
            if let Some(gx) = grad_buf(nodes, *x) {
                for (&i, g) in argmax.iter().zip(grad) {
                    gx[i] += g;
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let len = nodes[x.0].value.shape()[2];
            if let Some(gx) = grad_buf(nodes, *x) {
                let inv = 1.0 / len as f64;
                for (chunk, g) in gx.chunks_mut(len).zip(grad) {
                    for v in chunk {
                        *v += g * inv;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let n = value.shape()[1];
            if let Some(gx) = grad_buf(nodes, *x) {
                for ((gxr, yr), gr) in gx
                    .chunks_mut(n)
                    .zip(value.data().chunks(n))
                    .zip(grad.chunks(n))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((v, y), g) in gxr.iter_mut().zip(yr).zip(gr) {
                        *v += y * (g - dot);
                    }
                }
            }
        }
        Op::Sum(x) => {
            let g = grad[0];
            if let Some(gx) = grad_buf(nodes, *x) {
                for v in gx.iter_mut() {
                    *v += g;
                }
            }
        }
        Op::Softplus(x) => {
            let xv = nodes[x.0].value.data().to_vec();
            if let Some(gx) = grad_buf(nodes, *x) {
                for ((v, g), xi) in gx.iter_mut().zip(grad).zip(&xv) {
                    *v += g * sigmoid(*xi);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = grad_buf(nodes, *x) {
                for ((v, g), y) in gx.iter_mut().zip(grad).zip(value.data()) {
                    *v += g * (1.0 - y * y);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            probs,
            labels,
            sample_weights,
        } => {
            let up = grad[0];
            let c = nodes[logits.0].value.shape()[1];
            if let Some(gl) = grad_buf(nodes, *logits) {
                for (i, (&y, &w)) in labels.iter().zip(sample_weights).enumerate() {
                    let prow = &probs[i * c..(i + 1) * c];
                    let grow = &mut gl[i * c..(i + 1) * c];
                    for (j, (v, p)) in grow.iter_mut().zip(prow).enumerate() {
                        let t = if j == y { 1.0 } else { 0.0 };
                        *v += up * w * (p - t);
                    }
                }
            }
        }
        Op::Quantize {
            x,
            gamma,
            mu,
            units,
            unit_len,
        } => {
            let xv = nodes[x.0].value.data().to_vec();
            let nu = units.len();
            let mut dgamma = vec![0.0; nu];
            let mut dmu = vec![0.0; nu];
            let mut dx = vec![0.0; xv.len()];
            for (i, (&xi, &g)) in xv.iter().zip(grad).enumerate() {
                let u = (i / unit_len) % nu;
                let p = ste::surrogate_partials(&units[u], xi);
                dx[i] = g * p.dx;
                dgamma[u] += g * p.dgamma;
                dmu[u] += g * p.dmu;
            }
            if let Some(gx) = grad_buf(nodes, *x) {
                for (v, d) in gx.iter_mut().zip(&dx) {
                    *v += d;
                }
            }
            for (param, d) in [(gamma, &dgamma), (mu, &dmu)] {
                if let Some(p) = param {
                    if let Some(gp) = grad_buf(nodes, *p) {
                        for (v, dv) in gp.iter_mut().zip(d) {
                            *v += dv;
                        }
                    }
                }
            }
        }
    }
}

fn conv1d_backward(x: Var, w: Var, b: Var, value: &Tensor, grad: &[f64], nodes: &mut [Node]) {
    let (batch, c_out, out_len) = (value.shape()[0], value.shape()[1], value.shape()[2]);
    let (c_in, len) = (nodes[x.0].value.shape()[1], nodes[x.0].value.shape()[2]);
    let k = nodes[w.0].value.shape()[2];

    if let Some(gb) = grad_buf(nodes, b) {
        for bi in 0..batch {
            for (co, v) in gb.iter_mut().enumerate() {
                *v += grad[(bi * c_out + co) * out_len..][..out_len]
                    .iter()
                    .sum::<f64>();
            }
        }
    }
    if nodes[w.0].requires_grad {
        let xd = nodes[x.0].value.data().to_vec();
        let gw = grad_buf(nodes, w).unwrap();
        for bi in 0..batch {
            for co in 0..c_out {
                let gy = &grad[(bi * c_out + co) * out_len..][..out_len];
                for ci in 0..c_in {
                    let xrow = &xd[(bi * c_in + ci) * len..][..len];
                    let gwrow = &mut gw[(co * c_in + ci) * k..][..k];
                    for (kk, gwv) in gwrow.iter_mut().enumerate() {
                        *gwv += gy
                            .iter()
                            .zip(&xrow[kk..kk + out_len])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
        }
    }
    if nodes[x.0].requires_grad {
        let wd = nodes[w.0].value.data().to_vec();
        let gx = grad_buf(nodes, x).unwrap();
        for bi in 0..batch {
            for co in 0..c_out {
                let gy = &grad[(bi * c_out + co) * out_len..][..out_len];
                for ci in 0..c_in {
                    let gxrow = &mut gx[(bi * c_in + ci) * len..][..len];
                    let wrow = &wd[(co * c_in + ci) * k..][..k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        for (gxv, g) in gxrow[kk..kk + out_len].iter_mut().zip(gy) {
                            *gxv += wv * g;
                        }
                    }
                }
            }
        }
    }
}
