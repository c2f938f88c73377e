//! Differentiable primitives.
//!
//! Broadcasting is deliberately narrow: a binary op accepts a right operand
//! whose shape is a suffix of the left operand's shape (e.g. a bias vector
//! against `[batch, seq, p]`), and nothing else.

use super::tape::Function;
use super::{Tensor, Var};
use crate::error::{Error, Result};

struct Closure<F> {
    name: &'static str,
    f: F,
}

impl<F> Function for Closure<F>
where
    F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>,
{
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>> {
        (self.f)(g, inputs, output)
    }
}

fn record<'t, F>(name: &'static str, out: Tensor, inputs: &[Var<'t>], f: F) -> Var<'t>
where
    F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
{
    inputs[0].tape().record(out, inputs, Box::new(Closure { name, f }))
}

fn mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

/// `c (+)= op(a) * op(b)` for row-major buffers, where `op` optionally
/// transposes. `a` is `[m, k]` after `op`, `b` is `[k, n]` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every access made with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Sums `g` (shape ending in `target`'s shape) down to `target`'s shape.
fn reduce_to(g: &Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(target.to_vec(), out)
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n = b.len();
    let data = a
        .data()
        .chunks_exact(n)
        .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// Matrix product over the last two axes. `b` is either a plain matrix
/// shared across all leading axes of `a`, or has the same leading axes.
pub fn matmul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let av = a.value();
    let bv = b.value();
    let (ash, bsh) = (av.shape(), bv.shape());
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(mismatch("matmul", &[0, 0], if ash.len() < 2 { ash } else { bsh }));
    }
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    if k != kb {
        return Err(mismatch("matmul", &[k, n], bsh));
    }
    let mut out_shape = ash.to_vec();
    *out_shape.last_mut().unwrap() = n;
    if bsh.len() == 2 {
        let rows = av.len() / k;
        let mut c = vec![0.0; rows * n];
        gemm(rows, k, n, av.data(), false, bv.data(), false, &mut c, false);
        let out = Tensor::from_parts(out_shape, c);
        return Ok(record("matmul", out, &[a, b], move |g, x, _| {
            let (a, b) = (x[0], x[1]);
            let mut ga = vec![0.0; a.len()];
            gemm(rows, n, k, g.data(), false, b.data(), true, &mut ga, false);
            let mut gb = vec![0.0; b.len()];
            gemm(k, rows, n, a.data(), true, g.data(), false, &mut gb, false);
            vec![
                Some(Tensor::from_parts(a.shape().to_vec(), ga)),
                Some(Tensor::from_parts(b.shape().to_vec(), gb)),
            ]
        }));
    }
    if ash[..ash.len() - 2] != bsh[..bsh.len() - 2] {
        return Err(mismatch("matmul", &ash[..ash.len() - 2], &bsh[..bsh.len() - 2]));
    }
    let batch = av.len() / (m * k);
    let mut c = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &av.data()[i * m * k..],
            false,
            &bv.data()[i * k * n..],
            false,
            &mut c[i * m * n..],
            false,
        );
    }
    let out = Tensor::from_parts(out_shape, c);
    Ok(record("batched_matmul", out, &[a, b], move |g, x, _| {
        let (a, b) = (x[0], x[1]);
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        for i in 0..batch {
            let gi = &g.data()[i * m * n..];
            gemm(m, n, k, gi, false, &b.data()[i * k * n..], true, &mut ga[i * m * k..], false);
            gemm(k, m, n, &a.data()[i * m * k..], true, gi, false, &mut gb[i * k * n..], false);
        }
        vec![
            Some(Tensor::from_parts(a.shape().to_vec(), ga)),
            Some(Tensor::from_parts(b.shape().to_vec(), gb)),
        ]
    }))
}

/// `y . triu(u)` over the last axis of `y`: output column `j` only mixes
/// input columns `0..=j`. `u` may be larger than needed; its leading
/// `l x l` block is used. Entries of `u` below the diagonal never influence
/// the result and receive zero gradient.
pub fn triu_matmul<'t>(y: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    let yv = y.value();
    let uv = u.value();
    let l = yv.last_dim();
    let us = uv.shape();
    if us.len() != 2 || us[0] != us[1] || us[0] < l {
        return Err(mismatch("triu_matmul", &[l, l], us));
    }
    let stride = us[1];
    let rows = yv.len() / l;
    let mut out = vec![0.0; yv.len()];
    for r in 0..rows {
        let yr = &yv.data()[r * l..(r + 1) * l];
        let or = &mut out[r * l..(r + 1) * l];
        for (i, &yi) in yr.iter().enumerate() {
            let urow = &uv.data()[i * stride..i * stride + l];
            for j in i..l {
                or[j] += yi * urow[j];
            }
        }
    }
    let out = Tensor::from_parts(yv.shape().to_vec(), out);
    Ok(record("triu_matmul", out, &[y, u], move |g, x, _| {
        let (y, u) = (x[0], x[1]);
        let mut gy = vec![0.0; y.len()];
        let mut gu = vec![0.0; u.len()];
        for r in 0..rows {
            let yr = &y.data()[r * l..(r + 1) * l];
            let gr = &g.data()[r * l..(r + 1) * l];
            let gyr = &mut gy[r * l..(r + 1) * l];
            for i in 0..l {
                let urow = &u.data()[i * stride..i * stride + l];
                let gurow = &mut gu[i * stride..i * stride + l];
                let mut acc = 0.0;
                for j in i..l {
                    acc += gr[j] * urow[j];
                    gurow[j] += yr[i] * gr[j];
                }
                gyr[i] = acc;
            }
        }
        vec![
            Some(Tensor::from_parts(y.shape().to_vec(), gy)),
            Some(Tensor::from_parts(u.shape().to_vec(), gu)),
        ]
    }))
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    if !is_suffix(av.shape(), bv.shape()) {
        return Err(mismatch("add", av.shape(), bv.shape()));
    }
    let out = broadcast_zip(&av, &bv, |x, y| x + y);
    Ok(record("add", out, &[a, b], |g, x, _| {
        vec![Some(g.clone()), Some(reduce_to(g, x[1].shape()))]
    }))
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    if !is_suffix(av.shape(), bv.shape()) {
        return Err(mismatch("sub", av.shape(), bv.shape()));
    }
    let out = broadcast_zip(&av, &bv, |x, y| x - y);
    Ok(record("sub", out, &[a, b], |g, x, _| {
        vec![Some(g.clone()), Some(reduce_to(&g.map(|v| -v), x[1].shape()))]
    }))
}

/// Element-wise product.
pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let (av, bv) = (a.value(), b.value());
    if !is_suffix(av.shape(), bv.shape()) {
        return Err(mismatch("mul", av.shape(), bv.shape()));
    }
    let out = broadcast_zip(&av, &bv, |x, y| x * y);
    Ok(record("mul", out, &[a, b], |g, x, _| {
        let ga = broadcast_zip(g, x[1], |u, v| u * v);
        let gb_full = Tensor::from_parts(
            g.shape().to_vec(),
            g.data().iter().zip(x[0].data()).map(|(u, v)| u * v).collect(),
        );
        vec![Some(ga), Some(reduce_to(&gb_full, x[1].shape()))]
    }))
}

pub fn scale(a: Var<'_>, c: f64) -> Var<'_> {
    let out = a.value().map(|v| v * c);
    record("scale", out, &[a], move |g, _, _| vec![Some(g.map(|v| v * c))])
}

fn unary<'t>(
    name: &'static str,
    a: Var<'t>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let out = a.value().map(f);
    record(name, out, &[a], move |g, x, y| {
        let data = g
            .data()
            .iter()
            .zip(x[0].data().iter().zip(y.data()))
            .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    })
}

/// Element-wise `1/x`.
pub fn reciprocal(a: Var<'_>) -> Var<'_> {
    unary("reciprocal", a, |x| 1.0 / x, |_, y| -y * y)
}

pub fn sigmoid(a: Var<'_>) -> Var<'_> {
    unary("sigmoid", a, sigmoid_f, |_, y| y * (1.0 - y))
}

pub fn silu(a: Var<'_>) -> Var<'_> {
    unary(
        "silu",
        a,
        |x| x * sigmoid_f(x),
        |x, _| {
            let s = sigmoid_f(x);
            s * (1.0 + x * (1.0 - s))
        },
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(a: Var<'_>) -> Var<'_> {
    unary(
        "gelu",
        a,
        |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        |x, _| {
            let inner = GELU_C * (x + 0.044715 * x * x * x);
            let t = inner.tanh();
            let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        },
    )
}

#[inline]
pub fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Swaps the last two axes.
pub fn transpose_last2(a: Var<'_>) -> Result<Var<'_>> {
    let av = a.value();
    let sh = av.shape();
    if sh.len() < 2 {
        return Err(mismatch("transpose", &[0, 0], sh));
    }
    let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
    let out = Tensor::from_parts(
        {
            let mut s = sh.to_vec();
            let n = s.len();
            s.swap(n - 2, n - 1);
            s
        },
        transpose_data(av.data(), r, c),
    );
    Ok(record("transpose", out, &[a], move |g, _, _| {
        let mut s = g.shape().to_vec();
        let n = s.len();
        s.swap(n - 2, n - 1);
        vec![Some(Tensor::from_parts(s, transpose_data(g.data(), c, r)))]
    }))
}

fn transpose_data(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

pub fn reshape<'t>(a: Var<'t>, shape: &[usize]) -> Result<Var<'t>> {
    let av = a.value();
    let out = (*av).clone().reshaped(shape)?;
    let original = av.shape().to_vec();
    Ok(record("reshape", out, &[a], move |g, _, _| {
        vec![Some(Tensor::from_parts(original.clone(), g.data().to_vec()))]
    }))
}

/// Concatenates along the last axis; all leading axes must agree.
pub fn concat_last<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let lead = &values[0].shape()[..values[0].ndim() - 1];
    for v in &values {
        if &v.shape()[..v.ndim() - 1] != lead {
            return Err(mismatch("concat_last", lead, &v.shape()[..v.ndim() - 1]));
        }
    }
    let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
    let total: usize = widths.iter().sum();
    let rows = values[0].len() / widths[0];
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let out = Tensor::from_parts(shape, data);
    Ok(record("concat_last", out, parts, move |g, x, _| {
        let mut grads: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let grow = g.row(r);
            let mut off = 0;
            for (gi, &w) in grads.iter_mut().zip(&widths) {
                gi.extend_from_slice(&grow[off..off + w]);
                off += w;
            }
        }
        grads
            .into_iter()
            .zip(x)
            .map(|(d, t)| Some(Tensor::from_parts(t.shape().to_vec(), d)))
            .collect()
    }))
}

/// Stacks equally shaped tensors along a new trailing axis.
pub fn stack_last<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let shape = parts[0].shape();
    let mut with_unit = shape.clone();
    with_unit.push(1);
    let columns = parts
        .iter()
        .map(|p| {
            if p.shape() != shape {
                return Err(mismatch("stack_last", &shape, &p.shape()));
            }
            reshape(*p, &with_unit)
        })
        .collect::<Result<Vec<_>>>()?;
    concat_last(&columns)
}

/// Entries `start..start + len` of the last axis.
pub fn narrow_last(a: Var<'_>, start: usize, len: usize) -> Result<Var<'_>> {
    let av = a.value();
    let w = av.last_dim();
    if len == 0 || start + len > w {
        return Err(mismatch("narrow_last", &[start + len], &[w]));
    }
    if start == 0 && len == w {
        return Ok(a);
    }
    let rows = av.len() / w;
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&av.row(r)[start..start + len]);
    }
    let mut shape = av.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    let out = Tensor::from_parts(shape, data);
    Ok(record("narrow_last", out, &[a], move |g, x, _| {
        let mut full = vec![0.0; x[0].len()];
        for r in 0..rows {
            full[r * w + start..r * w + start + len].copy_from_slice(g.row(r));
        }
        vec![Some(Tensor::from_parts(x[0].shape().to_vec(), full))]
    }))
}

pub fn sum(a: Var<'_>) -> Var<'_> {
    let out = Tensor::scalar(a.value().sum());
    record("sum", out, &[a], |g, x, _| {
        vec![Some(Tensor::full(x[0].shape(), g.item()))]
    })
}

pub fn mean(a: Var<'_>) -> Var<'_> {
    let n = a.value().len() as f64;
    scale(sum(a), 1.0 / n)
}

/// Layer normalisation over the last axis with affine `gain` and `bias`.
pub fn layer_norm<'t>(x: Var<'t>, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let xv = x.value();
    let p = xv.last_dim();
    let (gv, bv) = (gain.value(), bias.value());
    if gv.shape() != [p] || bv.shape() != [p] {
        return Err(mismatch("layer_norm", &[p], gv.shape()));
    }
    let rows = xv.len() / p;
    let mut xhat = vec![0.0; xv.len()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; xv.len()];
    for r in 0..rows {
        let xr = xv.row(r);
        let mu = xr.iter().sum::<f64>() / p as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / p as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..p {
            let h = (xr[j] - mu) * is;
            xhat[r * p + j] = h;
            out[r * p + j] = h * gv.data()[j] + bv.data()[j];
        }
    }
    let out = Tensor::from_parts(xv.shape().to_vec(), out);
    Ok(record("layer_norm", out, &[x, gain, bias], move |g, ins, _| {
        let gain = ins[1];
        let mut gx = vec![0.0; ins[0].len()];
        let mut gg = vec![0.0; p];
        let mut gb = vec![0.0; p];
        for r in 0..rows {
            let gr = g.row(r);
            let hr = &xhat[r * p..(r + 1) * p];
            let mut sum_dh = 0.0;
            let mut sum_dh_h = 0.0;
            for j in 0..p {
                let dh = gr[j] * gain.data()[j];
                sum_dh += dh;
                sum_dh_h += dh * hr[j];
                gg[j] += gr[j] * hr[j];
                gb[j] += gr[j];
            }
            let inv_p = 1.0 / p as f64;
            for j in 0..p {
                let dh = gr[j] * gain.data()[j];
                gx[r * p + j] = inv_std[r] * (dh - inv_p * sum_dh - hr[j] * inv_p * sum_dh_h);
            }
        }
        vec![
            Some(Tensor::from_parts(ins[0].shape().to_vec(), gx)),
            Some(Tensor::from_parts(vec![p], gg)),
            Some(Tensor::from_parts(vec![p], gb)),
        ]
    }))
}

/// Gathers rows of `table` (`[vocab, p]`) for `ids`; the result has shape
/// `lead ++ [p]` where `lead` multiplies out to `ids.len()`.
pub fn embedding<'t>(table: Var<'t>, ids: &[usize], lead: &[usize]) -> Result<Var<'t>> {
    let tv = table.value();
    if tv.ndim() != 2 || lead.iter().product::<usize>() != ids.len() {
        return Err(mismatch("embedding", lead, &[ids.len()]));
    }
    let (vocab, p) = (tv.shape()[0], tv.shape()[1]);
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            lo: 0,
            hi: vocab - 1,
        });
    }
    let mut data = Vec::with_capacity(ids.len() * p);
    for &i in ids {
        data.extend_from_slice(tv.row(i));
    }
    let mut shape = lead.to_vec();
    shape.push(p);
    let out = Tensor::from_parts(shape, data);
    let ids = ids.to_vec();
    Ok(record("embedding", out, &[table], move |g, x, _| {
        let mut gt = vec![0.0; x[0].len()];
        for (r, &i) in ids.iter().enumerate() {
            for (dst, src) in gt[i * p..(i + 1) * p].iter_mut().zip(g.row(r)) {
                *dst += src;
            }
        }
        vec![Some(Tensor::from_parts(x[0].shape().to_vec(), gt))]
    }))
}

/// Row-wise softmax of `[..., l, l]` scores restricted to the causal
/// prefix: row `i` is supported on columns `0..=i`, later columns are
/// exactly zero.
pub fn causal_softmax(s: Var<'_>) -> Result<Var<'_>> {
    let sv = s.value();
    let sh = sv.shape();
    if sh.len() < 2 || sh[sh.len() - 1] != sh[sh.len() - 2] {
        return Err(mismatch("causal_softmax", &[0, 0], sh));
    }
    let l = sh[sh.len() - 1];
    let mut out = vec![0.0; sv.len()];
    for (r, orow) in out.chunks_exact_mut(l).enumerate() {
        let i = r % l;
        let srow = sv.row(r);
        let mx = srow[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..=i {
            let e = (srow[j] - mx).exp();
            orow[j] = e;
            z += e;
        }
        let inv = 1.0 / z;
        for v in &mut orow[..=i] {
            *v *= inv;
        }
    }
    let out = Tensor::from_parts(sh.to_vec(), out);
    Ok(record("causal_softmax", out, &[s], move |g, _, y| {
        let mut gs = vec![0.0; y.len()];
        for (r, grow) in gs.chunks_exact_mut(l).enumerate() {
            let i = r % l;
            let yr = y.row(r);
            let gr = g.row(r);
            let dot: f64 = (0..=i).map(|j| yr[j] * gr[j]).sum();
            for j in 0..=i {
                grow[j] = yr[j] * (gr[j] - dot);
            }
        }
        vec![Some(Tensor::from_parts(y.shape().to_vec(), gs))]
    }))
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` (`[n, vocab]`, leading axes flattened).
pub fn cross_entropy<'t>(logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let lv = logits.value();
    let v = lv.last_dim();
    let n = lv.len() / v;
    if targets.len() != n {
        return Err(mismatch("cross_entropy", &[n], &[targets.len()]));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            lo: 0,
            hi: v - 1,
        });
    }
    let mut probs = vec![0.0; lv.len()];
    let mut loss = 0.0;
    for r in 0..n {
        let row = lv.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pr = &mut probs[r * v..(r + 1) * v];
        let mut z = 0.0;
        for (p, &x) in pr.iter_mut().zip(row) {
            *p = (x - mx).exp();
            z += *p;
        }
        for p in pr.iter_mut() {
            *p /= z;
        }
        loss += -(row[targets[r]] - mx - z.ln());
    }
    let out = Tensor::scalar(loss / n as f64);
    let targets = targets.to_vec();
    Ok(record("cross_entropy", out, &[logits], move |g, x, _| {
        let c = g.item() / n as f64;
        let mut gl = probs.clone();
        for (r, &t) in targets.iter().enumerate() {
            gl[r * v + t] -= 1.0;
        }
        for val in &mut gl {
            *val *= c;
        }
        vec![Some(Tensor::from_parts(x[0].shape().to_vec(), gl))]
    }))
}

/// Clamps entry `j` of the last axis into `[lo[j], hi[j]]`. Gradient
/// passes only where no clamping happened.
pub fn clamp_last<'t>(a: Var<'t>, lo: &[f64], hi: &[f64]) -> Result<Var<'t>> {
    let av = a.value();
    let w = av.last_dim();
    if lo.len() != w || hi.len() != w {
        return Err(mismatch("clamp_last", &[w], &[lo.len()]));
    }
    let mut pass = vec![true; av.len()];
    let mut data = av.data().to_vec();
    for (i, v) in data.iter_mut().enumerate() {
        let j = i % w;
        if *v < lo[j] {
            *v = lo[j];
            pass[i] = false;
        } else if *v > hi[j] {
            *v = hi[j];
            pass[i] = false;
        }
    }
    let out = Tensor::from_parts(av.shape().to_vec(), data);
    Ok(record("clamp_last", out, &[a], move |g, _, _| {
        let data = g
            .data()
            .iter()
            .zip(&pass)
            .map(|(&gi, &ok)| if ok { gi } else { 0.0 })
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    }))
}
