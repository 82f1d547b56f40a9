//! Forward and backward kernels for the graph operations.
//!
//! Convolutions are lowered to matrix products: the receptive fields of a
//! block of output positions are gathered into rows (im2col) and multiplied
//! with the (kernel volume x in-channels) x filters weight matrix. Rows are
//! processed in fixed-size chunks in a fixed order, so results do not depend
//! on scheduling.

use super::tensor::Tensor;

/// Upper bound on the number of f64 values in one im2col buffer.
const COL_BUDGET: usize = 1 << 21;

/// Geometry of a same-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvGeom {
    pub fn row_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.in_ch
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1]
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices that cover every strided access of an
    // m x k, k x n and m x n operand respectively.
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

/// Fills `col` with the receptive fields of global rows `r0..r0 + rows`
/// (row = sample * positions + position).
fn im2col(input: &Tensor, g: &ConvGeom, r0: usize, rows: usize, col: &mut [f64]) {
    let [_, sx, sy, sz, cin] = input.shape;
    let [kx, ky, kz] = g.kernel;
    let (hx, hy, hz) = ((kx / 2) as isize, (ky / 2) as isize, (kz / 2) as isize);
    let positions = sx * sy * sz;
    let row_len = g.row_len();
    for r in 0..rows {
        let gr = r0 + r;
        let (n, p) = (gr / positions, gr % positions);
        let (x, y, z) = (p / (sy * sz), (p / sz) % sy, p % sz);
        let dst_row = &mut col[r * row_len..(r + 1) * row_len];
        let mut o = 0;
        for i in 0..kx {
            let xi = x as isize + i as isize - hx;
            for j in 0..ky {
                let yj = y as isize + j as isize - hy;
                let row_ok = xi >= 0 && xi < sx as isize && yj >= 0 && yj < sy as isize;
                for l in 0..kz {
                    let zl = z as isize + l as isize - hz;
                    let dst = &mut dst_row[o..o + cin];
                    if row_ok && zl >= 0 && zl < sz as isize {
                        let src = (((n * sx + xi as usize) * sy + yj as usize) * sz + zl as usize)
                            * cin;
                        dst.copy_from_slice(&input.data[src..src + cin]);
                    } else {
                        dst.fill(0.0);
                    }
                    o += cin;
                }
            }
        }
    }
}

/// Scatter-adds column gradients back onto the input gradient.
fn col2im(grad_in: &mut Tensor, g: &ConvGeom, r0: usize, rows: usize, col: &[f64]) {
    let [_, sx, sy, sz, cin] = grad_in.shape;
    let [kx, ky, kz] = g.kernel;
    let (hx, hy, hz) = ((kx / 2) as isize, (ky / 2) as isize, (kz / 2) as isize);
    let positions = sx * sy * sz;
    let row_len = g.row_len();
    for r in 0..rows {
        let gr = r0 + r;
        let (n, p) = (gr / positions, gr % positions);
        let (x, y, z) = (p / (sy * sz), (p / sz) % sy, p % sz);
        let src_row = &col[r * row_len..(r + 1) * row_len];
        let mut o = 0;
        for i in 0..kx {
            let xi = x as isize + i as isize - hx;
            for j in 0..ky {
                let yj = y as isize + j as isize - hy;
                let row_ok = xi >= 0 && xi < sx as isize && yj >= 0 && yj < sy as isize;
                for l in 0..kz {
                    let zl = z as isize + l as isize - hz;
                    if row_ok && zl >= 0 && zl < sz as isize {
                        let dst = (((n * sx + xi as usize) * sy + yj as usize) * sz + zl as usize)
                            * cin;
                        for (d, s) in grad_in.data[dst..dst + cin]
                            .iter_mut()
                            .zip(&src_row[o..o + cin])
                        {
                            *d += s;
                        }
                    }
                    o += cin;
                }
            }
        }
    }
}

fn chunk_rows(total: usize, row_len: usize) -> usize {
    (COL_BUDGET / row_len.max(1)).clamp(1, total.max(1))
}

/// Same-padded convolution, optionally followed by ReLU.
///
/// `weight` is laid out (kx, ky, kz, in_ch, out_ch) row-major.
pub fn conv_forward(input: &Tensor, g: &ConvGeom, weight: &[f64], bias: &[f64], relu: bool) -> Tensor {
    assert_eq!(input.channels(), g.in_ch, "conv input channel mismatch");
    let [n, sx, sy, sz, _] = input.shape;
    let mut out = Tensor::zeros([n, sx, sy, sz, g.out_ch]);
    let total = n * sx * sy * sz;
    let k = g.row_len();
    let f = g.out_ch;
    if g.is_pointwise() {
        gemm(total, k, f, &input.data, k as isize, 1, weight, f as isize, 1, 0.0, &mut out.data);
    } else {
        let chunk = chunk_rows(total, k);
        let mut col = vec![0.0; chunk * k];
        let mut r0 = 0;
        while r0 < total {
            let rows = chunk.min(total - r0);
            im2col(input, g, r0, rows, &mut col);
            gemm(
                rows,
                k,
                f,
                &col,
                k as isize,
                1,
                weight,
                f as isize,
                1,
                0.0,
                &mut out.data[r0 * f..(r0 + rows) * f],
            );
            r0 += rows;
        }
    }
    for row in out.data.chunks_exact_mut(f) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Backward pass of [`conv_forward`]. `grad_out` is the gradient with
/// respect to the (post-activation) output; when `relu` is set it is masked
/// by `output > 0`. Weight and bias gradients are accumulated; the input
/// gradient is returned when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    g: &ConvGeom,
    weight: &[f64],
    relu: bool,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor> {
    let f = g.out_ch;
    let k = g.row_len();
    let total = output.len() / f;
    let dy: Vec<f64> = if relu {
        grad_out
            .data
            .iter()
            .zip(&output.data)
            .map(|(&d, &o)| if o > 0.0 { d } else { 0.0 })
            .collect()
    } else {
        grad_out.data.clone()
    };
    for row in dy.chunks_exact(f) {
        for (gb, d) in grad_bias.iter_mut().zip(row) {
            *gb += d;
        }
    }
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(input.shape));
    if g.is_pointwise() {
        // dW += X^T dY ; dX = dY W^T
        gemm(k, total, f, &input.data, 1, k as isize, &dy, f as isize, 1, 1.0, grad_weight);
        if let Some(gi) = grad_in.as_mut() {
            gemm(total, f, k, &dy, f as isize, 1, weight, 1, f as isize, 0.0, &mut gi.data);
        }
        return grad_in;
    }
    let chunk = chunk_rows(total, k);
    let mut col = vec![0.0; chunk * k];
    let mut dcol = if want_input_grad {
        vec![0.0; chunk * k]
    } else {
        Vec::new()
    };
    let mut r0 = 0;
    while r0 < total {
        let rows = chunk.min(total - r0);
        im2col(input, g, r0, rows, &mut col);
        let dy_chunk = &dy[r0 * f..(r0 + rows) * f];
        gemm(k, rows, f, &col, 1, k as isize, dy_chunk, f as isize, 1, 1.0, grad_weight);
        if let Some(gi) = grad_in.as_mut() {
            gemm(rows, f, k, dy_chunk, f as isize, 1, weight, 1, f as isize, 0.0, &mut dcol);
            col2im(gi, g, r0, rows, &dcol);
        }
        r0 += rows;
    }
    grad_in
}

/// Max over a `size` x `size` planar window (stride 1, same padding, padded
/// cells ignored). Returns the pooled map and the flat argmax per output.
pub fn maxpool_forward(input: &Tensor, size: usize) -> (Tensor, Vec<u32>) {
    let [n, sx, sy, sz, c] = input.shape;
    let h = (size / 2) as isize;
    let mut out = Tensor::zeros(input.shape);
    let mut arg = vec![0u32; input.len()];
    for b in 0..n {
        for x in 0..sx {
            for y in 0..sy {
                for z in 0..sz {
                    let o = (((b * sx + x) * sy + y) * sz + z) * c;
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for i in -h..=h {
                            let xi = x as isize + i;
                            if xi < 0 || xi >= sx as isize {
                                continue;
                            }
                            for j in -h..=h {
                                let yj = y as isize + j;
                                if yj < 0 || yj >= sy as isize {
                                    continue;
                                }
                                let src = (((b * sx + xi as usize) * sy + yj as usize) * sz + z)
                                    * c
                                    + ch;
                                if input.data[src] > best {
                                    best = input.data[src];
                                    best_i = src;
                                }
                            }
                        }
                        out.data[o + ch] = best;
                        arg[o + ch] = best_i as u32;
                    }
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(grad_out: &Tensor, arg: &[u32]) -> Tensor {
    let mut gi = Tensor::zeros(grad_out.shape);
    for (d, &a) in grad_out.data.iter().zip(arg) {
        gi.data[a as usize] += d;
    }
    gi
}

/// Mean over all positions per channel: (N, X, Y, Z, C) -> (N, 1, 1, 1, C).
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let (n, p, c) = (input.batch(), input.positions(), input.channels());
    let mut out = Tensor::zeros([n, 1, 1, 1, c]);
    for b in 0..n {
        let dst = &mut out.data[b * c..(b + 1) * c];
        for row in input.data[b * p * c..(b + 1) * p * c].chunks_exact(c) {
            for (d, v) in dst.iter_mut().zip(row) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d /= p as f64);
    }
    out
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: [usize; 5]) -> Tensor {
    let mut gi = Tensor::zeros(input_shape);
    let (n, c) = (input_shape[0], input_shape[4]);
    let p = input_shape[1] * input_shape[2] * input_shape[3];
    let inv = 1.0 / p as f64;
    for b in 0..n {
        let g = &grad_out.data[b * c..(b + 1) * c];
        for row in gi.data[b * p * c..(b + 1) * p * c].chunks_exact_mut(c) {
            for (d, v) in row.iter_mut().zip(g) {
                *d = v * inv;
            }
        }
    }
    gi
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Multiplies `x` by a gate broadcast over positions (gate shape
/// (N,1,1,1,C)) or over channels (gate shape (N,X,Y,Z,1)).
pub fn gate_mul(x: &Tensor, gate: &Tensor) -> Tensor {
    let (n, p, c) = (x.batch(), x.positions(), x.channels());
    let mut out = x.clone();
    if gate.shape[4] == c && gate.positions() == 1 {
        for b in 0..n {
            let g = &gate.data[b * c..(b + 1) * c];
            for row in out.data[b * p * c..(b + 1) * p * c].chunks_exact_mut(c) {
                row.iter_mut().zip(g).for_each(|(v, g)| *v *= g);
            }
        }
    } else {
        for (row, g) in out.data.chunks_exact_mut(c).zip(&gate.data) {
            row.iter_mut().for_each(|v| *v *= g);
        }
    }
    out
}

/// Returns (dx, dgate).
pub fn gate_mul_backward(x: &Tensor, gate: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let (n, p, c) = (x.batch(), x.positions(), x.channels());
    let dx = gate_mul(grad_out, gate);
    let mut dg = Tensor::zeros(gate.shape);
    if gate.shape[4] == c && gate.positions() == 1 {
        for b in 0..n {
            let dst = &mut dg.data[b * c..(b + 1) * c];
            let xs = &x.data[b * p * c..(b + 1) * p * c];
            let gs = &grad_out.data[b * p * c..(b + 1) * p * c];
            for (xr, gr) in xs.chunks_exact(c).zip(gs.chunks_exact(c)) {
                for ((d, xv), gv) in dst.iter_mut().zip(xr).zip(gr) {
                    *d += xv * gv;
                }
            }
        }
    } else {
        for ((d, xr), gr) in dg
            .data
            .iter_mut()
            .zip(x.data.chunks_exact(c))
            .zip(grad_out.data.chunks_exact(c))
        {
            *d = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
        }
    }
    (dx, dg)
}

/// Per-position channel mean and channel max: (N,X,Y,Z,C) -> (N,X,Y,Z,2).
pub fn mean_max(x: &Tensor) -> (Tensor, Vec<u32>) {
    let c = x.channels();
    let mut shape = x.shape;
    shape[4] = 2;
    let mut out = Tensor::zeros(shape);
    let mut arg = Vec::with_capacity(x.len() / c);
    for (o, row) in out.data.chunks_exact_mut(2).zip(x.data.chunks_exact(c)) {
        o[0] = row.iter().sum::<f64>() / c as f64;
        let (mut bi, mut bv) = (0, row[0]);
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > bv {
                bi = i;
                bv = v;
            }
        }
        o[1] = bv;
        arg.push(bi as u32);
    }
    (out, arg)
}

pub fn mean_max_backward(grad_out: &Tensor, arg: &[u32], input_shape: [usize; 5]) -> Tensor {
    let c = input_shape[4];
    let mut gi = Tensor::zeros(input_shape);
    for ((row, g), &a) in gi
        .data
        .chunks_exact_mut(c)
        .zip(grad_out.data.chunks_exact(2))
        .zip(arg)
    {
        let m = g[0] / c as f64;
        row.iter_mut().for_each(|v| *v = m);
        row[a as usize] += g[1];
    }
    gi
}

/// Concatenates along the channel axis.
pub fn concat(parts: &[&Tensor]) -> Tensor {
    let mut shape = parts[0].shape;
    shape[4] = parts.iter().map(|t| t.channels()).sum();
    let rows = parts[0].len() / parts[0].channels().max(1);
    let mut data = Vec::with_capacity(rows * shape[4]);
    for r in 0..rows {
        for t in parts {
            let c = t.channels();
            data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn concat_backward(grad_out: &Tensor, part_channels: &[usize]) -> Vec<Tensor> {
    let total = grad_out.channels();
    let rows = grad_out.len() / total.max(1);
    let mut outs: Vec<Tensor> = part_channels
        .iter()
        .map(|&c| {
            let mut s = grad_out.shape;
            s[4] = c;
            Tensor::zeros(s)
        })
        .collect();
    for r in 0..rows {
        let mut o = r * total;
        for (t, &c) in outs.iter_mut().zip(part_channels) {
            t.data[r * c..(r + 1) * c].copy_from_slice(&grad_out.data[o..o + c]);
            o += c;
        }
    }
    outs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Same-padded convolution written as the plain nested sums.
    fn naive_conv(input: &Tensor, g: &ConvGeom, w: &[f64], b: &[f64], relu: bool) -> Tensor {
        let [n, sx, sy, sz, cin] = input.shape;
        let [kx, ky, kz] = g.kernel;
        let (hx, hy, hz) = ((kx / 2) as isize, (ky / 2) as isize, (kz / 2) as isize);
        let mut out = Tensor::zeros([n, sx, sy, sz, g.out_ch]);
        for s in 0..n {
            for x in 0..sx as isize {
                for y in 0..sy as isize {
                    for z in 0..sz as isize {
                        for f in 0..g.out_ch {
                            let mut acc = b[f];
                            for i in -hx..=hx {
                                for j in -hy..=hy {
                                    for l in -hz..=hz {
                                        let (xi, yj, zl) = (x + i, y + j, z + l);
                                        if xi < 0 || yj < 0 || zl < 0 || xi >= sx as isize || yj >= sy as isize || zl >= sz as isize {
                                            continue;
                                        }
                                        for c in 0..cin {
                                            let wi = (((((i + hx) as usize * ky + (j + hy) as usize) * kz + (l + hz) as usize) * cin) + c) * g.out_ch + f;
                                            acc += w[wi] * input.at(s, xi as usize, yj as usize, zl as usize, c);
                                        }
                                    }
                                }
                            }
                            let o = ((((s * sx + x as usize) * sy + y as usize) * sz + z as usize) * g.out_ch) + f;
                            out.data[o] = if relu { acc.max(0.0) } else { acc };
                        }
                    }
                }
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_loop_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 0..40 {
            let kernel = [[3, 3, 5], [1, 1, 1], [3, 3, 1], [5, 3, 3]][t % 4];
            let shape = [
                rng.random_range(1..3),
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..7),
                rng.random_range(1..4),
            ];
            let g = ConvGeom {
                kernel,
                in_ch: shape[4],
                out_ch: rng.random_range(1..4),
            };
            let input = Tensor::from_vec(shape, random(&mut rng, shape.iter().product()));
            let w = random(&mut rng, g.row_len() * g.out_ch);
            let b = random(&mut rng, g.out_ch);
            let relu = t % 2 == 0;
            let fast = conv_forward(&input, &g, &w, &b, relu);
            let slow = naive_conv(&input, &g, &w, &b, relu);
            for (a, e) in fast.data.iter().zip(&slow.data) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_trivial_cases() {
        let g = ConvGeom { kernel: [1, 1, 1], in_ch: 1, out_ch: 1 };
        let x = Tensor::from_vec([1, 1, 1, 1, 1], vec![2.0]);
        assert_eq!(conv_forward(&x, &g, &[-3.0], &[1.0], true).data, vec![0.0]);
        assert_eq!(conv_forward(&x, &g, &[3.0], &[1.0], true).data, vec![7.0]);

        let g = ConvGeom { kernel: [3, 3, 3], in_ch: 1, out_ch: 1 };
        let x = Tensor::from_vec([1, 3, 3, 3, 1], (1..=27).map(f64::from).collect());
        let y = conv_forward(&x, &g, &[1.0; 27], &[0.0], true);
        assert_eq!(y.at(0, 1, 1, 1, 0), 378.0);

        let g = ConvGeom { kernel: [3, 3, 1], in_ch: 1, out_ch: 1 };
        let x = Tensor::from_vec([1, 3, 3, 1, 1], vec![1.0; 9]);
        let y = conv_forward(&x, &g, &[1.0; 9], &[0.0], false);
        assert_eq!(y.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn pointwise_identity_preserves_input() {
        let g = ConvGeom { kernel: [1, 1, 1], in_ch: 3, out_ch: 3 };
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec([2, 2, 2, 1, 3], (0..24).map(|i| i as f64 * 0.5).collect());
        assert_eq!(conv_forward(&x, &g, &w, &[0.0; 3], true), x);
    }

    #[test]
    fn maxpool_semantics() {
        let c = Tensor::from_vec([1, 5, 5, 1, 2], vec![0.25; 50]);
        assert_eq!(maxpool_forward(&c, 3).0, c);
        let mut p = Tensor::zeros([1, 9, 9, 1, 1]);
        p.data[4 * 9 + 4] = 5.0;
        let (y, _) = maxpool_forward(&p, 3);
        for x in 0..9 {
            for yy in 0..9 {
                let near = (3..=5).contains(&x) && (3..=5).contains(&yy);
                assert_eq!(y.at(0, x, yy, 0, 0), if near { 5.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gate_mul_broadcasts() {
        let x = Tensor::from_vec([1, 1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let ch = Tensor::from_vec([1, 1, 1, 1, 2], vec![0.5, 2.0]);
        assert_eq!(gate_mul(&x, &ch).data, vec![0.5, 4.0, 1.5, 8.0]);
        let sp = Tensor::from_vec([1, 1, 2, 1, 1], vec![0.0, 1.0]);
        assert_eq!(gate_mul(&x, &sp).data, vec![0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval_for_moderate_inputs() {
        for x in [-30.0, -1.0, 0.0, 1.0, 30.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
