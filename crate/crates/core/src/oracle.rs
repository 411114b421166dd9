//! Golden model: naive integer reference implementations.
//!
//! Nothing here reuses the compiler, the block layout code or the
//! simulator; convolution is computed directly rather than through im2row,
//! and the expected OUT bytes are serialised by an independent loop. The
//! only shared items are plain data containers.

use thiserror::Error;

use crate::blocks::AgnosticMatrix;
use crate::isa::AluOpcode;
use crate::progbuild::PostOp;
use crate::tensorfront::{LayerKind, LayerSpec, PoolMode, PoolPlacement, Tensor4};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `A × B + X` with wrapping 32-bit accumulation.
pub fn matmul(a: &AgnosticMatrix, b: &AgnosticMatrix, x: Option<&AgnosticMatrix>) -> Result<AgnosticMatrix, OracleError> {
    if a.cols != b.rows {
        return Err(OracleError::Shape(format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    if let Some(x) = x {
        if (x.rows, x.cols) != (a.rows, b.cols) {
            return Err(OracleError::Shape(format!("bias {}x{} for {}x{}", x.rows, x.cols, a.rows, b.cols)));
        }
    }
    let mut data = Vec::with_capacity(a.rows * b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut s: i32 = x.map_or(0, |x| x.data[i * x.cols + j]);
            for k in 0..a.cols {
                s = s.wrapping_add(a.data[i * a.cols + k].wrapping_mul(b.data[k * b.cols + j]));
            }
            data.push(s);
        }
    }
    Ok(AgnosticMatrix { rows: a.rows, cols: b.cols, data })
}

/// One ALU lane. SHR floors (arithmetic shift), a negative amount
/// multiplies by a power of two with 32-bit wrap-around, and amounts are
/// clamped to 31.
pub fn alu(op: AluOpcode, a: i32, b: i32) -> i32 {
    match op {
        AluOpcode::Min => {
            if a < b {
                a
            } else {
                b
            }
        }
        AluOpcode::Max => {
            if a > b {
                a
            } else {
                b
            }
        }
        AluOpcode::Add => ((a as i64 + b as i64) & 0xffff_ffff) as u32 as i32,
        AluOpcode::Shr => {
            let k = b.unsigned_abs().min(31);
            if b >= 0 {
                (a as i64).div_euclid(1i64 << k) as i32
            } else {
                (((a as i64) << k) & 0xffff_ffff) as u32 as i32
            }
        }
    }
}

/// Low byte of a 32-bit value, sign extended.
pub fn truncate8(v: i32) -> i32 {
    let r = v.rem_euclid(256);
    if r >= 128 {
        r - 256
    } else {
        r
    }
}

pub fn relu(v: i32) -> i32 {
    v.max(0)
}

/// Arithmetic right shift, then clip to `[-128, 127]`.
pub fn requant(v: i32, shift: u32) -> i32 {
    alu(AluOpcode::Shr, v, shift as i32).clamp(-128, 127)
}

fn pool_plane(
    get: impl Fn(usize, usize) -> i32,
    h: usize,
    w: usize,
    mode: PoolMode,
    window: usize,
    stride: usize,
) -> (usize, usize, Vec<i32>) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let mut sum = 0i64;
            let mut best = i32::MIN;
            for wy in 0..window {
                for wx in 0..window {
                    let v = get(y * stride + wy, x * stride + wx);
                    sum += v as i64;
                    best = best.max(v);
                }
            }
            out.push(match mode {
                PoolMode::Max => best,
                PoolMode::Avg => sum.div_euclid((window * window) as i64) as i32,
            });
        }
    }
    (oh, ow, out)
}

/// Pools each column of `m`, whose rows are the `h × w` positions.
pub fn pool_rows(m: &AgnosticMatrix, h: usize, w: usize, mode: PoolMode, window: usize, stride: usize) -> Result<AgnosticMatrix, OracleError> {
    if m.rows != h * w {
        return Err(OracleError::Shape(format!("{} rows for {h}x{w} positions", m.rows)));
    }
    let mut cols = Vec::new();
    for c in 0..m.cols {
        cols.push(pool_plane(|y, x| m.data[(y * w + x) * m.cols + c], h, w, mode, window, stride).2);
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok(AgnosticMatrix { rows, cols: m.cols, data: (0..rows * m.cols).map(|i| cols[i % m.cols][i / m.cols]).collect() })
}

/// Expected decoded OUT of a matrix job: `A × B + X`, post-ops in order,
/// then the low byte of every element.
pub fn matmul_job(
    a: &AgnosticMatrix,
    b: &AgnosticMatrix,
    x: Option<&AgnosticMatrix>,
    post_ops: &[PostOp],
) -> Result<AgnosticMatrix, OracleError> {
    let mut m = matmul(a, b, x)?;
    for op in post_ops {
        match *op {
            PostOp::Alu { op, imm } => {
                for v in m.data.iter_mut() {
                    *v = alu(op, *v, imm.unwrap_or(*v));
                }
            }
            PostOp::Pool(p) => m = pool_rows(&m, p.in_h, p.in_w, p.mode, p.window, p.stride)?,
        }
    }
    m.data.iter_mut().for_each(|v| *v = truncate8(*v));
    Ok(m)
}

/// Bytes of the OUT region holding `m` in `bs × bs` blocks, zero padded.
pub fn out_bytes(m: &AgnosticMatrix, bs: usize) -> Vec<u8> {
    let gr = m.rows.div_ceil(bs);
    let gc = m.cols.div_ceil(bs);
    let mut bytes = vec![0u8; gr * gc * bs * bs];
    for r in 0..m.rows {
        for c in 0..m.cols {
            let block = (r / bs) * gc + c / bs;
            bytes[block * bs * bs + (r % bs) * bs + c % bs] = truncate8(m.data[r * m.cols + c]) as u8;
        }
    }
    bytes
}

/// Direct 2-D convolution of one image.
pub fn conv2d(
    input: &Tensor4,
    img: usize,
    weights: &[i32],
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Tensor4 {
    let oh = (input.h + 2 * pad - kernel) / stride + 1;
    let ow = (input.w + 2 * pad - kernel) / stride + 1;
    let mut out = Tensor4::zeros(1, out_channels, oh, ow);
    for oc in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0i32;
                for c in 0..input.c {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let x = (ox * stride + kx) as isize - pad as isize;
                            if y < 0 || x < 0 || y >= input.h as isize || x >= input.w as isize {
                                continue;
                            }
                            let v = input.data[((img * input.c + c) * input.h + y as usize) * input.w + x as usize];
                            let wv = weights[((oc * input.c + c) * kernel + ky) * kernel + kx];
                            s = s.wrapping_add(v.wrapping_mul(wv));
                        }
                    }
                }
                out.data[(oc * oh + oy) * ow + ox] = s;
            }
        }
    }
    out
}

/// Output of one layer for image `img`, as the accelerator leaves it:
/// bias, requantisation, ReLU, pooling and 8-bit truncation, with device
/// pooling before and host pooling after the truncation.
pub fn layer(spec: &LayerSpec, input: &Tensor4, img: usize) -> Result<Tensor4, OracleError> {
    let g = &spec.geometry;
    if (input.c, input.h, input.w) != (g.in_channels, g.in_h, g.in_w) {
        return Err(OracleError::Shape(format!("layer {} input {}x{}x{}", spec.name, input.c, input.h, input.w)));
    }
    let mut t = match g.kind {
        LayerKind::Conv { kernel, stride, pad } => conv2d(input, img, &spec.weights, g.out_channels, kernel, stride, pad),
        LayerKind::Fc => {
            let n = g.in_features();
            let x = &input.data[img * n..(img + 1) * n];
            let data = (0..g.out_channels)
                .map(|o| (0..n).fold(0i32, |s, i| s.wrapping_add(x[i].wrapping_mul(spec.weights[o * n + i]))))
                .collect();
            Tensor4 { n: 1, c: g.out_channels, h: 1, w: 1, data }
        }
    };
    let plane = t.h * t.w;
    for (i, v) in t.data.iter_mut().enumerate() {
        if let Some(b) = &spec.bias {
            *v = v.wrapping_add(b[i / plane]);
        }
        if let Some(s) = g.requant_shift {
            *v = requant(*v, s);
        }
        if g.relu {
            *v = relu(*v);
        }
    }
    let pool = |t: &Tensor4, mode, window, stride| {
        let mut data = Vec::new();
        let (mut oh, mut ow) = (0, 0);
        for c in 0..t.c {
            let (h, w, d) = pool_plane(|y, x| t.data[(c * t.h + y) * t.w + x], t.h, t.w, mode, window, stride);
            (oh, ow) = (h, w);
            data.extend(d);
        }
        Tensor4 { n: 1, c: t.c, h: oh, w: ow, data }
    };
    if let Some(p) = g.pool.filter(|p| p.placement == PoolPlacement::Device) {
        t = pool(&t, p.mode, p.window, p.stride);
    }
    t.data.iter_mut().for_each(|v| *v = truncate8(*v));
    if let Some(p) = g.pool.filter(|p| p.placement == PoolPlacement::Host) {
        t = pool(&t, p.mode, p.window, p.stride);
    }
    Ok(t)
}

/// Outputs of every layer for image `img`.
pub fn network(layers: &[LayerSpec], input: &Tensor4, img: usize) -> Result<Vec<Tensor4>, OracleError> {
    let mut outs: Vec<Tensor4> = Vec::new();
    let mut current = input.image(img);
    for spec in layers {
        let g = &spec.geometry;
        if spec.geometry.kind == LayerKind::Fc {
            current = Tensor4 { n: 1, c: g.in_channels, h: g.in_h, w: g.in_w, data: current.data };
        }
        let out = layer(spec, &current, 0)?;
        outs.push(out.clone());
        current = out;
    }
    Ok(outs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = AgnosticMatrix::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let b = AgnosticMatrix::new(2, 2, vec![5, 6, 7, 8]).unwrap();
        let x = AgnosticMatrix::new(2, 2, vec![1, 1, 1, 1]).unwrap();
        assert_eq!(matmul(&a, &b, Some(&x)).unwrap().data, vec![20, 23, 44, 51]);
    }

    #[test]
    fn alu_lanes() {
        assert_eq!(alu(AluOpcode::Shr, -5, 1), -3);
        assert_eq!(alu(AluOpcode::Shr, 7, 40), 0);
        assert_eq!(alu(AluOpcode::Shr, 3, -2), 12);
        assert_eq!(alu(AluOpcode::Add, i32::MAX, 1), i32::MIN);
        assert_eq!(alu(AluOpcode::Min, -3, 2), -3);
    }

    #[test]
    fn truncation_and_requant() {
        assert_eq!(truncate8(300), 44);
        assert_eq!(truncate8(-129), 127);
        assert_eq!(truncate8(128), -128);
        assert_eq!(requant(1000, 2), 127);
        assert_eq!(requant(-1000, 1), -128);
        assert_eq!(requant(-7, 1), -4);
    }

    #[test]
    fn out_bytes_layout() {
        let m = AgnosticMatrix::from_fn(3, 3, |r, c| (r * 3 + c) as i32);
        let bytes = out_bytes(&m, 2);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], &[0, 1, 3, 4]);
        assert_eq!(&bytes[4..8], &[2, 0, 5, 0]);
        assert_eq!(&bytes[8..12], &[6, 7, 0, 0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let t = Tensor4::from_fn(1, 1, 3, 3, |_, _, y, x| (y * 3 + x) as i32);
        let out = conv2d(&t, 0, &[1], 1, 1, 1, 0);
        assert_eq!(out.data, t.data);
        let padded = conv2d(&t, 0, &[0, 0, 0, 0, 1, 0, 0, 0, 0], 1, 3, 1, 1);
        assert_eq!(padded.data, t.data);
    }

    #[test]
    fn pooling_rows() {
        let m = AgnosticMatrix::from_fn(4, 1, |r, _| [-1, -2, 0, 0][r]);
        assert_eq!(pool_rows(&m, 2, 2, PoolMode::Avg, 2, 2).unwrap().data, vec![-1]);
        assert_eq!(pool_rows(&m, 2, 2, PoolMode::Max, 2, 2).unwrap().data, vec![0]);
    }
}
