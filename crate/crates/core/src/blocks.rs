//! Data definition: pad hardware-agnostic matrices, split them into
//! `block_size × block_size` blocks, and serialize blocks into the VTA
//! binary layout. Each step has an inverse used to decode results.

use thiserror::Error;

use crate::dram::RegionKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("matrix {rows}x{cols} has {len} elements")]
    ElementCount { rows: usize, cols: usize, len: usize },
    #[error("matrix {rows}x{cols} is not a multiple of block size {block_size}")]
    NotMultiple { rows: usize, cols: usize, block_size: usize },
    #[error("{kind} value {value} out of range at block {block}, row {row}, col {col}")]
    Domain { kind: MatrixKind, value: i32, block: usize, row: usize, col: usize },
    #[error("expected {expected} bytes for {kind} grid, got {got}")]
    Length { kind: MatrixKind, expected: usize, got: usize },
    #[error("cannot unpad {grid_rows}x{grid_cols} padded matrix to {rows}x{cols}")]
    Unpad { rows: usize, cols: usize, grid_rows: usize, grid_cols: usize },
}

/// Operand role of a matrix, which fixes element width and block layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    Inp,
    Wgt,
    Acc,
    Out,
}

impl MatrixKind {
    pub fn element_bytes(self) -> usize {
        match self {
            MatrixKind::Acc => 4,
            _ => 1,
        }
    }

    pub fn domain(self) -> (i32, i32) {
        match self {
            MatrixKind::Acc => (i32::MIN, i32::MAX),
            _ => (i8::MIN as i32, i8::MAX as i32),
        }
    }

    pub fn region_kind(self) -> RegionKind {
        match self {
            MatrixKind::Inp => RegionKind::Inp,
            MatrixKind::Wgt => RegionKind::Wgt,
            MatrixKind::Acc => RegionKind::Acc,
            MatrixKind::Out => RegionKind::Out,
        }
    }
}

impl std::fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.region_kind().fmt(f)
    }
}

/// Row-major integer matrix with no hardware constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgnosticMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl AgnosticMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>) -> Result<Self, BlockError> {
        if data.len() != rows * cols {
            return Err(BlockError::ElementCount { rows, cols, len: data.len() });
        }
        Ok(AgnosticMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        AgnosticMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        AgnosticMatrix { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Top-left `rows × cols` sub-matrix.
    pub fn crop(&self, rows: usize, cols: usize) -> AgnosticMatrix {
        AgnosticMatrix::from_fn(rows, cols, |r, c| self.get(r, c))
    }
}

/// Padded matrix split into a row-major grid of square blocks.
///
/// WGT blocks are stored transposed; every other kind is stored as is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMatrix {
    pub kind: MatrixKind,
    pub block_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// `grid_rows * grid_cols` blocks of `block_size²` row-major elements.
    pub blocks: Vec<Vec<i32>>,
    pub orig_rows: usize,
    pub orig_cols: usize,
}

impl BlockMatrix {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Block `(i, j)` of the grid, in stored (possibly transposed) form.
    pub fn block(&self, i: usize, j: usize) -> &[i32] {
        &self.blocks[i * self.grid_cols + j]
    }

    /// Pads, splits and records the original shape in one go.
    pub fn from_matrix(m: &AgnosticMatrix, block_size: usize, kind: MatrixKind) -> Result<Self, BlockError> {
        let mut bm = matrix_splitting(&matrix_padding(m, block_size), block_size, kind)?;
        bm.orig_rows = m.rows;
        bm.orig_cols = m.cols;
        Ok(bm)
    }

    /// Number of structures the grid occupies in DRAM (vectors for
    /// INP/ACC/OUT, matrices for WGT).
    pub fn structures(&self) -> usize {
        match self.kind {
            MatrixKind::Wgt => self.block_count(),
            _ => self.block_count() * self.block_size,
        }
    }

    pub fn byte_len(&self) -> usize {
        self.block_count() * self.block_size * self.block_size * self.kind.element_bytes()
    }
}

pub fn round_up(v: usize, to: usize) -> usize {
    v.div_ceil(to) * to
}

/// Zero-extends width and height to the next multiple of `block_size`.
pub fn matrix_padding(m: &AgnosticMatrix, block_size: usize) -> AgnosticMatrix {
    let rows = round_up(m.rows, block_size);
    let cols = round_up(m.cols, block_size);
    if rows == m.rows && cols == m.cols {
        return m.clone();
    }
    let mut out = AgnosticMatrix::zeros(rows, cols);
    for r in 0..m.rows {
        out.data[r * cols..r * cols + m.cols].copy_from_slice(m.row(r));
    }
    out
}

/// Splits a padded matrix into row-major blocks. WGT blocks are transposed
/// element-wise; block order is unchanged.
pub fn matrix_splitting(m: &AgnosticMatrix, block_size: usize, kind: MatrixKind) -> Result<BlockMatrix, BlockError> {
    if block_size == 0 || m.rows % block_size != 0 || m.cols % block_size != 0 {
        return Err(BlockError::NotMultiple { rows: m.rows, cols: m.cols, block_size });
    }
    let bs = block_size;
    let (grid_rows, grid_cols) = (m.rows / bs, m.cols / bs);
    let mut blocks = Vec::with_capacity(grid_rows * grid_cols);
    for bi in 0..grid_rows {
        for bj in 0..grid_cols {
            let mut block = vec![0; bs * bs];
            for r in 0..bs {
                for c in 0..bs {
                    let v = m.get(bi * bs + r, bj * bs + c);
                    match kind {
                        MatrixKind::Wgt => block[c * bs + r] = v,
                        _ => block[r * bs + c] = v,
                    }
                }
            }
            blocks.push(block);
        }
    }
    Ok(BlockMatrix {
        kind,
        block_size: bs,
        grid_rows,
        grid_cols,
        blocks,
        orig_rows: m.rows,
        orig_cols: m.cols,
    })
}

/// Serializes blocks in list order, each block row-major and little-endian.
pub fn binarise(bm: &BlockMatrix) -> Result<Vec<u8>, BlockError> {
    let (lo, hi) = bm.kind.domain();
    let bs = bm.block_size;
    let mut out = Vec::with_capacity(bm.byte_len());
    for (b, block) in bm.blocks.iter().enumerate() {
        for (e, &v) in block.iter().enumerate() {
            if v < lo || v > hi {
                return Err(BlockError::Domain { kind: bm.kind, value: v, block: b, row: e / bs, col: e % bs });
            }
            match bm.kind {
                MatrixKind::Acc => out.extend_from_slice(&v.to_le_bytes()),
                _ => out.push(v as i8 as u8),
            }
        }
    }
    Ok(out)
}

pub fn debinarise(
    bytes: &[u8],
    kind: MatrixKind,
    grid_rows: usize,
    grid_cols: usize,
    block_size: usize,
) -> Result<BlockMatrix, BlockError> {
    let area = block_size * block_size;
    let expected = grid_rows * grid_cols * area * kind.element_bytes();
    if bytes.len() != expected {
        return Err(BlockError::Length { kind, expected, got: bytes.len() });
    }
    let values: Vec<i32> = match kind {
        MatrixKind::Acc => bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
        _ => bytes.iter().map(|&b| b as i8 as i32).collect(),
    };
    let blocks = if area == 0 { Vec::new() } else { values.chunks_exact(area).map(<[i32]>::to_vec).collect() };
    Ok(BlockMatrix {
        kind,
        block_size,
        grid_rows,
        grid_cols,
        blocks,
        orig_rows: grid_rows * block_size,
        orig_cols: grid_cols * block_size,
    })
}

/// Reassembles the padded matrix (undoing the WGT transposition).
pub fn merge(bm: &BlockMatrix) -> AgnosticMatrix {
    let bs = bm.block_size;
    AgnosticMatrix::from_fn(bm.grid_rows * bs, bm.grid_cols * bs, |r, c| {
        let block = bm.block(r / bs, c / bs);
        let (br, bc) = (r % bs, c % bs);
        match bm.kind {
            MatrixKind::Wgt => block[bc * bs + br],
            _ => block[br * bs + bc],
        }
    })
}

/// Merges the blocks and strips padding down to `rows × cols`.
pub fn merge_unpad(bm: &BlockMatrix, rows: usize, cols: usize) -> Result<AgnosticMatrix, BlockError> {
    let bs = bm.block_size;
    if rows > bm.grid_rows * bs || cols > bm.grid_cols * bs {
        return Err(BlockError::Unpad {
            rows,
            cols,
            grid_rows: bm.grid_rows * bs,
            grid_cols: bm.grid_cols * bs,
        });
    }
    Ok(merge(bm).crop(rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: usize, cols: usize) -> AgnosticMatrix {
        AgnosticMatrix::from_fn(rows, cols, |r, c| (r * cols + c + 1) as i32)
    }

    #[test]
    fn pads_three_by_three() {
        let p = matrix_padding(&seq(3, 3), 2);
        assert_eq!((p.rows, p.cols), (4, 4));
        assert_eq!(p.row(0), &[1, 2, 3, 0]);
        assert_eq!(p.row(3), &[0, 0, 0, 0]);
        assert_eq!(matrix_padding(&seq(784, 25), 16).cols, 32);
        assert_eq!(matrix_padding(&seq(784, 25), 16).rows, 784);
        let m = seq(16, 16);
        assert_eq!(matrix_padding(&m, 16), m);
    }

    #[test]
    fn splits_row_major() {
        let bm = matrix_splitting(&matrix_padding(&seq(3, 3), 2), 2, MatrixKind::Inp).unwrap();
        assert_eq!((bm.grid_rows, bm.grid_cols), (2, 2));
        assert_eq!(bm.blocks, vec![vec![1, 2, 4, 5], vec![3, 0, 6, 0], vec![7, 8, 0, 0], vec![9, 0, 0, 0]]);
    }

    #[test]
    fn identity_weight_is_transpose_invariant() {
        let id = AgnosticMatrix::from_fn(16, 16, |r, c| (r == c) as i32);
        let bm = matrix_splitting(&id, 16, MatrixKind::Wgt).unwrap();
        assert_eq!(bm.blocks.len(), 1);
        assert_eq!(bm.blocks[0], id.data);
    }

    #[test]
    fn split_matches_index_oracle() {
        let m = AgnosticMatrix::from_fn(32, 48, |r, c| ((r * 7 + c * 13) % 251) as i32 - 125);
        for kind in [MatrixKind::Inp, MatrixKind::Wgt] {
            let bm = matrix_splitting(&m, 16, kind).unwrap();
            assert_eq!((bm.grid_rows, bm.grid_cols), (2, 3));
            for r in 0..32 {
                for c in 0..48 {
                    let idx = (r / 16) * 3 + c / 16;
                    let cell = if kind == MatrixKind::Wgt { (c % 16) * 16 + r % 16 } else { (r % 16) * 16 + c % 16 };
                    assert_eq!(bm.blocks[idx][cell], m.get(r, c));
                }
            }
            assert_eq!(merge(&bm), m);
        }
    }

    #[test]
    fn splitting_rejects_unpadded() {
        assert!(matches!(
            matrix_splitting(&seq(3, 4), 2, MatrixKind::Inp),
            Err(BlockError::NotMultiple { .. })
        ));
    }

    #[test]
    fn binarise_layouts() {
        let inp = BlockMatrix::from_matrix(&AgnosticMatrix::new(2, 2, vec![1, 2, 3, 4]).unwrap(), 2, MatrixKind::Inp).unwrap();
        assert_eq!(binarise(&inp).unwrap(), vec![1, 2, 3, 4]);
        let acc = BlockMatrix::from_matrix(&AgnosticMatrix::new(2, 2, vec![1, 0, 0, 1]).unwrap(), 2, MatrixKind::Acc).unwrap();
        assert_eq!(binarise(&acc).unwrap(), vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
        let wgt = BlockMatrix::from_matrix(&AgnosticMatrix::new(2, 2, vec![1, 2, 3, 4]).unwrap(), 2, MatrixKind::Wgt).unwrap();
        assert_eq!(binarise(&wgt).unwrap(), vec![1, 3, 2, 4]);
        let neg = BlockMatrix::from_matrix(&AgnosticMatrix::new(1, 1, vec![-1]).unwrap(), 2, MatrixKind::Out).unwrap();
        assert_eq!(binarise(&neg).unwrap(), vec![0xFF, 0, 0, 0]);
    }

    #[test]
    fn binarise_names_out_of_domain_cell() {
        let m = AgnosticMatrix::new(2, 2, vec![1, 2, 3, 200]).unwrap();
        let bm = BlockMatrix::from_matrix(&m, 2, MatrixKind::Inp).unwrap();
        assert_eq!(
            binarise(&bm),
            Err(BlockError::Domain { kind: MatrixKind::Inp, value: 200, block: 0, row: 1, col: 1 })
        );
    }

    #[test]
    fn debinarise_length_mismatch() {
        assert!(matches!(
            debinarise(&[0u8; 15], MatrixKind::Out, 1, 1, 4),
            Err(BlockError::Length { expected: 16, got: 15, .. })
        ));
    }

    #[test]
    fn unpad_of_unpadded_is_identity() {
        let m = seq(4, 8);
        let bm = BlockMatrix::from_matrix(&m, 4, MatrixKind::Acc).unwrap();
        assert_eq!(merge_unpad(&bm, 4, 8).unwrap(), m);
        assert!(merge_unpad(&bm, 5, 8).is_err());
    }

    #[test]
    fn decodes_196_by_6() {
        // 13x1 grid of OUT blocks holding a 196x6 result
        let bytes = vec![0u8; 13 * 256];
        let bm = debinarise(&bytes, MatrixKind::Out, 13, 1, 16).unwrap();
        let m = merge_unpad(&bm, 196, 6).unwrap();
        assert_eq!((m.rows, m.cols), (196, 6));
    }

    fn kind_strategy() -> impl Strategy<Value = MatrixKind> {
        prop_oneof![Just(MatrixKind::Inp), Just(MatrixKind::Wgt), Just(MatrixKind::Acc), Just(MatrixKind::Out)]
    }

    proptest! {
        #[test]
        fn full_pipeline_inverse(
            rows in 1usize..40, cols in 1usize..40,
            bs in prop_oneof![Just(2usize), Just(4), Just(16)],
            kind in kind_strategy(),
            seed in any::<u64>(),
        ) {
            let (lo, hi) = kind.domain();
            let span = hi as i64 - lo as i64 + 1;
            let m = AgnosticMatrix::from_fn(rows, cols, |r, c| {
                let x = seed.wrapping_mul(6364136223846793005).wrapping_add(((r * 131 + c) as u64).wrapping_mul(1442695040888963407));
                (lo as i64 + ((x >> 11) as i64).rem_euclid(span)) as i32
            });
            let bm = BlockMatrix::from_matrix(&m, bs, kind).unwrap();
            prop_assert_eq!(bm.block_count(), rows.div_ceil(bs) * cols.div_ceil(bs));
            let padded = matrix_padding(&m, bs);
            prop_assert_eq!(padded.data.iter().map(|&v| v as i64).sum::<i64>(), m.data.iter().map(|&v| v as i64).sum::<i64>());
            let bytes = binarise(&bm).unwrap();
            let back = debinarise(&bytes, kind, bm.grid_rows, bm.grid_cols, bs).unwrap();
            prop_assert_eq!(&back.blocks, &bm.blocks);
            prop_assert_eq!(merge_unpad(&back, rows, cols).unwrap(), m);
        }
    }
}
