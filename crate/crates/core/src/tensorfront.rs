//! Tensor front end: lowers convolution and fully-connected layers to
//! matrix multiplications and chains layers into a network.
//!
//! A convolution becomes `im2row(input) × ker2col(weights) + bias`, whose
//! rows are output positions (`oy·OW + ox`) and whose columns are output
//! channels. Patch columns are channel-major: `c·K·K + ky·K + kx`.
//!
//! Layers run one after another on the same simulator. Between layers the
//! host decodes the OUT region, rebuilds a tensor and writes the next INP
//! region, unless the next INP region can simply alias the previous OUT
//! region (a fully-connected layer fed by a single-row result).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{binarise, debinarise, merge_unpad, AgnosticMatrix, BlockError, BlockMatrix, MatrixKind};
use crate::config::VtaConfig;
use crate::dram::{DramError, DramImage, Region, RegionKind};
use crate::funcsim::{RunStats, SimError, Simulator};
use crate::isa::{encode_program, AluOpcode, IsaError};
use crate::progbuild::{compile_matmul, relink, BuildError, CompiledMatMul, DevicePool, MatMulJob, Placement, PostOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {layer}: {source}")]
    Build { layer: String, source: BuildError },
    #[error(transparent)]
    Blocks(#[from] BlockError),
    #[error(transparent)]
    Dram(#[from] DramError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("layer {layer}: {source}")]
    Sim { layer: String, source: SimError },
}

fn shape<T>(msg: String) -> Result<T, TensorError> {
    Err(TensorError::Shape(msg))
}

/// Dense NCHW tensor of integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<i32>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<i32>) -> Result<Self, TensorError> {
        if data.len() != n * c * h * w {
            return shape(format!("{} values for a {n}x{c}x{h}x{w} tensor", data.len()));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { n, c, h, w, data: vec![0; n * c * h * w] }
    }

    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> i32,
    ) -> Self {
        let mut t = Tensor4::zeros(n, c, h, w);
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let idx = t.index(i, ch, y, x);
                        t.data[idx] = f(i, ch, y, x);
                    }
                }
            }
        }
        t
    }

    fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> i32 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: i32) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `i`-th image as a batch of one.
    pub fn image(&self, i: usize) -> Tensor4 {
        let len = self.c * self.h * self.w;
        Tensor4 { n: 1, c: self.c, h: self.h, w: self.w, data: self.data[i * len..(i + 1) * len].to_vec() }
    }

    /// Concatenates single images into a batch.
    pub fn stack(images: &[Tensor4]) -> Result<Tensor4, TensorError> {
        let Some(first) = images.first() else { return shape("empty batch".into()) };
        let mut data = Vec::new();
        for t in images {
            if (t.c, t.h, t.w) != (first.c, first.h, first.w) {
                return shape("images of different shapes".into());
            }
            data.extend_from_slice(&t.data);
        }
        Tensor4::new(data.len() / (first.c * first.h * first.w).max(1), first.c, first.h, first.w, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Where pooling runs: on the host after decoding OUT, or on the
/// accelerator before the store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolPlacement {
    #[default]
    Host,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
    #[serde(default)]
    pub placement: PoolPlacement,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Fc,
}

/// Everything about a layer except its parameters.
///
/// The input is `in_channels × in_h × in_w`; a fully-connected layer
/// flattens it in channel-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub in_channels: usize,
    #[serde(default = "one")]
    pub in_h: usize,
    #[serde(default = "one")]
    pub in_w: usize,
    pub out_channels: usize,
    /// Arithmetic right shift then clip to the int8 range.
    #[serde(default)]
    pub requant_shift: Option<u32>,
    #[serde(default)]
    pub relu: bool,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

impl LayerGeometry {
    pub fn in_features(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Spatial size of the GEMM result (before pooling).
    pub fn conv_out_dims(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { kernel, stride, pad } => {
                ((self.in_h + 2 * pad - kernel) / stride + 1, (self.in_w + 2 * pad - kernel) / stride + 1)
            }
            LayerKind::Fc => (1, 1),
        }
    }

    /// Output tensor shape `(c, h, w)`.
    pub fn out_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.conv_out_dims();
        match self.pool {
            Some(p) => (self.out_channels, (h - p.window) / p.stride + 1, (w - p.window) / p.stride + 1),
            None => (self.out_channels, h, w),
        }
    }

    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => self.out_channels * self.in_channels * kernel * kernel,
            LayerKind::Fc => self.out_channels * self.in_features(),
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.in_channels == 0 || self.out_channels == 0 || self.in_h == 0 || self.in_w == 0 {
            return shape("layer dimensions must be positive".into());
        }
        if let LayerKind::Conv { kernel, stride, pad } = self.kind {
            if kernel == 0 || stride == 0 || kernel > self.in_h + 2 * pad || kernel > self.in_w + 2 * pad {
                return shape(format!("kernel {kernel} stride {stride} pad {pad} on {}x{}", self.in_h, self.in_w));
            }
        }
        if let Some(s) = self.requant_shift {
            if s > 31 {
                return shape(format!("requant shift {s} exceeds 31"));
            }
        }
        if let Some(p) = self.pool {
            let (h, w) = self.conv_out_dims();
            if p.window == 0 || p.stride == 0 || p.window > h || p.window > w {
                return shape(format!("pool window {} stride {} on {h}x{w}", p.window, p.stride));
            }
        }
        Ok(())
    }

    /// ALU post-ops: requantisation, clip, ReLU, then device pooling.
    pub fn post_ops(&self) -> Vec<PostOp> {
        let mut ops = Vec::new();
        if let Some(s) = self.requant_shift {
            ops.push(PostOp::Alu { op: AluOpcode::Shr, imm: Some(s as i32) });
            ops.push(PostOp::Alu { op: AluOpcode::Min, imm: Some(127) });
            ops.push(PostOp::Alu { op: AluOpcode::Max, imm: Some(-128) });
        }
        if self.relu {
            ops.push(PostOp::relu());
        }
        if let Some(p) = self.pool.filter(|p| p.placement == PoolPlacement::Device) {
            let (in_h, in_w) = self.conv_out_dims();
            ops.push(PostOp::Pool(DevicePool { mode: p.mode, in_h, in_w, window: p.window, stride: p.stride }));
        }
        ops
    }
}

/// A layer with its parameters. Conv weights are `OC × IC × K × K`,
/// fully-connected weights `OUT × IN`, both flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub geometry: LayerGeometry,
    pub weights: Vec<i32>,
    #[serde(default)]
    pub bias: Option<Vec<i32>>,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), TensorError> {
        self.geometry.validate()?;
        if self.weights.len() != self.geometry.weight_len() {
            return shape(format!(
                "layer {}: {} weights, expected {}",
                self.name,
                self.weights.len(),
                self.geometry.weight_len()
            ));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.geometry.out_channels {
                return shape(format!("layer {}: {} biases for {} outputs", self.name, b.len(), self.geometry.out_channels));
            }
        }
        Ok(())
    }
}

/// Unrolls every receptive field of image `img` into a row (zero padding).
pub fn im2row(t: &Tensor4, img: usize, kernel: usize, stride: usize, pad: usize) -> AgnosticMatrix {
    let oh = (t.h + 2 * pad - kernel) / stride + 1;
    let ow = (t.w + 2 * pad - kernel) / stride + 1;
    let kk = kernel * kernel;
    AgnosticMatrix::from_fn(oh * ow, t.c * kk, |row, col| {
        let (oy, ox) = (row / ow, row % ow);
        let (c, ky, kx) = (col / kk, (col % kk) / kernel, col % kernel);
        let y = (oy * stride + ky) as isize - pad as isize;
        let x = (ox * stride + kx) as isize - pad as isize;
        if y < 0 || x < 0 || y >= t.h as isize || x >= t.w as isize {
            0
        } else {
            t.get(img, c, y as usize, x as usize)
        }
    })
}

/// `OC × IC × K × K` kernels as a `(IC·K·K) × OC` matrix, one column per kernel.
pub fn ker2col(weights: &[i32], out_channels: usize, in_channels: usize, kernel: usize) -> AgnosticMatrix {
    let patch = in_channels * kernel * kernel;
    AgnosticMatrix::from_fn(patch, out_channels, |r, oc| weights[oc * patch + r])
}

/// Rows of spatial positions and columns of channels back to a tensor.
pub fn mat2tensor(m: &AgnosticMatrix, h: usize, w: usize) -> Result<Tensor4, TensorError> {
    if m.rows != h * w {
        return shape(format!("{} rows cannot form {h}x{w}", m.rows));
    }
    Ok(Tensor4::from_fn(1, m.cols, h, w, |_, c, y, x| m.get(y * w + x, c)))
}

/// Pooling on the host; average is a floor division.
pub fn host_pool(t: &Tensor4, mode: PoolMode, window: usize, stride: usize) -> Tensor4 {
    let oh = (t.h - window) / stride + 1;
    let ow = (t.w - window) / stride + 1;
    let area = (window * window) as i64;
    Tensor4::from_fn(t.n, t.c, oh, ow, |n, c, y, x| {
        let values = (0..window)
            .flat_map(|wy| (0..window).map(move |wx| (wy, wx)))
            .map(|(wy, wx)| t.get(n, c, y * stride + wy, x * stride + wx));
        match mode {
            PoolMode::Max => values.max().unwrap_or(0),
            PoolMode::Avg => values.map(i64::from).sum::<i64>().div_euclid(area) as i32,
        }
    })
}

/// The INP matrix a layer reads for image `img` of `input`.
pub fn layer_input_matrix(g: &LayerGeometry, input: &Tensor4, img: usize) -> Result<AgnosticMatrix, TensorError> {
    let fits = match g.kind {
        LayerKind::Conv { .. } => (input.c, input.h, input.w) == (g.in_channels, g.in_h, g.in_w),
        LayerKind::Fc => input.c * input.h * input.w == g.in_features(),
    };
    if !fits {
        return shape(format!(
            "input {}x{}x{} but layer expects {}x{}x{}",
            input.c, input.h, input.w, g.in_channels, g.in_h, g.in_w
        ));
    }
    Ok(match g.kind {
        LayerKind::Conv { kernel, stride, pad } => im2row(input, img, kernel, stride, pad),
        LayerKind::Fc => {
            let len = g.in_features();
            AgnosticMatrix::from_fn(1, len, |_, i| input.data[img * len + i])
        }
    })
}

fn weight_matrix(spec: &LayerSpec) -> AgnosticMatrix {
    let g = &spec.geometry;
    match g.kind {
        LayerKind::Conv { kernel, .. } => ker2col(&spec.weights, g.out_channels, g.in_channels, kernel),
        LayerKind::Fc => {
            let n = g.in_features();
            AgnosticMatrix::from_fn(n, g.out_channels, |i, o| spec.weights[o * n + i])
        }
    }
}

/// Lowers a layer to a matrix job for a given input tensor (image `img`).
pub fn layer_job(spec: &LayerSpec, input: &Tensor4, img: usize, block_size: usize) -> Result<MatMulJob, TensorError> {
    spec.validate()?;
    let a = layer_input_matrix(&spec.geometry, input, img)?;
    let b = weight_matrix(spec);
    let x = spec.bias.as_ref().map(|bias| AgnosticMatrix::from_fn(a.rows, bias.len(), |_, c| bias[c]));
    MatMulJob::from_matrices(&a, &b, x.as_ref(), spec.geometry.post_ops(), block_size)
        .map_err(|source| TensorError::Build { layer: spec.name.clone(), source })
}

/// Compiles a layer against an all-zero input; the program does not
/// depend on input values, so inputs are written later.
pub fn compile_layer(spec: &LayerSpec, cfg: &VtaConfig) -> Result<CompiledMatMul, TensorError> {
    let g = &spec.geometry;
    let zero = Tensor4::zeros(1, g.in_channels, g.in_h, g.in_w);
    let job = layer_job(spec, &zero, 0, cfg.block_size)?;
    compile_matmul(job, cfg).map_err(|source| TensorError::Build { layer: spec.name.clone(), source })
}

/// Decoded OUT matrix of a layer to its output tensor (host pooling applied).
pub fn layer_output_tensor(g: &LayerGeometry, out: &AgnosticMatrix) -> Result<Tensor4, TensorError> {
    let (h, w) = g.conv_out_dims();
    match g.pool {
        Some(p) if p.placement == PoolPlacement::Device => {
            let (_, oh, ow) = g.out_shape();
            mat2tensor(out, oh, ow)
        }
        Some(p) => Ok(host_pool(&mat2tensor(out, h, w)?, p.mode, p.window, p.stride)),
        None => match g.kind {
            LayerKind::Fc => Tensor4::new(1, out.cols, 1, 1, out.data.clone()),
            LayerKind::Conv { .. } => mat2tensor(out, h, w),
        },
    }
}

/// How a layer obtains its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// The host writes the INP region before the run.
    Host,
    /// The INP region is the previous layer's OUT region.
    Alias,
}

/// Per-layer bookkeeping of a compiled network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub name: String,
    pub geometry: LayerGeometry,
    pub input: InputSource,
    pub inp_region: String,
    pub out_region: String,
    pub instr_region: String,
    /// Grid and unpadded shape of the OUT result.
    pub out_grid: (usize, usize),
    pub out_dims: (usize, usize),
    /// Grid of the INP operand.
    pub inp_grid: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub block_size: usize,
    pub layers: Vec<LayerPlan>,
}

impl NetworkPlan {
    /// Host reshape steps per inference.
    pub fn reshape_count(&self) -> usize {
        self.layers.iter().skip(1).filter(|l| l.input == InputSource::Host).count()
    }
}

/// All layers linked into one DRAM image.
#[derive(Debug, Clone)]
pub struct CompiledNetwork {
    pub plan: NetworkPlan,
    pub image: DramImage,
    pub layers: Vec<CompiledMatMul>,
}

fn can_alias(prev: &LayerGeometry, prev_dims: (usize, usize), next: &LayerGeometry) -> bool {
    next.kind == LayerKind::Fc
        && prev.pool.map_or(true, |p| p.placement == PoolPlacement::Device)
        && prev_dims == (1, next.in_features())
}

/// Compiles each layer, then links them into one image. Regions are laid
/// out kind by kind (all INP, all WGT, …) and every LOAD/STORE is relinked
/// to its global address.
pub fn compile_network(layers: &[LayerSpec], cfg: &VtaConfig) -> Result<CompiledNetwork, TensorError> {
    if layers.is_empty() {
        return shape("network has no layers".into());
    }
    for pair in layers.windows(2) {
        let (prev, next) = (&pair[0].geometry, &pair[1].geometry);
        let (c, h, w) = prev.out_shape();
        let expect = match next.kind {
            LayerKind::Conv { .. } => (next.in_channels, next.in_h, next.in_w),
            LayerKind::Fc => (c, h, w),
        };
        if (c, h, w) != expect || c * h * w != next.in_features() {
            return shape(format!(
                "layer {} outputs {c}x{h}x{w} but {} expects {}x{}x{}",
                pair[0].name, pair[1].name, next.in_channels, next.in_h, next.in_w
            ));
        }
    }
    let compiled: Vec<CompiledMatMul> = layers.iter().map(|l| compile_layer(l, cfg)).collect::<Result<_, _>>()?;
    let alias: Vec<bool> = (0..layers.len())
        .map(|k| k > 0 && can_alias(&layers[k - 1].geometry, compiled[k - 1].out_dims(), &layers[k].geometry))
        .collect();

    let mut image = DramImage::new(cfg, 0)?;
    let mut inp: Vec<Option<Region>> = vec![None; layers.len()];
    for (k, c) in compiled.iter().enumerate() {
        if !alias[k] {
            inp[k] = Some(image.allocate(format!("{}.inp", layers[k].name), c.regions.inp.size_bytes, RegionKind::Inp)?);
        }
    }
    let mut wgt = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        wgt.push(image.allocate(format!("{}.wgt", layers[k].name), c.regions.wgt.size_bytes, RegionKind::Wgt)?);
    }
    let mut acc = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        acc.push(match &c.regions.acc {
            Some(r) => Some(image.allocate(format!("{}.acc", layers[k].name), r.size_bytes, RegionKind::Acc)?),
            None => None,
        });
    }
    let mut out = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        out.push(image.allocate(format!("{}.out", layers[k].name), c.regions.out.size_bytes, RegionKind::Out)?);
    }
    let mut uop = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        uop.push(image.allocate(format!("{}.uop", layers[k].name), c.regions.uop.size_bytes, RegionKind::Uop)?);
    }
    let mut instr = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        instr.push(image.allocate(format!("{}.instr", layers[k].name), c.regions.instr.size_bytes, RegionKind::Instr)?);
    }

    let mut plans = Vec::new();
    for (k, c) in compiled.iter().enumerate() {
        if let Some(prev) = k.checked_sub(1).filter(|_| alias[k]) {
            if out[prev].size_bytes != c.regions.inp.size_bytes {
                return shape(format!("layer {}: aliased INP size differs from previous OUT", layers[k].name));
            }
        }
        let inp_region = match &inp[k] {
            Some(r) => r.clone(),
            None => out[k - 1].clone(),
        };
        let global = Placement {
            inp: inp_region.log_start as u32,
            wgt: wgt[k].log_start as u32,
            acc: acc[k].as_ref().map_or(0, |r| r.log_start as u32),
            out: out[k].log_start as u32,
            uop: uop[k].log_start as u32,
        };
        let instrs = relink(&c.program.instructions, &c.placement, &global);
        image.write_region(&instr[k], &encode_program(&instrs)?)?;
        image.write_region(&uop[k], &c.uop_bytes)?;
        image.write_region(&wgt[k], &c.wgt_bytes)?;
        if let (Some(r), Some(bytes)) = (&acc[k], &c.acc_bytes) {
            image.write_region(r, bytes)?;
        }
        plans.push(LayerPlan {
            name: layers[k].name.clone(),
            geometry: layers[k].geometry,
            input: if alias[k] { InputSource::Alias } else { InputSource::Host },
            inp_region: inp_region.name.clone(),
            out_region: out[k].name.clone(),
            instr_region: instr[k].name.clone(),
            out_grid: c.out_grid(),
            out_dims: c.out_dims(),
            inp_grid: (c.job.alpha(), c.job.lambda()),
        });
    }
    Ok(CompiledNetwork { plan: NetworkPlan { block_size: cfg.block_size, layers: plans }, image, layers: compiled })
}

/// Writes the INP operand of layer `plan` for image `img` into its region.
pub fn load_input(
    image: &mut DramImage,
    plan: &LayerPlan,
    input: &Tensor4,
    img: usize,
    block_size: usize,
) -> Result<(), TensorError> {
    let m = layer_input_matrix(&plan.geometry, input, img)?;
    let bm = BlockMatrix::from_matrix(&m, block_size, MatrixKind::Inp)?;
    if (bm.grid_rows, bm.grid_cols) != plan.inp_grid {
        return shape(format!("layer {}: input grid differs from the compiled one", plan.name));
    }
    let region = image.region(&plan.inp_region).cloned().ok_or_else(|| DramError::Unallocated(plan.inp_region.clone()))?;
    image.write_region(&region, &binarise(&bm)?)?;
    Ok(())
}

/// Decodes a layer's OUT region into its unpadded result matrix.
pub fn read_output(image: &DramImage, plan: &LayerPlan, block_size: usize) -> Result<AgnosticMatrix, TensorError> {
    let region = image.region(&plan.out_region).ok_or_else(|| DramError::Unallocated(plan.out_region.clone()))?;
    let bytes = image.read_region(region)?;
    let bm = debinarise(&bytes, MatrixKind::Out, plan.out_grid.0, plan.out_grid.1, block_size)?;
    Ok(merge_unpad(&bm, plan.out_dims.0, plan.out_dims.1)?)
}

/// Result of one inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkRun {
    /// Output tensor of every layer, in order.
    pub outputs: Vec<Tensor4>,
    pub stats: Vec<RunStats>,
    pub reshapes: usize,
}

/// Runs every image of `input` through the network, one at a time.
pub fn run_network(
    image: &mut DramImage,
    plan: &NetworkPlan,
    input: &Tensor4,
    sim: &mut Simulator,
) -> Result<Vec<NetworkRun>, TensorError> {
    (0..input.n).map(|img| run_network_image(image, plan, &input.image(img), sim)).collect()
}

fn run_network_image(
    image: &mut DramImage,
    plan: &NetworkPlan,
    input: &Tensor4,
    sim: &mut Simulator,
) -> Result<NetworkRun, TensorError> {
    let bs = plan.block_size;
    let mut current = input.clone();
    let mut run = NetworkRun { outputs: Vec::new(), stats: Vec::new(), reshapes: 0 };
    for (k, layer) in plan.layers.iter().enumerate() {
        if layer.input == InputSource::Host {
            load_input(image, layer, &current, 0, bs)?;
            run.reshapes += (k > 0) as usize;
        }
        let instr = image
            .region(&layer.instr_region)
            .cloned()
            .ok_or_else(|| DramError::Unallocated(layer.instr_region.clone()))?;
        let stats = sim.run(image, &instr).map_err(|source| TensorError::Sim { layer: layer.name.clone(), source })?;
        run.stats.push(stats);
        let out = read_output(image, layer, bs)?;
        current = layer_output_tensor(&layer.geometry, &out)?;
        run.outputs.push(current.clone());
    }
    Ok(run)
}

/// LeNet-5 on a 1×32×32 input: two 5×5 convolutions with ReLU and device
/// average pooling, a 5×5 convolution to 120 channels with ReLU, a
/// fully-connected layer with ReLU and a 10-class fully-connected output.
/// Every layer requantises to int8. Parameters are drawn from `weight`
/// and `bias` in layer order.
pub fn lenet5(mut weight: impl FnMut() -> i32, mut bias: impl FnMut() -> i32) -> Vec<LayerSpec> {
    let pool = Some(PoolSpec { mode: PoolMode::Avg, window: 2, stride: 2, placement: PoolPlacement::Device });
    let conv = |in_channels, in_h, out_channels, shift, pool| LayerGeometry {
        kind: LayerKind::Conv { kernel: 5, stride: 1, pad: 0 },
        in_channels,
        in_h,
        in_w: in_h,
        out_channels,
        requant_shift: Some(shift),
        relu: true,
        pool,
    };
    let fc = |in_channels, out_channels, shift, relu| LayerGeometry {
        kind: LayerKind::Fc,
        in_channels,
        in_h: 1,
        in_w: 1,
        out_channels,
        requant_shift: Some(shift),
        relu,
        pool: None,
    };
    let geometries = [
        ("conv1", conv(1, 32, 6, 6, pool)),
        ("conv2", conv(6, 14, 16, 8, pool)),
        ("conv3", conv(16, 5, 120, 8, None)),
        ("fc1", fc(120, 84, 7, true)),
        ("fc2", fc(84, 10, 7, false)),
    ];
    geometries
        .into_iter()
        .map(|(name, geometry)| LayerSpec {
            name: name.to_string(),
            geometry,
            weights: (0..geometry.weight_len()).map(|_| weight()).collect(),
            bias: Some((0..geometry.out_channels).map(|_| bias()).collect()),
        })
        .collect()
}
