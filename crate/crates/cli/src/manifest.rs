//! Job manifests: JSON with explicit shapes, data inline or in raw
//! little-endian files (int8 for INP/WGT/weights/inputs, int32 for ACC/bias).

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;
use vta_core::isa::AluOpcode;
use vta_core::progbuild::{DevicePool, PostOp};
use vta_core::tensorfront::{LayerGeometry, LayerSpec, PoolMode};
use vta_core::{AgnosticMatrix, Tensor4, VtaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    I8,
    I32,
}

/// Values given inline or read from a raw file starting at element `offset`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DataRef {
    File {
        file: PathBuf,
        #[serde(default)]
        offset: usize,
    },
    Values {
        values: Vec<i32>,
    },
}

impl DataRef {
    pub fn load(&self, base: &Path, elem: Element, len: usize) -> Result<Vec<i32>> {
        let values = match self {
            DataRef::Values { values } => values.clone(),
            DataRef::File { file, offset } => {
                let path = base.join(file);
                let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                let (width, start) = match elem {
                    Element::I8 => (1, *offset),
                    Element::I32 => (4, offset * 4),
                };
                let end = start + len * width;
                ensure!(
                    end <= bytes.len(),
                    "{} holds {} bytes, need {} at offset {}",
                    path.display(),
                    bytes.len(),
                    len * width,
                    start
                );
                let bytes = &bytes[start..end];
                match elem {
                    Element::I8 => bytes.iter().map(|&b| b as i8 as i32).collect(),
                    Element::I32 => {
                        bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()
                    }
                }
            }
        };
        ensure!(values.len() == len, "expected {len} values, got {}", values.len());
        if elem == Element::I8 {
            if let Some(v) = values.iter().find(|v| !(-128..=127).contains(*v)) {
                bail!("value {v} is outside the int8 range");
            }
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct MatrixRef {
    pub rows: usize,
    pub cols: usize,
    #[serde(flatten)]
    pub data: DataRef,
}

impl MatrixRef {
    pub fn load(&self, base: &Path, elem: Element, name: &str) -> Result<AgnosticMatrix> {
        ensure!(self.rows > 0 && self.cols > 0, "{name}: shape must be positive");
        let data = self.data.load(base, elem, self.rows * self.cols).with_context(|| format!("operand {name}"))?;
        Ok(AgnosticMatrix::new(self.rows, self.cols, data)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum PostOpSpec {
    Min { imm: Option<i32> },
    Max { imm: Option<i32> },
    Add { imm: Option<i32> },
    Shr { imm: Option<i32> },
    Relu,
    /// Shift right then clip to int8.
    Requant { shift: u32 },
    Pool { mode: PoolMode, window: usize, stride: usize, in_h: usize, in_w: usize },
}

impl PostOpSpec {
    fn lower(&self, out: &mut Vec<PostOp>) {
        let alu = |op, imm| PostOp::Alu { op, imm };
        match *self {
            PostOpSpec::Min { imm } => out.push(alu(AluOpcode::Min, imm)),
            PostOpSpec::Max { imm } => out.push(alu(AluOpcode::Max, imm)),
            PostOpSpec::Add { imm } => out.push(alu(AluOpcode::Add, imm)),
            PostOpSpec::Shr { imm } => out.push(alu(AluOpcode::Shr, imm)),
            PostOpSpec::Relu => out.push(PostOp::relu()),
            PostOpSpec::Requant { shift } => {
                out.push(alu(AluOpcode::Shr, Some(shift as i32)));
                out.push(alu(AluOpcode::Min, Some(127)));
                out.push(alu(AluOpcode::Max, Some(-128)));
            }
            PostOpSpec::Pool { mode, window, stride, in_h, in_w } => {
                out.push(PostOp::Pool(DevicePool { mode, in_h, in_w, window, stride }))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatmulManifest {
    pub a: MatrixRef,
    pub b: MatrixRef,
    #[serde(default)]
    pub x: Option<MatrixRef>,
    #[serde(default)]
    pub post_ops: Vec<PostOpSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LayerManifest {
    pub name: String,
    #[serde(flatten)]
    pub geometry: LayerGeometry,
    pub weights: DataRef,
    #[serde(default)]
    pub bias: Option<DataRef>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TensorRef {
    /// `[n, c, h, w]`
    pub shape: [usize; 4],
    #[serde(flatten)]
    pub data: DataRef,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkManifest {
    pub input: TensorRef,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Job {
    Matmul(MatmulManifest),
    Network(NetworkManifest),
}

#[derive(Debug, Clone, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub config: VtaConfig,
    #[serde(flatten)]
    pub job: Job,
}

/// A matrix job with every reference resolved.
pub struct MatmulInputs {
    pub a: AgnosticMatrix,
    pub b: AgnosticMatrix,
    pub x: Option<AgnosticMatrix>,
    pub post_ops: Vec<PostOp>,
}

impl MatmulManifest {
    pub fn resolve(&self, base: &Path) -> Result<MatmulInputs> {
        let mut post_ops = Vec::new();
        self.post_ops.iter().for_each(|p| p.lower(&mut post_ops));
        Ok(MatmulInputs {
            a: self.a.load(base, Element::I8, "a")?,
            b: self.b.load(base, Element::I8, "b")?,
            x: self.x.as_ref().map(|x| x.load(base, Element::I32, "x")).transpose()?,
            post_ops,
        })
    }
}

impl NetworkManifest {
    pub fn resolve(&self, base: &Path) -> Result<(Vec<LayerSpec>, Tensor4)> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let g = l.geometry;
                let weights = l.weights.load(base, Element::I8, g.weight_len())?;
                let bias = l.bias.as_ref().map(|b| b.load(base, Element::I32, g.out_channels)).transpose()?;
                let spec = LayerSpec { name: l.name.clone(), geometry: g, weights, bias };
                spec.validate()?;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let [n, c, h, w] = self.input.shape;
        ensure!(n * c * h * w > 0, "input shape must be positive");
        let data = self.input.data.load(base, Element::I8, n * c * h * w).context("network input")?;
        Ok((layers, Tensor4::new(n, c, h, w, data)?))
    }
}

pub fn parse(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text)?;
    m.config.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_matmul_with_defaults() {
        let m = parse(
            r#"{"kind":"matmul","a":{"rows":1,"cols":2,"values":[1,2]},"b":{"rows":2,"cols":1,"values":[3,4]},
                "post_ops":[{"op":"relu"},{"op":"requant","shift":3}]}"#,
        )
        .unwrap();
        assert_eq!(m.config, VtaConfig::default());
        let Job::Matmul(job) = m.job else { panic!("kind") };
        let r = job.resolve(Path::new(".")).unwrap();
        assert_eq!(r.post_ops.len(), 4);
        assert_eq!(r.a.data, vec![1, 2]);
    }

    #[test]
    fn config_override_and_bad_values() {
        let m = parse(
            r#"{"config":{"block_size":4},"kind":"matmul","a":{"rows":1,"cols":1,"values":[300]},
                "b":{"rows":1,"cols":1,"values":[1]}}"#,
        )
        .unwrap();
        assert_eq!(m.config.block_size, 4);
        let Job::Matmul(job) = m.job else { panic!("kind") };
        assert!(job.resolve(Path::new(".")).is_err());
        assert!(parse(r#"{"kind":"matmul"}"#).is_err());
        assert!(parse(r#"{"config":{"block_size":3},"kind":"matmul","a":{"rows":1,"cols":1,"values":[1]},"b":{"rows":1,"cols":1,"values":[1]}}"#).is_err());
    }
}
