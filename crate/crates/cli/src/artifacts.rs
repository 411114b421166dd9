//! The five commands and the on-disk artifact set they share.
//!
//! A compiled directory holds `input.bin`, `weight.bin`, `accumulator.bin`,
//! `uop.bin`, `instructions.bin` (each omitted when empty),
//! `expected_out.bin`, `dram_layout.json` (regions and the file slice that
//! initializes each), `config.json` and `program.json`. A network also
//! stores its raw int8 NCHW input batch in `input_tensor.bin`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use vta_core::disasm::disassemble;
use vta_core::dram::LayoutEntry;
use vta_core::funcsim::Simulator;
use vta_core::oracle;
use vta_core::progbuild::{compile_matmul, MatMulJob};
use vta_core::tensorfront::{compile_network, load_input, run_network, NetworkPlan};
use vta_core::{DramImage, DramLayout, Region, RegionKind, RunStats, Tensor4, VtaConfig};

use crate::manifest::{self, Job};
use crate::{read_artifact, write_file, CmdResult, Failure};

const LAYOUT: &str = "dram_layout.json";
const CONFIG: &str = "config.json";
const PROGRAM: &str = "program.json";
const INPUT_TENSOR: &str = "input_tensor.bin";
const EXPECTED: &str = "expected_out.bin";
const OUT: &str = "out.bin";
const STATS: &str = "stats.json";

/// What `run` needs to know beyond the DRAM layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ProgramInfo {
    Matmul { instr_region: String, out_region: String },
    Network { input_shape: [usize; 4], plan: NetworkPlan },
}

fn file_for(kind: RegionKind) -> Option<&'static str> {
    match kind {
        RegionKind::Inp => Some("input.bin"),
        RegionKind::Wgt => Some("weight.bin"),
        RegionKind::Acc => Some("accumulator.bin"),
        RegionKind::Uop => Some("uop.bin"),
        RegionKind::Instr => Some("instructions.bin"),
        RegionKind::Out => None,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Failure::internal)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let bytes = read_artifact(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display())).map_err(Failure::input)
}

/// Writes the file-backed regions of `image` (those `keep` accepts),
/// concatenated per file in allocation order, and returns the layout.
fn write_image(dir: &Path, image: &DramImage, keep: impl Fn(&Region) -> bool) -> Result<DramLayout, Failure> {
    let mut layout = image.layout();
    let mut files: BTreeMap<&'static str, Vec<u8>> = BTreeMap::new();
    for entry in layout.regions.iter_mut() {
        let Some(name) = file_for(entry.region.kind).filter(|_| keep(&entry.region)) else { continue };
        let payload = image.read_region(&entry.region).map_err(Failure::pipeline)?;
        let buf = files.entry(name).or_default();
        entry.file = Some(name.to_string());
        entry.file_offset = buf.len() as u64;
        buf.extend_from_slice(&payload);
    }
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
    }
    write_file(&dir.join(LAYOUT), &to_json(&layout)?)?;
    Ok(layout)
}

/// Rebuilds the DRAM image from the layout and its data files.
fn load_image(dir: &Path) -> Result<(DramImage, DramLayout), Failure> {
    let layout: DramLayout = read_json(&dir.join(LAYOUT))?;
    let mut image = DramImage::from_layout(&layout).map_err(Failure::pipeline)?;
    let mut cache: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for LayoutEntry { region, file, file_offset } in &layout.regions {
        let Some(file) = file else { continue };
        if !cache.contains_key(file) {
            cache.insert(file.clone(), read_artifact(&dir.join(file))?);
        }
        let bytes = &cache[file];
        let start = *file_offset as usize;
        let end = start + region.size_bytes as usize;
        if end > bytes.len() {
            return Err(Failure::input(anyhow!(
                "{file} has {} bytes but region {} needs [{start}, {end})",
                bytes.len(),
                region.name
            )));
        }
        image.write_region(region, &bytes[start..end]).map_err(Failure::pipeline)?;
    }
    Ok((image, layout))
}

pub fn compile(manifest_path: &Path, dir: &Path) -> CmdResult {
    let text = read_artifact(manifest_path)?;
    let text = String::from_utf8(text).map_err(Failure::input)?;
    let manifest = manifest::parse(&text)
        .with_context(|| format!("manifest {}", manifest_path.display()))
        .map_err(Failure::input)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = manifest.config;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::internal)?;

    let (info, expected, summary) = match &manifest.job {
        Job::Matmul(m) => {
            let inputs = m.resolve(base).map_err(Failure::input)?;
            let job = MatMulJob::from_matrices(&inputs.a, &inputs.b, inputs.x.as_ref(), inputs.post_ops.clone(), cfg.block_size)
                .map_err(Failure::pipeline)?;
            let compiled = compile_matmul(job, &cfg).map_err(Failure::pipeline)?;
            let expected = oracle::matmul_job(&inputs.a, &inputs.b, inputs.x.as_ref(), &inputs.post_ops)
                .map_err(Failure::pipeline)?;
            write_image(dir, &compiled.image, |_| true)?;
            let summary = format!(
                "matmul: {} instructions, {} uops, {} tile(s)",
                compiled.program.instructions.len(),
                compiled.program.uops.len(),
                compiled.program.tiles.len()
            );
            let info = ProgramInfo::Matmul {
                instr_region: compiled.regions.instr.name.clone(),
                out_region: compiled.regions.out.name.clone(),
            };
            (info, oracle::out_bytes(&expected, cfg.block_size), summary)
        }
        Job::Network(n) => {
            let (layers, input) = n.resolve(base).map_err(Failure::input)?;
            let mut net = compile_network(&layers, &cfg).map_err(Failure::pipeline)?;
            load_input(&mut net.image, &net.plan.layers[0], &input.image(0), 0, cfg.block_size)
                .map_err(Failure::pipeline)?;
            let first_inp = net.plan.layers[0].inp_region.clone();
            write_image(dir, &net.image, |r| r.kind != RegionKind::Inp || r.name == first_inp)?;
            let raw: Vec<u8> = input.data.iter().map(|&v| v as i8 as u8).collect();
            write_file(&dir.join(INPUT_TENSOR), &raw)?;
            let mut expected = Vec::new();
            for img in 0..input.n {
                let outs = oracle::network(&layers, &input, img).map_err(Failure::pipeline)?;
                expected.extend(outs.last().map(|t| t.data.iter().map(|&v| v as i8 as u8)).into_iter().flatten());
            }
            let summary = format!(
                "network: {} layers, {} host reshape(s) per inference, {} input(s)",
                layers.len(),
                net.plan.reshape_count(),
                input.n
            );
            (ProgramInfo::Network { input_shape: [input.n, input.c, input.h, input.w], plan: net.plan }, expected, summary)
        }
    };
    write_file(&dir.join(EXPECTED), &expected)?;
    write_file(&dir.join(CONFIG), &to_json(&cfg)?)?;
    write_file(&dir.join(PROGRAM), &to_json(&info)?)?;
    println!("compiled {summary} -> {}", dir.display());
    Ok(0)
}

#[derive(Serialize)]
struct LayerStats<'a> {
    name: &'a str,
    #[serde(flatten)]
    stats: RunStats,
}

#[derive(Serialize)]
struct NetworkStats<'a> {
    /// Summed over every inference.
    #[serde(flatten)]
    total: RunStats,
    inferences: usize,
    reshapes_per_inference: usize,
    /// Per layer, first inference.
    layers: Vec<LayerStats<'a>>,
}

fn sim_failure(sim: &Simulator, error: impl std::fmt::Display) -> Failure {
    let trace = sim.trace();
    let tail = trace[trace.len().saturating_sub(10)..].join("\n");
    Failure::internal(anyhow!("simulator: {error}\ntrace tail:\n{tail}"))
}

pub fn run(dir: &Path, trace: Option<&Path>, strict_deps: bool) -> CmdResult {
    let cfg: VtaConfig = read_json(&dir.join(CONFIG))?;
    let info: ProgramInfo = read_json(&dir.join(PROGRAM))?;
    let (mut image, _) = load_image(dir)?;
    let mut sim = Simulator::new(&cfg).map_err(Failure::pipeline)?.strict_deps(strict_deps).with_trace();

    let (out, stats_json, summary) = match &info {
        ProgramInfo::Matmul { instr_region, out_region } => {
            let region = |name: &str| {
                image.region(name).cloned().ok_or_else(|| Failure::input(anyhow!("region {name} not in layout")))
            };
            let (instr, out) = (region(instr_region)?, region(out_region)?);
            let result = sim.run(&mut image, &instr);
            dump_trace(trace, &sim)?;
            let stats = result.map_err(|e| sim_failure(&sim, e))?;
            let bytes = image.read_region(&out).map_err(Failure::pipeline)?;
            (bytes, to_json(&stats)?, format!("gemm_loop_count={}", stats.gemm_loop_count))
        }
        ProgramInfo::Network { input_shape: [n, c, h, w], plan } => {
            let raw = read_artifact(&dir.join(INPUT_TENSOR))?;
            let data = raw.iter().map(|&b| b as i8 as i32).collect();
            let input = Tensor4::new(*n, *c, *h, *w, data).map_err(Failure::input)?;
            let result = run_network(&mut image, plan, &input, &mut sim);
            dump_trace(trace, &sim)?;
            let runs = result.map_err(|e| sim_failure(&sim, e))?;
            let mut total = RunStats::default();
            runs.iter().flat_map(|r| &r.stats).for_each(|s| total.accumulate(s));
            let out: Vec<u8> = runs
                .iter()
                .flat_map(|r| r.outputs.last().map(|t| t.data.clone()).unwrap_or_default())
                .map(|v| v as i8 as u8)
                .collect();
            let layers = plan
                .layers
                .iter()
                .zip(runs.first().map(|r| r.stats.clone()).unwrap_or_default())
                .map(|(l, stats)| LayerStats { name: &l.name, stats })
                .collect();
            let per_inference: u64 =
                runs.first().map(|r| r.stats.iter().map(|s| s.gemm_loop_count).sum()).unwrap_or(0);
            let report = NetworkStats {
                total,
                inferences: runs.len(),
                reshapes_per_inference: plan.reshape_count(),
                layers,
            };
            (out, to_json(&report)?, format!("{} inference(s), gemm_loop_count per inference={per_inference}", runs.len()))
        }
    };
    write_file(&dir.join(OUT), &out)?;
    write_file(&dir.join(STATS), &stats_json)?;
    println!("ran {summary} -> {}", dir.join(OUT).display());
    Ok(0)
}

fn dump_trace(path: Option<&Path>, sim: &Simulator) -> Result<(), Failure> {
    let Some(path) = path else { return Ok(()) };
    let mut text = sim.trace().join("\n");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn verify(dir: &Path) -> CmdResult {
    let expected = read_artifact(&dir.join(EXPECTED))?;
    let out = read_artifact(&dir.join(OUT))?;
    let diverge = expected.iter().zip(&out).position(|(a, b)| a != b).or_else(|| {
        (expected.len() != out.len()).then(|| expected.len().min(out.len()))
    });
    match diverge {
        None => {
            println!("PASS");
            Ok(0)
        }
        Some(offset) => {
            println!("FAIL at offset {offset}");
            Ok(1)
        }
    }
}

pub fn disasm(path: &Path) -> CmdResult {
    if !path.is_dir() {
        let bytes = read_artifact(path)?;
        let is_uop = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.contains("uop"));
        let text = if is_uop { disassemble(&[], &bytes, None) } else { disassemble(&bytes, &[], None) };
        print!("{}", text.map_err(Failure::input)?);
        return Ok(0);
    }
    let (image, layout) = load_image(path)?;
    let of_kind = |kind| layout.regions.iter().map(|e| &e.region).filter(move |r| r.kind == kind);
    let instrs: Vec<&Region> = of_kind(RegionKind::Instr).collect();
    let uops: Vec<&Region> = of_kind(RegionKind::Uop).collect();
    let mut text = String::new();
    for (k, instr) in instrs.iter().enumerate() {
        if instrs.len() > 1 {
            let _ = writeln!(text, "#### {}", instr.name);
        }
        let instr_bytes = image.read_region(instr).map_err(Failure::pipeline)?;
        let (uop_bytes, base) = match uops.get(k) {
            Some(u) => (image.read_region(u).map_err(Failure::pipeline)?, Some(u.log_start as u32)),
            None => (Vec::new(), None),
        };
        text.push_str(&disassemble(&instr_bytes, &uop_bytes, base).map_err(Failure::input)?);
    }
    print!("{text}");
    Ok(0)
}

pub fn inspect(dir: &Path) -> CmdResult {
    let (image, layout) = load_image(dir)?;
    let bs = layout.block_size;
    println!(
        "dram offset={:#x} capacity={:#x} page={} block_size={bs} regions={}",
        layout.offset,
        layout.capacity,
        layout.page_bytes,
        layout.regions.len()
    );
    for e in &layout.regions {
        let r = &e.region;
        let structure = r.kind.structure_bytes(bs);
        println!(
            "{:<14} {:<5} phy=[{:#07x}, {:#07x}) size={:<7} log=@{:04X} (= ({:#x} - {:#x}) / {structure}) file={}",
            r.name,
            r.kind.name(),
            r.phy_start,
            r.phy_end(),
            r.size_bytes,
            r.log_start,
            r.phy_start,
            layout.offset,
            e.file.as_ref().map(|f| format!("{f}+{}", e.file_offset)).unwrap_or_else(|| "-".into())
        );
        let head = image.read(r.phy_start, (r.size_bytes as usize).min(32)).map_err(Failure::pipeline)?;
        for (row, chunk) in head.chunks(16).enumerate() {
            let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
            println!("    {:07x}  {}", r.phy_start as usize + row * 16, hex.join(" "));
        }
    }
    Ok(0)
}
