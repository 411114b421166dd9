//! DRAM model: page-granular arena allocation and the mapping between
//! physical byte addresses and logical (structure) addresses.
//!
//! A logical address indexes whole structures of one kind:
//! `log = (phy - offset) / (precision * nb_elem)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::VtaConfig;
use crate::isa::BufferId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DramError {
    #[error("out of DRAM capacity: requested {requested} bytes at {at:#x}, region ends at {end:#x}")]
    OutOfCapacity { requested: u64, at: u64, end: u64 },
    #[error("physical address {phy:#x} below region offset {offset:#x}")]
    Underflow { phy: u64, offset: u64 },
    #[error("structure size must be non-zero")]
    ZeroStructure,
    #[error("address overflow computing logical address {log:#x}")]
    Overflow { log: u64 },
    #[error("payload of {payload} bytes does not fit region {name} of {size} bytes")]
    SizeMismatch { name: String, payload: usize, size: u64 },
    #[error("region {0} is not allocated in this image")]
    Unallocated(String),
    #[error("access [{start:#x}, {end:#x}) outside DRAM [{lo:#x}, {hi:#x})")]
    OutOfRange { start: u64, end: u64, lo: u64, hi: u64 },
    #[error("offset {0:#x} is not page aligned")]
    UnalignedOffset(u64),
    #[error("layout region {name} is inconsistent: {why}")]
    BadLayout { name: String, why: &'static str },
}

/// Kind of data held by a DRAM region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegionKind {
    Inp,
    Wgt,
    Acc,
    Out,
    Uop,
    Instr,
}

impl RegionKind {
    /// Allocation order used by the compiler.
    pub const ORDER: [RegionKind; 6] = [
        RegionKind::Inp,
        RegionKind::Wgt,
        RegionKind::Acc,
        RegionKind::Out,
        RegionKind::Uop,
        RegionKind::Instr,
    ];

    /// Bytes per element.
    pub fn precision(self) -> u64 {
        match self {
            RegionKind::Inp | RegionKind::Wgt | RegionKind::Out => 1,
            RegionKind::Acc | RegionKind::Uop => 4,
            RegionKind::Instr => 16,
        }
    }

    /// Elements per structure.
    pub fn nb_elem(self, block_size: usize) -> u64 {
        let bs = block_size as u64;
        match self {
            RegionKind::Inp | RegionKind::Acc | RegionKind::Out => bs,
            RegionKind::Wgt => bs * bs,
            RegionKind::Uop | RegionKind::Instr => 1,
        }
    }

    pub fn structure_bytes(self, block_size: usize) -> u64 {
        self.precision() * self.nb_elem(block_size)
    }

    pub fn from_buffer(b: BufferId) -> Self {
        match b {
            BufferId::Uop => RegionKind::Uop,
            BufferId::Wgt => RegionKind::Wgt,
            BufferId::Inp => RegionKind::Inp,
            BufferId::Acc => RegionKind::Acc,
            BufferId::Out => RegionKind::Out,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionKind::Inp => "INP",
            RegionKind::Wgt => "WGT",
            RegionKind::Acc => "ACC",
            RegionKind::Out => "OUT",
            RegionKind::Uop => "UOP",
            RegionKind::Instr => "INSTR",
        }
    }
}

impl std::fmt::Display for RegionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn phys_to_logical(phy: u64, offset: u64, precision: u64, nb_elem: u64) -> Result<u64, DramError> {
    let structure = precision.checked_mul(nb_elem).filter(|&s| s > 0).ok_or(DramError::ZeroStructure)?;
    let rel = phy.checked_sub(offset).ok_or(DramError::Underflow { phy, offset })?;
    Ok(rel / structure)
}

pub fn logical_to_phys(log: u64, offset: u64, precision: u64, nb_elem: u64) -> Result<u64, DramError> {
    log.checked_mul(precision)
        .and_then(|v| v.checked_mul(nb_elem))
        .and_then(|v| v.checked_add(offset))
        .ok_or(DramError::Overflow { log })
}

/// A contiguous allocation inside a [`DramImage`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub kind: RegionKind,
    pub phy_start: u64,
    pub size_bytes: u64,
    pub log_start: u64,
}

impl Region {
    pub fn phy_end(&self) -> u64 {
        self.phy_start + self.size_bytes
    }

    /// Whole structures held by the region.
    pub fn structures(&self, block_size: usize) -> u64 {
        self.size_bytes / self.kind.structure_bytes(block_size)
    }
}

/// Byte-addressable DRAM region assigned to the accelerator.
///
/// Bytes are zero until written. The backing store grows with the
/// allocation cursor, so a large capacity costs nothing until used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DramImage {
    offset: u64,
    capacity: u64,
    page_bytes: u64,
    block_size: usize,
    bytes: Vec<u8>,
    alloc_cursor: u64,
    regions: Vec<Region>,
}

impl DramImage {
    pub fn new(cfg: &VtaConfig, offset: u64) -> Result<Self, DramError> {
        let page = cfg.page_bytes as u64;
        if offset % page != 0 {
            return Err(DramError::UnalignedOffset(offset));
        }
        Ok(DramImage {
            offset,
            capacity: cfg.dram_bytes as u64,
            page_bytes: page,
            block_size: cfg.block_size,
            bytes: Vec::new(),
            alloc_cursor: offset,
            regions: Vec::new(),
        })
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn alloc_cursor(&self) -> u64 {
        self.alloc_cursor
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    /// Allocates `size_bytes` starting on a fresh page.
    ///
    /// The cursor is rounded up to the next page boundary; the page at
    /// `offset` itself is never handed out, so the first allocation of a
    /// fresh image starts one page in.
    pub fn allocate(&mut self, name: impl Into<String>, size_bytes: u64, kind: RegionKind) -> Result<Region, DramError> {
        let page = self.page_bytes;
        let mut start = self.alloc_cursor.div_ceil(page) * page;
        if start == self.offset {
            start += page;
        }
        let end = self.offset + self.capacity;
        if start.checked_add(size_bytes).map_or(true, |e| e > end) {
            return Err(DramError::OutOfCapacity { requested: size_bytes, at: start, end });
        }
        let log_start = phys_to_logical(start, self.offset, kind.precision(), kind.nb_elem(self.block_size))?;
        let region = Region { name: name.into(), kind, phy_start: start, size_bytes, log_start };
        self.alloc_cursor = start + size_bytes;
        self.regions.push(region.clone());
        Ok(region)
    }

    /// Physical address of logical structure `log` of `kind`.
    pub fn logical_to_phys(&self, log: u64, kind: RegionKind) -> Result<u64, DramError> {
        let phy = logical_to_phys(log, self.offset, kind.precision(), kind.nb_elem(self.block_size))?;
        if phy >= self.offset + self.capacity {
            return Err(DramError::Overflow { log });
        }
        Ok(phy)
    }

    pub fn phys_to_logical(&self, phy: u64, kind: RegionKind) -> Result<u64, DramError> {
        phys_to_logical(phy, self.offset, kind.precision(), kind.nb_elem(self.block_size))
    }

    fn check_range(&self, start: u64, len: u64) -> Result<(), DramError> {
        let (lo, hi) = (self.offset, self.offset + self.capacity);
        let end = start.saturating_add(len);
        if start < lo || end > hi {
            return Err(DramError::OutOfRange { start, end, lo, hi });
        }
        Ok(())
    }

    /// Copies `out.len()` bytes starting at physical address `phy`.
    pub fn read_into(&self, phy: u64, out: &mut [u8]) -> Result<(), DramError> {
        self.check_range(phy, out.len() as u64)?;
        let rel = (phy - self.offset) as usize;
        let avail = self.bytes.len().saturating_sub(rel).min(out.len());
        if avail > 0 {
            out[..avail].copy_from_slice(&self.bytes[rel..rel + avail]);
        }
        out[avail..].fill(0);
        Ok(())
    }

    pub fn read(&self, phy: u64, len: usize) -> Result<Vec<u8>, DramError> {
        let mut v = vec![0u8; len];
        self.read_into(phy, &mut v)?;
        Ok(v)
    }

    pub fn write(&mut self, phy: u64, data: &[u8]) -> Result<(), DramError> {
        self.check_range(phy, data.len() as u64)?;
        let rel = (phy - self.offset) as usize;
        let end = rel + data.len();
        if self.bytes.len() < end {
            self.bytes.resize(end, 0);
        }
        self.bytes[rel..end].copy_from_slice(data);
        Ok(())
    }

    fn owned(&self, region: &Region) -> Result<(), DramError> {
        if self.regions.iter().any(|r| r == region) {
            Ok(())
        } else {
            Err(DramError::Unallocated(region.name.clone()))
        }
    }

    /// Stores `payload` at the start of `region`.
    pub fn write_region(&mut self, region: &Region, payload: &[u8]) -> Result<(), DramError> {
        self.owned(region)?;
        if payload.len() as u64 > region.size_bytes {
            return Err(DramError::SizeMismatch {
                name: region.name.clone(),
                payload: payload.len(),
                size: region.size_bytes,
            });
        }
        self.write(region.phy_start, payload)
    }

    pub fn read_region(&self, region: &Region) -> Result<Vec<u8>, DramError> {
        self.owned(region)?;
        self.read(region.phy_start, region.size_bytes as usize)
    }

    /// Serializable description of every allocated region.
    pub fn layout(&self) -> DramLayout {
        DramLayout {
            offset: self.offset,
            capacity: self.capacity,
            page_bytes: self.page_bytes,
            block_size: self.block_size,
            regions: self
                .regions
                .iter()
                .map(|r| LayoutEntry { region: r.clone(), file: None, file_offset: 0 })
                .collect(),
        }
    }

    /// Rebuilds an empty image with the regions of `layout` allocated.
    pub fn from_layout(layout: &DramLayout) -> Result<Self, DramError> {
        if layout.offset % layout.page_bytes != 0 {
            return Err(DramError::UnalignedOffset(layout.offset));
        }
        let mut img = DramImage {
            offset: layout.offset,
            capacity: layout.capacity,
            page_bytes: layout.page_bytes,
            block_size: layout.block_size,
            bytes: Vec::new(),
            alloc_cursor: layout.offset,
            regions: Vec::new(),
        };
        for e in &layout.regions {
            let r = &e.region;
            let bad = |why| DramError::BadLayout { name: r.name.clone(), why };
            if r.phy_start % layout.page_bytes != 0 {
                return Err(bad("phy_start not page aligned"));
            }
            if r.phy_start < layout.offset || r.phy_end() > layout.offset + layout.capacity {
                return Err(bad("outside DRAM"));
            }
            if img.phys_to_logical(r.phy_start, r.kind)? != r.log_start {
                return Err(bad("log_start disagrees with phy_start"));
            }
            if img.regions.iter().any(|o| o.phy_start < r.phy_end() && r.phy_start < o.phy_end()) {
                return Err(bad("overlaps another region"));
            }
            img.alloc_cursor = img.alloc_cursor.max(r.phy_end());
            img.regions.push(r.clone());
        }
        Ok(img)
    }
}

/// `dram_layout.json`: every region with its physical start, size and
/// logical start, plus the data file (if any) that initializes it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramLayout {
    pub offset: u64,
    pub capacity: u64,
    pub page_bytes: u64,
    pub block_size: usize,
    pub regions: Vec<LayoutEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    #[serde(flatten)]
    pub region: Region,
    /// Data file initializing this region, relative to the layout file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Byte offset of the region's payload within `file`.
    #[serde(default)]
    pub file_offset: u64,
}

impl DramLayout {
    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().map(|e| &e.region).find(|r| r.name == name)
    }

    pub fn first_of(&self, kind: RegionKind) -> Option<&Region> {
        self.regions.iter().map(|e| &e.region).find(|r| r.kind == kind)
    }
}
