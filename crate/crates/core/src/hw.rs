//! Accelerator descriptions, the built-in edge catalog, and derived
//! roofline quantities.

use serde::Serialize;

use crate::config::{ConfigError, Doc};

pub const GB: f64 = 1e9;
pub const TFLOPS: f64 = 1e12;
pub const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MemoryTechnology {
    Lpddr5,
    Lpddr5x,
    Gddr7,
    Lpddr6xPim,
    Other,
}

impl MemoryTechnology {
    /// Label used in config files.
    pub fn key(self) -> &'static str {
        match self {
            MemoryTechnology::Lpddr5 => "LPDDR5",
            MemoryTechnology::Lpddr5x => "LPDDR5X",
            MemoryTechnology::Gddr7 => "GDDR7",
            MemoryTechnology::Lpddr6xPim => "LPDDR6X-PIM",
            MemoryTechnology::Other => "other",
        }
    }

    /// Label used in human-readable listings.
    pub fn display(self) -> &'static str {
        match self {
            MemoryTechnology::Lpddr6xPim => "LPDDR6X PIM",
            other => other.key(),
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().replace(' ', "-").as_str() {
            "LPDDR5" => Some(MemoryTechnology::Lpddr5),
            "LPDDR5X" => Some(MemoryTechnology::Lpddr5x),
            "GDDR7" => Some(MemoryTechnology::Gddr7),
            "LPDDR6X-PIM" => Some(MemoryTechnology::Lpddr6xPim),
            "OTHER" => Some(MemoryTechnology::Other),
            _ => None,
        }
    }
}

/// Processing-in-memory partition attached to the main memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PimPartition {
    /// Internal bandwidth in bytes/s.
    pub bandwidth: f64,
    /// FLOP/s.
    pub peak_compute: f64,
    /// Operators with arithmetic intensity (FLOP/byte) below this run on PIM.
    pub placement_threshold: f64,
}

/// Two-level bandwidth efficiency: streams whose innermost contiguous run is
/// shorter than `min_contiguous_bytes` get the strided efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymmetricDerate {
    pub contiguous_efficiency: f64,
    pub strided_efficiency: f64,
    pub min_contiguous_bytes: u64,
}

impl Default for AsymmetricDerate {
    fn default() -> Self {
        AsymmetricDerate {
            contiguous_efficiency: 0.85,
            strided_efficiency: 0.55,
            min_contiguous_bytes: 256,
        }
    }
}

impl AsymmetricDerate {
    pub fn efficiency(&self, innermost_contiguous_bytes: u64) -> f64 {
        if innermost_contiguous_bytes >= self.min_contiguous_bytes {
            self.contiguous_efficiency
        } else {
            self.strided_efficiency
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardwareSpec {
    pub name: String,
    pub memory_technology: MemoryTechnology,
    /// External DRAM bandwidth seen by the SoC, bytes/s.
    pub dram_bandwidth: f64,
    /// BF16 FLOP/s of the SoC alone.
    pub soc_peak_compute: f64,
    pub pim: Option<PimPartition>,
    /// Bytes.
    pub memory_capacity: f64,
    pub sm_count: u32,
    pub tile_m: u32,
    pub tile_n: u32,
    pub tile_k: u32,
    pub sram_bytes: f64,
    pub bandwidth_derate: AsymmetricDerate,
}

pub const DEFAULT_SM_COUNT: u32 = 16;
pub const DEFAULT_TILE: (u32, u32, u32) = (128, 128, 64);
pub const DEFAULT_SRAM_MIB: f64 = 32.0;

/// Where an operator executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Domain {
    Soc,
    Pim,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Soc => "SoC",
            Domain::Pim => "PIM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HwError {
    #[error("hardware `{0}` has no PIM partition")]
    NoPim(String),
    #[error("resident set of {resident:.0} bytes exceeds `{name}` capacity of {capacity:.0} bytes by {overflow:.0} bytes")]
    CapacityExceeded {
        name: String,
        resident: f64,
        capacity: f64,
        overflow: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityMode {
    Strict,
    Warn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CapacityCheck {
    Ok,
    /// Overflow in bytes.
    Warning { overflow: f64 },
}

impl HardwareSpec {
    /// A spec with default micro-architectural knobs and no PIM.
    pub fn new(
        name: impl Into<String>,
        memory_technology: MemoryTechnology,
        bw_gbps: f64,
        tflops_soc: f64,
        capacity_gb: f64,
    ) -> Self {
        HardwareSpec {
            name: name.into(),
            memory_technology,
            dram_bandwidth: bw_gbps * GB,
            soc_peak_compute: tflops_soc * TFLOPS,
            pim: None,
            memory_capacity: capacity_gb * GB,
            sm_count: DEFAULT_SM_COUNT,
            tile_m: DEFAULT_TILE.0,
            tile_n: DEFAULT_TILE.1,
            tile_k: DEFAULT_TILE.2,
            sram_bytes: DEFAULT_SRAM_MIB * MIB,
            bandwidth_derate: AsymmetricDerate::default(),
        }
    }

    /// Attaches a PIM partition whose placement threshold defaults to the SoC
    /// ridge point.
    pub fn with_pim(mut self, bw_gbps: f64, tflops_pim: f64) -> Self {
        let threshold = self.soc_peak_compute / self.dram_bandwidth;
        self.pim = Some(PimPartition {
            bandwidth: bw_gbps * GB,
            peak_compute: tflops_pim * TFLOPS,
            placement_threshold: threshold,
        });
        self
    }

    /// SoC plus PIM peak compute, FLOP/s.
    pub fn total_peak_compute(&self) -> f64 {
        self.soc_peak_compute + self.pim.map_or(0.0, |p| p.peak_compute)
    }

    /// The bandwidth a datasheet would quote: PIM internal bandwidth when
    /// present, otherwise the DRAM interface.
    pub fn headline_bandwidth(&self) -> f64 {
        self.pim.map_or(self.dram_bandwidth, |p| p.bandwidth)
    }

    pub fn bandwidth(&self, domain: Domain) -> Result<f64, HwError> {
        match domain {
            Domain::Soc => Ok(self.dram_bandwidth),
            Domain::Pim => self
                .pim
                .map(|p| p.bandwidth)
                .ok_or_else(|| HwError::NoPim(self.name.clone())),
        }
    }

    pub fn peak_compute(&self, domain: Domain) -> Result<f64, HwError> {
        match domain {
            Domain::Soc => Ok(self.soc_peak_compute),
            Domain::Pim => self
                .pim
                .map(|p| p.peak_compute)
                .ok_or_else(|| HwError::NoPim(self.name.clone())),
        }
    }

    /// Arithmetic intensity (FLOP/byte) where the compute and bandwidth
    /// roofs meet.
    pub fn ridge_point(&self, domain: Domain) -> Result<f64, HwError> {
        Ok(self.peak_compute(domain)? / self.bandwidth(domain)?)
    }

    pub fn check_capacity(
        &self,
        resident_bytes: f64,
        mode: CapacityMode,
    ) -> Result<CapacityCheck, HwError> {
        if resident_bytes <= self.memory_capacity {
            return Ok(CapacityCheck::Ok);
        }
        let overflow = resident_bytes - self.memory_capacity;
        match mode {
            CapacityMode::Warn => Ok(CapacityCheck::Warning { overflow }),
            CapacityMode::Strict => Err(HwError::CapacityExceeded {
                name: self.name.clone(),
                resident: resident_bytes,
                capacity: self.memory_capacity,
                overflow,
            }),
        }
    }

    /// Checks the structural invariants; returns the offending key on failure.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, why: &str| Err(ConfigError::invalid(key, why));
        // NaN fails every comparison, so test for the good case
        let positive = |x: f64| x > 0.0;
        if !(self.dram_bandwidth > 0.0 && self.dram_bandwidth.is_finite()) {
            return bad("bw_gbps", "must be > 0");
        }
        if !(self.soc_peak_compute > 0.0 && self.soc_peak_compute.is_finite()) {
            return bad("tflops_bf16_soc", "must be > 0");
        }
        if !positive(self.memory_capacity) {
            return bad("capacity_gb", "must be > 0");
        }
        if self.sm_count < 1 {
            return bad("sm_count", "must be >= 1");
        }
        if self.tile_m < 1 || self.tile_n < 1 || self.tile_k < 1 {
            return bad("tile", "tile dimensions must be >= 1");
        }
        if self.sram_bytes.is_nan() || self.sram_bytes < 0.0 {
            return bad("sram_mib", "must be >= 0");
        }
        let d = &self.bandwidth_derate;
        if !(d.strided_efficiency > 0.0
            && d.strided_efficiency <= d.contiguous_efficiency
            && d.contiguous_efficiency <= 1.0)
        {
            return bad("derate", "need 0 < strided <= contiguous <= 1");
        }
        if let Some(p) = &self.pim {
            if !positive(p.bandwidth) {
                return bad("pim.bw_gbps", "must be > 0");
            }
            if p.bandwidth < self.dram_bandwidth {
                return bad("pim.bw_gbps", "must be >= bw_gbps");
            }
            if !positive(p.peak_compute) {
                return bad("pim.tflops_bf16", "must be > 0");
            }
            if !positive(p.placement_threshold) {
                return bad("pim.threshold_flop_per_byte", "must be > 0");
            }
        }
        Ok(())
    }

    /// Parses a hardware document; see [`HardwareSpec::to_toml`] for the
    /// schema.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let doc = Doc::parse(text)?;
        Self::from_doc(&doc)
    }

    pub(crate) fn from_doc(doc: &Doc) -> Result<Self, ConfigError> {
        doc.allow_keys(&[
            "name",
            "memory_technology",
            "bw_gbps",
            "tflops_bf16_soc",
            "tflops_bf16",
            "capacity_gb",
            "sm_count",
            "tile",
            "sram_mib",
            "derate",
            "pim",
        ])?;
        let name = doc.opt_str("name")?.unwrap_or_else(|| "custom".to_string());
        let memory_technology = match doc.opt_str("memory_technology")? {
            None => MemoryTechnology::Other,
            Some(s) => MemoryTechnology::from_key(&s).ok_or_else(|| {
                ConfigError::parse("memory_technology", format!("unknown technology `{s}`"))
            })?,
        };
        let bw = doc.req_f64("bw_gbps")?;
        let tflops = match doc.opt_f64("tflops_bf16_soc")? {
            Some(v) => v,
            None => doc.req_f64("tflops_bf16").map_err(|e| match e {
                ConfigError::Missing(_) => ConfigError::Missing("tflops_bf16_soc".into()),
                other => other,
            })?,
        };
        let capacity = doc.opt_f64("capacity_gb")?.unwrap_or(64.0);
        let mut hw = HardwareSpec::new(name, memory_technology, bw, tflops, capacity);
        if let Some(v) = doc.opt_u64("sm_count")? {
            hw.sm_count = u32::try_from(v).map_err(|_| ConfigError::invalid("sm_count", "too large"))?;
        }
        if let Some(tile) = doc.opt_table("tile")? {
            tile.allow_keys(&["m", "n", "k"])?;
            let dim = |k: &str, default: u32| -> Result<u32, ConfigError> {
                Ok(match tile.opt_u64(k)? {
                    Some(v) => u32::try_from(v).map_err(|_| ConfigError::invalid(&tile.path(k), "too large"))?,
                    None => default,
                })
            };
            hw.tile_m = dim("m", DEFAULT_TILE.0)?;
            hw.tile_n = dim("n", DEFAULT_TILE.1)?;
            hw.tile_k = dim("k", DEFAULT_TILE.2)?;
        }
        if let Some(v) = doc.opt_f64("sram_mib")? {
            hw.sram_bytes = v * MIB;
        }
        if let Some(d) = doc.opt_table("derate")? {
            d.allow_keys(&["contiguous", "strided", "min_contiguous_bytes"])?;
            let def = AsymmetricDerate::default();
            hw.bandwidth_derate = AsymmetricDerate {
                contiguous_efficiency: d.opt_f64("contiguous")?.unwrap_or(def.contiguous_efficiency),
                strided_efficiency: d.opt_f64("strided")?.unwrap_or(def.strided_efficiency),
                min_contiguous_bytes: d.opt_u64("min_contiguous_bytes")?.unwrap_or(def.min_contiguous_bytes),
            };
        }
        if let Some(p) = doc.opt_table("pim")? {
            p.allow_keys(&["bw_gbps", "tflops_bf16", "threshold_flop_per_byte"])?;
            hw = hw.with_pim(p.req_f64("bw_gbps")?, p.req_f64("tflops_bf16")?);
            if let Some(t) = p.opt_f64("threshold_flop_per_byte")? {
                if let Some(pim) = hw.pim.as_mut() {
                    pim.placement_threshold = t;
                }
            }
        }
        hw.validate()?;
        Ok(hw)
    }

    pub fn to_toml(&self) -> String {
        use toml::{Table, Value};
        let mut t = Table::new();
        t.insert("name".into(), Value::String(self.name.clone()));
        t.insert(
            "memory_technology".into(),
            Value::String(self.memory_technology.key().into()),
        );
        t.insert("bw_gbps".into(), Value::Float(self.dram_bandwidth / GB));
        t.insert("tflops_bf16_soc".into(), Value::Float(self.soc_peak_compute / TFLOPS));
        t.insert("capacity_gb".into(), Value::Float(self.memory_capacity / GB));
        t.insert("sm_count".into(), Value::Integer(self.sm_count.into()));
        t.insert("sram_mib".into(), Value::Float(self.sram_bytes / MIB));
        let mut tile = Table::new();
        tile.insert("m".into(), Value::Integer(self.tile_m.into()));
        tile.insert("n".into(), Value::Integer(self.tile_n.into()));
        tile.insert("k".into(), Value::Integer(self.tile_k.into()));
        t.insert("tile".into(), Value::Table(tile));
        let d = &self.bandwidth_derate;
        let mut derate = Table::new();
        derate.insert("contiguous".into(), Value::Float(d.contiguous_efficiency));
        derate.insert("strided".into(), Value::Float(d.strided_efficiency));
        derate.insert(
            "min_contiguous_bytes".into(),
            Value::Integer(d.min_contiguous_bytes as i64),
        );
        t.insert("derate".into(), Value::Table(derate));
        if let Some(p) = &self.pim {
            let mut pim = Table::new();
            pim.insert("bw_gbps".into(), Value::Float(p.bandwidth / GB));
            pim.insert("tflops_bf16".into(), Value::Float(p.peak_compute / TFLOPS));
            pim.insert(
                "threshold_flop_per_byte".into(),
                Value::Float(p.placement_threshold),
            );
            t.insert("pim".into(), Value::Table(pim));
        }
        toml::to_string(&t).expect("hardware table serializes")
    }
}

const ORIN_CAPACITY_GB: f64 = 64.0;
const THOR_CAPACITY_GB: f64 = 128.0;

/// The seven commercial and hypothetical edge systems, in listing order.
///
/// PIM systems keep their base platform's SoC compute and DRAM interface;
/// the remainder of the combined TFLOPS figure is assigned to the PIM side.
pub fn builtin_catalog() -> Vec<HardwareSpec> {
    use MemoryTechnology::*;
    vec![
        HardwareSpec::new("Orin", Lpddr5, 203.0, 100.0, ORIN_CAPACITY_GB),
        HardwareSpec::new("Thor", Lpddr5x, 273.0, 500.0, THOR_CAPACITY_GB),
        HardwareSpec::new("Orin+LPDDR5X", Lpddr5x, 273.0, 100.0, ORIN_CAPACITY_GB),
        HardwareSpec::new("Orin+GDDR7", Gddr7, 1000.0, 100.0, ORIN_CAPACITY_GB),
        HardwareSpec::new("Orin+PIM", Lpddr6xPim, 203.0, 100.0, ORIN_CAPACITY_GB)
            .with_pim(2180.0, 1074.0 - 100.0),
        HardwareSpec::new("Thor+GDDR7", Gddr7, 1000.0, 500.0, THOR_CAPACITY_GB),
        HardwareSpec::new("Thor+PIM", Lpddr6xPim, 273.0, 500.0, THOR_CAPACITY_GB)
            .with_pim(2180.0, 3993.0 - 500.0),
    ]
}

/// Looks up a catalog entry by name (case-insensitive).
pub fn catalog_entry(name: &str) -> Option<HardwareSpec> {
    builtin_catalog()
        .into_iter()
        .find(|h| h.name.eq_ignore_ascii_case(name))
}
