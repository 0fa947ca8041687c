//! Firmware manifests: a TOML description of the machine and the image
//! segments to load into it.
//!
//! ```toml
//! initial_vtor = 0x08000000
//!
//! [machine]
//! num_code = 6
//! num_lit = 2
//! has_remap = true
//! vtor_relocatable = true
//! flash_base = 0x08000000
//! flash_size = 0x100000
//! sram_base = 0x20000000
//! sram_size = 0x30000
//!
//! [[region]]               # optional extra regions
//! name = "uart"
//! base = 0x40000000
//! size = 0x1000
//! kind = "mmio_stub"
//!
//! [[segment]]
//! load_address = 0x08000000
//! hex = "00800020 41000008"  # whitespace ignored
//!
//! [[segment]]
//! load_address = 0x08001000
//! file = "app.bin"           # relative to the manifest's directory
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bus::{MemoryKind, RegionSpec};
use crate::error::Error;
use crate::fpb::FpbConfig;
use crate::machine::{Machine, MachineConfig, DEFAULT_FLASH_BASE, DEFAULT_FLASH_SIZE, DEFAULT_SRAM_BASE, DEFAULT_SRAM_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSection {
    #[serde(default = "default_num_code")]
    pub num_code: u8,
    #[serde(default = "default_num_lit")]
    pub num_lit: u8,
    #[serde(default = "default_true")]
    pub has_remap: bool,
    #[serde(default = "default_true")]
    pub vtor_relocatable: bool,
    #[serde(default = "default_flash_base")]
    pub flash_base: u32,
    #[serde(default = "default_flash_size")]
    pub flash_size: u32,
    #[serde(default = "default_sram_base")]
    pub sram_base: u32,
    #[serde(default = "default_sram_size")]
    pub sram_size: u32,
}

fn default_num_code() -> u8 {
    6
}
fn default_num_lit() -> u8 {
    2
}
fn default_true() -> bool {
    true
}
fn default_flash_base() -> u32 {
    DEFAULT_FLASH_BASE
}
fn default_flash_size() -> u32 {
    DEFAULT_FLASH_SIZE
}
fn default_sram_base() -> u32 {
    DEFAULT_SRAM_BASE
}
fn default_sram_size() -> u32 {
    DEFAULT_SRAM_SIZE
}
fn default_vtor() -> u32 {
    DEFAULT_FLASH_BASE
}

impl Default for MachineSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub load_address: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// A manifest as written on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default = "default_vtor")]
    pub initial_vtor: u32,
    #[serde(default)]
    pub machine: MachineSection,
    #[serde(default, rename = "region")]
    pub regions: Vec<RegionSpec>,
    #[serde(default, rename = "segment")]
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub load_address: u32,
    pub bytes: Vec<u8>,
}

/// A resolved manifest: machine configuration plus segment bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareManifest {
    pub config: MachineConfig,
    pub segments: Vec<Segment>,
}

impl FirmwareManifest {
    pub fn new(config: MachineConfig) -> FirmwareManifest {
        FirmwareManifest { config, segments: Vec::new() }
    }

    /// Parses manifest text; `base_dir` resolves relative segment files.
    pub fn parse(text: &str, base_dir: &Path) -> Result<FirmwareManifest, Error> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        file.resolve(base_dir)
    }

    pub fn load(path: &Path) -> Result<FirmwareManifest, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        FirmwareManifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Checks that every segment lies inside one declared region.
    pub fn validate(&self) -> Result<(), Error> {
        crate::bus::validate_regions(&self.config.regions)?;
        self.config.fpb.validate()?;
        for s in &self.segments {
            if s.bytes.is_empty() {
                continue;
            }
            let end = u64::from(s.load_address) + s.bytes.len() as u64;
            let fits = self
                .config
                .regions
                .iter()
                .any(|r| s.load_address >= r.base && end <= u64::from(r.base) + u64::from(r.size));
            if !fits {
                return Err(Error::SegmentOutOfRange { address: s.load_address, len: s.bytes.len() });
            }
        }
        Ok(())
    }

    /// Builds a machine, loads the image and boots the core from the vector
    /// table. SRAM keeps whatever the segments put there.
    pub fn build_machine(&self) -> Result<Machine, Error> {
        self.validate()?;
        let mut machine = Machine::new(self.config.clone())?;
        load_image(&mut machine, self)?;
        machine.boot_core();
        Ok(machine)
    }
}

/// Copies every segment into backing memory.
pub fn load_image(machine: &mut Machine, manifest: &FirmwareManifest) -> Result<(), Error> {
    for s in &manifest.segments {
        machine.load_bytes(s.load_address, &s.bytes)?;
    }
    Ok(())
}

impl ManifestFile {
    pub fn resolve(self, base_dir: &Path) -> Result<FirmwareManifest, Error> {
        let m = &self.machine;
        let mut regions = vec![
            RegionSpec::new("flash", m.flash_base, m.flash_size, MemoryKind::Flash),
            RegionSpec::new("sram", m.sram_base, m.sram_size, MemoryKind::Sram),
        ];
        regions.extend(self.regions.iter().cloned());
        let config = MachineConfig {
            regions,
            fpb: FpbConfig::new(m.num_code, m.num_lit, m.has_remap)?,
            initial_vtor: self.initial_vtor,
            vtor_relocatable: m.vtor_relocatable,
        };
        let mut segments = Vec::new();
        for s in self.segments {
            let bytes = match (&s.hex, &s.file) {
                (Some(h), None) => {
                    let compact: String = h.chars().filter(|c| !c.is_whitespace()).collect();
                    hex::decode(&compact)
                        .map_err(|e| Error::Manifest(format!("segment 0x{:08x}: {e}", s.load_address)))?
                }
                (None, Some(f)) => {
                    let path = base_dir.join(f);
                    std::fs::read(&path).map_err(|source| Error::Io { path, source })?
                }
                _ => {
                    return Err(Error::Manifest(format!(
                        "segment 0x{:08x} needs exactly one of `hex` or `file`",
                        s.load_address
                    )))
                }
            };
            segments.push(Segment { load_address: s.load_address, bytes });
        }
        let manifest = FirmwareManifest { config, segments };
        manifest.validate()?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Reg;

    #[test]
    fn defaults_match_reference_board() {
        let m = FirmwareManifest::parse("", Path::new(".")).unwrap();
        assert_eq!(m.config.fpb, FpbConfig::default());
        assert_eq!(m.config.initial_vtor, 0x0800_0000);
        assert_eq!(m.config.regions[1].size, 192 * 1024);
        assert!(m.segments.is_empty());
    }

    #[test]
    fn hex_and_file_segments() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("app.bin"), [0x00, 0xBF, 0xFE, 0xE7]).unwrap();
        let text = r#"
            initial_vtor = 0x08000000
            [machine]
            num_code = 4
            num_lit = 2
            [[region]]
            name = "out"
            base = 0x40000000
            size = 0x100
            kind = "mmio_stub"
            [[segment]]
            load_address = 0x08000000
            hex = "00800020 09000008"
            [[segment]]
            load_address = 0x08000008
            file = "app.bin"
        "#;
        let path = dir.path().join("fw.toml");
        std::fs::write(&path, text).unwrap();
        let manifest = FirmwareManifest::load(&path).unwrap();
        assert_eq!(manifest.config.fpb.required_alignment(), 24);
        let mut m = manifest.build_machine().unwrap();
        assert_eq!(m.msp(), 0x2000_8000);
        assert_eq!(m.pc(), 0x0800_0008);
        m.step();
        assert_eq!(m.pc(), 0x0800_000A);
        assert_eq!(m.reg(Reg::R0), 0);
    }

    #[test]
    fn segment_outside_regions_is_rejected() {
        let text = "[[segment]]\nload_address = 0x080FFFFE\nhex = \"00112233\"\n";
        assert!(matches!(
            FirmwareManifest::parse(text, Path::new(".")),
            Err(Error::SegmentOutOfRange { address: 0x080F_FFFE, len: 4 })
        ));
    }

    #[test]
    fn malformed_manifests() {
        assert!(matches!(FirmwareManifest::parse("bogus = 1", Path::new(".")), Err(Error::Manifest(_))));
        let both = "[[segment]]\nload_address = 0\nhex = \"00\"\nfile = \"x\"\n";
        assert!(matches!(FirmwareManifest::parse(both, Path::new(".")), Err(Error::Manifest(_))));
        let missing = "[[segment]]\nload_address = 0x08000000\nfile = \"does-not-exist.bin\"\n";
        assert!(matches!(FirmwareManifest::parse(missing, Path::new("/nonexistent")), Err(Error::Io { .. })));
        let overlap = "[[region]]\nname = \"x\"\nbase = 0x08000000\nsize = 4\nkind = \"sram\"\n";
        assert!(matches!(FirmwareManifest::parse(overlap, Path::new(".")), Err(Error::OverlappingRegions { .. })));
    }
}
