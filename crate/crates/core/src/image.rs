//! PE domain types and address arithmetic shared by every other module.
//!
//! A [`PeImage`] owns the raw file bytes plus the parsed header fields needed
//! to translate between RVAs and file offsets.  It is immutable after
//! construction; transforms produce patched copies of the byte buffer instead
//! of mutating in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `IMAGE_FILE_RELOCS_STRIPPED` in the COFF characteristics word.
pub const RELOCS_STRIPPED: u16 = 0x0001;

/// Data-directory slot for the import table.
pub const DIR_IMPORT: usize = 1;
/// Data-directory slot for the base-relocation table.
pub const DIR_BASERELOC: usize = 5;
/// Data-directory slot for the bound-import table.
pub const DIR_BOUND_IMPORT: usize = 11;
/// Data-directory slot for the import address table.
pub const DIR_IAT: usize = 12;

/// Base-relocation entry type: 32-bit absolute (PE32).
pub const RELOC_HIGHLOW: u8 = 3;
/// Base-relocation entry type: 64-bit absolute (PE32+).
pub const RELOC_DIR64: u8 = 10;
/// Base-relocation entry type: alignment padding.
pub const RELOC_ABSOLUTE: u8 = 0;

/// Optional-header magic selecting the image flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MachineClass {
    /// 32-bit image (optional-header magic 0x10B); thunks are 4 bytes.
    Pe32,
    /// 64-bit image (optional-header magic 0x20B); thunks are 8 bytes.
    Pe32Plus,
}

impl MachineClass {
    /// Width in bytes of one OFT/FT slot.
    pub fn thunk_width(self) -> usize {
        match self {
            MachineClass::Pe32 => 4,
            MachineClass::Pe32Plus => 8,
        }
    }

    /// Top-bit mask marking an import-by-ordinal thunk.
    pub fn ordinal_flag(self) -> u64 {
        match self {
            MachineClass::Pe32 => 0x8000_0000,
            MachineClass::Pe32Plus => 0x8000_0000_0000_0000,
        }
    }

    /// Relocation entry type that rewrites absolute operands of this width.
    pub fn reloc_kind(self) -> u8 {
        match self {
            MachineClass::Pe32 => RELOC_HIGHLOW,
            MachineClass::Pe32Plus => RELOC_DIR64,
        }
    }
}

/// One entry of the optional header's data-directory table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DataDirectory {
    pub rva: u32,
    pub size: u32,
}

impl DataDirectory {
    pub fn is_present(self) -> bool {
        self.rva != 0 && self.size != 0
    }
}

/// A single section-table record (40 bytes on disk).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SectionHeader {
    /// Raw 8-byte name field, not necessarily NUL-terminated.
    pub name: [u8; 8],
    pub virtual_address: u32,
    pub virtual_size: u32,
    pub raw_offset: u32,
    pub raw_size: u32,
    pub characteristics: u32,
}

/// `IMAGE_SCN_MEM_EXECUTE`.
pub const SCN_MEM_EXECUTE: u32 = 0x2000_0000;

impl SectionHeader {
    /// Printable section name with trailing NULs trimmed.
    pub fn name_str(&self) -> String {
        let len = self.name.iter().position(|&b| b == 0).unwrap_or(8);
        String::from_utf8_lossy(&self.name[..len]).into_owned()
    }

    /// Whether the section is mapped executable.
    pub fn is_executable(&self) -> bool {
        self.characteristics & SCN_MEM_EXECUTE != 0
    }

    /// Virtual range claimed for RVA lookup: `[va, va + max(vsize, rsize))`.
    fn claims_rva(&self, rva: u32) -> bool {
        let span = u64::from(self.virtual_size.max(self.raw_size));
        let va = u64::from(self.virtual_address);
        (va..va + span).contains(&u64::from(rva))
    }

    fn contains_offset(&self, offset: u64) -> bool {
        let start = u64::from(self.raw_offset);
        (start..start + u64::from(self.raw_size)).contains(&offset)
    }
}

/// A parsed PE file: raw bytes plus the header fields everything else needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeImage {
    /// The entire file, unmodified.
    pub raw: Vec<u8>,
    pub machine_class: MachineClass,
    /// Preferred load address from the optional header.
    pub image_base: u64,
    /// File offset of the NT headers (`PE\0\0` signature).
    pub e_lfanew: u32,
    pub sections: Vec<SectionHeader>,
    /// Data directories, at most 16, in slot order.
    pub data_directories: Vec<DataDirectory>,
    /// COFF characteristics flag word.
    pub characteristics: u16,
    /// File offset of the optional-header CheckSum field.
    pub checksum_offset: u64,
    /// File offset of the first data-directory entry.
    pub directories_offset: u64,
    /// `SizeOfImage` from the optional header.
    pub size_of_image: u32,
}

impl PeImage {
    /// Directory entry for `slot`, or an all-zero entry when the table is
    /// shorter than `slot`.
    pub fn directory(&self, slot: usize) -> DataDirectory {
        self.data_directories.get(slot).copied().unwrap_or_default()
    }

    pub fn relocs_stripped(&self) -> bool {
        self.characteristics & RELOCS_STRIPPED != 0
    }

    /// File offset below which RVAs map to offsets one-to-one.  This is the
    /// start of the first section's raw data; with no raw sections the whole
    /// buffer counts as header.
    fn header_limit(&self) -> u64 {
        self.sections
            .iter()
            .filter(|s| s.raw_size > 0)
            .map(|s| u64::from(s.raw_offset))
            .min()
            .unwrap_or(self.raw.len() as u64)
    }

    /// Translate an RVA to the file offset holding the same byte the loader
    /// would map at `image_base + rva`.
    ///
    /// Sections are consulted in table order; the header region below the
    /// first section maps one-to-one.  RVAs inside a section's virtual range
    /// but beyond its raw data (uninitialized tails) have no file byte.
    pub fn rva_to_offset(&self, rva: u32) -> Result<u64> {
        for section in &self.sections {
            if section.claims_rva(rva) {
                let delta = u64::from(rva) - u64::from(section.virtual_address);
                if delta < u64::from(section.raw_size) {
                    return Ok(u64::from(section.raw_offset) + delta);
                }
                return Err(Error::UnmappedRva(rva));
            }
        }
        if u64::from(rva) < self.header_limit() {
            return Ok(u64::from(rva));
        }
        Err(Error::UnmappedRva(rva))
    }

    /// Inverse of [`rva_to_offset`](Self::rva_to_offset) on its valid domain.
    pub fn offset_to_rva(&self, offset: u64) -> Result<u32> {
        for section in &self.sections {
            if section.contains_offset(offset) {
                let delta = offset - u64::from(section.raw_offset);
                let rva = u64::from(section.virtual_address) + delta;
                return u32::try_from(rva).map_err(|_| Error::UnmappedOffset(offset));
            }
        }
        if offset < self.header_limit() && offset < self.raw.len() as u64 {
            return Ok(offset as u32);
        }
        Err(Error::UnmappedOffset(offset))
    }

    /// Read the bytes a given RVA range addresses, if fully mapped.
    pub fn read_at_rva(&self, rva: u32, len: usize) -> Result<&[u8]> {
        let offset = self.rva_to_offset(rva)? as usize;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= self.raw.len())
            .ok_or(Error::UnmappedRva(rva))?;
        // The whole range must stay inside whatever mapped the first byte,
        // and inside the 32-bit address space to begin with.
        if len > 1 {
            let last = u64::from(rva) + len as u64 - 1;
            let last = u32::try_from(last).map_err(|_| Error::UnmappedRva(rva))?;
            self.rva_to_offset(last)?;
        }
        Ok(&self.raw[offset..end])
    }
}

/// What one import thunk names: an export ordinal or a hint/name record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ThunkPayload {
    Ordinal(u16),
    ByName {
        hint: u16,
        name: String,
        /// RVA of the on-disk `IMAGE_IMPORT_BY_NAME` record.
        name_rva: u32,
    },
}

impl ThunkPayload {
    /// Symbol label used in reports: the name, or `ord<N>` for ordinals.
    pub fn label(&self) -> String {
        match self {
            ThunkPayload::Ordinal(n) => format!("ord{n}"),
            ThunkPayload::ByName { name, .. } => name.clone(),
        }
    }
}

/// One imported-symbol slot within a descriptor's thunk arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThunkSlot {
    /// RVA of this slot in the first-thunk (IAT) array.
    pub ft_slot_rva: u32,
    /// RVA of the matching original-first-thunk slot, when an OFT exists.
    pub oft_slot_rva: Option<u32>,
    /// Raw stored thunk value (name RVA or ordinal-flagged value).
    pub raw_value: u64,
    pub payload: ThunkPayload,
}

/// One `IMAGE_IMPORT_DESCRIPTOR` with its resolved name and thunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImportDescriptor {
    /// OriginalFirstThunk RVA; 0 when the descriptor has no OFT array.
    pub oft_rva: u32,
    pub time_date_stamp: u32,
    pub forwarder_chain: u32,
    pub name_rva: u32,
    /// FirstThunk (IAT) RVA.
    pub ft_rva: u32,
    pub module_name: String,
    pub thunks: Vec<ThunkSlot>,
    /// File offset of the 20-byte descriptor record.
    pub record_offset: u64,
}

impl ImportDescriptor {
    /// Descriptor looks bound: a nonzero bind timestamp.
    pub fn is_bound(&self) -> bool {
        self.time_date_stamp != 0
    }
}

/// One base-relocation entry: a 4-bit type and a 12-bit page offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RelocEntry {
    pub kind: u8,
    pub offset_in_page: u16,
}

/// One base-relocation block covering a 4 KiB page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelocBlock {
    pub page_rva: u32,
    /// Entries as stored, padding included.
    pub entries: Vec<RelocEntry>,
}

impl RelocBlock {
    /// Absolute RVAs targeted by entries of the given type.
    pub fn targets_of_kind(&self, kind: u8) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .filter(move |e| e.kind == kind)
            .map(|e| self.page_rva + u32::from(e.offset_in_page))
    }
}
