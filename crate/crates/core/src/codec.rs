//! Byte-level PE parsing and serialization.
//!
//! [`parse_pe`] populates a [`PeImage`] from a raw buffer without modifying
//! it; [`read_import_directory`] and [`read_reloc_directory`] decode the two
//! directories the transform cares about; [`serialize`] writes edits back as
//! same-size patches.  Nothing here ever re-lays-out the file: every edit
//! overwrites bytes in place, so offsets and sizes are preserved exactly.

use crate::checksum;
use crate::error::{read_u16, read_u32, read_u64, Error, Result};
use crate::image::{
    DataDirectory, ImportDescriptor, MachineClass, PeImage, RelocBlock, RelocEntry, SectionHeader,
    ThunkPayload, ThunkSlot, DIR_BASERELOC, DIR_IMPORT,
};

const DOS_MAGIC: u16 = 0x5A4D;
const NT_SIGNATURE: u32 = 0x0000_4550;
const PE32_MAGIC: u16 = 0x010B;
const PE32PLUS_MAGIC: u16 = 0x020B;
const SECTION_RECORD_LEN: usize = 40;
const DESCRIPTOR_LEN: u32 = 20;

/// Longest accepted module or symbol name, a guard against crafted files.
const MAX_NAME_LEN: usize = 4096;

/// Import and base-relocation directories decoded together.
#[derive(Debug, Clone)]
pub struct ParsedDirectories {
    /// Import descriptors in on-disk order (imphash is order-sensitive).
    pub imports: Vec<ImportDescriptor>,
    /// Relocation blocks in stored order.
    pub relocs: Vec<RelocBlock>,
}

/// Parse the headers of a PE32 or PE32+ file.
///
/// Only documented header fields are touched; the buffer is retained
/// unmodified inside the returned image.
pub fn parse_pe(bytes: Vec<u8>) -> Result<PeImage> {
    if bytes.len() < 64 {
        return Err(Error::TruncatedFile {
            what: "DOS header",
            offset: 0,
        });
    }
    if read_u16(&bytes, 0, "DOS magic")? != DOS_MAGIC {
        return Err(Error::BadDosMagic);
    }
    let e_lfanew = read_u32(&bytes, 0x3C, "e_lfanew")?;
    let nt = e_lfanew as usize;
    if read_u32(&bytes, nt, "NT signature")? != NT_SIGNATURE {
        return Err(Error::BadNtSignature(e_lfanew as u64));
    }

    let coff = nt + 4;
    let number_of_sections = read_u16(&bytes, coff + 2, "NumberOfSections")?;
    let size_of_optional_header = read_u16(&bytes, coff + 16, "SizeOfOptionalHeader")?;
    let characteristics = read_u16(&bytes, coff + 18, "Characteristics")?;

    let opt = coff + 20;
    let magic = read_u16(&bytes, opt, "optional-header magic")?;
    let (machine_class, image_base, dirs_at) = match magic {
        PE32_MAGIC => (
            MachineClass::Pe32,
            u64::from(read_u32(&bytes, opt + 28, "ImageBase")?),
            opt + 96,
        ),
        PE32PLUS_MAGIC => (
            MachineClass::Pe32Plus,
            read_u64(&bytes, opt + 24, "ImageBase")?,
            opt + 112,
        ),
        other => return Err(Error::UnsupportedMachineClass(other)),
    };
    let size_of_image = read_u32(&bytes, opt + 56, "SizeOfImage")?;
    let checksum_offset = (opt + 64) as u64;
    read_u32(&bytes, opt + 64, "CheckSum")?;
    let dir_count = read_u32(&bytes, dirs_at - 4, "NumberOfRvaAndSizes")?.min(16) as usize;

    let mut data_directories = Vec::with_capacity(dir_count);
    for slot in 0..dir_count {
        let at = dirs_at + slot * 8;
        data_directories.push(DataDirectory {
            rva: read_u32(&bytes, at, "directory RVA")?,
            size: read_u32(&bytes, at + 4, "directory size")?,
        });
    }

    let table = opt + size_of_optional_header as usize;
    let mut sections = Vec::with_capacity(number_of_sections as usize);
    for i in 0..number_of_sections as usize {
        let at = table + i * SECTION_RECORD_LEN;
        if at + SECTION_RECORD_LEN > bytes.len() {
            return Err(Error::TruncatedFile {
                what: "section table",
                offset: at as u64,
            });
        }
        let section = SectionHeader {
            name: bytes[at..at + 8].try_into().unwrap(),
            virtual_size: read_u32(&bytes, at + 8, "VirtualSize")?,
            virtual_address: read_u32(&bytes, at + 12, "VirtualAddress")?,
            raw_size: read_u32(&bytes, at + 16, "SizeOfRawData")?,
            raw_offset: read_u32(&bytes, at + 20, "PointerToRawData")?,
            characteristics: read_u32(&bytes, at + 36, "SectionCharacteristics")?,
        };
        if section.raw_size > 0 {
            let end = u64::from(section.raw_offset) + u64::from(section.raw_size);
            if end > bytes.len() as u64 {
                return Err(Error::TruncatedFile {
                    what: "section raw data",
                    offset: u64::from(section.raw_offset),
                });
            }
        }
        sections.push(section);
    }

    // Raw ranges must not overlap; sort by start, check neighbors.
    let mut by_offset: Vec<usize> = (0..sections.len())
        .filter(|&i| sections[i].raw_size > 0)
        .collect();
    by_offset.sort_by_key(|&i| sections[i].raw_offset);
    for pair in by_offset.windows(2) {
        let (a, b) = (&sections[pair[0]], &sections[pair[1]]);
        if u64::from(a.raw_offset) + u64::from(a.raw_size) > u64::from(b.raw_offset) {
            return Err(Error::OverlappingSections(pair[0], pair[1]));
        }
    }

    Ok(PeImage {
        raw: bytes,
        machine_class,
        image_base,
        e_lfanew,
        sections,
        data_directories,
        characteristics,
        checksum_offset,
        directories_offset: dirs_at as u64,
        size_of_image,
    })
}

/// Read a NUL-terminated name at `rva`, bounded by [`MAX_NAME_LEN`] and by
/// the mapped extent the RVA lives in.
fn read_name(image: &PeImage, rva: u32) -> Result<String> {
    let offset = image.rva_to_offset(rva)? as usize;
    let extent = mapped_extent(image, rva, offset);
    let window = &image.raw[offset..offset + extent.min(MAX_NAME_LEN + 1)];
    match window.iter().position(|&b| b == 0) {
        Some(len) => Ok(String::from_utf8_lossy(&window[..len]).into_owned()),
        None => Err(Error::MalformedDescriptor {
            index: 0,
            reason: format!("name at RVA {rva:#x} unterminated or longer than {MAX_NAME_LEN}"),
        }),
    }
}

/// Contiguously mapped bytes available starting at `rva`/`offset`.
fn mapped_extent(image: &PeImage, rva: u32, offset: usize) -> usize {
    for section in &image.sections {
        let start = u64::from(section.raw_offset);
        let end = start + u64::from(section.raw_size);
        if (start..end).contains(&(offset as u64)) {
            return (end - offset as u64) as usize;
        }
    }
    let _ = rva;
    image.raw.len().saturating_sub(offset)
}

/// Decode the import descriptor table in on-disk order.
///
/// Thunks are read from the OFT when one exists, falling back to the FT
/// array otherwise; either way `ft_slot_rva` values index the FT (IAT) side.
pub fn read_import_directory(image: &PeImage) -> Result<Vec<ImportDescriptor>> {
    let dir = image.directory(DIR_IMPORT);
    if dir.rva == 0 {
        return Err(Error::NoImportTable);
    }

    let mut descriptors = Vec::new();
    for index in 0.. {
        let desc_rva = (index as u32)
            .checked_mul(DESCRIPTOR_LEN)
            .and_then(|stride| dir.rva.checked_add(stride))
            .ok_or_else(|| Error::MalformedDescriptor {
                index,
                reason: "descriptor table runs past the 32-bit address space".into(),
            })?;
        let record = image
            .read_at_rva(desc_rva, DESCRIPTOR_LEN as usize)
            .map_err(|e| Error::MalformedDescriptor {
                index,
                reason: format!("descriptor record unreadable: {e}"),
            })?;
        let field = |i: usize| u32::from_le_bytes(record[i * 4..i * 4 + 4].try_into().unwrap());
        let (oft_rva, time_date_stamp, forwarder_chain, name_rva, ft_rva) =
            (field(0), field(1), field(2), field(3), field(4));
        if oft_rva == 0 && time_date_stamp == 0 && forwarder_chain == 0 && name_rva == 0 && ft_rva == 0
        {
            break;
        }
        if name_rva == 0 || ft_rva == 0 {
            return Err(Error::MalformedDescriptor {
                index,
                reason: "live descriptor with zero Name or FirstThunk".into(),
            });
        }
        let module_name = read_name(image, name_rva).map_err(|e| match e {
            Error::MalformedDescriptor { reason, .. } => Error::MalformedDescriptor { index, reason },
            other => Error::MalformedDescriptor {
                index,
                reason: format!("module name unreadable: {other}"),
            },
        })?;
        let record_offset = image.rva_to_offset(desc_rva)?;
        let thunks = read_thunks(image, index, oft_rva, ft_rva)?;
        if thunks.is_empty() {
            return Err(Error::MalformedDescriptor {
                index,
                reason: "empty thunk array".into(),
            });
        }
        descriptors.push(ImportDescriptor {
            oft_rva,
            time_date_stamp,
            forwarder_chain,
            name_rva,
            ft_rva,
            module_name,
            thunks,
            record_offset,
        });
    }
    Ok(descriptors)
}

fn read_thunks(
    image: &PeImage,
    desc_index: usize,
    oft_rva: u32,
    ft_rva: u32,
) -> Result<Vec<ThunkSlot>> {
    let width = image.machine_class.thunk_width();
    let source_rva = if oft_rva != 0 { oft_rva } else { ft_rva };
    let mut thunks = Vec::new();
    for slot in 0u32.. {
        let at = slot
            .checked_mul(width as u32)
            .and_then(|stride| source_rva.checked_add(stride))
            .ok_or(Error::UnterminatedThunkArray(source_rva))?;
        let raw = image
            .read_at_rva(at, width)
            .map_err(|_| Error::UnterminatedThunkArray(source_rva))?;
        let value = if width == 4 {
            u64::from(u32::from_le_bytes(raw.try_into().unwrap()))
        } else {
            u64::from_le_bytes(raw.try_into().unwrap())
        };
        if value == 0 {
            break;
        }
        let payload = if value & image.machine_class.ordinal_flag() != 0 {
            ThunkPayload::Ordinal((value & 0xFFFF) as u16)
        } else {
            if value > u64::from(u32::MAX) {
                return Err(Error::MalformedDescriptor {
                    index: desc_index,
                    reason: format!("thunk name RVA {value:#x} exceeds 32 bits"),
                });
            }
            let name_rva = value as u32;
            let hint_bytes = image.read_at_rva(name_rva, 2).map_err(|e| {
                Error::MalformedDescriptor {
                    index: desc_index,
                    reason: format!("hint/name record unreadable: {e}"),
                }
            })?;
            let hint = u16::from_le_bytes(hint_bytes.try_into().unwrap());
            let string_rva = name_rva.checked_add(2).ok_or(Error::UnmappedRva(name_rva))?;
            let name = read_name(image, string_rva).map_err(|e| match e {
                Error::MalformedDescriptor { reason, .. } => Error::MalformedDescriptor {
                    index: desc_index,
                    reason,
                },
                other => Error::MalformedDescriptor {
                    index: desc_index,
                    reason: format!("symbol name unreadable: {other}"),
                },
            })?;
            ThunkPayload::ByName {
                hint,
                name,
                name_rva,
            }
        };
        // The slot stride was vetted against whichever array we parsed from;
        // the sibling array's base needs its own overflow check.
        let stride = slot * width as u32;
        let ft_slot_rva = ft_rva
            .checked_add(stride)
            .ok_or(Error::UnmappedRva(ft_rva))?;
        let oft_slot_rva = match oft_rva {
            0 => None,
            base => Some(base.checked_add(stride).ok_or(Error::UnmappedRva(base))?),
        };
        thunks.push(ThunkSlot {
            ft_slot_rva,
            oft_slot_rva,
            raw_value: value,
            payload,
        });
    }
    Ok(thunks)
}

/// Decode the base-relocation directory.  Returns an empty list when the
/// directory is absent or `RELOCS_STRIPPED` is set.
pub fn read_reloc_directory(image: &PeImage) -> Result<Vec<RelocBlock>> {
    let dir = image.directory(DIR_BASERELOC);
    if image.relocs_stripped() || !dir.is_present() {
        return Ok(Vec::new());
    }

    let mut blocks = Vec::new();
    let mut pos: u32 = 0;
    while u64::from(pos) + 8 <= u64::from(dir.size) {
        let block_rva = dir.rva.checked_add(pos).ok_or(Error::MalformedRelocBlock {
            offset: pos,
            reason: "directory runs past the 32-bit address space".into(),
        })?;
        let header = image
            .read_at_rva(block_rva, 8)
            .map_err(|_| Error::MalformedRelocBlock {
                offset: pos,
                reason: "block header unmappable".into(),
            })?;
        let page_rva = u32::from_le_bytes(header[..4].try_into().unwrap());
        let block_size = u32::from_le_bytes(header[4..].try_into().unwrap());
        if block_size < 8 || block_size % 2 != 0 {
            return Err(Error::MalformedRelocBlock {
                offset: pos,
                reason: format!("bad block size {block_size}"),
            });
        }
        if u64::from(pos) + u64::from(block_size) > u64::from(dir.size) {
            return Err(Error::MalformedRelocBlock {
                offset: pos,
                reason: "block overruns directory bounds".into(),
            });
        }
        let body_rva = block_rva.checked_add(8).ok_or(Error::MalformedRelocBlock {
            offset: pos,
            reason: "directory runs past the 32-bit address space".into(),
        })?;
        let body = image
            .read_at_rva(body_rva, block_size as usize - 8)
            .map_err(|_| Error::MalformedRelocBlock {
                offset: pos,
                reason: "block entries unmappable".into(),
            })?;
        let entries: Vec<RelocEntry> = body
            .chunks_exact(2)
            .map(|pair| {
                let word = u16::from_le_bytes(pair.try_into().unwrap());
                RelocEntry {
                    kind: (word >> 12) as u8,
                    offset_in_page: word & 0x0FFF,
                }
            })
            .collect();
        for entry in entries.iter().filter(|e| e.kind != 0) {
            let target = page_rva
                .checked_add(u32::from(entry.offset_in_page))
                .ok_or(Error::MalformedRelocBlock {
                    offset: pos,
                    reason: "entry target RVA overflows the address space".into(),
                })?;
            if image.rva_to_offset(target).is_err() {
                return Err(Error::MalformedRelocBlock {
                    offset: pos,
                    reason: format!("entry target RVA {target:#x} unmappable"),
                });
            }
        }
        blocks.push(RelocBlock { page_rva, entries });
        pos += block_size;
    }
    Ok(blocks)
}

/// Decode both directories of interest in one call.
pub fn read_directories(image: &PeImage) -> Result<ParsedDirectories> {
    let imports = match read_import_directory(image) {
        Ok(imports) => imports,
        Err(Error::NoImportTable) => Vec::new(),
        Err(e) => return Err(e),
    };
    Ok(ParsedDirectories {
        imports,
        relocs: read_reloc_directory(image)?,
    })
}

/// A same-size byte patch at an absolute file offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edit {
    pub offset: u64,
    pub bytes: Vec<u8>,
}

impl Edit {
    pub fn new(offset: u64, bytes: Vec<u8>) -> Self {
        Edit { offset, bytes }
    }
}

/// Apply edits to a copy of the image bytes.
///
/// Output length always equals input length; with no edits the output is
/// byte-identical to the parsed input.
pub fn serialize(image: &PeImage, edits: &[Edit]) -> Result<Vec<u8>> {
    let mut out = image.raw.clone();
    let mut order: Vec<&Edit> = edits.iter().filter(|e| !e.bytes.is_empty()).collect();
    order.sort_by_key(|e| e.offset);
    let mut prev_end: u64 = 0;
    let mut prev_offset: u64 = 0;
    for edit in order {
        let end = edit
            .offset
            .checked_add(edit.bytes.len() as u64)
            .filter(|&e| e <= out.len() as u64)
            .ok_or(Error::EditOutOfBounds {
                offset: edit.offset,
                len: edit.bytes.len(),
            })?;
        if edit.offset < prev_end {
            return Err(Error::OverlappingEdits(prev_offset, edit.offset));
        }
        out[edit.offset as usize..end as usize].copy_from_slice(&edit.bytes);
        prev_end = end;
        prev_offset = edit.offset;
    }
    Ok(out)
}

/// Recompute the optional-header CheckSum field over `bytes`.
///
/// Files whose checksum field is zero are left at zero: an unset checksum
/// stays unset.  Recomputation is idempotent.
pub fn update_checksum(bytes: &[u8], checksum_offset: u64) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let at = checksum_offset as usize;
    if at + 4 > out.len() {
        return out;
    }
    let current = u32::from_le_bytes(out[at..at + 4].try_into().unwrap());
    if current == 0 {
        return out;
    }
    let fresh = checksum::compute(&out, checksum_offset);
    out[at..at + 4].copy_from_slice(&fresh.to_le_bytes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dos_magic() {
        let mut bytes = vec![0u8; 128];
        bytes[0] = b'Z';
        bytes[1] = b'M';
        assert_eq!(parse_pe(bytes), Err(Error::BadDosMagic));
    }

    #[test]
    fn rejects_short_buffer() {
        assert!(matches!(
            parse_pe(vec![b'M', b'Z']),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn rejects_lfanew_past_end() {
        let mut bytes = vec![0u8; 128];
        bytes[0] = b'M';
        bytes[1] = b'Z';
        bytes[0x3C..0x40].copy_from_slice(&0x10_0000u32.to_le_bytes());
        assert!(matches!(
            parse_pe(bytes),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn rejects_bad_nt_signature() {
        let mut bytes = vec![0u8; 128];
        bytes[0] = b'M';
        bytes[1] = b'Z';
        bytes[0x3C..0x40].copy_from_slice(&0x40u32.to_le_bytes());
        bytes[0x40..0x44].copy_from_slice(b"NOPE");
        assert_eq!(parse_pe(bytes), Err(Error::BadNtSignature(0x40)));
    }

    #[test]
    fn serialize_rejects_overlap_and_oob() {
        let image = crate::synth::build_pe(&crate::synth::SynthSpec::minimal_pe32()).unwrap();
        let image = parse_pe(image).unwrap();
        let overlapping = [
            Edit::new(0x10, vec![1, 2, 3, 4]),
            Edit::new(0x12, vec![5, 6]),
        ];
        assert!(matches!(
            serialize(&image, &overlapping),
            Err(Error::OverlappingEdits(_, _))
        ));
        let oob = [Edit::new(image.raw.len() as u64 - 1, vec![0, 0])];
        assert!(matches!(
            serialize(&image, &oob),
            Err(Error::EditOutOfBounds { .. })
        ));
    }

    #[test]
    fn serialize_identity_and_single_edit() {
        let bytes = crate::synth::build_pe(&crate::synth::SynthSpec::minimal_pe32()).unwrap();
        let image = parse_pe(bytes.clone()).unwrap();
        assert_eq!(serialize(&image, &[]).unwrap(), bytes);

        let patched = serialize(&image, &[Edit::new(8, vec![0xAA; 4])]).unwrap();
        assert_eq!(patched.len(), bytes.len());
        for (i, (a, b)) in bytes.iter().zip(patched.iter()).enumerate() {
            if (8..12).contains(&i) {
                assert_eq!(*b, 0xAA);
            } else {
                assert_eq!(a, b, "byte {i} changed outside the edit");
            }
        }
    }

    #[test]
    fn checksum_preserves_unset() {
        let bytes = crate::synth::build_pe(&crate::synth::SynthSpec::minimal_pe32()).unwrap();
        let image = parse_pe(bytes.clone()).unwrap();
        let at = image.checksum_offset as usize;
        assert_eq!(&bytes[at..at + 4], &[0, 0, 0, 0]);
        assert_eq!(update_checksum(&bytes, image.checksum_offset), bytes);
    }

    #[test]
    fn checksum_is_idempotent() {
        let mut spec = crate::synth::SynthSpec::minimal_pe32();
        spec.set_checksum = true;
        let bytes = crate::synth::build_pe(&spec).unwrap();
        let image = parse_pe(bytes.clone()).unwrap();
        let once = update_checksum(&bytes, image.checksum_offset);
        let twice = update_checksum(&once, image.checksum_offset);
        assert_eq!(once, bytes, "generator already wrote the final checksum");
        assert_eq!(once, twice);
    }
}
