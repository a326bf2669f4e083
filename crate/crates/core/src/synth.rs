//! Synthetic PE fixture generator.
//!
//! Produces minimal but structurally honest PE32/PE32+ images: real DOS/NT
//! headers, an executable section of indirect call stubs, an import-data
//! section holding descriptors, thunk arrays, hint/name records and module
//! names, and (optionally) a relocation section that covers exactly the
//! absolute words emitted.  Layout is a pure function of the spec, so the
//! same spec always yields identical bytes.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::checksum;
use crate::error::{Error, Result};
use crate::image::{MachineClass, RELOC_DIR64, RELOC_HIGHLOW};
use crate::rng::SplitMix64;

const SECTION_ALIGN: u32 = 0x1000;
const FILE_ALIGN: u32 = 0x200;
const E_LFANEW: u32 = 0x40;

const SCN_CODE_EXEC_READ: u32 = 0x6000_0020;
const SCN_DATA_READ: u32 = 0x4000_0040;
const SCN_DATA_READ_DISCARD: u32 = 0x4200_0040;

/// One imported symbol: by name or by ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolSpec {
    Name(String),
    Ordinal(u16),
}

/// One imported module and its symbol list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub symbols: Vec<SymbolSpec>,
}

impl ModuleSpec {
    pub fn by_name(name: &str, symbols: &[&str]) -> Self {
        ModuleSpec {
            name: name.to_owned(),
            symbols: symbols
                .iter()
                .map(|s| SymbolSpec::Name((*s).to_owned()))
                .collect(),
        }
    }
}

/// Everything [`build_pe`] needs to emit a fixture.
///
/// The `emit_pointer_cells`, `set_checksum`, `text_bss_tail` and `slack_gap`
/// fields extend the basic shape with data-side absolute pointers, a
/// populated CheckSum field, a virtual-only section tail, and an unclaimed
/// gap between section raw ranges — corners the parser and verifier must
/// handle on real-world files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub machine_class: MachineClass,
    pub image_base: u64,
    pub modules: Vec<ModuleSpec>,
    #[serde(default)]
    pub call_sites_per_symbol: u8,
    #[serde(default = "default_true")]
    pub emit_oft: bool,
    #[serde(default)]
    pub emit_relocs: bool,
    #[serde(default)]
    pub set_relocs_stripped: bool,
    #[serde(default)]
    pub bound_stamp: Option<u32>,
    #[serde(default)]
    pub overlay_bytes: Vec<u8>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub emit_pointer_cells: bool,
    #[serde(default)]
    pub set_checksum: bool,
    #[serde(default)]
    pub text_bss_tail: u32,
    #[serde(default = "default_true")]
    pub slack_gap: bool,
}

fn default_true() -> bool {
    true
}

impl SynthSpec {
    /// Small two-symbol PE32 fixture with OFT, call sites, and relocs.
    pub fn minimal_pe32() -> Self {
        SynthSpec {
            machine_class: MachineClass::Pe32,
            image_base: 0x0040_0000,
            modules: vec![ModuleSpec::by_name("demo.dll", &["alpha", "beta"])],
            call_sites_per_symbol: 1,
            emit_oft: true,
            emit_relocs: true,
            set_relocs_stripped: false,
            bound_stamp: None,
            overlay_bytes: Vec::new(),
            seed: 1,
            emit_pointer_cells: false,
            set_checksum: false,
            text_bss_tail: 0,
            slack_gap: true,
        }
    }

    /// PE32+ counterpart of [`SynthSpec::minimal_pe32`].
    pub fn minimal_pe32plus() -> Self {
        SynthSpec {
            machine_class: MachineClass::Pe32Plus,
            image_base: 0x1_4000_0000,
            emit_relocs: false,
            ..SynthSpec::minimal_pe32()
        }
    }
}

fn align_up(value: u32, alignment: u32) -> u32 {
    value.div_ceil(alignment) * alignment
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let invalid = |reason: String| Err(Error::SpecInvalid(reason));
    if !spec.image_base.is_multiple_of(0x1_0000) {
        return invalid(format!(
            "image_base {:#x} is not 64 KiB aligned",
            spec.image_base
        ));
    }
    if spec.machine_class == MachineClass::Pe32 && spec.image_base > u64::from(u32::MAX) {
        return invalid(format!(
            "image_base {:#x} does not fit a PE32 header",
            spec.image_base
        ));
    }
    // Leave headroom for every RVA in the image so VA sums cannot wrap.
    if spec.image_base > u64::MAX - u64::from(u32::MAX) {
        return invalid(format!(
            "image_base {:#x} leaves no address space for the image",
            spec.image_base
        ));
    }
    if spec.set_relocs_stripped && spec.emit_relocs {
        return invalid("set_relocs_stripped requires emit_relocs = false".into());
    }
    if spec.emit_pointer_cells && !spec.emit_relocs {
        return invalid("emit_pointer_cells requires emit_relocs".into());
    }
    if spec.call_sites_per_symbol > 8 {
        return invalid("call_sites_per_symbol larger than 8".into());
    }
    if spec.text_bss_tail > SECTION_ALIGN {
        return invalid("text_bss_tail larger than one section-alignment page".into());
    }
    if spec.bound_stamp == Some(0) {
        return invalid("bound_stamp must be nonzero when present".into());
    }
    if spec.bound_stamp.is_some() && spec.modules.is_empty() {
        return invalid("bound_stamp without any modules".into());
    }
    let clean = |s: &str| !s.is_empty() && s.len() <= 128 && s.bytes().all(|b| (0x21..0x7F).contains(&b));
    for (m, module) in spec.modules.iter().enumerate() {
        if !clean(&module.name) {
            return invalid(format!("module {m} name is empty, too long, or not printable ASCII"));
        }
        if module.symbols.is_empty() {
            return invalid(format!("module {m} ({}) has no symbols", module.name));
        }
        for (s, symbol) in module.symbols.iter().enumerate() {
            if let SymbolSpec::Name(name) = symbol {
                if !clean(name) {
                    return invalid(format!(
                        "module {m} symbol {s} name is empty, too long, or not printable ASCII"
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Build the fixture described by `spec`.
pub fn build_pe(spec: &SynthSpec) -> Result<Vec<u8>> {
    validate(spec)?;
    let is32 = spec.machine_class == MachineClass::Pe32;
    let w = spec.machine_class.thunk_width() as u32;
    let n_mod = spec.modules.len();
    let bound = spec.bound_stamp.is_some();

    // Call sites: `call_sites_per_symbol` stubs per symbol, interleaved
    // across modules in a seed-determined order.
    let mut sites: Vec<(usize, usize)> = Vec::new();
    for (m, module) in spec.modules.iter().enumerate() {
        for s in 0..module.symbols.len() {
            for _ in 0..spec.call_sites_per_symbol {
                sites.push((m, s));
            }
        }
    }
    let mut rng = SplitMix64::new(spec.seed);
    rng.shuffle(&mut sites);

    // ---- virtual layout ----
    let text_va: u32 = SECTION_ALIGN;
    let stub_base: u32 = 0x10;
    let text_len: u32 = stub_base + 6 * sites.len() as u32;
    let text_vsize = text_len + spec.text_bss_tail;
    let site_rva = |i: usize| text_va + stub_base + 6 * i as u32;

    let rdata_va = align_up(text_va + text_vsize, SECTION_ALIGN);
    let mut cursor = rdata_va;
    let desc_rva = rdata_va;
    if n_mod > 0 {
        cursor += 20 * (n_mod as u32 + 1);
    }
    let mut oft_rvas = vec![0u32; n_mod];
    if spec.emit_oft {
        for (m, module) in spec.modules.iter().enumerate() {
            oft_rvas[m] = cursor;
            cursor += w * (module.symbols.len() as u32 + 1);
        }
    }
    let mut ft_rvas = vec![0u32; n_mod];
    let ft_region_start = cursor;
    for (m, module) in spec.modules.iter().enumerate() {
        ft_rvas[m] = cursor;
        cursor += w * (module.symbols.len() as u32 + 1);
    }
    let ft_region_len = cursor - ft_region_start;
    let mut cell_rvas: Vec<Vec<u32>> = Vec::with_capacity(n_mod);
    for module in &spec.modules {
        let mut row = Vec::with_capacity(module.symbols.len());
        for _ in &module.symbols {
            if spec.emit_pointer_cells {
                row.push(cursor);
                cursor += w;
            } else {
                row.push(0);
            }
        }
        cell_rvas.push(row);
    }
    let bound_rva = if bound {
        cursor = align_up(cursor, 4);
        let at = cursor;
        cursor += 8;
        at
    } else {
        0
    };
    let mut hint_name_rvas: Vec<Vec<u32>> = Vec::with_capacity(n_mod);
    for module in &spec.modules {
        let mut row = Vec::with_capacity(module.symbols.len());
        for symbol in &module.symbols {
            match symbol {
                SymbolSpec::Name(name) => {
                    cursor = align_up(cursor, 2);
                    row.push(cursor);
                    cursor += 2 + name.len() as u32 + 1;
                }
                SymbolSpec::Ordinal(_) => row.push(0),
            }
        }
        hint_name_rvas.push(row);
    }
    let mut module_name_rvas = vec![0u32; n_mod];
    for (m, module) in spec.modules.iter().enumerate() {
        module_name_rvas[m] = cursor;
        cursor += module.name.len() as u32 + 1;
    }
    let rdata_len = cursor - rdata_va;
    let has_rdata = rdata_len > 0;

    // Relocation targets: PE32 call-site operands plus pointer cells.
    let mut reloc_targets: Vec<u32> = Vec::new();
    if spec.emit_relocs {
        if is32 {
            reloc_targets.extend((0..sites.len()).map(|i| site_rva(i) + 2));
        }
        if spec.emit_pointer_cells {
            reloc_targets.extend(cell_rvas.iter().flatten().copied());
        }
    }
    reloc_targets.sort_unstable();
    let reloc_kind = if is32 { RELOC_HIGHLOW } else { RELOC_DIR64 };
    let mut reloc_blocks: Vec<(u32, Vec<u16>)> = Vec::new();
    for &target in &reloc_targets {
        let page = target & !0xFFF;
        let entry = (u16::from(reloc_kind) << 12) | (target & 0xFFF) as u16;
        match reloc_blocks.last_mut() {
            Some((p, entries)) if *p == page => entries.push(entry),
            _ => reloc_blocks.push((page, vec![entry])),
        }
    }
    for (_, entries) in &mut reloc_blocks {
        if entries.len() % 2 != 0 {
            entries.push(0); // ABSOLUTE padding keeps block size 4-aligned
        }
    }
    let reloc_len: u32 = reloc_blocks
        .iter()
        .map(|(_, e)| 8 + 2 * e.len() as u32)
        .sum();
    let has_reloc = reloc_len > 0;
    let reloc_va = align_up(rdata_va + rdata_len.max(1), SECTION_ALIGN);

    // ---- file layout ----
    let n_sections = 1 + u32::from(has_rdata) + u32::from(has_reloc);
    let opt_size: u32 = if is32 { 0xE0 } else { 0xF0 };
    let sect_table = E_LFANEW + 4 + 20 + opt_size;
    let size_of_headers = align_up(sect_table + 40 * n_sections, FILE_ALIGN);
    let text_raw_off = size_of_headers;
    let text_raw = align_up(text_len, FILE_ALIGN);
    let gap = if spec.slack_gap { FILE_ALIGN } else { 0 };
    let rdata_raw_off = text_raw_off + text_raw + if has_rdata { gap } else { 0 };
    let rdata_raw = align_up(rdata_len, FILE_ALIGN);
    let reloc_raw_off = rdata_raw_off + rdata_raw;
    let reloc_raw = align_up(reloc_len, FILE_ALIGN);
    let file_len = reloc_raw_off + reloc_raw;

    let last_va_end = if has_reloc {
        reloc_va + reloc_len
    } else if has_rdata {
        rdata_va + rdata_len
    } else {
        text_va + text_vsize
    };
    let size_of_image = align_up(last_va_end, SECTION_ALIGN);

    let rva_off = |rva: u32| -> u32 {
        if rva >= reloc_va && has_reloc {
            reloc_raw_off + (rva - reloc_va)
        } else if rva >= rdata_va && has_rdata {
            rdata_raw_off + (rva - rdata_va)
        } else {
            text_raw_off + (rva - text_va)
        }
    };

    let mut buf = vec![0u8; file_len as usize];
    let put = |buf: &mut [u8], off: u32, bytes: &[u8]| {
        buf[off as usize..off as usize + bytes.len()].copy_from_slice(bytes);
    };
    let put16 = |b: &mut [u8], o: u32, v: u16| put(b, o, &v.to_le_bytes());
    let put32 = |b: &mut [u8], o: u32, v: u32| put(b, o, &v.to_le_bytes());
    let put64 = |b: &mut [u8], o: u32, v: u64| put(b, o, &v.to_le_bytes());
    let put_thunk = |b: &mut [u8], o: u32, v: u64| {
        if w == 4 {
            put(b, o, &(v as u32).to_le_bytes());
        } else {
            put(b, o, &v.to_le_bytes());
        }
    };

    // DOS header.
    put(&mut buf, 0, b"MZ");
    put32(&mut buf, 0x3C, E_LFANEW);

    // NT signature and COFF header.
    put(&mut buf, E_LFANEW, b"PE\0\0");
    let coff = E_LFANEW + 4;
    put16(&mut buf, coff, if is32 { 0x014C } else { 0x8664 });
    put16(&mut buf, coff + 2, n_sections as u16);
    put16(&mut buf, coff + 16, opt_size as u16);
    let mut characteristics: u16 = 0x0002; // EXECUTABLE_IMAGE
    characteristics |= if is32 { 0x0100 } else { 0x0020 };
    if spec.set_relocs_stripped {
        characteristics |= 0x0001;
    }
    put16(&mut buf, coff + 18, characteristics);

    // Optional header.
    let opt = coff + 20;
    put16(&mut buf, opt, if is32 { 0x010B } else { 0x020B });
    buf[opt as usize + 2] = 14; // linker major
    put32(&mut buf, opt + 4, text_raw);
    put32(&mut buf, opt + 8, rdata_raw + reloc_raw);
    put32(&mut buf, opt + 16, text_va); // entry point: the ret stub
    put32(&mut buf, opt + 20, text_va);
    if is32 {
        put32(&mut buf, opt + 24, if has_rdata { rdata_va } else { 0 });
        put32(&mut buf, opt + 28, spec.image_base as u32);
    } else {
        put64(&mut buf, opt + 24, spec.image_base);
    }
    put32(&mut buf, opt + 32, SECTION_ALIGN);
    put32(&mut buf, opt + 36, FILE_ALIGN);
    put16(&mut buf, opt + 40, 6); // OS version
    put16(&mut buf, opt + 48, 6); // subsystem version
    put32(&mut buf, opt + 56, size_of_image);
    put32(&mut buf, opt + 60, size_of_headers);
    put16(&mut buf, opt + 68, 3); // console subsystem
    let dll_chars: u16 = if spec.set_relocs_stripped { 0x8100 } else { 0x8140 };
    put16(&mut buf, opt + 70, dll_chars);
    if is32 {
        put32(&mut buf, opt + 72, 0x10_0000);
        put32(&mut buf, opt + 76, 0x1000);
        put32(&mut buf, opt + 80, 0x10_0000);
        put32(&mut buf, opt + 84, 0x1000);
        put32(&mut buf, opt + 92, 16);
    } else {
        put64(&mut buf, opt + 72, 0x10_0000);
        put64(&mut buf, opt + 80, 0x1000);
        put64(&mut buf, opt + 88, 0x10_0000);
        put64(&mut buf, opt + 96, 0x1000);
        put32(&mut buf, opt + 108, 16);
    }
    let dirs = opt + if is32 { 96 } else { 112 };
    if n_mod > 0 {
        put32(&mut buf, dirs + 8, desc_rva); // import directory
        put32(&mut buf, dirs + 12, 20 * (n_mod as u32 + 1));
        put32(&mut buf, dirs + 96, ft_region_start); // IAT directory
        put32(&mut buf, dirs + 100, ft_region_len);
    }
    if has_reloc {
        put32(&mut buf, dirs + 40, reloc_va);
        put32(&mut buf, dirs + 44, reloc_len);
    }
    if bound {
        put32(&mut buf, dirs + 88, bound_rva);
        put32(&mut buf, dirs + 92, 8);
    }

    // Section table.
    let mut sect = sect_table;
    let mut write_section =
        |buf: &mut [u8], name: &[u8], vsize: u32, va: u32, rsize: u32, roff: u32, chars: u32| {
            let mut padded = [0u8; 8];
            padded[..name.len()].copy_from_slice(name);
            put(buf, sect, &padded);
            put32(buf, sect + 8, vsize);
            put32(buf, sect + 12, va);
            put32(buf, sect + 16, rsize);
            put32(buf, sect + 20, roff);
            put32(buf, sect + 36, chars);
            sect += 40;
        };
    write_section(
        &mut buf,
        b".text",
        text_vsize,
        text_va,
        text_raw,
        text_raw_off,
        SCN_CODE_EXEC_READ,
    );
    if has_rdata {
        write_section(
            &mut buf,
            b".rdata",
            rdata_len,
            rdata_va,
            rdata_raw,
            rdata_raw_off,
            SCN_DATA_READ,
        );
    }
    if has_reloc {
        write_section(
            &mut buf,
            b".reloc",
            reloc_len,
            reloc_va,
            reloc_raw,
            reloc_raw_off,
            SCN_DATA_READ_DISCARD,
        );
    }

    // .text: a ret entry stub, int3 padding, then the call stubs.
    buf[text_raw_off as usize] = 0xC3;
    for i in 1..stub_base {
        buf[(text_raw_off + i) as usize] = 0xCC;
    }
    for (i, &(m, s)) in sites.iter().enumerate() {
        let at = rva_off(site_rva(i));
        let slot_rva = ft_rvas[m] + w * s as u32;
        buf[at as usize] = 0xFF;
        buf[at as usize + 1] = if i % 5 == 3 { 0x25 } else { 0x15 };
        if is32 {
            let operand = u32::try_from(spec.image_base + u64::from(slot_rva)).map_err(|_| {
                Error::SpecInvalid("image_base + slot RVA overflows 32 bits".into())
            })?;
            put32(&mut buf, at + 2, operand);
        } else {
            let disp = i64::from(slot_rva) - i64::from(site_rva(i) + 6);
            let disp = i32::try_from(disp)
                .map_err(|_| Error::SpecInvalid("RIP displacement overflows 32 bits".into()))?;
            put(&mut buf, at + 2, &disp.to_le_bytes());
        }
    }

    // Import descriptors.
    for m in 0..n_mod {
        let at = rva_off(desc_rva + 20 * m as u32);
        put32(&mut buf, at, oft_rvas[m]);
        put32(&mut buf, at + 4, spec.bound_stamp.unwrap_or(0));
        put32(&mut buf, at + 12, module_name_rvas[m]);
        put32(&mut buf, at + 16, ft_rvas[m]);
    }

    // Thunk arrays, pointer cells, hint/name records, module names.
    for (m, module) in spec.modules.iter().enumerate() {
        for (s, symbol) in module.symbols.iter().enumerate() {
            let thunk_value = match symbol {
                SymbolSpec::Name(_) => u64::from(hint_name_rvas[m][s]),
                SymbolSpec::Ordinal(ord) => {
                    spec.machine_class.ordinal_flag() | u64::from(*ord)
                }
            };
            // A bound FT holds resolved addresses only when the original
            // thunks survive in an OFT; without one the stamp alone marks
            // the file as bound.
            let ft_value = if bound && spec.emit_oft {
                fake_bound_address(spec, m, s)
            } else {
                thunk_value
            };
            if spec.emit_oft {
                put_thunk(&mut buf, rva_off(oft_rvas[m] + w * s as u32), thunk_value);
            }
            put_thunk(&mut buf, rva_off(ft_rvas[m] + w * s as u32), ft_value);
            if spec.emit_pointer_cells {
                let slot_va = spec.image_base + u64::from(ft_rvas[m] + w * s as u32);
                put_thunk(&mut buf, rva_off(cell_rvas[m][s]), slot_va);
            }
            if let SymbolSpec::Name(name) = symbol {
                let at = rva_off(hint_name_rvas[m][s]);
                put16(&mut buf, at, s as u16);
                put(&mut buf, at + 2, name.as_bytes());
            }
        }
        let at = rva_off(module_name_rvas[m]);
        put(&mut buf, at, module.name.as_bytes());
    }

    // Relocation blocks.
    let mut at = reloc_raw_off;
    for (page, entries) in &reloc_blocks {
        put32(&mut buf, at, *page);
        put32(&mut buf, at + 4, 8 + 2 * entries.len() as u32);
        for (i, entry) in entries.iter().enumerate() {
            put16(&mut buf, at + 8 + 2 * i as u32, *entry);
        }
        at += 8 + 2 * entries.len() as u32;
    }

    buf.extend_from_slice(&spec.overlay_bytes);

    if spec.set_checksum {
        let checksum_offset = u64::from(opt + 64);
        let value = checksum::compute(&buf, checksum_offset);
        let at = (opt + 64) as usize;
        buf[at..at + 4].copy_from_slice(&value.to_le_bytes());
    }
    Ok(buf)
}

fn fake_bound_address(spec: &SynthSpec, module: usize, symbol: usize) -> u64 {
    let index = (module as u64) << 8 | symbol as u64;
    match spec.machine_class {
        MachineClass::Pe32 => 0x7654_0000 + index * 0x10,
        MachineClass::Pe32Plus => 0x7FFA_1234_0000 + index * 0x10,
    }
}

/// Seeded symbol name: lowercase alphabetic, 4 to 24 characters.
pub fn seeded_symbol_name(rng: &mut SplitMix64) -> String {
    const SYLLABLES: [&str; 20] = [
        "ba", "co", "de", "fi", "gu", "ha", "ki", "lo", "mu", "ne", "pa", "qui", "ro", "sa",
        "tu", "ve", "wi", "xa", "yo", "zu",
    ];
    let count = 2 + rng.below(7) as usize;
    (0..count)
        .map(|_| SYLLABLES[rng.below(SYLLABLES.len() as u64) as usize])
        .collect()
}

fn unique_symbol_name(rng: &mut SplitMix64, used: &HashSet<String>) -> String {
    let mut name = seeded_symbol_name(rng);
    while used.contains(&name) {
        if name.len() >= 22 {
            name = seeded_symbol_name(rng);
        } else {
            name.push_str(["na", "pe", "ri"][rng.below(3) as usize]);
        }
    }
    name
}

const MODULE_POOL: [&str; 12] = [
    "kernel32.dll",
    "user32.dll",
    "advapi32.dll",
    "ole32.dll",
    "shell32.dll",
    "gdi32.dll",
    "comdlg32.dll",
    "version.dll",
    "crypt32.dll",
    "msvcrt.dll",
    "netapi32.dll",
    "winhttp.dll",
];

/// Deterministic fixture family: alternating machine classes, 1–8 modules
/// of 1–64 symbols, OFT and reloc variations, periodic relocs-stripped,
/// checksum, overlay, virtual-tail and all-singleton variants.
pub fn corpus_specs(count: usize, seed: u64) -> Vec<SynthSpec> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let machine_class = if i % 2 == 0 {
                MachineClass::Pe32
            } else {
                MachineClass::Pe32Plus
            };
            let is32 = machine_class == MachineClass::Pe32;
            let stripped = is32 && i % 10 == 6;
            let singletons = i % 25 == 24;

            let n_mod = 1 + rng.below(8) as usize;
            let mut pool: Vec<&str> = MODULE_POOL.to_vec();
            rng.shuffle(&mut pool);
            let modules: Vec<ModuleSpec> = (0..n_mod)
                .map(|m| {
                    let n_sym = if singletons { 1 } else { 1 + rng.below(64) as usize };
                    let mut used = HashSet::new();
                    let symbols = (0..n_sym)
                        .map(|_| {
                            let name = unique_symbol_name(&mut rng, &used);
                            used.insert(name.clone());
                            SymbolSpec::Name(name)
                        })
                        .collect();
                    ModuleSpec {
                        name: pool[m].to_owned(),
                        symbols,
                    }
                })
                .collect();

            let emit_oft = rng.below(10) < 7;
            let cells32 = rng.below(4) == 0;
            let cells64 = rng.below(2) == 0;
            let (emit_relocs, emit_pointer_cells) = if stripped {
                (false, false)
            } else if is32 {
                (true, cells32)
            } else {
                (cells64, cells64)
            };
            let call_sites_per_symbol = if stripped {
                1 + rng.below(2) as u8
            } else {
                rng.below(3) as u8
            };
            let image_base = if is32 {
                [0x0040_0000u64, 0x1000_0000, 0x0087_0000][(i / 2) % 3]
            } else {
                [0x1_4000_0000u64, 0x1_8000_0000, 0x6_4000_0000][(i / 2) % 3]
            };
            SynthSpec {
                machine_class,
                image_base,
                modules,
                call_sites_per_symbol,
                emit_oft,
                emit_relocs,
                set_relocs_stripped: stripped,
                bound_stamp: None,
                overlay_bytes: if i % 7 == 3 {
                    b"trailing overlay payload".to_vec()
                } else {
                    Vec::new()
                },
                seed: rng.next_u64(),
                emit_pointer_cells,
                set_checksum: i % 3 == 0,
                text_bss_tail: if i % 4 == 0 { 0x40 } else { 0 },
                slack_gap: i % 5 != 4,
            }
        })
        .collect()
}
