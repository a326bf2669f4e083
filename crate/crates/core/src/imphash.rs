//! Import-table fingerprinting.
//!
//! The fingerprint is an MD5 over a canonical string built from the import
//! list in stored order: descriptors as they appear in the table, thunks as
//! they appear in each array.  Two normalization modes are supported and
//! they differ in module-suffix handling, entry separator, and ordinal
//! treatment; see [`ImphashMode`].

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImportDescriptor, PeImage, ThunkPayload};

/// Canonical-string flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImphashMode {
    /// Strict flavor: any final dot-suffix of the module name is stripped,
    /// entries are concatenated with no separator, and ordinal-only imports
    /// are an error because they have no name to hash.
    PaperMode,
    /// Ecosystem-compatible flavor: only the `dll`, `ocx`, and `sys`
    /// suffixes are stripped, entries are comma-joined, and ordinal imports
    /// fall back to an `ordN` label.
    CompatMode,
}

/// Lowercase `module` and strip its suffix according to `mode`.
pub fn normalize_module(module: &str, mode: ImphashMode) -> String {
    let lower = module.to_ascii_lowercase();
    match mode {
        ImphashMode::PaperMode => match lower.rsplit_once('.') {
            Some((stem, _)) => stem.to_owned(),
            None => lower,
        },
        ImphashMode::CompatMode => match lower.rsplit_once('.') {
            Some((stem, "dll" | "ocx" | "sys")) => stem.to_owned(),
            _ => lower,
        },
    }
}

fn symbol_label(module: &str, payload: &ThunkPayload, mode: ImphashMode) -> Result<String> {
    match payload {
        ThunkPayload::ByName { name, .. } => Ok(name.to_ascii_lowercase()),
        ThunkPayload::Ordinal(ordinal) => match mode {
            ImphashMode::PaperMode => Err(Error::NoSymbolName {
                module: module.to_owned(),
                ordinal: *ordinal,
            }),
            ImphashMode::CompatMode => Ok(format!("ord{ordinal}")),
        },
    }
}

/// Build the canonical string the digest is taken over.
///
/// Order is exactly the stored order; an empty descriptor list yields the
/// empty string.
pub fn canonical_import_string(
    descriptors: &[ImportDescriptor],
    mode: ImphashMode,
) -> Result<String> {
    let mut entries = Vec::new();
    for descriptor in descriptors {
        let module = normalize_module(&descriptor.module_name, mode);
        for thunk in &descriptor.thunks {
            let label = symbol_label(&descriptor.module_name, &thunk.payload, mode)?;
            entries.push(format!("{module}.{label}"));
        }
    }
    Ok(match mode {
        ImphashMode::PaperMode => entries.concat(),
        ImphashMode::CompatMode => entries.join(","),
    })
}

/// Lowercase-hex MD5 of the canonical import string.
pub fn imphash(descriptors: &[ImportDescriptor], mode: ImphashMode) -> Result<String> {
    let canonical = canonical_import_string(descriptors, mode)?;
    Ok(hex::encode(Md5::digest(canonical.as_bytes())))
}

/// A fingerprint with its inputs: the mode, the canonical string the digest
/// was taken over, and the digest itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImphashReport {
    pub mode: ImphashMode,
    pub canonical_string: String,
    pub digest: String,
}

/// Fingerprint a whole image in one mode, canonical string included.  An
/// image with no import directory hashes the empty string.
pub fn imphash_report(image: &PeImage, mode: ImphashMode) -> Result<ImphashReport> {
    let descriptors = match crate::codec::read_import_directory(image) {
        Ok(descriptors) => descriptors,
        Err(Error::NoImportTable) => Vec::new(),
        Err(e) => return Err(e),
    };
    let canonical_string = canonical_import_string(&descriptors, mode)?;
    Ok(ImphashReport {
        mode,
        digest: hex::encode(Md5::digest(canonical_string.as_bytes())),
        canonical_string,
    })
}

/// Reports for every mode computable on this image.  PaperMode has no
/// ordinal handling, so images importing by ordinal yield the CompatMode
/// report alone; any other error propagates.
pub fn imphash_reports(image: &PeImage) -> Result<Vec<ImphashReport>> {
    let mut reports = Vec::with_capacity(2);
    match imphash_report(image, ImphashMode::PaperMode) {
        Ok(report) => reports.push(report),
        Err(Error::NoSymbolName { .. }) => {}
        Err(e) => return Err(e),
    }
    reports.push(imphash_report(image, ImphashMode::CompatMode)?);
    Ok(reports)
}

/// Fingerprint a whole image.  An image with no import directory hashes the
/// empty string.
pub fn imphash_of_image(image: &PeImage, mode: ImphashMode) -> Result<String> {
    match crate::codec::read_import_directory(image) {
        Ok(descriptors) => imphash(&descriptors, mode),
        Err(Error::NoImportTable) => imphash(&[], mode),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ThunkSlot;

    /// RFC 1321 appendix vectors, pinning down the digest primitive.
    #[test]
    fn md5_reference_vectors() {
        let cases = [
            ("", "d41d8cd98f00b204e9800998ecf8427e"),
            ("a", "0cc175b9c0f1b6a831c399e269772661"),
            ("abc", "900150983cd24fb0d6963f7d28e17f72"),
            ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
            (
                "abcdefghijklmnopqrstuvwxyz",
                "c3fcd3d76192e4007dfb496cca67e13b",
            ),
            (
                "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
                "d174ab98d277d9f5a5611c2c9f419d9f",
            ),
            (
                "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
                "57edf4a22be3c955ac49da2e2107b67a",
            ),
        ];
        for (input, want) in cases {
            assert_eq!(hex::encode(Md5::digest(input.as_bytes())), want);
        }
    }

    fn by_name(module: &str, names: &[&str]) -> ImportDescriptor {
        ImportDescriptor {
            oft_rva: 0,
            time_date_stamp: 0,
            forwarder_chain: 0,
            name_rva: 0x100,
            ft_rva: 0x200,
            module_name: module.to_owned(),
            thunks: names
                .iter()
                .enumerate()
                .map(|(i, name)| ThunkSlot {
                    ft_slot_rva: 0x200 + 4 * i as u32,
                    oft_slot_rva: None,
                    raw_value: 0x300,
                    payload: ThunkPayload::ByName {
                        hint: i as u16,
                        name: (*name).to_owned(),
                        name_rva: 0x300,
                    },
                })
                .collect(),
            record_offset: 0,
        }
    }

    #[test]
    fn module_suffix_handling_differs_by_mode() {
        for (module, paper, compat) in [
            ("OLE32.DLL", "ole32", "ole32"),
            ("driver.SYS", "driver", "driver"),
            ("widget.OCX", "widget", "widget"),
            ("helper.drv", "helper", "helper.drv"),
            ("helper.DRV", "helper", "helper.drv"),
            ("noext", "noext", "noext"),
            ("two.dots.dll", "two.dots", "two.dots"),
        ] {
            assert_eq!(normalize_module(module, ImphashMode::PaperMode), paper);
            assert_eq!(normalize_module(module, ImphashMode::CompatMode), compat);
        }
    }

    #[test]
    fn canonical_strings_for_a_known_layout() {
        let descriptors = vec![by_name(
            "OLE32.DLL",
            &["CoInitialize", "CoCreateGuid", "CoUninitialize"],
        )];
        assert_eq!(
            canonical_import_string(&descriptors, ImphashMode::PaperMode).unwrap(),
            "ole32.coinitializeole32.cocreateguidole32.couninitialize"
        );
        assert_eq!(
            canonical_import_string(&descriptors, ImphashMode::CompatMode).unwrap(),
            "ole32.coinitialize,ole32.cocreateguid,ole32.couninitialize"
        );
        assert_eq!(
            imphash(&descriptors, ImphashMode::PaperMode).unwrap(),
            "50aef232d164ada74382af3c134052ac"
        );
        assert_eq!(
            imphash(&descriptors, ImphashMode::CompatMode).unwrap(),
            "e33ce68314a02bc20bcfee85f98088d3"
        );
    }

    #[test]
    fn empty_import_list_hashes_empty_string() {
        for mode in [ImphashMode::PaperMode, ImphashMode::CompatMode] {
            assert_eq!(
                imphash(&[], mode).unwrap(),
                "d41d8cd98f00b204e9800998ecf8427e"
            );
        }
    }

    #[test]
    fn ordinal_handling_differs_by_mode() {
        let mut descriptor = by_name("custom.dll", &[]);
        descriptor.thunks = vec![ThunkSlot {
            ft_slot_rva: 0x200,
            oft_slot_rva: None,
            raw_value: 0x8000_0007,
            payload: ThunkPayload::Ordinal(7),
        }];
        let descriptors = vec![descriptor];

        match imphash(&descriptors, ImphashMode::PaperMode) {
            Err(Error::NoSymbolName { module, ordinal }) => {
                assert_eq!(module, "custom.dll");
                assert_eq!(ordinal, 7);
            }
            other => panic!("expected NoSymbolName, got {other:?}"),
        }
        assert_eq!(
            canonical_import_string(&descriptors, ImphashMode::CompatMode).unwrap(),
            "custom.ord7"
        );
    }

    #[test]
    fn digest_is_order_sensitive() {
        let forward = vec![by_name("a.dll", &["x"]), by_name("b.dll", &["y"])];
        let reversed = vec![by_name("b.dll", &["y"]), by_name("a.dll", &["x"])];
        for mode in [ImphashMode::PaperMode, ImphashMode::CompatMode] {
            assert_ne!(
                imphash(&forward, mode).unwrap(),
                imphash(&reversed, mode).unwrap()
            );
        }
    }
}
