//! Sequential-versus-parallel comparison benches for the feature-gated
//! data-parallel paths: checksum folding, call-site scanning, and the
//! end-to-end transform as the pipeline-level reference point.
//!
//! Build with and without `--no-default-features` to compare the dispatching
//! entry points; within a default-features run the `seq`/`par` pairs compare
//! the two implementations directly.

use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use petool_core::image::{MachineClass, PeImage, SectionHeader, SCN_MEM_EXECUTE};
use petool_core::rng::SplitMix64;
use petool_core::synth::{self, ModuleSpec, SynthSpec};
use petool_core::{textscan, transform, Strategy, TransformOptions};

fn random_buffer(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = SplitMix64::new(seed);
    let mut buf = vec![0u8; len];
    for chunk in buf.chunks_mut(8) {
        let word = rng.next_u64().to_le_bytes();
        chunk.copy_from_slice(&word[..chunk.len()]);
    }
    buf
}

fn bench_checksum(c: &mut Criterion) {
    let mut group = c.benchmark_group("checksum");
    for mib in [1usize, 16] {
        let data = random_buffer(mib as u64, mib * 1024 * 1024);
        group.throughput(Throughput::Bytes(data.len() as u64));
        group.bench_with_input(BenchmarkId::new("seq", mib), &data, |b, data| {
            b.iter(|| petool_core::checksum::compute_seq(std::hint::black_box(data), 64))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", mib), &data, |b, data| {
            b.iter(|| petool_core::checksum::compute_par(std::hint::black_box(data), 64))
        });
    }
    group.finish();
}

/// Hand-built image with `code_len` bytes of executable section, an `FF 15`
/// site every 64 bytes, and 64 import slots for the operands to reference.
fn scan_fixture(code_len: usize) -> (PeImage, BTreeSet<u32>) {
    let image_base: u64 = 0x40_0000;
    let text_rva: u32 = 0x1000;
    let slots: Vec<u32> = (0..64u32).map(|i| 0x80_0000 + i * 4).collect();
    let mut code = vec![0x90u8; code_len];
    let mut rng = SplitMix64::new(1);
    let mut pos = 0;
    while pos + 6 <= code.len() {
        let slot = slots[rng.below(slots.len() as u64) as usize];
        code[pos] = 0xFF;
        code[pos + 1] = 0x15;
        let operand = (image_base as u32).wrapping_add(slot);
        code[pos + 2..pos + 6].copy_from_slice(&operand.to_le_bytes());
        pos += 64;
    }
    let header = 0x400usize;
    let mut raw = vec![0u8; header];
    raw.extend_from_slice(&code);
    let image = PeImage {
        raw,
        machine_class: MachineClass::Pe32,
        image_base,
        e_lfanew: 0x80,
        sections: vec![SectionHeader {
            name: *b".text\0\0\0",
            virtual_address: text_rva,
            virtual_size: code_len as u32,
            raw_offset: header as u32,
            raw_size: code_len as u32,
            characteristics: SCN_MEM_EXECUTE,
        }],
        data_directories: Vec::new(),
        characteristics: 0,
        checksum_offset: 0x98,
        directories_offset: 0xB0,
        size_of_image: text_rva + code_len as u32,
    };
    (image, slots.into_iter().collect())
}

fn bench_scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan");
    for mib in [1usize, 4] {
        let (image, slots) = scan_fixture(mib * 1024 * 1024);
        let sites = textscan::scan_iat_references_seq(&image, &slots).len();
        assert!(sites > 10_000, "fixture holds {sites} sites");
        group.throughput(Throughput::Bytes((mib * 1024 * 1024) as u64));
        group.bench_with_input(BenchmarkId::new("seq", mib), &image, |b, image| {
            b.iter(|| textscan::scan_iat_references_seq(std::hint::black_box(image), &slots))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", mib), &image, |b, image| {
            b.iter(|| textscan::scan_iat_references_par(std::hint::black_box(image), &slots))
        });
    }
    group.finish();
}

fn bench_transform(c: &mut Criterion) {
    let spec = SynthSpec {
        modules: (0..4)
            .map(|m| {
                let symbols: Vec<String> = (0..32).map(|s| format!("Symbol{m}_{s}")).collect();
                let names: Vec<&str> = symbols.iter().map(String::as_str).collect();
                ModuleSpec::by_name(&format!("module{m}.dll"), &names)
            })
            .collect(),
        call_sites_per_symbol: 2,
        emit_relocs: true,
        seed: 7,
        ..SynthSpec::minimal_pe32()
    };
    let bytes = synth::build_pe(&spec).unwrap();
    let mut group = c.benchmark_group("transform");
    group.throughput(Throughput::Bytes(bytes.len() as u64));
    group.bench_function("end_to_end", |b| {
        b.iter(|| {
            transform(
                std::hint::black_box(&bytes),
                7,
                Strategy::Auto,
                TransformOptions::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_checksum, bench_scan, bench_transform);
criterion_main!(benches);
