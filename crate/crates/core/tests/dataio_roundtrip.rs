use std::path::PathBuf;

use fmtk::dataio::{read_manifest_rows, write_manifest, Dataset, LoadOptions, ManifestRow, Split, Style};
use fmtk::imaging::Image;
use proptest::prelude::*;
use tempfile::TempDir;

fn split() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)]
}

fn row(index: usize) -> impl Strategy<Value = ManifestRow> {
    (
        split(),
        proptest::option::of(0u8..3),
        [proptest::option::of(0u8..=1), proptest::option::of(0u8..=1), proptest::option::of(0u8..=1)],
        [proptest::option::of(0.0f64..=1.0), proptest::option::of(0.0f64..=1.0), proptest::option::of(0.0f64..=1.0)],
    )
        .prop_map(move |(split, overall, details, pseudo)| ManifestRow {
            image: PathBuf::from(format!("images/{index:05}.png")),
            split,
            overall,
            details,
            pseudo,
        })
}

fn rows() -> impl Strategy<Value = Vec<ManifestRow>> {
    (0usize..12).prop_flat_map(|n| (0..n).map(row).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_write_read_is_lossless(rows in rows()) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &rows).unwrap();
        prop_assert_eq!(read_manifest_rows(&path, Style::ThreeClass).unwrap(), rows);
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid(
        (w, h, bytes) in (1usize..20, 1usize..20).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h * 3)))
    ) {
        let img = Image::from_rgb8(w, h, &bytes).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("x.png");
        img.save_png(&path).unwrap();
        prop_assert_eq!(Image::load_png(&path).unwrap(), img);
    }
}

#[test]
fn dataset_load_resolves_paths_relative_to_the_manifest() {
    let dir = TempDir::new().unwrap();
    std::fs::create_dir(dir.path().join("images")).unwrap();
    let mut rows = Vec::new();
    for i in 0..4 {
        let mut img = Image::black(20, 20);
        img.set_pixel(i, i, [1.0, 0.5, 0.0]);
        img.save_png(&dir.path().join(format!("images/{i:05}.png"))).unwrap();
        rows.push(ManifestRow {
            image: PathBuf::from(format!("images/{i:05}.png")),
            split: if i < 3 { Split::Train } else { Split::Test },
            overall: Some(i as u8 % 3),
            details: [Some(1), None, Some(0)],
            pseudo: [None; 3],
        });
    }
    let manifest = dir.path().join("manifest.csv");
    write_manifest(&manifest, &rows).unwrap();
    let ds = Dataset::load(&manifest, Style::ThreeClass, &LoadOptions::synthetic(10)).unwrap();
    assert_eq!(ds.rows, rows);
    assert_eq!(ds.images.len(), 4);
    assert!(ds.images.iter().all(|im| im.width() == 10 && im.height() == 10));
    assert_eq!(ds.indices(Split::Test), vec![3]);

    std::fs::remove_file(dir.path().join("images/00002.png")).unwrap();
    let err = Dataset::load(&manifest, Style::ThreeClass, &LoadOptions::synthetic(10)).unwrap_err();
    assert!(err.to_string().contains("00002.png"), "{err}");
}
