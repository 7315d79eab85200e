use r3d_core::channel::ChannelConfig;
use r3d_core::dataset::{file_crc32, make_dataset_suite, Dataset, Split, SplitRatios, SuiteEntry};
use r3d_core::Error;

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csi3d");
    let ds = Dataset::generate(&ChannelConfig::example(4, 8, 2), 12, SplitRatios::from_weights(9.0, 1.0, 2.0).unwrap()).unwrap();
    ds.write(&path, false).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.split, ds.split);
    assert_eq!(back.config, ds.config);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(back.subset(Split::Train).len(), 9);
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        for (x, y) in a.h.iter().zip(&b.h) {
            assert_eq!(x.re, y.re as f32 as f64);
            assert_eq!(x.im, y.im as f32 as f64);
        }
    }
    assert!(matches!(ds.write(&path, false), Err(Error::AlreadyExists(_))));
    ds.write(&path, true).unwrap();
}

#[test]
fn file_size_matches_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csi3d");
    let ds = Dataset::generate(&ChannelConfig::example(8, 8, 4), 100, SplitRatios::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    ds.write(&path, false).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = 7 + 5 * 4 + 8 + 4;
    let record = u32::from_le_bytes(bytes[header - 4..header].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), header + record + 8 * 8 * 4 * 100 * 8 + 4);
    assert_eq!(&bytes[..7], b"CSI3D1\n");
    assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 1);
}

#[test]
fn suite_is_deterministic() {
    let entries = vec![
        SuiteEntry {
            name: "slow".into(),
            n_samples: 20,
            channel: ChannelConfig::example(4, 4, 2),
        },
        SuiteEntry {
            name: "fast".into(),
            n_samples: 10,
            channel: ChannelConfig {
                speed_mps: 30.0,
                ..ChannelConfig::example(4, 4, 2)
            },
        },
    ];
    let ratios = SplitRatios::new(0.75, 1.0 / 12.0, 2.0 / 12.0).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = make_dataset_suite(&entries, ratios, a.path(), false).unwrap();
    let pb = make_dataset_suite(&entries, ratios, b.path(), false).unwrap();
    assert_eq!(pa.len(), 2);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        assert_eq!(file_crc32(x).unwrap(), file_crc32(y).unwrap());
    }
    assert!(matches!(make_dataset_suite(&entries, ratios, a.path(), false), Err(Error::AlreadyExists(_))));
    make_dataset_suite(&entries, ratios, a.path(), true).unwrap();
}
