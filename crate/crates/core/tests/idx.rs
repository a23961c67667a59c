use fednoil::data::{dataset_from_idx, load_idx, parse_idx_images, parse_idx_labels};
use fednoil::Error;

fn images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803, n, rows, cols] {
        b.extend_from_slice(&u32::to_be_bytes(v));
    }
    b.extend_from_slice(pixels);
    b
}

fn labels(values: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&u32::to_be_bytes(0x0801));
    b.extend_from_slice(&u32::to_be_bytes(values.len() as u32));
    b.extend_from_slice(values);
    b
}

#[test]
fn hand_fixture_parses() {
    let img = images(2, 2, 3, &[0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 1]);
    let (n, rows, cols, pix) = parse_idx_images(&img).unwrap();
    assert_eq!((n, rows, cols), (2, 2, 3));
    assert_eq!(pix.len(), 12);

    let ds = dataset_from_idx(&img, &labels(&[0, 2])).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 6);
    assert_eq!(ds.num_classes(), 3);
    assert_eq!(ds.true_labels(), &[0, 2]);
    assert_eq!(ds.row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!(ds.row(1)[0], 1.0);
    assert_eq!(ds.row(1)[5], 1.0 / 255.0);
}

#[test]
fn bad_magic_is_rejected() {
    let mut img = images(1, 1, 1, &[7]);
    img[3] = 0x01;
    assert!(matches!(parse_idx_images(&img), Err(Error::Parse { offset: 0, .. })));
    let mut lab = labels(&[1]);
    lab[3] = 0x03;
    assert!(matches!(parse_idx_labels(&lab), Err(Error::Parse { offset: 0, .. })));
    // image and label files swapped
    assert!(dataset_from_idx(&labels(&[1]), &images(1, 1, 1, &[7])).is_err());
}

#[test]
fn truncation_is_rejected() {
    let img = images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]);
    for cut in [0, 3, 10, 15, img.len() - 1] {
        assert!(matches!(parse_idx_images(&img[..cut]), Err(Error::Parse { .. })), "cut {cut}");
    }
    let lab = labels(&[1, 2, 3]);
    assert!(matches!(parse_idx_labels(&lab[..lab.len() - 1]), Err(Error::Parse { .. })));
}

#[test]
fn count_mismatch_is_rejected() {
    let img = images(2, 1, 1, &[1, 2]);
    assert!(matches!(dataset_from_idx(&img, &labels(&[0, 1, 1])), Err(Error::Parse { .. })));
}

#[test]
fn load_from_disk_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    std::fs::write(&ip, images(1, 1, 2, &[255, 0])).unwrap();
    std::fs::write(&lp, labels(&[1])).unwrap();
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.row(0), &[1.0, 0.0]);
    let err = load_idx(&dir.path().join("nope"), &lp).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("nope"));
}
