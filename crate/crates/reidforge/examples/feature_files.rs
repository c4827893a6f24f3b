//! Round-trip the binary feature format and the metadata manifest.

use reidforge::featstore::{
    read_features, read_manifest, write_features, write_manifest, write_named_blocks,
    read_named_blocks, FeatureMatrix, GalleryManifest, ManifestEntry,
};

fn main() {
    let matrix = FeatureMatrix::new(2, 3, vec![1.0, -0.5, 0.25, 3.75, 2.0, -1.125]).unwrap();

    let mut bytes = Vec::new();
    let written = write_features(&matrix, &mut bytes).unwrap();
    println!("{} bytes: 28-byte header + {} f32 values", written, matrix.rows() * matrix.dim());

    let back = read_features(&mut &bytes[..]).unwrap();
    assert_eq!(back, matrix);
    println!("read back {}x{} rows, first row {:?}", back.rows(), back.dim(), back.row(0));

    let manifest = GalleryManifest::new(vec![
        ManifestEntry {
            item_id: "car_a".into(),
            identity: 7,
            camera: 0,
            tracklet: 3,
            frame: 0,
        },
        ManifestEntry {
            item_id: "car_b".into(),
            identity: 7,
            camera: 1,
            tracklet: -1,
            frame: -1,
        },
    ])
    .unwrap();
    let mut text = Vec::new();
    write_manifest(&manifest, &mut text).unwrap();
    print!("manifest:\n{}", String::from_utf8_lossy(&text));
    let parsed = read_manifest(&text[..]).unwrap();
    assert_eq!(parsed, manifest);

    // several named tensors in one container file
    let mut pack = Vec::new();
    write_named_blocks(&[("weights", &matrix), ("bias", &matrix)], &mut pack).unwrap();
    let blocks = read_named_blocks(&mut &pack[..]).unwrap();
    println!("container holds {} blocks: {:?}", blocks.len(), blocks.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
}
