use super::*;
use crate::encoder::EncoderVariant;

fn tiny_bytes(seed: u64) -> (ModelConfig, Vec<u8>) {
    let c = ModelConfig::tiny();
    let s = reference_init(&c, seed).unwrap();
    let b = to_bytes(&c, &s).unwrap();
    (c, b)
}

fn edit(bytes: &[u8], f: impl FnOnce(&mut WeightManifest)) -> Vec<u8> {
    let mut m = read_manifest(bytes).unwrap();
    f(&mut m);
    replace_manifest(bytes, &m).unwrap()
}

fn entry<'a>(m: &'a mut WeightManifest, name: &str) -> &'a mut TensorEntry {
    m.tensors.iter_mut().find(|e| e.name == name).unwrap()
}

#[test]
fn roundtrip_is_bit_identical() {
    let (c, b) = tiny_bytes(0);
    let (c2, s2) = from_bytes(&b).unwrap();
    assert_eq!(c, c2);
    assert_eq!(to_bytes(&c2, &s2).unwrap(), b);
    assert_eq!(s2, reference_init(&c, 0).unwrap());
}

#[test]
fn file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.emsf");
    let c = ModelConfig::tiny();
    let s = reference_init(&c, 9).unwrap();
    save(&path, &c, &s).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (c2, s2) = load(&path).unwrap();
    save(&path, &c2, &s2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(matches!(load(dir.path().join("absent")), Err(LoadError::Io(_))));
}

#[test]
fn layout_is_aligned() {
    let (_, b) = tiny_bytes(0);
    assert_eq!(&b[..4], MAGIC);
    let m = read_manifest(&b).unwrap();
    assert!(m.tensors.iter().all(|e| e.offset % ALIGN == 0));
    assert!(m.tensors.windows(2).all(|w| w[0].offset + w[0].byte_len() <= w[1].offset));
}

#[test]
fn truncation_is_rejected() {
    let (_, b) = tiny_bytes(0);
    let data_start = read_manifest(&b).unwrap().tensors[0].offset as usize;
    for cut in [0, 3, 15, 40, data_start - 1, data_start + 5, b.len() - 1] {
        let err = from_bytes(&b[..cut]).unwrap_err();
        assert!(matches!(err, LoadError::Truncated { .. } | LoadError::BadMagic), "{cut}: {err}");
        if cut >= 4 {
            assert_eq!(err.kind(), "truncated");
        }
    }
}

#[test]
fn header_errors() {
    let (_, b) = tiny_bytes(0);
    let mut bad = b.clone();
    bad[0] = b'X';
    assert!(matches!(from_bytes(&bad), Err(LoadError::BadMagic)));
    let mut bad = b.clone();
    bad[4] = 2;
    assert!(matches!(from_bytes(&bad), Err(LoadError::UnsupportedVersion(2))));
    let bad = edit(&b, |m| m.format_version = 7);
    assert!(matches!(from_bytes(&bad), Err(LoadError::VersionMismatch { header: 1, manifest: 7 })));
    let mut bad = b.clone();
    bad[HEADER_LEN as usize] = b'!';
    assert!(matches!(from_bytes(&bad), Err(LoadError::ManifestParse(_))));
}

#[test]
fn wide_stem_names_the_tensor() {
    let c = ModelConfig::emsaformer(EncoderVariant::SwinV2T);
    let s = reference_init(&c, 0).unwrap();
    let b = to_bytes(&c, &s).unwrap();
    let bad = edit(&b, |m| entry(m, "encoder.patch_embed.proj.weight").shape[0] = 97);
    match from_bytes(&bad) {
        Err(LoadError::ShapeMismatch { name, expected, found }) => {
            assert_eq!(name, "encoder.patch_embed.proj.weight");
            assert_eq!(expected, [96, 4, 4, 4]);
            assert_eq!(found, [97, 4, 4, 4]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn name_errors() {
    let (_, b) = tiny_bytes(0);
    let bad = edit(&b, |m| entry(m, "scene_head.weight").name = "scene_head.weigxt".into());
    assert!(matches!(from_bytes(&bad), Err(LoadError::UnexpectedTensor(n)) if n == "scene_head.weigxt"));
    let bad = edit(&b, |m| m.tensors.retain(|e| e.name != "context.fuse.bias"));
    assert!(matches!(from_bytes(&bad), Err(LoadError::MissingTensor(n)) if n == "context.fuse.bias"));
    let bad = edit(&b, |m| {
        let dup = m.tensors[0].clone();
        m.tensors[1] = dup;
    });
    assert!(matches!(from_bytes(&bad), Err(LoadError::DuplicateTensor(_))));
}

#[test]
fn layout_errors() {
    let (_, b) = tiny_bytes(0);
    let bad = edit(&b, |m| m.tensors[3].offset += 4);
    assert!(matches!(from_bytes(&bad), Err(LoadError::Misaligned { .. })));
    let bad = edit(&b, |m| m.tensors[3].offset = m.tensors[2].offset);
    assert!(matches!(from_bytes(&bad), Err(LoadError::Overlap(_))));
    let bad = edit(&b, |m| m.tensors[0].offset = 0);
    assert!(matches!(from_bytes(&bad), Err(LoadError::Overlap(_))));
}

#[test]
fn non_finite_values_are_rejected() {
    let (_, b) = tiny_bytes(0);
    let m = read_manifest(&b).unwrap();
    let e = m.tensors.iter().find(|e| e.name == "semantic_head.weight").unwrap();
    for v in [f32::NAN, f32::INFINITY] {
        let mut bad = b.clone();
        let at = e.offset as usize + 4 * 17;
        bad[at..at + 4].copy_from_slice(&v.to_le_bytes());
        match from_bytes(&bad) {
            Err(LoadError::NonFinite { name, index }) => assert_eq!((name.as_str(), index), ("semantic_head.weight", 17)),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn cross_modal_weight_is_rejected() {
    let (c, b) = tiny_bytes(0);
    let m = read_manifest(&b).unwrap();
    let name = "encoder.stages.0.blocks.0.attn.proj.weight";
    let e = m.tensors.iter().find(|e| e.name == name).unwrap();
    // Row 0 is an rgb output; the last column is a depth input.
    let cols = c.encoder.stem_channels;
    let at = e.offset as usize + 4 * (cols - 1);
    let mut bad = b.clone();
    bad[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
    assert!(matches!(from_bytes(&bad), Err(LoadError::ModalityLeak(n)) if n == name));
}

#[test]
fn invalid_config_is_rejected() {
    let (_, b) = tiny_bytes(0);
    let bad = edit(&b, |m| m.config.num_classes = 0);
    assert!(matches!(from_bytes(&bad), Err(LoadError::InvalidConfig(_))));
}

#[test]
fn every_variant_reference_store_loads() {
    for v in EncoderVariant::ALL {
        let c = ModelConfig::emsaformer(v);
        let s = reference_init(&c, 0).unwrap();
        let (c2, s2) = from_bytes(&to_bytes(&c, &s).unwrap()).unwrap();
        assert_eq!(c2, c);
        assert_eq!(s2.len(), expected_shapes(&c).unwrap().len());
    }
}
