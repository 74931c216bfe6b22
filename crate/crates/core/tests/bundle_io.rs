// SPDX-License-Identifier: MIT OR Apache-2.0

use latent_lens::bundle::{load_bundle, read_manifest, write_bundle, write_container, Container, MANIFEST_FILE};
use latent_lens::synth::{generate, SynthConfig};
use latent_lens::tensor::Matrix;
use latent_lens::{Bundle, Bundle64, Error};

fn tiny() -> Bundle {
    generate(&SynthConfig::tiny(42)).unwrap()
}

#[test]
fn round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let b = tiny();
    write_bundle(&b, dir.path()).unwrap();
    let back: Bundle = load_bundle(dir.path()).unwrap();
    assert_eq!(back, b);
    for (x, y) in back.w_u.as_slice().iter().zip(b.w_u.as_slice()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let wide: Bundle64 = load_bundle(dir.path()).unwrap();
    assert_eq!(wide.w_u.get(3, 7), b.w_u.get(3, 7) as f64);
}

#[test]
fn untied_perturbation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = tiny();
    let v = b.w_e.get(11, 4);
    b.w_e.set(11, 4, v + 1e-3);
    write_bundle(&b, dir.path()).unwrap();
    match load_bundle::<f32>(dir.path()) {
        Err(Error::TiedMismatch { row, col, .. }) => assert_eq!((row, col), (11, 4)),
        other => panic!("expected a tie violation, got {other:?}"),
    }
}

#[test]
fn wrong_unembedding_shape_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::tiny(1);
    cfg.arch.d_model = 8;
    let mut b: Bundle = generate(&cfg).unwrap();
    b.w_u = Matrix::zeros(7, 100);
    write_bundle(&b, dir.path()).unwrap();
    let err = load_bundle::<f32>(dir.path()).unwrap_err();
    match &err {
        Error::ShapeMismatch { name, expected, actual } => {
            assert_eq!(name, "W_U");
            assert_eq!(expected, &vec![8, 100]);
            assert_eq!(actual, &vec![7, 100]);
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
    assert!(err.to_string().contains("W_U"));
    assert!(err.is_bundle_error());
}

#[test]
fn shared_key_heads_via_manifest_mapping() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&tiny(), dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["tensor_names"]["W_K.1.1"] = "W_K.1.0".into();
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let b: Bundle = load_bundle(dir.path()).unwrap();
    assert_eq!(b.layers[1].w_k[0], b.layers[1].w_k[1]);
    assert_ne!(b.layers[1].w_q[0], b.layers[1].w_q[1]);
}

#[test]
fn missing_tensor_and_bad_vocab() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&tiny(), dir.path()).unwrap();
    let manifest = read_manifest(dir.path()).unwrap();
    let c = Container::open(&dir.path().join(&manifest.tensors)).unwrap();
    assert!(matches!(
        c.read::<f32>("W_Q.9.0", "W_Q.9.0", &[16, 8]),
        Err(Error::MissingTensor { .. })
    ));
    std::fs::write(dir.path().join(&manifest.vocab), "\"ok\"\nnot json\n").unwrap();
    assert!(matches!(load_bundle::<f32>(dir.path()), Err(Error::Vocab(_))));
}

#[test]
fn non_finite_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.safetensors");
    write_container(&p, &[("x".into(), vec![2, 2], vec![1.0, f32::NAN, 0.0, 0.0])]).unwrap();
    let c = Container::open(&p).unwrap();
    assert!(matches!(
        c.read::<f32>("x", "x", &[2, 2]),
        Err(Error::NonFinite { index: 1, .. })
    ));
}
