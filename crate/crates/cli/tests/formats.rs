// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use cfedit::formats::{corpus_spec_meta, decode_cfa, encode_cfa, encode_corpus, load_corpus};
use cfedit_core::corpus::{generate_corpus, CorpusSpec};
use cfedit_core::Matrix;
use proptest::prelude::*;

#[test]
fn cfa_layout() {
    let m = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.25, -0.125]).unwrap();
    let bytes = encode_cfa(&m);
    assert_eq!(&bytes[..4], b"CFA1");
    assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
    assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
    assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
    assert_eq!(bytes.len(), 12 + 6 * 4);
    assert_eq!(decode_cfa(&bytes, Path::new("m")).unwrap(), m);
    assert!(decode_cfa(&bytes[..20], Path::new("m")).is_err());
    assert!(decode_cfa(b"CFA2\0\0\0\0\0\0\0\0", Path::new("m")).is_err());
}

#[test]
fn corpus_round_trip() {
    let spec = CorpusSpec {
        train: 20,
        probe: 10,
        val: 5,
        test: 8,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p, m) = (dir.path().join("c.csv"), dir.path().join("c.meta.csv"));
    std::fs::write(&p, encode_corpus(&corpus)).unwrap();
    std::fs::write(&m, corpus_spec_meta(&spec).encode()).unwrap();
    let back = load_corpus(&p, &m).unwrap();
    assert_eq!(back.spec, spec);
    assert_eq!(back.table, corpus.table);
    for (a, b) in back.utterances.iter().zip(&corpus.utterances) {
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.labels.semantic, b.labels.semantic);
        for (x, y) in a.labels.pitch.iter().zip(&b.labels.pitch) {
            assert!((x - y).abs() <= 5e-7);
        }
    }
    std::fs::write(&p, b"CFEDIT-CORPUS v2\n").unwrap();
    assert!(load_corpus(&p, &m).is_err());
}

proptest! {
    #[test]
    fn cfa_round_trips_f32_values(rows in 0usize..6, cols in 0usize..6, seed in any::<u32>()) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) % 0x7f00_0000) as f64)
            .collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        prop_assert_eq!(decode_cfa(&encode_cfa(&m), Path::new("p")).unwrap(), m);
    }
}
