use mfqe_core::frame_io::{
    encode_pgm, load_sequence, parse_pgm_stream, save_sequence, synthesize_sequence, GreyImage, LumaFrame, Sequence,
    SynthKind, SynthSpec,
};
use mfqe_core::Error;
use proptest::prelude::*;

fn sequence_strategy() -> impl Strategy<Value = Sequence> {
    (1usize..=4, 1usize..=4, 3usize..=6).prop_flat_map(|(bw, bh, n)| {
        let (w, h) = (bw * 8, bh * 8);
        (proptest::collection::vec(proptest::collection::vec(any::<u8>(), w * h), n), "[a-z]{0,8}").prop_map(
            move |(frames, name)| {
                let frames = frames.into_iter().map(|s| LumaFrame::new(w, h, s).unwrap()).collect();
                Sequence::new(name, frames).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn directory_roundtrip(seq in sequence_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(dir.path()).unwrap();
        prop_assert_eq!(back.name(), seq.name());
        prop_assert_eq!(back.frames(), seq.frames());
    }

    #[test]
    fn stream_roundtrip(seq in sequence_strategy()) {
        let bytes: Vec<u8> = seq.frames().iter().flat_map(|f| f.to_pgm()).collect();
        let images = parse_pgm_stream(&bytes).unwrap();
        prop_assert_eq!(images.len(), seq.len());
        for (img, f) in images.iter().zip(seq.frames()) {
            prop_assert_eq!((img.width, img.height), f.dims());
            prop_assert_eq!(&img.samples[..], f.samples());
        }
    }

    #[test]
    fn crop_keeps_the_centre(w in 8usize..40, h in 8usize..40, seed in any::<u64>()) {
        let samples: Vec<u8> = (0..w * h).map(|i| (i as u64).wrapping_mul(seed | 1).wrapping_shr(7) as u8).collect();
        let img = GreyImage { width: w, height: h, samples: samples.clone() };
        let f = LumaFrame::from_grey_cropped(&img).unwrap();
        let (cw, ch) = (w / 8 * 8, h / 8 * 8);
        prop_assert_eq!(f.dims(), (cw, ch));
        let (left, top) = ((w - cw) / 2, (h - ch) / 2);
        for y in 0..ch {
            for x in 0..cw {
                prop_assert_eq!(f.at(x, y), samples[(y + top) * w + x + left]);
            }
        }
    }

    #[test]
    fn unit_scaling_roundtrips(samples in proptest::collection::vec(any::<u8>(), 64)) {
        let f = LumaFrame::new(8, 8, samples).unwrap();
        prop_assert_eq!(LumaFrame::from_unit(8, 8, &f.to_unit()).unwrap(), f);
    }

    #[test]
    fn synthetic_motion_wraps(dx in -5i32..=5, dy in -5i32..=5, seed in 0u64..1000) {
        let spec = SynthSpec { kind: SynthKind::NoisePan, frames: 3, width: 16, height: 16, dx, dy, seed };
        let seq = synthesize_sequence(&spec).unwrap();
        let (a, b) = (&seq.frames()[0], &seq.frames()[1]);
        for y in 0..16i32 {
            for x in 0..16i32 {
                let sx = (x - dx).rem_euclid(16) as usize;
                let sy = (y - dy).rem_euclid(16) as usize;
                prop_assert_eq!(b.at(x as usize, y as usize), a.at(sx, sy));
            }
        }
    }
}

#[test]
fn fifty_square_crops_one_pixel_each_side() {
    let samples: Vec<u8> = (0..2500).map(|i| (i % 251) as u8).collect();
    let dir = tempfile::tempdir().unwrap();
    let bytes: Vec<u8> = (0..3).flat_map(|_| encode_pgm(50, 50, &samples)).collect();
    let path = dir.path().join("clip.pgm");
    std::fs::write(&path, bytes).unwrap();
    let seq = load_sequence(&path).unwrap();
    assert_eq!(seq.dims(), (48, 48));
    assert_eq!(seq.frames()[0].at(0, 0), samples[51]);
    assert_eq!(seq.frames()[0].at(47, 47), samples[48 * 50 + 48]);
}

#[test]
fn mixed_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("000.pgm"), encode_pgm(16, 16, &[0; 256])).unwrap();
    std::fs::write(dir.path().join("001.pgm"), encode_pgm(16, 16, &[0; 256])).unwrap();
    std::fs::write(dir.path().join("002.pgm"), encode_pgm(24, 16, &[0; 384])).unwrap();
    assert!(matches!(
        load_sequence(dir.path()),
        Err(Error::InconsistentDimensions { expected: (16, 16), found: (24, 16) })
    ));
}

#[test]
fn translate_dx_one_and_static() {
    let mut spec = SynthSpec::translate(4, 16, 8, 5);
    let seq = synthesize_sequence(&spec).unwrap();
    let f = seq.frames();
    for y in 0..8 {
        for x in 0..16 {
            assert_eq!(f[1].at(x, y), f[0].at((x + 15) % 16, y));
        }
    }
    spec.dx = 0;
    let still = synthesize_sequence(&spec).unwrap();
    assert!(still.frames().iter().all(|g| g == &still.frames()[0]));
    assert_eq!(synthesize_sequence(&spec).unwrap().frames(), still.frames());
}
