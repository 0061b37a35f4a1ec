use bwn_core::binarize::{alpha_at_step, zeta_at_step, BinarizeConfig};
use bwn_core::export::{LayerRecord, ModelFile, PackedMatrix, WeightRecord};
use bwn_core::{BinarizeState, PartitionSpec, Tensor, UMode};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = UMode> {
    prop_oneof![Just(UMode::Identity), Just(UMode::Tanh)]
}

proptest! {
    #[test]
    fn packed_matrix_round_trips(rows in 1usize..20, cols in 1usize..40, seed in any::<u64>()) {
        let values: Vec<f32> = (0..rows * cols)
            .map(|i| if (seed.rotate_left(i as u32 % 64) ^ i as u64) & 1 == 1 { 0.5 } else { -0.5 })
            .collect();
        let m = PackedMatrix::pack(rows, cols, &values).unwrap();
        let back = m.unpack();
        for (v, b) in values.iter().zip(back.iter()) {
            prop_assert_eq!(v.signum(), *b);
        }
    }

    #[test]
    fn transform_hits_subset_means(
        phi in prop::collection::vec(-3.0f64..3.0, 2..64),
        zeta in 0.0f64..15.0,
        u_mode in mode(),
    ) {
        let n = phi.len();
        let mut state = BinarizeState::new(
            Tensor::new(vec![n], phi).unwrap(),
            PartitionSpec::single(n).unwrap(),
            u_mode,
        ).unwrap();
        let w = state.forward(zeta).unwrap();
        let member = state.cached_membership().unwrap().to_vec();
        for (side, target) in [(true, 1.0), (false, -1.0)] {
            let vals: Vec<f64> = w.data().iter().zip(&member).filter(|(_, &m)| m == side).map(|(v, _)| *v).collect();
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                prop_assert!((mean - target).abs() < 1e-12, "mean {} target {}", mean, target);
            }
        }
    }

    #[test]
    fn schedules_are_monotone_and_bounded(total in 1u64..5000, t_alpha in 0.0f64..1.0, ramp in 0.0f64..1.0) {
        let cfg = BinarizeConfig { zeta_ramp_start_fraction: ramp, t_alpha, ..BinarizeConfig::default() };
        let mut prev = (0.0, 0.0);
        for t in (0..=total).step_by((total as usize / 50).max(1)) {
            let a = alpha_at_step(t, total, t_alpha);
            let z = zeta_at_step(t, total, &cfg);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((cfg.zeta_initial..=cfg.zeta_final).contains(&z));
            prop_assert!(a >= prev.0 && z >= prev.1);
            prev = (a, z);
        }
        prop_assert_eq!(zeta_at_step(total, total, &cfg), cfg.zeta_final);
    }

    #[test]
    fn model_file_round_trips(
        fan_in in 1usize..30,
        out in 1usize..10,
        bias in prop::collection::vec(-5.0f32..5.0, 10),
        bits in prop::collection::vec(any::<bool>(), 300),
        checkpoint in any::<bool>(),
    ) {
        let values: Vec<f32> = bits[..fan_in * out].iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let file = ModelFile {
            input_shape: vec![fan_in],
            checkpoint,
            layers: vec![
                LayerRecord::Dense {
                    shape: [fan_in, out],
                    weight: WeightRecord::Packed(PackedMatrix::pack_weight(&Tensor::new(vec![fan_in, out], values).unwrap()).unwrap()),
                    bias: Tensor::new(vec![out], bias[..out].to_vec()).unwrap(),
                },
                LayerRecord::Relu,
            ],
        };
        let bytes = file.encode();
        let back = ModelFile::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = ModelFile::decode(&bytes);
    }

    #[test]
    fn decode_rejects_every_truncation(cut in 0usize..46) {
        let file = ModelFile {
            input_shape: vec![3],
            checkpoint: false,
            layers: vec![LayerRecord::Relu],
        };
        let bytes = file.encode();
        let cut = cut % bytes.len();
        prop_assert!(ModelFile::decode(&bytes[..cut]).is_err());
    }
}
