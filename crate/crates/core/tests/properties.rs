use hybridhash::data::{hflip_hwc, ImageDataset};
use hybridhash::loss::{pair_loss, PairBatch};
use hybridhash::nn::ParamStore;
use hybridhash::optim::{Rmsprop, RmspropConfig};
use hybridhash::retrieval::{
    average_precision, binarize, hamming_distance, mean_average_precision, retrieve, run_retrieval, CodeDatabase,
    HashCode,
};
use hybridhash::{Tape, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = ImageDataset> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..6, 1usize..8).prop_flat_map(|(h, w, c, classes, n)| {
        let mask = (1u64 << classes) - 1;
        (
            vec(any::<u8>(), h * w * c * n),
            vec((1..=mask).prop_map(move |l| l & mask), n),
        )
            .prop_map(move |(pixels, labels)| ImageDataset::new((h, w, c), classes, pixels, labels).unwrap())
    })
}

fn code_db(bits: usize, n: usize) -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<u64>)> {
    (vec(vec(any::<bool>(), bits), n), vec(1u64..8, n))
}

proptest! {
    #[test]
    fn dataset_bytes_round_trip(ds in dataset()) {
        let back = ImageDataset::from_bytes(&ds.to_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn truncated_dataset_is_rejected(ds in dataset(), cut in 1usize..16) {
        let bytes = ds.to_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(ImageDataset::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn horizontal_flip_is_an_involution(h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
        let img: Vec<u64> = (0..h * w * c).map(|i| seed.wrapping_mul(i as u64 + 1)).collect();
        let once = hflip_hwc(&img, (h, w, c));
        prop_assert_eq!(hflip_hwc(&once, (h, w, c)), img);
    }

    #[test]
    fn average_precision_is_a_fraction(relevant in vec(any::<bool>(), 0..40)) {
        let ap = average_precision(&relevant);
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert_eq!(ap == 0.0, !relevant.contains(&true));
    }

    #[test]
    fn binarization_ignores_positive_scale(values in vec(-1.0f64..1.0, 12), scale in 0.01f64..100.0) {
        let a = binarize(&Tensor::new(&[3, 4], values.clone()).unwrap()).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let b = binarize(&Tensor::new(&[3, 4], scaled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn storage_order_does_not_change_ranking(
        (codes, labels) in code_db(10, 12),
        (qcodes, qlabels) in code_db(10, 3),
        rotate in 0usize..12,
        k in 1usize..=12,
    ) {
        let to_codes = |bits: &[Vec<bool>]| bits.iter().map(|b| HashCode::from_bits(b)).collect::<Vec<_>>();
        let queries = CodeDatabase::sequential(10, qlabels, to_codes(&qcodes)).unwrap();
        let db = CodeDatabase::sequential(10, labels.clone(), to_codes(&codes)).unwrap();

        let mut order: Vec<usize> = (0..12).collect();
        order.rotate_left(rotate);
        order.reverse();
        let shuffled = CodeDatabase::new(
            10,
            order.iter().map(|&i| i as u64).collect(),
            order.iter().map(|&i| labels[i]).collect(),
            order.iter().map(|&i| HashCode::from_bits(&codes[i])).collect(),
        )
        .unwrap();

        let a = run_retrieval(&queries, &db, k).unwrap();
        let b = run_retrieval(&queries, &shuffled, k).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(mean_average_precision(&a).unwrap(), mean_average_precision(&b).unwrap());
    }

    #[test]
    fn tensor_permute_has_an_inverse(dims in vec(1usize..4, 1..5), seed in any::<u64>()) {
        let rank = dims.len();
        let t = Tensor::from_fn(&dims, |i| (i as f64) + (seed % 7) as f64);
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.rotate_left((seed as usize) % rank);
        let mut inverse = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let round = t.permute(&axes).unwrap().permute(&inverse).unwrap();
        prop_assert_eq!(round, t);
    }

    #[test]
    fn hamming_distance_is_a_metric(bits in 1usize..130, seed in any::<[u64; 3]>()) {
        let code = |s: u64| {
            let b: Vec<bool> = (0..bits).map(|j| (s.rotate_left(j as u32 % 64) ^ (j as u64 * 0x9e37)) & 1 == 1).collect();
            HashCode::from_bits(&b)
        };
        let (a, b, c) = (code(seed[0]), code(seed[1]), code(seed[2]));
        let d = |x: &HashCode, y: &HashCode| hamming_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(a.inner_product(&b).unwrap(), bits as i64 - 2 * i64::from(d(&a, &b)));
    }

    #[test]
    fn packed_codes_keep_tail_bits_clear(values in vec(-1.0f32..1.0, 1..200)) {
        let code = HashCode::from_signs(&values);
        let bits = values.len();
        let last = *code.words().last().unwrap();
        if bits % 64 != 0 {
            prop_assert_eq!(last >> (bits % 64), 0);
        }
        for (j, v) in values.iter().enumerate() {
            prop_assert_eq!(code.bit(j), *v > 0.0);
        }
    }

    #[test]
    fn rankings_are_sorted_and_repeatable((codes, labels) in code_db(16, 20), query in vec(any::<bool>(), 16), k in 1usize..=20) {
        let db = CodeDatabase::sequential(16, labels, codes.iter().map(|b| HashCode::from_bits(b)).collect()).unwrap();
        let q = HashCode::from_bits(&query);
        let (ids, dist) = retrieve(&q, &db, k).unwrap();
        prop_assert_eq!(ids.len(), k);
        for w in ids.iter().zip(&dist).collect::<Vec<_>>().windows(2) {
            prop_assert!(w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert_eq!(retrieve(&q, &db, k).unwrap(), (ids, dist));
    }

    #[test]
    fn rmsprop_running_averages_stay_non_negative(grads in vec(vec(-1e3f64..1e3, 6), 1..6)) {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(&[6])).unwrap();
        let mut opt = Rmsprop::new(RmspropConfig::default(), &store);
        for g in grads {
            opt.step(&mut store, &[Tensor::new(&[6], g).unwrap()]).unwrap();
            prop_assert!(opt.state()[0].data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in vec(vec(-50.0f64..50.0, 5), 1..6)) {
        let n = rows.len();
        let tape = Tape::new();
        let y = tape.constant(Tensor::new(&[n, 5], rows.concat()).unwrap()).softmax();
        for row in y.value().data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn pair_batches_cover_each_unordered_pair_once(labels in vec(1u64..16, 2..10)) {
        let Ok(batch) = PairBatch::from_labels(&labels, None) else {
            // Batches without both pair kinds are rejected.
            let first = labels[0];
            prop_assert!(labels.iter().all(|&l| l & first != 0) || labels.iter().enumerate().all(|(i, a)| labels[i + 1..].iter().all(|b| a & b == 0)));
            return Ok(());
        };
        let n = labels.len();
        prop_assert_eq!(batch.pairs.len(), n * (n - 1) / 2);
        for pair in &batch.pairs {
            prop_assert!(pair.i < pair.j);
            prop_assert_eq!(pair.similar, labels[pair.i] & labels[pair.j] != 0);
            prop_assert!(pair.weight >= 0.0);
            if pair.similar {
                prop_assert!(pair.continuous > 0.0 && pair.continuous <= 1.0);
            }
        }
    }

    #[test]
    fn pair_loss_is_monotone_in_inner_product(a in -64.0f64..64.0, gap in 0.01f64..8.0) {
        let b = a + gap;
        prop_assert!(pair_loss(b, true, 0.5) < pair_loss(a, true, 0.5));
        prop_assert!(pair_loss(b, false, 0.5) > pair_loss(a, false, 0.5));
    }
}
