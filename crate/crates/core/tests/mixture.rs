use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlpipe_core::mixture::{
    averaged_loss, local_loss_weights, loss_token_weights, pack_annotations, packing_stats, AnnotationLengths,
    DeviceLoss, PackedExample,
};

/// Every composition of `total` into at most `max_parts` positive parts.
fn compositions(total: usize, max_parts: usize) -> Vec<Vec<usize>> {
    if total == 0 {
        return vec![vec![]];
    }
    if max_parts == 0 {
        return vec![];
    }
    let mut out = Vec::new();
    for first in 1..=total {
        for mut rest in compositions(total - first, max_parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Keys visible to each query when a segment of `seg_len` tokens is paired
/// with the image alone under a plain causal mask, written in the packed
/// sequence's coordinates.
fn unpacked_visibility(image: usize, offset: usize, seg_len: usize) -> Vec<BTreeSet<usize>> {
    let to_packed = |pos: usize| if pos < image { pos } else { offset + pos - image };
    (image..image + seg_len)
        .map(|q| (0..=q).map(to_packed).collect())
        .collect()
}

fn check_equivalence(p: &PackedExample) {
    let mask = p.dense_mask();
    for q in 0..p.image_token_count {
        let visible: BTreeSet<usize> = (0..p.len()).filter(|&k| mask[q][k]).collect();
        assert_eq!(visible, (0..=q).collect());
    }
    for s in &p.segments {
        let want = unpacked_visibility(p.image_token_count, s.offset, s.len());
        for (j, keys) in want.iter().enumerate() {
            let visible: BTreeSet<usize> = (0..p.len()).filter(|&k| mask[s.offset + j][k]).collect();
            assert_eq!(&visible, keys, "{p:?}");
        }
    }
}

#[test]
fn packed_visibility_equals_unpacked() {
    let mut cases = 0;
    for image in 1..=3usize {
        for seg_total in 1..=(20 - image) {
            for lens in compositions(seg_total, 4) {
                // Prompt/response split does not affect visibility; vary it anyway.
                let anns: Vec<AnnotationLengths> =
                    lens.iter().enumerate().map(|(i, &l)| AnnotationLengths::new((i * 7) % (l + 1), l - (i * 7) % (l + 1))).collect();
                let packed = pack_annotations("img", image, &anns, 64).unwrap();
                assert_eq!(packed.len(), 1);
                check_equivalence(&packed[0]);
                cases += 1;
            }
        }
    }
    assert!(cases > 10_000, "{cases}");
}

#[test]
fn split_bins_are_each_equivalent() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..300 {
        let image = rng.random_range(1..5);
        let max_len = image + rng.random_range(3..15);
        let anns: Vec<AnnotationLengths> = (0..rng.random_range(1..8))
            .map(|_| AnnotationLengths::new(rng.random_range(0..6), rng.random_range(1..6)))
            .collect();
        let packed = pack_annotations("img", image, &anns, max_len).unwrap();
        let mut seen: Vec<usize> = packed.iter().flat_map(|p| p.segments.iter().map(|s| s.annotation_index)).collect();
        seen.sort();
        assert_eq!(seen, (0..anns.len()).collect::<Vec<_>>());
        for p in &packed {
            assert!(p.len() <= max_len);
            check_equivalence(p);
        }
    }
}

#[test]
fn three_annotations_per_image() {
    let mut packed = Vec::new();
    for i in 0..50 {
        let anns = vec![AnnotationLengths::new(12, 40); 3];
        packed.extend(pack_annotations(&format!("img{i}"), 576, &anns, 2304).unwrap());
    }
    let stats = packing_stats(&packed).unwrap();
    assert_eq!(stats.packed_sequences, 50);
    assert_eq!(stats.unpacked_sequences, 150);
    assert_eq!(stats.image_reduction, 1.0 - 50.0 / 150.0);
    assert!((stats.image_reduction - 2.0 / 3.0).abs() < 1e-15);
    assert!(stats.seq_len_increase > 0.0);
}

fn random_devices(rng: &mut ChaCha8Rng) -> Vec<DeviceLoss> {
    (0..rng.random_range(1..17))
        .map(|_| DeviceLoss { loss_sum: rng.random_range(0.0..500.0), loss_token_count: rng.random_range(1..400) })
        .collect()
}

#[test]
fn mean_divisor_matches_global_token_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..100 {
        let devices = random_devices(&mut rng);
        let global = devices.iter().map(|d| d.loss_sum).sum::<f64>()
            / devices.iter().map(|d| d.loss_token_count).sum::<u64>() as f64;
        let got = averaged_loss(&devices, &loss_token_weights(&devices).unwrap());
        assert!((got - global).abs() <= 1e-12 * global.max(1.0), "{got} {global}");
    }
}

/// Gradient of the summed squared error of `y = w * x` on one device.
fn device_gradient(w: f64, tokens: &[(f64, f64)]) -> DeviceLoss {
    DeviceLoss {
        loss_sum: tokens.iter().map(|&(x, y)| 2.0 * x * (w * x - y)).sum(),
        loss_token_count: tokens.len() as u64,
    }
}

fn toy_gradients(counts: &[usize], rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let w = 0.3;
    let mut all = Vec::new();
    let mut devices = Vec::new();
    for (d, &n) in counts.iter().enumerate() {
        // Devices see differently distributed data so their mean gradients differ.
        let tokens: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = rng.random_range(0.5..1.5) + d as f64;
                (x, 2.0 * x + rng.random_range(-0.1..0.1))
            })
            .collect();
        all.extend_from_slice(&tokens);
        devices.push(device_gradient(w, &tokens));
    }
    let reference = device_gradient(w, &all);
    let global = reference.loss_sum / reference.loss_token_count as f64;
    let unbiased = averaged_loss(&devices, &loss_token_weights(&devices).unwrap());
    let biased = averaged_loss(&devices, &local_loss_weights(&devices).unwrap());
    (global, unbiased, biased)
}

#[test]
fn toy_model_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let (global, unbiased, biased) = toy_gradients(&[5, 50, 200, 20], &mut rng);
    assert!((unbiased - global).abs() < 1e-9);
    assert!((biased - global).abs() > 1e-2);

    let (global, unbiased, biased) = toy_gradients(&[40, 40, 40, 40], &mut rng);
    assert!((unbiased - global).abs() < 1e-9);
    assert!((biased - unbiased).abs() < 1e-9);
}
