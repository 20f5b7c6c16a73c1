use leaftile::eval::{average_precision, evaluate_class, format_detections, mean_ap, parse_detections, GroundTruthBox};
use leaftile::{BBox, Detection, DiseaseClass};
use rand::{Rng, SeedableRng};

const C: DiseaseClass = DiseaseClass::Blast;

fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
    BBox::new(a, b, c, d).unwrap()
}

fn gt(image: &str, b: BBox) -> GroundTruthBox {
    GroundTruthBox {
        image_id: image.into(),
        class: C,
        bbox: b,
    }
}

fn det(image: &str, b: BBox, conf: f64) -> Detection {
    Detection::new(image, C, b, conf).unwrap()
}

/// Independent matcher plus the rank-sum form of all-point AP:
/// AP = (1/nGT) * sum over true-positive ranks k of max_{j >= k} precision(j).
fn ap_oracle(dets: &[Detection], gts: &[GroundTruthBox], thresh: f64) -> f64 {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for d in order {
        let mut best = -1.0;
        let mut best_i = None;
        for (i, g) in gts.iter().enumerate() {
            if g.image_id != d.source {
                continue;
            }
            let o = g.bbox.iou(&d.bbox);
            if o > best {
                best = o;
                best_i = Some(i);
            }
        }
        let hit = match best_i {
            Some(i) if best >= thresh && !used[i] => {
                used[i] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    let mut precision = Vec::new();
    let mut tp = 0.0;
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1.0;
        }
        precision.push(tp / (k + 1) as f64);
    }
    let mut sum = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            sum += precision[k..].iter().cloned().fold(0.0, f64::max);
        }
    }
    sum / gts.len() as f64
}

fn random_instance(rng: &mut impl Rng) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let images = ["i0", "i1", "i2", "i3"];
    let mut gts = Vec::new();
    for im in images {
        for _ in 0..rng.random_range(0..5) {
            let x = rng.random_range(0.0..400.0);
            let y = rng.random_range(0.0..400.0);
            gts.push(gt(
                im,
                bx(x, y, x + rng.random_range(20.0..80.0), y + rng.random_range(20.0..80.0)),
            ));
        }
    }
    if gts.is_empty() {
        gts.push(gt("i0", bx(0.0, 0.0, 50.0, 50.0)));
    }
    let mut dets = Vec::new();
    for g in &gts {
        // Jittered copies (true or duplicate hits) and the odd miss.
        for _ in 0..rng.random_range(0..3) {
            let j = |rng: &mut dyn rand::RngCore| rng.random_range(-15.0..15.0);
            let b = &g.bbox;
            let (a, c) = (b.xmin + j(rng), b.xmax + j(rng));
            let (e, f) = (b.ymin + j(rng), b.ymax + j(rng));
            if a < c && e < f {
                dets.push(det(&g.image_id, bx(a, e, c, f), rng.random_range(0.0..1.0)));
            }
        }
    }
    for _ in 0..rng.random_range(0..6) {
        let im = images[rng.random_range(0..4)];
        let x = rng.random_range(0.0..400.0);
        let y = rng.random_range(0.0..400.0);
        dets.push(det(im, bx(x, y, x + 40.0, y + 40.0), rng.random_range(0.0..1.0)));
    }
    (dets, gts)
}

#[test]
fn ap_matches_rank_sum_oracle() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(50);
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        for thresh in [0.3, 0.5, 0.75] {
            let got = average_precision(&dets, &gts, C, thresh).unwrap();
            let want = ap_oracle(&dets, &gts, thresh);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn ap_counts_are_consistent() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(51);
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        let e = evaluate_class(&dets, &gts, C, 0.5).unwrap();
        assert_eq!(e.tp + e.fn_, gts.len());
        assert_eq!(e.tp + e.fp, dets.len());
        assert!((0.0..=1.0).contains(&e.ap));
        assert!(e.ap <= e.tp as f64 / e.n_gt as f64 + 1e-12);
    }
}

#[test]
fn ap_depends_only_on_confidence_order() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(52);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng);
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| det(&d.source, d.bbox, d.confidence.powi(3) * 0.5))
            .collect();
        assert_eq!(
            average_precision(&dets, &gts, C, 0.5),
            average_precision(&squashed, &gts, C, 0.5)
        );
    }
}

#[test]
fn trailing_false_positive_never_raises_ap() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(53);
    for _ in 0..100 {
        let (mut dets, gts) = random_instance(&mut rng);
        let floor = dets.iter().map(|d| d.confidence).fold(1.0, f64::min);
        let before = average_precision(&dets, &gts, C, 0.5).unwrap();
        dets.push(det("nowhere", bx(0.0, 0.0, 10.0, 10.0), floor / 2.0));
        let after = average_precision(&dets, &gts, C, 0.5).unwrap();
        assert!(after <= before);
    }
}

#[test]
fn hand_cases() {
    let g = vec![gt("a", bx(0.0, 0.0, 10.0, 10.0)), gt("a", bx(20.0, 20.0, 30.0, 30.0))];
    // Both found, ranked first.
    let perfect = vec![
        det("a", bx(0.0, 0.0, 10.0, 10.0), 0.9),
        det("a", bx(20.0, 20.0, 30.0, 30.0), 0.8),
    ];
    assert_eq!(average_precision(&perfect, &g, C, 0.5), Some(1.0));
    // A false positive ranked first caps interpolated precision at 2/3.
    let mixed = vec![
        det("a", bx(50.0, 50.0, 60.0, 60.0), 0.95),
        det("a", bx(0.0, 0.0, 10.0, 10.0), 0.9),
        det("a", bx(20.0, 20.0, 30.0, 30.0), 0.8),
    ];
    let ap = average_precision(&mixed, &g, C, 0.5).unwrap();
    assert!((ap - 2.0 / 3.0).abs() < 1e-12);
    // Duplicate detection of one object is a false positive.
    let dup = vec![
        det("a", bx(0.0, 0.0, 10.0, 10.0), 0.9),
        det("a", bx(0.0, 0.0, 10.0, 10.0), 0.8),
    ];
    let e = evaluate_class(&dup, &g, C, 0.5).unwrap();
    assert_eq!((e.tp, e.fp, e.fn_), (1, 1, 1));
    assert!((e.ap - 0.5).abs() < 1e-12);
    // No detections.
    assert_eq!(average_precision(&[], &g, C, 0.5), Some(0.0));
    // No ground truth for the class.
    assert_eq!(average_precision(&perfect, &g, DiseaseClass::Red, 0.5), None);
}

#[test]
fn map_averages_classes_with_ground_truth() {
    let gts = vec![
        gt("a", bx(0.0, 0.0, 10.0, 10.0)),
        GroundTruthBox {
            image_id: "a".into(),
            class: DiseaseClass::Streak,
            bbox: bx(40.0, 40.0, 50.0, 50.0),
        },
    ];
    let dets = vec![det("a", bx(0.0, 0.0, 10.0, 10.0), 0.7)];
    let r = mean_ap(&dets, &gts, &DiseaseClass::ALL, 0.5).unwrap();
    assert_eq!(r.per_class.len(), 2);
    assert!((r.map - 0.5).abs() < 1e-12);
    assert!(mean_ap(&dets, &[], &DiseaseClass::ALL, 0.5).is_err());
}

#[test]
fn detection_text_round_trip() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(54);
    let (dets, _) = random_instance(&mut rng);
    let back = parse_detections(&format_detections(&dets)).unwrap();
    assert_eq!(back, dets);
}
