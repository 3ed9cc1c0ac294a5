//! Independent reference implementations used to cross-check the library.
//! They favour obviousness over speed.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scriptorium::detector::protocol::{PredictionItem, Request, Response, WireDetection, WireImage};
use scriptorium::eval::Detection;
use scriptorium::split::{cosine_distance, FeatureVector};
use scriptorium::{Annotation, BBox, DatasetCOCO, ImageId, ImageRecord, Source};
use serde_json::Map;

/// IoU from corner coordinates.
pub fn ref_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1) = (a.x() + a.w(), a.y() + a.h());
    let (bx1, by1) = (b.x() + b.w(), b.y() + b.h());
    let w = ax1.min(bx1) - a.x().max(b.x());
    let h = ay1.min(by1) - a.y().max(b.y());
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.w() * a.h() + b.w() * b.h() - inter)
}

/// TP flags for the detections of one class, in (score desc, input index) order.
pub fn ref_match(dets: &[Detection], gts: &[Annotation], class: u32, thr: f64) -> (Vec<(f64, bool)>, usize) {
    let mine: Vec<&Annotation> = gts.iter().filter(|g| g.category_id == class).collect();
    let mut idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].category_id == class).collect();
    // stable sort keeps input order among equal scores
    idx.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut used = vec![false; mine.len()];
    let mut out = Vec::new();
    for i in idx {
        let d = &dets[i];
        let mut best: Option<(f64, u64, usize)> = None;
        for (j, g) in mine.iter().enumerate() {
            if used[j] || g.image_id != d.image_id {
                continue;
            }
            let v = ref_iou(&d.bbox, &g.bbox);
            if v <= 0.0 || v < thr {
                continue;
            }
            let better = match best {
                None => true,
                Some((bv, bid, _)) => v > bv || (v == bv && g.id < bid),
            };
            if better {
                best = Some((v, g.id, j));
            }
        }
        if let Some((_, _, j)) = best {
            used[j] = true;
        }
        out.push((d.score, best.is_some()));
    }
    (out, mine.len())
}

/// 101-point AP straight from the definition: at each recall level, the best
/// precision among all ranks that reach that recall.
pub fn ref_ap(flags: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, (_, t)) in flags.iter().enumerate() {
        tp += *t as usize;
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for level in 0..=100usize {
        let best = points
            .iter()
            .filter(|(tp, _)| 100 * tp >= level * n_gt)
            .map(|(_, p)| *p)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
        sum += best.unwrap_or(0.0);
    }
    sum / 101.0
}

#[derive(Debug, Clone)]
pub struct RefMetrics {
    pub map50: f64,
    pub map5095: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: Option<f64>,
}

pub fn ref_evaluate(dets: &[Detection], gt: &DatasetCOCO) -> RefMetrics {
    let gts = gt.annotations();
    let classes: BTreeSet<u32> = gts.iter().map(|g| g.category_id).collect();
    let mut per_thr = Vec::new();
    for t in 0..10 {
        let thr = (50 + 5 * t) as f64 / 100.0;
        let aps: Vec<f64> = classes
            .iter()
            .map(|&c| {
                let (flags, n) = ref_match(dets, gts, c, thr);
                ref_ap(&flags, n)
            })
            .collect();
        per_thr.push(if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 });
    }
    let map50 = per_thr[0];
    let map5095 = per_thr.iter().sum::<f64>() / 10.0;

    // every detection with its IoU-0.5 verdict, over all classes
    let mut all: Vec<(f64, bool)> = Vec::new();
    for c in 0..9 {
        all.extend(ref_match(dets, gts, c, 0.5).0);
    }
    let n_gt = gts.len();
    let distinct: BTreeSet<u64> = all.iter().map(|(s, _)| s.to_bits()).collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for bits in distinct {
        let s = f64::from_bits(bits);
        let kept = all.iter().filter(|(x, _)| *x >= s).count();
        let tp = all.iter().filter(|(x, t)| *x >= s && *t).count();
        // F1 = 2tp / (kept + n_gt); larger wins, equal prefers the higher threshold
        let better = match best {
            None => true,
            Some((btp, bkept, bs)) => {
                let lhs = tp * (bkept + n_gt);
                let rhs = btp * (kept + n_gt);
                lhs > rhs || (lhs == rhs && s > bs)
            }
        };
        if better {
            best = Some((tp, kept, s));
        }
    }
    let (precision, recall, threshold) = match best {
        Some((tp, kept, s)) => {
            (tp as f64 / kept as f64, if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 }, Some(s))
        }
        None => (0.0, 0.0, None),
    };
    let f1 = if precision + recall == 0.0 { f64::NAN } else { 2.0 * precision * recall / (precision + recall) };
    RefMetrics { map50, map5095, precision, recall, f1, threshold }
}

/// A random evaluation instance on an integer grid, so that exact IoU ties
/// and threshold hits occur.
pub fn random_eval_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, DatasetCOCO) {
    let n_images = rng.gen_range(1..=5u64);
    let n_classes = rng.gen_range(1..=4u32);
    let images: Vec<ImageRecord> = (1..=n_images)
        .map(|id| ImageRecord {
            id,
            file_name: format!("{id}.png"),
            width: 64,
            height: 64,
            page_index: id as u32,
            extra: Map::new(),
        })
        .collect();
    let rand_box = |rng: &mut ChaCha8Rng| {
        let x = rng.gen_range(0..40) as f64;
        let y = rng.gen_range(0..40) as f64;
        let w = rng.gen_range(1..=24) as f64;
        let h = rng.gen_range(1..=24) as f64;
        BBox::new(x, y, w, h).unwrap()
    };
    let n_gt = rng.gen_range(0..=20);
    let mut anns = Vec::new();
    for k in 0..n_gt {
        anns.push(Annotation {
            id: k as u64 + 1,
            image_id: rng.gen_range(1..=n_images),
            category_id: rng.gen_range(0..n_classes),
            bbox: rand_box(rng),
            source: Source::Merged,
            extra: Map::new(),
        });
    }
    let n_det = rng.gen_range(0..=20);
    let mut dets = Vec::new();
    for _ in 0..n_det {
        // half the detections are perturbed copies of ground truth
        let bbox = if !anns.is_empty() && rng.gen_bool(0.5) {
            let g: &Annotation = &anns[rng.gen_range(0..anns.len())];
            let dx = rng.gen_range(-3..=3) as f64;
            let dy = rng.gen_range(-3..=3) as f64;
            BBox::new((g.bbox.x() + dx).max(0.0), (g.bbox.y() + dy).max(0.0), g.bbox.w(), g.bbox.h()).unwrap()
        } else {
            rand_box(rng)
        };
        // coarse scores so that ties happen
        let score = rng.gen_range(0..=20) as f64 / 20.0;
        dets.push(Detection {
            image_id: rng.gen_range(1..=n_images),
            category_id: rng.gen_range(0..n_classes),
            bbox,
            score,
        });
    }
    (dets, DatasetCOCO::new(images, anns).unwrap())
}

/// Merge sequence of single-linkage clustering, recomputing every
/// inter-cluster distance from scratch at each step. Each entry is the pair
/// of clusters merged, named by their smallest ids.
pub fn ref_single_linkage(features: &[FeatureVector], k: usize) -> (Vec<(ImageId, ImageId)>, BTreeMap<ImageId, usize>) {
    let by_id: BTreeMap<ImageId, &Vec<f64>> = features.iter().map(|f| (f.image_id, &f.vector)).collect();
    let mut clusters: Vec<Vec<ImageId>> = by_id.keys().map(|&i| vec![i]).collect();
    let mut merges = Vec::new();
    while clusters.len() > k {
        clusters.sort_by_key(|c| *c.iter().min().unwrap());
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut d = f64::INFINITY;
                for x in &clusters[a] {
                    for y in &clusters[b] {
                        d = d.min(cosine_distance(by_id[x], by_id[y]));
                    }
                }
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.unwrap();
        let min_a = *clusters[a].iter().min().unwrap();
        let min_b = *clusters[b].iter().min().unwrap();
        merges.push((min_a, min_b));
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
    }
    clusters.sort_by_key(|c| *c.iter().min().unwrap());
    let mut assignment = BTreeMap::new();
    for (i, c) in clusters.iter().enumerate() {
        for &id in c {
            assignment.insert(id, i);
        }
    }
    (merges, assignment)
}

/// Random feature set with N <= 10; some vectors are exact duplicates or
/// multiples of one another so distance ties occur.
pub fn random_features(rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    let n = rng.gen_range(1..=10);
    let d = rng.gen_range(1..=4);
    let mut out: Vec<FeatureVector> = Vec::new();
    let mut ids: Vec<ImageId> = (1..=40).collect();
    for _ in 0..n {
        let pick = rng.gen_range(0..ids.len());
        let image_id = ids.swap_remove(pick);
        let vector = if !out.is_empty() && rng.gen_bool(0.25) {
            let src = &out[rng.gen_range(0..out.len())].vector;
            let s = [1.0, 2.0, 0.5][rng.gen_range(0..3)];
            src.iter().map(|v| v * s).collect()
        } else {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(0..4) as f64).collect();
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            v
        };
        out.push(FeatureVector { image_id, vector });
    }
    out
}

/// k smallest by (score, page index), picked one at a time.
pub fn ref_select(candidates: &[(ImageId, u32, f64)], k: usize) -> Vec<ImageId> {
    let mut left: Vec<(ImageId, u32, f64)> = candidates.to_vec();
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let mut bi = 0;
        for i in 1..left.len() {
            let (_, p, s) = left[i];
            let (_, bp, bs) = left[bi];
            if s < bs || (s == bs && p < bp) {
                bi = i;
            }
        }
        out.push(left.remove(bi).0);
    }
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] =
        &['a', 'Z', '0', ' ', '"', '\\', '/', '\n', '\t', '\u{0}', '\u{1f}', 'é', 'ß', '€', '音', '𝄞', '{', '}', ','];
    let n = rng.gen_range(0..24);
    (0..n).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect()
}

fn random_float(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen::<f64>(),
        1 => rng.gen_range(-1e4..1e4),
        2 => [0.0, -0.0, 1.0, f64::MIN_POSITIVE, f64::MAX, 1e-300, 0.1 + 0.2][rng.gen_range(0..7)],
        _ => loop {
            let x = f64::from_bits(rng.gen());
            if x.is_finite() {
                break x;
            }
        },
    }
}

fn random_images(rng: &mut ChaCha8Rng) -> Vec<WireImage> {
    (0..rng.gen_range(0..6)).map(|_| WireImage { image_id: rng.gen(), path: random_text(rng) }).collect()
}

pub fn random_request(rng: &mut ChaCha8Rng) -> Request {
    match rng.gen_range(0..3) {
        0 => Request::Train {
            images: random_images(rng),
            labels_dir: random_text(rng),
            workdir: random_text(rng),
            warm_start: rng.gen(),
        },
        1 => Request::Predict { images: random_images(rng) },
        _ => Request::Shutdown {},
    }
}

pub fn random_response(rng: &mut ChaCha8Rng) -> Response {
    match rng.gen_range(0..4) {
        0 => Response::Hello { batch: rng.gen() },
        1 => Response::Trained,
        2 => Response::Predictions {
            items: (0..rng.gen_range(0..5))
                .map(|_| PredictionItem {
                    image_id: rng.gen(),
                    detections: (0..rng.gen_range(0..4))
                        .map(|_| WireDetection {
                            category_id: rng.gen(),
                            bbox: [random_float(rng), random_float(rng), random_float(rng), random_float(rng)],
                            score: random_float(rng),
                        })
                        .collect(),
                })
                .collect(),
        },
        _ => Response::Error { error: random_text(rng) },
    }
}

/// Serializes and re-parses `n` random messages of each direction, returning
/// the first message that did not survive.
pub fn protocol_round_trips(seed: u64, n: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for _ in 0..n {
        let req = random_request(&mut r);
        let line = req.to_line();
        if line.contains('\n') {
            return Err(format!("request line contains a newline: {line}"));
        }
        match Request::parse(&line) {
            Ok(back) if back == req => {}
            other => return Err(format!("request {line} came back as {other:?}")),
        }
        let resp = random_response(&mut r);
        let line = resp.to_line();
        if line.contains('\n') {
            return Err(format!("response line contains a newline: {line}"));
        }
        match Response::parse(&line) {
            Ok(back) if back == resp => {}
            other => return Err(format!("response {line} came back as {other:?}")),
        }
    }
    Ok(())
}

/// Unlabeled images with shuffled page indices and a prediction map whose
/// scores come from a coarse grid, some images having no detections.
pub fn random_prediction_map(rng: &mut ChaCha8Rng) -> (Vec<ImageRecord>, BTreeMap<ImageId, Vec<Detection>>, usize) {
    let n = rng.gen_range(1..=30usize);
    let mut pages: Vec<u32> = (0..200).collect();
    let mut images = Vec::new();
    let mut preds = BTreeMap::new();
    for id in 1..=n as u64 {
        let page_index = pages.swap_remove(rng.gen_range(0..pages.len()));
        images.push(ImageRecord {
            id,
            file_name: format!("{id}.png"),
            width: 64,
            height: 64,
            page_index,
            extra: Map::new(),
        });
        let dets = (0..rng.gen_range(0..4))
            .map(|_| Detection {
                image_id: id,
                category_id: rng.gen_range(0..9),
                bbox: BBox::new(1.0, 1.0, 5.0, 5.0).unwrap(),
                score: rng.gen_range(0..=8) as f64 / 8.0,
            })
            .collect();
        preds.insert(id, dets);
    }
    let k = rng.gen_range(0..=n + 2);
    (images, preds, k)
}

/// Candidate triples for [`ref_select`], with uncertainty computed directly.
pub fn selection_candidates(
    images: &[ImageRecord],
    preds: &BTreeMap<ImageId, Vec<Detection>>,
) -> Vec<(ImageId, u32, f64)> {
    images
        .iter()
        .map(|img| {
            let dets = &preds[&img.id];
            let mut best = 0.0;
            for d in dets {
                if d.score > best {
                    best = d.score;
                }
            }
            (img.id, img.page_index, best)
        })
        .collect()
}
