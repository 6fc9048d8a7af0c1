use std::collections::BTreeMap;
use std::io::Cursor;

use proptest::prelude::*;
use qecbench::dataset::{
    generate_eval_set, generate_training_set, read_dataset, read_jsonl, record_bytes,
    write_dataset, write_jsonl, Dataset, DatasetMode, HEADER_BYTES,
};
use qecbench::lattice::build_code;
use qecbench::noise::{extract_syndrome, sample_error_pattern, ErrorPattern};
use qecbench::rng::CounterRng;
use qecbench::QecError;

fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).unwrap();
    buf
}

/// Serial re-scan of the pool keeping the lightest pattern per syndrome,
/// ties broken on the concatenated flag string.
fn rescan(d: usize, p: f64, pool: u64, seed: u64) -> BTreeMap<Vec<bool>, ErrorPattern> {
    let code = build_code(d).unwrap();
    let rng = CounterRng::new(seed);
    let mut best: BTreeMap<Vec<bool>, ErrorPattern> = BTreeMap::new();
    for i in 0..pool {
        let e = sample_error_pattern(&code, p, &mut rng.split(i)).unwrap();
        let key: Vec<bool> = extract_syndrome(&code, &e).unwrap().fired.iter().collect();
        let flat = |e: &ErrorPattern| -> (usize, Vec<bool>) {
            let bits: Vec<bool> = e.x.iter().chain(e.z.iter()).collect();
            (bits.iter().filter(|&&b| b).count(), bits)
        };
        match best.get(&key) {
            Some(kept) if flat(kept) <= flat(&e) => {}
            _ => {
                best.insert(key, e);
            }
        }
    }
    best
}

#[test]
fn training_set_matches_serial_rescan() {
    for (p, pool, seed) in [(0.05, 150_000, 1), (0.2, 70_000, 2), (0.01, 10, 3)] {
        let code = build_code(3).unwrap();
        let ds = generate_training_set(&code, p, pool, &CounterRng::new(seed)).unwrap();
        let reference = rescan(3, p, pool, seed);
        assert_eq!(ds.len(), reference.len());
        for (sample, (key, pattern)) in ds.records.iter().zip(&reference) {
            let fired: Vec<bool> = sample.syndrome.fired.iter().collect();
            assert_eq!(&fired, key);
            assert_eq!(&sample.pattern, pattern);
        }
    }
}

#[test]
fn training_set_invariants() {
    let code = build_code(3).unwrap();
    let ds = generate_training_set(&code, 0.1, 200_000, &CounterRng::new(5)).unwrap();
    assert_eq!(ds.mode(), DatasetMode::Train);
    assert_eq!(ds.header.record_count as usize, ds.len());
    assert!(ds.len() <= 1 << code.ancilla_count());
    assert!(ds.records.windows(2).all(|w| w[0].syndrome < w[1].syndrome));
    for s in &ds.records {
        assert_eq!(extract_syndrome(&code, &s.pattern).unwrap(), s.syndrome);
    }
}

#[test]
fn generation_does_not_depend_on_worker_count() {
    let code = build_code(3).unwrap();
    let rng = CounterRng::new(77);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    to_bytes(&generate_training_set(&code, 0.08, 300_000, &rng).unwrap()),
                    to_bytes(&generate_eval_set(&code, 0.08, 20_000, &rng).unwrap()),
                )
            })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let code = build_code(5).unwrap();
    let a = generate_eval_set(&code, 0.05, 1000, &CounterRng::new(9)).unwrap();
    let b = generate_eval_set(&code, 0.05, 1000, &CounterRng::new(9)).unwrap();
    let c = generate_eval_set(&code, 0.05, 1000, &CounterRng::new(10)).unwrap();
    assert_eq!(to_bytes(&a), to_bytes(&b));
    assert_ne!(to_bytes(&a), to_bytes(&c));
}

#[test]
fn eval_erroneous_fraction_matches_closed_form() {
    let code = build_code(3).unwrap();
    let p = 0.05;
    let ds = generate_eval_set(&code, p, 100_000, &CounterRng::new(31)).unwrap();
    let q = 1.0 - (1.0 - p) * (1.0 - p);
    let n = 100_000.0 * code.data_count() as f64;
    let sigma = (q * (1.0 - q) / n).sqrt();
    assert!((ds.erroneous_fraction() - q).abs() < 3.0 * sigma);
}

#[test]
fn file_size_follows_record_layout() {
    let code = build_code(3).unwrap();
    assert_eq!(record_bytes(&code), (2, 4));
    let ds = generate_eval_set(&code, 0.1, 17, &CounterRng::new(0)).unwrap();
    assert_eq!(to_bytes(&ds).len(), HEADER_BYTES + 17 * 6);
}

fn random_dataset(d: usize, p: f64, n: u64, train: bool, seed: u64) -> Dataset {
    let code = build_code(d).unwrap();
    let rng = CounterRng::new(seed);
    if train {
        generate_training_set(&code, p, n, &rng).unwrap()
    } else {
        generate_eval_set(&code, p, n, &rng).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn binary_round_trip_is_bit_exact(
        d in 2usize..=5,
        p in 0.0f64..=1.0,
        n in 1u64..300,
        train in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let ds = random_dataset(d, p, n, train, seed);
        let bytes = to_bytes(&ds);
        let back = read_dataset(&mut Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.header.error_prob.to_bits(), p.to_bits());
        prop_assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn jsonl_round_trip_matches_binary(
        d in 2usize..=4,
        p in 0.0f64..=0.5,
        n in 1u64..100,
        train in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let ds = random_dataset(d, p, n, train, seed);
        let mut text = Vec::new();
        write_jsonl(&ds, &mut text).unwrap();
        let back = read_jsonl(Cursor::new(text)).unwrap();
        prop_assert_eq!(to_bytes(&back), to_bytes(&ds));
    }

    #[test]
    fn truncation_is_a_format_error(cut_frac in 0.0f64..1.0) {
        let ds = random_dataset(3, 0.1, 20, false, 4);
        let bytes = to_bytes(&ds);
        let cut = (cut_frac * bytes.len() as f64) as usize;
        match read_dataset(&mut Cursor::new(&bytes[..cut])) {
            Err(QecError::Format { offset, .. }) => prop_assert!(offset as usize <= cut),
            other => prop_assert!(false, "expected format error, got {:?}", other.map(|d| d.len())),
        }
    }
}

#[test]
fn jsonl_uses_node_ids() {
    let code = build_code(3).unwrap();
    let mut pattern = ErrorPattern::zeros(&code);
    pattern.z.set(code.ordinal(13).unwrap(), true);
    pattern.x.set(code.ordinal(1).unwrap(), true);
    pattern.z.set(code.ordinal(1).unwrap(), true);
    let ds = Dataset {
        header: qecbench::dataset::DatasetHeader {
            distance: 3,
            error_prob: 0.1,
            mode: DatasetMode::Eval,
            seed: 0,
            record_count: 1,
        },
        records: vec![qecbench::dataset::Sample {
            syndrome: extract_syndrome(&code, &pattern).unwrap(),
            pattern,
        }],
    };
    let mut text = Vec::new();
    write_jsonl(&ds, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    let record: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(record["errors"]["13"], "Z");
    assert_eq!(record["errors"]["1"], "XZ");
    let fired: Vec<u64> = record["fired"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    // Z on 13 fires 12 and 14; Z on 1 fires 2; X on 1 fires 6.
    assert_eq!(fired, vec![2, 6, 12, 14]);
}
