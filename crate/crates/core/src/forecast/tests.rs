use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::data::{chronological_split, NodeSeries, SplitSpec};

fn city(values: Vec<Vec<u32>>) -> CityDataset {
    let mut ctx = BTreeMap::new();
    let nodes = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let id = alloc::format!("N{i}");
            ctx.insert(id.clone(), String::from("ctx"));
            NodeSeries {
                node_id: id,
                capacity: 1000,
                values: v.into_iter().map(Some).collect(),
            }
        })
        .collect();
    CityDataset {
        city_name: String::from("t"),
        frequency: 15,
        start: DateTime::from_timestamp(1_600_000_000 - 1_600_000_000 % 900, 0).unwrap(),
        nodes,
        node_context: ctx,
        provenance: Vec::new(),
    }
}

fn obs(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|x| Some(*x)).collect()
}

#[test]
fn seasonal_naive_indexes_one_period_back() {
    let hist: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64).collect();
    let f = SeasonalNaive { period: 96 }.forecast(&obs(&hist), 12);
    for h in 0..12 {
        assert_eq!(f[h], hist[200 + h - 96]);
    }
    let f = SeasonalNaive { period: 5 }.forecast(&obs(&hist), 12);
    for h in 0..12 {
        assert_eq!(f[h], hist[200 + h - 5 * (h / 5 + 1)]);
    }
}

#[test]
fn seasonal_naive_periodic_is_exact_and_short_history_persists() {
    let series: Vec<f64> = (0..400).map(|i| (i % 96) as f64 * 2.0).collect();
    let f = SeasonalNaive { period: 96 }.forecast(&obs(&series[..300]), 12);
    assert_eq!(f, series[300..312].to_vec());
    let f = SeasonalNaive { period: 96 }.forecast(&obs(&[3.0, 4.0, 5.0]), 4);
    assert_eq!(f, vec![5.0; 4]);
    let f = SeasonalNaive { period: 96 }.forecast(&obs(&[7.0; 150]), 12);
    assert_eq!(f, vec![7.0; 12]);
}

#[test]
fn historical_average_means_same_phase() {
    let hist = [1.0, 10.0, 3.0, 20.0, 5.0, 30.0];
    let f = HistoricalAverage { period: 2 }.forecast(&obs(&hist), 2);
    assert_eq!(f, vec![3.0, 20.0]);
    let f = HistoricalAverage { period: 10 }.forecast(&obs(&hist), 1);
    assert_eq!(f, vec![30.0]);
}

#[test]
fn target_train_gives_265_windows() {
    let ds = city(vec![(0..2000).map(|i| i % 96).collect(); 2]);
    let split = chronological_split(&ds, &SplitSpec::default(), true).unwrap();
    let w = enumerate_windows(&ds, split.ranges.train.clone(), 12, 12);
    assert_eq!(w.len(), 265);
    assert_eq!(w.len(), window_count(288, 12, 12));
    // Enumeration oracle.
    let mut n = 0;
    let r = split.ranges.train.clone();
    let mut s = r.start;
    while s + 24 <= r.end {
        n += 1;
        s += 1;
    }
    assert_eq!(n, 265);
    let tokens = generate_tokens(&ds, &w, split.ranges.observed_start(), &SeasonalNaive { period: 96 }).unwrap();
    assert_eq!(tokens.dims(), (265, 2, 12));
    let truth = horizon_truth(&ds, &w).unwrap();
    assert_eq!(truth.shape(), &[265, 2, 12]);
    // Later windows have a full period of history and are exact.
    let last = w.len() - 1;
    assert_eq!(tokens.token(last, 1), &truth.data()[(last * 2 + 1) * 12..(last * 2 + 2) * 12]);
}

#[test]
fn gapped_windows_are_skipped_and_counted() {
    let mut ds = city(vec![(0..60).collect(), (0..60).collect()]);
    ds.nodes[1].values[30] = None;
    let w = enumerate_windows(&ds, 0..60, 12, 12);
    assert_eq!(w.skipped, 24);
    assert_eq!(w.len() + w.skipped, window_count(60, 12, 12));
}

#[test]
fn token_validation_errors() {
    let ds = city(vec![(0..200).collect(); 2]);
    let w = enumerate_windows(&ds, 100..200, 12, 12);
    let t = generate_tokens(&ds, &w, 0, &SeasonalNaive { period: 96 }).unwrap();
    t.validate_against(&ds, &w).unwrap();
    let w6 = enumerate_windows(&ds, 100..200, 12, 6);
    assert!(t.validate_against(&ds, &w6).is_err());
    let other = city(vec![(0..200).collect(); 3]);
    assert!(t.validate_against(&other, &w).is_err());
    let mut shifted = t.clone();
    for ts in &mut shifted.window_starts[5..] {
        *ts += ds.step();
    }
    let msg = alloc::format!("{}", shifted.validate_against(&ds, &w).unwrap_err());
    assert!(msg.contains("window 5 "), "{msg}");
    let again = generate_tokens(&ds, &w, 0, &SeasonalNaive { period: 96 }).unwrap();
    assert_eq!(t, again);
    assert!(builtin(&ForecasterSpec::ExternalFile { path: String::from("x") }).is_err());
}

proptest! {
    #[test]
    fn window_counts_match_closed_form(len in 0usize..200, lin in 1usize..20, lp in 1usize..20) {
        let ds = city(vec![(0..len as u32).collect()]);
        let w = enumerate_windows(&ds, 0..len, lin, lp);
        prop_assert_eq!(w.len(), window_count(len, lin, lp));
        if len + 1 >= lin + lp {
            prop_assert_eq!(w.len(), len + 1 - lin - lp);
        }
    }

    #[test]
    fn constant_history_gives_constant_forecast(c in 0u32..500, t in 1usize..300) {
        let h = vec![Some(c as f64); t];
        let sn = SeasonalNaive { period: 96 }.forecast(&h, 12);
        let ha = HistoricalAverage { period: 96 }.forecast(&h, 12);
        prop_assert!(sn.iter().chain(&ha).all(|v| *v == c as f64));
    }
}
