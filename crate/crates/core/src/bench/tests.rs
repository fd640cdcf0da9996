use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::dispatcher::{DispatcherConfig, Outcome};
use crate::engine::{Engine, EngineConfig};
use crate::workflow::IdempotentPort;

fn dispatcher() -> Dispatcher {
    Dispatcher::new(Engine::new(EngineConfig { partitions: 4 }), DispatcherConfig::default()).unwrap()
}

fn small_retwis() -> retwis::RetwisScale {
    retwis::RetwisScale { users: 40, follows: 5, posts: 200, seed: 3 }
}

fn output<'a>(o: &'a Outcome, name: &str) -> &'a Datum {
    match o {
        Outcome::Success(m) => m.get(name).unwrap_or_else(|| panic!("no output {name} in {m:?}")),
        Outcome::Failure(f) => panic!("failed: {f:?}"),
    }
}

#[test]
fn mixes_match_registered_structure() {
    for name in ["shop", "hotel", "retwis"] {
        let d = dispatcher();
        let w = build(name, &d, RecordingPolicy::Selective).unwrap();
        verify_structure(&d, &w.mix).unwrap();
    }
}

#[test]
fn unknown_workload() {
    assert!(matches!(build("bank", &dispatcher(), RecordingPolicy::Selective), Err(BenchError::UnknownWorkload(_))));
}

#[test]
fn recorded_units_per_operation() {
    let recorded = |name: &str, wf: &str| {
        let d = dispatcher();
        build(name, &d, RecordingPolicy::Selective).unwrap();
        d.workflow(wf).unwrap().recorded_units().len()
    };
    assert_eq!(recorded("shop", "shop.browsing"), 0);
    assert_eq!(recorded("shop", "shop.cartUpdate"), 1);
    assert_eq!(recorded("shop", "shop.checkout"), 2);
    assert_eq!(recorded("hotel", "hotel.search"), 0);
    assert_eq!(recorded("hotel", "hotel.recommend"), 0);
    assert_eq!(recorded("hotel", "hotel.reservation"), 1);
}

#[test]
fn expected_fractions_follow_the_mix() {
    let d = dispatcher();
    let w = build("shop", &d, RecordingPolicy::Selective).unwrap();
    let f = w.mix.expected_recorded_fraction(&d);
    assert!((f - (0.1 * 1.0 + 0.1 * 2.0) / (0.8 + 0.1 + 0.1 * 3.0)).abs() < 1e-12);

    let d = dispatcher();
    let w = build("hotel", &d, RecordingPolicy::Selective).unwrap();
    let f = w.mix.expected_recorded_fraction(&d);
    assert!((f - 0.01 / (0.6 * 6.0 + 0.39 + 0.01 * 2.0)).abs() < 1e-12);
}

#[test]
fn a_weight_mismatch_is_a_seed_mismatch() {
    let d = dispatcher();
    let mut w = build("shop", &d, RecordingPolicy::Selective).unwrap();
    w.mix.ops[0].queries = 2;
    assert!(matches!(verify_structure(&d, &w.mix), Err(BenchError::SeedMismatch(_))));
    w.mix.ops[0].queries = 1;
    w.mix.ops[0].weight = 0.7;
    assert!(matches!(verify_structure(&d, &w.mix), Err(BenchError::SeedMismatch(_))));
}

#[test]
fn browsing_reads_eight_items() {
    let d = dispatcher();
    let w = build("shop", &d, RecordingPolicy::Selective).unwrap();
    let c = d.client_connect().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let o = d.invoke("shop.browsing", InvocationId::new(c, 1), &w.inputs(0, &mut rng, 0)).unwrap();
    assert_eq!(output(&o, "items").as_list().unwrap().len(), 8);
}

#[test]
fn checkout_moves_the_cart_into_an_order() {
    let d = dispatcher();
    build("shop", &d, RecordingPolicy::Selective).unwrap();
    let c = d.client_connect().unwrap();
    let add = |n, item: i64, qty: i64| {
        let inputs = BTreeMap::from([
            ("userID".to_string(), int(5)),
            ("item".into(), int(item)),
            ("quantity".into(), int(qty)),
            ("unitPrice".into(), int(shop::price_of(item))),
        ]);
        d.invoke("shop.cartUpdate", InvocationId::new(c, n), &inputs).unwrap()
    };
    add(1, 3, 2);
    add(2, 9, 1);
    add(3, 3, 1); // replaces the first line
    let o = d.invoke("shop.checkout", InvocationId::new(c, 4), &BTreeMap::from([("userID".to_string(), int(5))])).unwrap();
    let want = shop::price_of(3) + shop::price_of(9);
    assert_eq!(output(&o, "checkoutTotal"), &int(want));
    assert_eq!(count_rows(&d, "Carts").unwrap(), 0);
    assert_eq!(count_rows(&d, "Orders").unwrap(), 2);
    let spent = d
        .engine()
        .run(TxnMode::MultiPartition, |t| {
            let q = PreparedStatement::select_by_key("u", "Users", ["userID"]);
            Ok(t.exec(&q, &[Value::Int64(5)])?.first("spent").cloned())
        })
        .unwrap();
    assert_eq!(spent, Some(Value::Int64(want)));
}

fn avail(d: &Dispatcher, hotel: i64, day: i64) -> i64 {
    d.engine()
        .run(TxnMode::MultiPartition, |t| {
            let q = PreparedStatement::select_by_key("a", "HotelAvail", ["hotelID", "date"]);
            Ok(t.exec(&q, &[Value::Int64(hotel), Value::Int64(day)])?.first("numAvail").and_then(Value::as_i64))
        })
        .unwrap()
        .unwrap()
}

#[test]
fn reservation_books_until_sold_out() {
    let d = dispatcher();
    let port = IdempotentPort::new();
    d.ports().register("email", port.handler());
    let scale = hotel::HotelScale { rooms: 2, ..Default::default() };
    hotel::build(&d, RecordingPolicy::Selective, &scale).unwrap();
    let c = d.client_connect().unwrap();
    let mut confirmations = Vec::new();
    for n in 1..=3 {
        let o = d.invoke("hotel.reservation", InvocationId::new(c, n), &hotel::reservation_inputs(7, 4, 1, int(n as i64))).unwrap();
        confirmations.push(output(&o, "confirmation").as_value().unwrap().as_str().unwrap().to_owned());
    }
    let cost = hotel::rate_of(7, 4);
    assert_eq!(confirmations[0], format!("booked:{cost}:receipt:{c}:1:2"));
    assert!(confirmations[1].starts_with("booked:"));
    assert_eq!(confirmations[2], "not-booked");
    assert_eq!(avail(&d, 7, 4), 0);
    assert_eq!(count_rows(&d, "Reservations").unwrap(), 2);
    assert_eq!(port.deliveries(), 2);
}

#[test]
fn reservation_fuses_check_and_reserve() {
    let d = dispatcher();
    build("hotel", &d, RecordingPolicy::Selective).unwrap();
    let wf = d.workflow("hotel.reservation").unwrap();
    assert_eq!(wf.unit_names(), ["checkAvail+reserve", "sendEmail"]);
    assert_eq!(wf.recorded_units(), BTreeSet::from([0]));
}

#[test]
fn search_ranks_hotels_of_the_city() {
    let d = dispatcher();
    let w = build("hotel", &d, RecordingPolicy::Selective).unwrap();
    let c = d.client_connect().unwrap();
    let inputs = BTreeMap::from([("city".to_string(), int(2)), ("date".into(), int(0)), ("userID".into(), int(0))]);
    let o = d.invoke("hotel.search", InvocationId::new(c, 1), &inputs).unwrap();
    let ranked: BTreeSet<i64> = output(&o, "results").as_list().unwrap().iter().filter_map(Value::as_i64).collect();
    assert_eq!(ranked, (20..30).collect());
    assert_eq!(w.mix.ops.len(), 3);
}

#[test]
fn seeded_follow_graph() {
    let s = retwis::RetwisScale::default();
    for u in [0, 1, 500, 999] {
        let f = retwis::followees(&s, u);
        assert_eq!(f.len(), 50);
        assert!(!f.contains(&u));
        assert!(f.windows(2).all(|w| w[0] < w[1]));
        assert!(f.iter().all(|&x| (0..1000).contains(&x)));
    }
}

/// Timeline straight from the tables.
fn timeline_oracle(d: &Dispatcher, s: &retwis::RetwisScale, user: i64) -> Vec<Value> {
    let posts = d
        .engine()
        .run(TxnMode::MultiPartition, |t| {
            Ok(t.exec(&PreparedStatement::select("all", "Posts", Vec::<String>::new()), &[])?.rows)
        })
        .unwrap();
    let follows = retwis::followees(s, user);
    let mut mine: Vec<(i64, i64, String)> = posts
        .iter()
        .filter_map(|r| {
            let author = r.values[0].as_i64()?;
            follows.contains(&author).then(|| (r.values[2].as_i64().unwrap(), author, r.values[1].as_str().unwrap().to_owned()))
        })
        .collect();
    mine.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    mine.truncate(retwis::TIMELINE_LEN);
    mine.into_iter().flat_map(|(ts, a, id)| [Value::Int64(ts), Value::Int64(a), Value::Text(id)]).collect()
}

#[test]
fn timeline_matches_table_oracle() {
    let d = dispatcher();
    let s = small_retwis();
    let w = retwis::build(&d, RecordingPolicy::Selective, &s).unwrap();
    assert_eq!(d.workflow("retwis.timeline").unwrap().txn_count(), 6);
    let c = d.client_connect().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..=60u64 {
        let op = w.mix.pick(&mut rng);
        let inputs = w.inputs(op, &mut rng, n);
        let o = d.invoke(&w.mix.ops[op].workflow, InvocationId::new(c, n), &inputs).unwrap();
        if op == 0 {
            let user = inputs["userID"].as_value().unwrap().as_i64().unwrap();
            assert_eq!(output(&o, "timeline").as_list().unwrap(), timeline_oracle(&d, &s, user));
        }
    }
}

#[test]
fn merge_keeps_newest() {
    let row = |ts: i64, a: i64| vec![Value::Int64(ts), Value::Int64(a), Value::Text(format!("p{ts}"))];
    let acc = retwis::merge_top(&[], &(0..8).map(|t| row(t, 1)).collect::<Vec<_>>());
    let merged = retwis::merge_top(&acc, &(5..12).map(|t| row(t * 2, 2)).collect::<Vec<_>>());
    let ts: Vec<i64> = merged.chunks(3).map(|c| c[0].as_i64().unwrap()).collect();
    assert_eq!(ts, [22, 20, 18, 16, 14, 12, 10, 7, 6, 5]);
}

#[test]
fn run_mix_is_deterministic_and_counts_recorded_units() {
    let run = |policy| {
        let d = dispatcher();
        let w = build("shop", &d, policy).unwrap();
        let r = run_mix(&d, &w, 2000, 1, 42).unwrap();
        (r, d.engine().snapshot().user_state_bytes())
    };
    let (a, state_a) = run(RecordingPolicy::Selective);
    let (b, state_b) = run(RecordingPolicy::Selective);
    assert_eq!(state_a, state_b);
    assert_eq!(a.per_op.iter().map(|o| o.count).collect::<Vec<_>>(), b.per_op.iter().map(|o| o.count).collect::<Vec<_>>());
    let counts: Vec<u64> = a.per_op.iter().map(|o| o.count).collect();
    assert_eq!(counts.iter().sum::<u64>(), 2000);
    assert_eq!(a.transactions, counts[0] + counts[1] + 3 * counts[2]);
    assert_eq!(a.recorded_transactions, counts[1] + 2 * counts[2]);
    assert!(a.p50_us <= a.p99_us);

    let (n, state_n) = run(RecordingPolicy::All);
    assert_eq!(n.recorded_transactions, n.transactions);
    assert_eq!(n.recorded_fraction, 1.0);
    assert_eq!(state_n, state_a);
}

#[test]
fn concurrent_clients_never_double_book() {
    let d = dispatcher();
    let scale = hotel::HotelScale { rooms: 1, users: 64, ..Default::default() };
    hotel::build(&d, RecordingPolicy::Selective, &scale).unwrap();
    let booked: usize = std::thread::scope(|s| {
        let hs: Vec<_> = (0..16)
            .map(|u| {
                let d = &d;
                s.spawn(move || {
                    let c = d.client_connect().unwrap();
                    let o = d.invoke("hotel.reservation", InvocationId::new(c, 1), &hotel::reservation_inputs(1, 1, 1, int(u))).unwrap();
                    output(&o, "confirmation").as_value().unwrap().as_str().unwrap().starts_with("booked") as usize
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(booked, 1);
    assert_eq!(avail(&d, 1, 1), 0);
}
