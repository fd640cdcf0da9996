//! Twitter clone: read a timeline, write a post.
//!
//! `Users(userID, name)`, `Follows(userID, followee)` and `Posts(author,
//! postID, ts, body)` are all partitioned by user. A timeline is one unit
//! listing the followees, then one unit per followee merging that user's
//! latest posts into the running top list.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{expect_rows, int, verify_structure, BenchError, OpSpec, Workload, WorkloadMix};
use crate::dispatcher::Dispatcher;
use crate::engine::{PreparedStatement, SortOrder, TableSchema, TxnMode};
use crate::value::{Datum, Value, ValueType};
use crate::workflow::{create_workflow, FunctionDef, RecordingPolicy, WiringSpec};

/// Posts kept per timeline.
pub const TIMELINE_LEN: usize = 10;

#[derive(Debug, Clone)]
pub struct RetwisScale {
    pub users: i64,
    pub follows: usize,
    pub posts: i64,
    pub seed: u64,
}

impl Default for RetwisScale {
    fn default() -> Self {
        RetwisScale { users: 1000, follows: 50, posts: 5000, seed: 0x5eed }
    }
}

pub fn schemas() -> Vec<TableSchema> {
    vec![
        TableSchema::new("Users")
            .column("userID", ValueType::Int64)
            .column("name", ValueType::Text)
            .primary_key(["userID"])
            .partition_by("userID"),
        TableSchema::new("Follows")
            .column("userID", ValueType::Int64)
            .column("followee", ValueType::Int64)
            .primary_key(["userID", "followee"])
            .partition_by("userID"),
        TableSchema::new("Posts")
            .column("author", ValueType::Int64)
            .column("postID", ValueType::Text)
            .column("ts", ValueType::Int64)
            .column("body", ValueType::Text)
            .primary_key(["author", "postID"])
            .partition_by("author"),
    ]
}

/// A timeline entry as stored in the running list: `ts, author, postID`.
pub fn merge_top(acc: &[Value], fresh: &[Vec<Value>]) -> Vec<Value> {
    let mut all: Vec<(i64, i64, String)> = acc
        .chunks(3)
        .filter_map(|c| Some((c[0].as_i64()?, c[1].as_i64()?, c[2].as_str()?.to_owned())))
        .collect();
    for r in fresh {
        if let (Some(ts), Some(author), Some(id)) = (r[0].as_i64(), r[1].as_i64(), r[2].as_str()) {
            all.push((ts, author, id.to_owned()));
        }
    }
    all.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    all.truncate(TIMELINE_LEN);
    all.into_iter()
        .flat_map(|(ts, author, id)| [Value::Int64(ts), Value::Int64(author), Value::Text(id)])
        .collect()
}

fn following(n: usize) -> FunctionDef {
    let mut f = FunctionDef::new("following")
        .statement(PreparedStatement::select("follows", "Follows", ["userID"]).columns(["followee"]))
        .input("reader")
        .output("start")
        .site_hint("reader");
    for i in 1..=n {
        f = f.output(format!("f{i}"));
    }
    f.body(move |ctx| {
        let reader = ctx.value("reader")?.clone();
        let followees = ctx.exec("follows", &[reader])?.column("followee").unwrap_or_default();
        for i in 1..=n {
            ctx.output(&format!("f{i}"), followees.get(i - 1).cloned().unwrap_or(Value::Null))?;
        }
        ctx.output("start", Vec::<Value>::new())
    })
}

fn posts_of(i: usize) -> FunctionDef {
    let (followee, acc, out) = (format!("followee{i}"), format!("acc{i}"), format!("out{i}"));
    FunctionDef::new(format!("posts{i}"))
        .statement(
            PreparedStatement::select("latest", "Posts", ["author"])
                .columns(["ts", "author", "postID"])
                .order_by("ts", SortOrder::Desc)
                .limit(TIMELINE_LEN),
        )
        .input(followee.clone())
        .input(acc.clone())
        .output(out.clone())
        .site_hint(followee.clone())
        .body(move |ctx| {
            let who = ctx.value(&followee)?.clone();
            let acc = ctx.list(&acc)?;
            let fresh = if who.is_null() {
                Vec::new()
            } else {
                ctx.exec("latest", &[who])?.rows.into_iter().map(|r| r.values).collect()
            };
            ctx.output(&out, merge_top(&acc, &fresh))
        })
}

fn post() -> FunctionDef {
    FunctionDef::new("post")
        .statement(PreparedStatement::insert("add", "Posts"))
        .input("author")
        .input("ts")
        .input("body")
        .output("postID")
        .site_hint("author")
        .body(|ctx| {
            let id = Value::Text(ctx.workflow_id().to_owned());
            let (author, ts, body) = (ctx.value("author")?.clone(), ctx.value("ts")?.clone(), ctx.value("body")?.clone());
            ctx.exec("add", &[author, id.clone(), ts, body])?;
            ctx.output("postID", id)
        })
}

pub fn mix(follows: usize) -> WorkloadMix {
    let op = |name: &str, workflow: &str, weight, read_only, txns, queries| OpSpec {
        name: name.into(),
        workflow: workflow.into(),
        weight,
        read_only,
        txns,
        queries,
    };
    WorkloadMix {
        workload: "retwis".into(),
        ops: vec![
            op("GetTimeline", "retwis.timeline", 0.9, true, follows + 1, follows + 1),
            op("Post", "retwis.post", 0.1, false, 1, 1),
        ],
    }
}

/// Followees of `user` in the seeded data.
pub fn followees(scale: &RetwisScale, user: i64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(scale.seed ^ (user as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let others = (scale.users - 1) as usize;
    let mut picked: Vec<i64> = sample(&mut rng, others, scale.follows.min(others))
        .into_iter()
        .map(|i| if (i as i64) < user { i as i64 } else { i as i64 + 1 })
        .collect();
    picked.sort_unstable();
    picked
}

fn seed(d: &Dispatcher, s: &RetwisScale) -> Result<(), BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    d.engine().run(TxnMode::MultiPartition, |t| {
        let (users, follows, posts) = (
            PreparedStatement::insert("u", "Users"),
            PreparedStatement::insert("f", "Follows"),
            PreparedStatement::insert("p", "Posts"),
        );
        for u in 0..s.users {
            t.exec(&users, &[Value::Int64(u), Value::Text(format!("user-{u}"))])?;
            for f in followees(s, u) {
                t.exec(&follows, &[Value::Int64(u), Value::Int64(f)])?;
            }
        }
        for p in 0..s.posts {
            let author = rng.gen_range(0..s.users);
            let row = [Value::Int64(author), Value::Text(format!("seed:{p}")), Value::Int64(p), Value::Text(format!("post {p}"))];
            t.exec(&posts, &row)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn build(d: &Dispatcher, policy: RecordingPolicy, scale: &RetwisScale) -> Result<Workload, BenchError> {
    for s in schemas() {
        d.engine().create_table(s)?;
    }
    seed(d, scale)?;
    let n = scale.follows;
    let mut functions = vec![following(n)];
    let mut wiring = WiringSpec::new().wire("userID", "reader").wire("start", "acc1");
    for i in 1..=n {
        functions.push(posts_of(i));
        wiring = wiring.wire(format!("f{i}"), format!("followee{i}"));
        let next = if i == n { "timeline".to_owned() } else { format!("acc{}", i + 1) };
        wiring = wiring.wire(format!("out{i}"), next);
    }
    let timeline = create_workflow("retwis.timeline", functions, wiring)?;
    let post = create_workflow(
        "retwis.post",
        vec![post()],
        WiringSpec::new().wire("userID", "author").wire("ts", "ts").wire("body", "body").wire("postID", "postID"),
    )?;
    for g in [&timeline, &post] {
        d.register(g, policy)?;
    }
    let mix = mix(n);
    verify_structure(d, &mix)?;
    expect_rows(d, "Users", scale.users as usize)?;
    expect_rows(d, "Follows", scale.users as usize * n)?;
    expect_rows(d, "Posts", scale.posts as usize)?;

    let (users, base) = (scale.users, scale.posts);
    Ok(Workload::new(mix, move |op, rng, seq| {
        let user = rng.gen_range(0..users);
        match op {
            0 => BTreeMap::from([("userID".into(), int(user))]),
            _ => post_inputs(user, base + seq as i64, format!("post at {seq}")),
        }
    }))
}

/// Inputs of one Post.
pub fn post_inputs(author: i64, ts: i64, body: String) -> BTreeMap<String, Datum> {
    BTreeMap::from([
        ("userID".into(), int(author)),
        ("ts".into(), int(ts)),
        ("body".into(), Datum::from(Value::Text(body))),
    ])
}
