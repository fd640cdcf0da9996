//! Hotel reservations: search a city, get recommendations, book a room.
//!
//! `HotelAvail(hotelID, date, numAvail)` and `Reservations(hotelID, resID,
//! date, userID, rooms)` are partitioned by `hotelID`. Everything else is
//! replicated: `Cities(city, name)`, `Hotels(hotelID, city, name, stars)`,
//! `Rates(hotelID, date, price)`, `Profiles(hotelID, address, phone)`,
//! `Reviews(hotelID, reviewID, stars)`, `Users(userID, name, email)` and
//! `Recommendations(userID, rank, hotelID)`.

use std::collections::BTreeMap;

use rand::Rng;

use super::{expect_rows, int, verify_structure, BenchError, OpSpec, Workload, WorkloadMix};
use crate::dispatcher::Dispatcher;
use crate::engine::{PreparedStatement, SortOrder, TableSchema, TxnMode};
use crate::value::{Value, ValueType};
use crate::workflow::{
    create_workflow, FunctionContext, FunctionDef, FunctionError, IdempotentPort, RecordingPolicy, WiringSpec,
};

#[derive(Debug, Clone)]
pub struct HotelScale {
    pub cities: i64,
    pub hotels_per_city: i64,
    pub days: i64,
    pub rooms: i64,
    pub users: i64,
    pub reviews_per_hotel: i64,
    pub recommendations: i64,
}

impl Default for HotelScale {
    fn default() -> Self {
        HotelScale {
            cities: 10,
            hotels_per_city: 10,
            days: 30,
            rooms: 10,
            users: 1000,
            reviews_per_hotel: 3,
            recommendations: 5,
        }
    }
}

impl HotelScale {
    pub fn hotels(&self) -> i64 {
        self.cities * self.hotels_per_city
    }
}

pub fn rate_of(hotel: i64, date: i64) -> i64 {
    80 + (hotel * 13 + date * 7) % 120
}

pub fn schemas() -> Vec<TableSchema> {
    let t = TableSchema::new;
    vec![
        t("Cities").column("city", ValueType::Int64).column("name", ValueType::Text).primary_key(["city"]),
        t("Hotels")
            .column("hotelID", ValueType::Int64)
            .column("city", ValueType::Int64)
            .column("name", ValueType::Text)
            .column("stars", ValueType::Int64)
            .primary_key(["hotelID"])
            .index(["city"]),
        t("Rates")
            .column("hotelID", ValueType::Int64)
            .column("date", ValueType::Int64)
            .column("price", ValueType::Int64)
            .primary_key(["hotelID", "date"]),
        t("Profiles")
            .column("hotelID", ValueType::Int64)
            .column("address", ValueType::Text)
            .column("phone", ValueType::Text)
            .primary_key(["hotelID"]),
        t("Reviews")
            .column("hotelID", ValueType::Int64)
            .column("reviewID", ValueType::Int64)
            .column("stars", ValueType::Int64)
            .primary_key(["hotelID", "reviewID"]),
        t("Users")
            .column("userID", ValueType::Int64)
            .column("name", ValueType::Text)
            .column("email", ValueType::Text)
            .primary_key(["userID"]),
        t("Recommendations")
            .column("userID", ValueType::Int64)
            .column("rank", ValueType::Int64)
            .column("hotelID", ValueType::Int64)
            .primary_key(["userID", "rank"]),
        t("HotelAvail")
            .column("hotelID", ValueType::Int64)
            .column("date", ValueType::Int64)
            .column("numAvail", ValueType::Int64)
            .primary_key(["hotelID", "date"])
            .partition_by("hotelID"),
        t("Reservations")
            .column("hotelID", ValueType::Int64)
            .column("resID", ValueType::Text)
            .column("date", ValueType::Int64)
            .column("userID", ValueType::Int64)
            .column("rooms", ValueType::Int64)
            .primary_key(["hotelID", "resID"])
            .partition_by("hotelID"),
    ]
}

fn first_i64(ctx: &mut FunctionContext<'_, '_>, stmt: &str, params: &[Value], col: &str) -> Result<Value, FunctionError> {
    Ok(ctx.exec(stmt, params)?.first(col).cloned().unwrap_or(Value::Null))
}

fn head(list: &[Value]) -> Value {
    list.first().cloned().unwrap_or(Value::Null)
}

fn nearby() -> FunctionDef {
    FunctionDef::new("nearby")
        .statement(PreparedStatement::select_by_key("city", "Cities", ["city"]))
        .statement(PreparedStatement::select("hotels", "Hotels", ["city"]).columns(["hotelID"]))
        .statement(PreparedStatement::select_by_key("user", "Users", ["userID"]).columns(["name"]))
        .statement(PreparedStatement::select("recs", "Recommendations", ["userID"]).columns(["hotelID"]))
        .input("city")
        .input("searchUser")
        .output("hotels")
        .site_hint("city")
        .body(|ctx| {
            let (city, user) = (ctx.value("city")?.clone(), ctx.value("searchUser")?.clone());
            ctx.exec("city", &[city.clone()])?;
            ctx.exec("user", &[user.clone()])?;
            let favoured = ctx.exec("recs", &[user])?.column("hotelID").unwrap_or_default();
            let mut hotels = ctx.exec("hotels", &[city])?.column("hotelID").unwrap_or_default();
            // favoured hotels first, then by ID
            hotels.sort_by_key(|h| (!favoured.contains(h), h.as_i64()));
            ctx.output("hotels", hotels)
        })
}

fn rates() -> FunctionDef {
    FunctionDef::new("rates")
        .statement(PreparedStatement::select_by_key("rate", "Rates", ["hotelID", "date"]).columns(["price"]))
        .statement(
            PreparedStatement::select("cheapest", "Rates", ["hotelID"])
                .columns(["price"])
                .order_by("price", SortOrder::Asc)
                .limit(1),
        )
        .statement(
            PreparedStatement::select("dearest", "Rates", ["hotelID"])
                .columns(["price"])
                .order_by("price", SortOrder::Desc)
                .limit(1),
        )
        .statement(PreparedStatement::select_by_key("stars", "Hotels", ["hotelID"]).columns(["stars"]))
        .input("rateHotels")
        .input("rateDate")
        .output("prices")
        .site_hint("rateHotels")
        .body(|ctx| {
            let hotels = ctx.list("rateHotels")?;
            let date = ctx.value("rateDate")?.clone();
            let mut prices = Vec::with_capacity(hotels.len());
            for h in &hotels {
                prices.push(first_i64(ctx, "rate", &[h.clone(), date.clone()], "price")?);
            }
            let h = head(&hotels);
            ctx.exec("cheapest", &[h.clone()])?;
            ctx.exec("dearest", &[h.clone()])?;
            ctx.exec("stars", &[h])?;
            ctx.output("prices", prices)
        })
}

fn availability() -> FunctionDef {
    FunctionDef::new("availability")
        .statement(PreparedStatement::select_by_key("avail", "HotelAvail", ["hotelID", "date"]).columns(["numAvail"]))
        .statement(PreparedStatement::select("days", "HotelAvail", ["hotelID"]).columns(["numAvail"]))
        .statement(PreparedStatement::select("booked", "Reservations", ["hotelID"]).columns(["rooms"]))
        .statement(PreparedStatement::select_by_key("hotel", "Hotels", ["hotelID"]).columns(["name"]))
        .input("availHotels")
        .input("availDate")
        .output("free")
        .site_hint("availHotels")
        .body(|ctx| {
            // only the first candidate lives in this partition
            let h = head(&ctx.list("availHotels")?);
            let date = ctx.value("availDate")?.clone();
            let free = first_i64(ctx, "avail", &[h.clone(), date], "numAvail")?;
            ctx.exec("days", &[h.clone()])?;
            ctx.exec("booked", &[h.clone()])?;
            ctx.exec("hotel", &[h.clone()])?;
            ctx.output("free", vec![h, free])
        })
}

fn profiles() -> FunctionDef {
    FunctionDef::new("profiles")
        .statement(PreparedStatement::select_by_key("profile", "Profiles", ["hotelID"]).columns(["address"]))
        .statement(PreparedStatement::select_by_key("hotel", "Hotels", ["hotelID"]).columns(["city"]))
        .statement(PreparedStatement::select_by_key("city", "Cities", ["city"]).columns(["name"]))
        .statement(PreparedStatement::select("reviews", "Reviews", ["hotelID"]).columns(["reviewID"]))
        .input("profileHotels")
        .output("addresses")
        .site_hint("profileHotels")
        .body(|ctx| {
            let hotels = ctx.list("profileHotels")?;
            let mut addresses = Vec::with_capacity(hotels.len());
            for h in &hotels {
                addresses.push(first_i64(ctx, "profile", &[h.clone()], "address")?);
            }
            let h = head(&hotels);
            let city = first_i64(ctx, "hotel", &[h.clone()], "city")?;
            ctx.exec("city", &[city])?;
            ctx.exec("reviews", &[h])?;
            ctx.output("addresses", addresses)
        })
}

fn reviews() -> FunctionDef {
    FunctionDef::new("reviews")
        .statement(PreparedStatement::select("all", "Reviews", ["hotelID"]).columns(["stars"]))
        .statement(PreparedStatement::select_by_key("hotel", "Hotels", ["hotelID"]).columns(["stars"]))
        .statement(
            PreparedStatement::select("top", "Reviews", ["hotelID"])
                .columns(["stars"])
                .order_by("stars", SortOrder::Desc)
                .limit(1),
        )
        .input("reviewHotels")
        .output("scores")
        .site_hint("reviewHotels")
        .body(|ctx| {
            let hotels = ctx.list("reviewHotels")?;
            let mut scores = Vec::with_capacity(hotels.len());
            for h in &hotels {
                let stars = ctx.exec("all", &[h.clone()])?.column("stars").unwrap_or_default();
                scores.push(Value::Int64(stars.iter().filter_map(Value::as_i64).sum()));
            }
            let h = head(&hotels);
            ctx.exec("hotel", &[h.clone()])?;
            ctx.exec("top", &[h])?;
            ctx.output("scores", scores)
        })
}

fn rank() -> FunctionDef {
    FunctionDef::new("rank")
        .statement(PreparedStatement::select_by_key("user", "Users", ["userID"]).columns(["name"]))
        .statement(PreparedStatement::select("recs", "Recommendations", ["userID"]).columns(["hotelID"]))
        .statement(PreparedStatement::select_by_key("hotel", "Hotels", ["hotelID"]).columns(["name"]))
        .input("rankUser")
        .input("candidates")
        .input("prices")
        .input("free")
        .input("addresses")
        .input("scores")
        .output("ranked")
        .site_hint("rankUser")
        .body(|ctx| {
            let user = ctx.value("rankUser")?.clone();
            let hotels = ctx.list("candidates")?;
            let prices = ctx.list("prices")?;
            let scores = ctx.list("scores")?;
            let free = ctx.list("free")?;
            let _ = ctx.list("addresses")?;
            ctx.exec("user", &[user.clone()])?;
            ctx.exec("recs", &[user])?;
            // sold-out first candidate drops to the back
            let full = free.get(1).and_then(Value::as_i64) == Some(0);
            let mut order: Vec<(bool, i64, i64, i64)> = hotels
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let score = scores.get(i).and_then(Value::as_i64).unwrap_or(0);
                    let price = prices.get(i).and_then(Value::as_i64).unwrap_or(i64::MAX);
                    (i == 0 && full, -score, price, h.as_i64().unwrap_or(0))
                })
                .collect();
            order.sort_unstable();
            let ranked: Vec<Value> = order.iter().map(|o| Value::Int64(o.3)).collect();
            ctx.exec("hotel", &[head(&ranked)])?;
            ctx.output("ranked", ranked)
        })
}

fn recommend() -> FunctionDef {
    FunctionDef::new("recommend")
        .statement(
            PreparedStatement::select("recs", "Recommendations", ["userID"])
                .columns(["hotelID"])
                .order_by("rank", SortOrder::Asc),
        )
        .input("recUser")
        .output("picks")
        .site_hint("recUser")
        .body(|ctx| {
            let user = ctx.value("recUser")?.clone();
            let picks = ctx.exec("recs", &[user])?.column("hotelID").unwrap_or_default();
            ctx.output("picks", picks)
        })
}

fn check_avail() -> FunctionDef {
    FunctionDef::new("checkAvail")
        .statement(PreparedStatement::select_by_key("avail", "HotelAvail", ["hotelID", "date"]).columns(["numAvail"]))
        .statement(PreparedStatement::select_by_key("rate", "Rates", ["hotelID", "date"]).columns(["price"]))
        .input("hotelID")
        .input("date")
        .input("numRooms")
        .output("avail")
        .output("left")
        .output("quote")
        .site_hint("hotelID")
        .body(|ctx| {
            let (h, date) = (ctx.value("hotelID")?.clone(), ctx.value("date")?.clone());
            let rooms = ctx.i64("numRooms")?;
            let num = first_i64(ctx, "avail", &[h.clone(), date.clone()], "numAvail")?.as_i64().unwrap_or(0);
            let price = first_i64(ctx, "rate", &[h, date], "price")?.as_i64().unwrap_or(0);
            ctx.output("avail", num >= rooms && rooms > 0)?;
            ctx.output("left", num - rooms)?;
            ctx.output("quote", price * rooms)
        })
}

fn reserve() -> FunctionDef {
    FunctionDef::new("reserve")
        .statement(PreparedStatement::update("take", "HotelAvail", ["numAvail"], ["hotelID", "date"]))
        .statement(PreparedStatement::insert("book", "Reservations"))
        .input("avail")
        .input("left")
        .input("resHotel")
        .input("resDate")
        .input("resRooms")
        .input("resUser")
        .output("booked")
        .site_hint("resHotel")
        .body(|ctx| {
            let avail = ctx.value("avail")?.as_bool().unwrap_or(false);
            if !avail {
                return ctx.output("booked", false);
            }
            let (h, date) = (ctx.value("resHotel")?.clone(), ctx.value("resDate")?.clone());
            let (left, rooms, user) = (ctx.i64("left")?, ctx.i64("resRooms")?, ctx.value("resUser")?.clone());
            ctx.exec("take", &[Value::Int64(left), h.clone(), date.clone()])?;
            let res = Value::Text(ctx.workflow_id().to_owned());
            ctx.exec("book", &[h, res, date, user, Value::Int64(rooms)])?;
            ctx.output("booked", true)
        })
}

fn send_email() -> FunctionDef {
    FunctionDef::new("sendEmail")
        .statement(PreparedStatement::select_by_key("email", "Users", ["userID"]).columns(["email"]))
        .input("booked")
        .input("guest")
        .input("cost")
        .output("confirmation")
        .site_hint("guest")
        .body(|ctx| {
            let guest = ctx.value("guest")?.clone();
            if !ctx.value("booked")?.as_bool().unwrap_or(false) {
                return ctx.output("confirmation", "not-booked");
            }
            let cost = ctx.i64("cost")?;
            let to = first_i64(ctx, "email", &[guest], "email")?;
            let receipt = ctx.external_call("email", to)?;
            let receipt = receipt.as_str().unwrap_or_default().to_owned();
            ctx.output("confirmation", format!("booked:{cost}:{receipt}"))
        })
}

pub fn mix() -> WorkloadMix {
    let op = |name: &str, workflow: &str, weight, read_only, txns, queries| OpSpec {
        name: name.into(),
        workflow: workflow.into(),
        weight,
        read_only,
        txns,
        queries,
    };
    WorkloadMix {
        workload: "hotel".into(),
        ops: vec![
            op("Search", "hotel.search", 0.6, true, 6, 22),
            op("Recommend", "hotel.recommend", 0.39, true, 1, 1),
            op("Reservation", "hotel.reservation", 0.01, false, 2, 5),
        ],
    }
}

fn seed(d: &Dispatcher, s: &HotelScale) -> Result<(), BenchError> {
    d.engine().run(TxnMode::MultiPartition, |t| {
        let mut put = |table: &str, row: Vec<Value>| t.exec(&PreparedStatement::insert("seed", table), &row).map(|_| ());
        for c in 0..s.cities {
            put("Cities", vec![c.into(), format!("city-{c}").into()])?;
        }
        for h in 0..s.hotels() {
            put("Hotels", vec![h.into(), (h / s.hotels_per_city).into(), format!("hotel-{h}").into(), (1 + h % 5).into()])?;
            put("Profiles", vec![h.into(), format!("{h} Main St").into(), format!("555-{h:04}").into()])?;
            for r in 0..s.reviews_per_hotel {
                put("Reviews", vec![h.into(), r.into(), (1 + (h + r * 3) % 5).into()])?;
            }
            for date in 0..s.days {
                put("Rates", vec![h.into(), date.into(), rate_of(h, date).into()])?;
                put("HotelAvail", vec![h.into(), date.into(), s.rooms.into()])?;
            }
        }
        for u in 0..s.users {
            put("Users", vec![u.into(), format!("user-{u}").into(), format!("user{u}@example.com").into()])?;
            for r in 0..s.recommendations {
                put("Recommendations", vec![u.into(), r.into(), ((u * 7 + r * 31) % s.hotels()).into()])?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

pub fn build(d: &Dispatcher, policy: RecordingPolicy, scale: &HotelScale) -> Result<Workload, BenchError> {
    for s in schemas() {
        d.engine().create_table(s)?;
    }
    seed(d, scale)?;
    if d.ports().get("email").is_none() {
        d.ports().register("email", IdempotentPort::new().handler());
    }

    let search = create_workflow(
        "hotel.search",
        vec![nearby(), rates(), availability(), profiles(), reviews(), rank()],
        WiringSpec::new()
            .wire("city", "city")
            .wire("userID", "searchUser")
            .wire("userID", "rankUser")
            .wire("date", "rateDate")
            .wire("date", "availDate")
            .wire("hotels", "rateHotels")
            .wire("hotels", "availHotels")
            .wire("hotels", "profileHotels")
            .wire("hotels", "reviewHotels")
            .wire("hotels", "candidates")
            .wire("prices", "prices")
            .wire("free", "free")
            .wire("addresses", "addresses")
            .wire("scores", "scores")
            .wire("ranked", "results"),
    )?;
    let recommend = create_workflow(
        "hotel.recommend",
        vec![recommend()],
        WiringSpec::new().wire("userID", "recUser").wire("picks", "hotels"),
    )?;
    let reservation = create_workflow(
        "hotel.reservation",
        vec![check_avail(), reserve(), send_email()],
        WiringSpec::new()
            .wire("hotel", "hotelID")
            .wire("hotel", "resHotel")
            .wire("day", "date")
            .wire("day", "resDate")
            .wire("rooms", "numRooms")
            .wire("rooms", "resRooms")
            .wire("userID", "resUser")
            .wire("userID", "guest")
            .wire("avail", "avail")
            .wire("left", "left")
            .wire("quote", "cost")
            .wire("booked", "booked")
            .wire("confirmation", "confirmation"),
    )?
    .group_functions(&["checkAvail", "reserve"])?;
    for g in [&search, &recommend, &reservation] {
        d.register(g, policy)?;
    }
    let mix = mix();
    verify_structure(d, &mix)?;
    expect_rows(d, "Hotels", scale.hotels() as usize)?;
    expect_rows(d, "HotelAvail", (scale.hotels() * scale.days) as usize)?;
    expect_rows(d, "Users", scale.users as usize)?;

    let s = scale.clone();
    Ok(Workload::new(mix, move |op, rng, _| {
        let user = int(rng.gen_range(0..s.users));
        match op {
            0 => BTreeMap::from([
                ("city".into(), int(rng.gen_range(0..s.cities))),
                ("date".into(), int(rng.gen_range(0..s.days))),
                ("userID".into(), user),
            ]),
            1 => BTreeMap::from([("userID".into(), user)]),
            _ => reservation_inputs(rng.gen_range(0..s.hotels()), rng.gen_range(0..s.days), 1, user),
        }
    }))
}

/// Inputs of one Reservation.
pub fn reservation_inputs(
    hotel: i64,
    day: i64,
    rooms: i64,
    user: crate::value::Datum,
) -> BTreeMap<String, crate::value::Datum> {
    BTreeMap::from([
        ("hotel".into(), int(hotel)),
        ("day".into(), int(day)),
        ("rooms".into(), int(rooms)),
        ("userID".into(), user),
    ])
}
