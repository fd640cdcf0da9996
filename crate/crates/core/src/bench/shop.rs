//! Online shop: browse a category, update a cart, check out.
//!
//! Tables:
//! - `Items(itemID, category, name, price)`, replicated
//! - `Users(userID, spent, orders)`, partitioned by `userID`
//! - `Carts(userID, itemID, qty, price)`, partitioned by `userID`
//! - `Orders(userID, orderID, itemID, qty, price)`, partitioned by `userID`

use std::collections::BTreeMap;

use rand::Rng;

use super::{expect_rows, int, verify_structure, BenchError, OpSpec, Workload, WorkloadMix};
use crate::dispatcher::Dispatcher;
use crate::engine::{PreparedStatement, TableSchema, TxnMode};
use crate::value::{Value, ValueType};
use crate::workflow::{create_workflow, FunctionDef, FunctionError, RecordingPolicy, WiringSpec};

#[derive(Debug, Clone)]
pub struct ShopScale {
    pub users: i64,
    pub categories: i64,
    pub items_per_category: i64,
}

impl Default for ShopScale {
    fn default() -> Self {
        ShopScale { users: 1000, categories: 125, items_per_category: 8 }
    }
}

pub fn price_of(item: i64) -> i64 {
    100 + (item * 37) % 900
}

pub fn schemas() -> Vec<TableSchema> {
    vec![
        TableSchema::new("Items")
            .column("itemID", ValueType::Int64)
            .column("category", ValueType::Int64)
            .column("name", ValueType::Text)
            .column("price", ValueType::Int64)
            .primary_key(["itemID"])
            .index(["category"]),
        TableSchema::new("Users")
            .column("userID", ValueType::Int64)
            .column("spent", ValueType::Int64)
            .column("orders", ValueType::Int64)
            .primary_key(["userID"])
            .partition_by("userID"),
        TableSchema::new("Carts")
            .column("userID", ValueType::Int64)
            .column("itemID", ValueType::Int64)
            .column("qty", ValueType::Int64)
            .column("price", ValueType::Int64)
            .primary_key(["userID", "itemID"])
            .partition_by("userID"),
        TableSchema::new("Orders")
            .column("userID", ValueType::Int64)
            .column("orderID", ValueType::Text)
            .column("itemID", ValueType::Int64)
            .column("qty", ValueType::Int64)
            .column("price", ValueType::Int64)
            .primary_key(["userID", "orderID", "itemID"])
            .partition_by("userID"),
    ]
}

fn browse() -> FunctionDef {
    FunctionDef::new("browse")
        .statement(PreparedStatement::select("items", "Items", ["category"]).columns(["itemID"]))
        .input("userID")
        .input("category")
        .output("itemIDs")
        .site_hint("userID")
        .body(|ctx| {
            let category = ctx.value("category")?.clone();
            let ids = ctx.exec("items", &[category])?.column("itemID").unwrap_or_default();
            ctx.output("itemIDs", ids)
        })
}

fn update_cart() -> FunctionDef {
    FunctionDef::new("updateCart")
        .statement(PreparedStatement::delete("remove", "Carts", ["userID", "itemID"]))
        .statement(PreparedStatement::insert("add", "Carts"))
        .input("cartUser")
        .input("itemID")
        .input("qty")
        .input("price")
        .output("cartQty")
        .site_hint("cartUser")
        .body(|ctx| {
            let (user, item) = (ctx.value("cartUser")?.clone(), ctx.value("itemID")?.clone());
            let (qty, price) = (ctx.i64("qty")?, ctx.i64("price")?);
            ctx.exec("remove", &[user.clone(), item.clone()])?;
            if qty > 0 {
                ctx.exec("add", &[user, item, Value::Int64(qty), Value::Int64(price)])?;
            }
            ctx.output("cartQty", qty)
        })
}

fn get_cart() -> FunctionDef {
    FunctionDef::new("getCart")
        .statement(PreparedStatement::select("lines", "Carts", ["userID"]).columns(["itemID", "qty", "price"]))
        .input("user")
        .output("cartLines")
        .site_hint("user")
        .body(|ctx| {
            let user = ctx.value("user")?.clone();
            let rs = ctx.exec("lines", &[user])?;
            let flat: Vec<Value> = rs.rows.into_iter().flat_map(|r| r.values).collect();
            ctx.output("cartLines", flat)
        })
}

fn place_order() -> FunctionDef {
    FunctionDef::new("placeOrder")
        .statement(PreparedStatement::insert("order", "Orders"))
        .statement(PreparedStatement::select_by_key("getUser", "Users", ["userID"]).columns(["spent", "orders"]))
        .statement(PreparedStatement::update("setUser", "Users", ["spent", "orders"], ["userID"]))
        .input("buyer")
        .input("lines")
        .output("orderTotal")
        .site_hint("buyer")
        .body(|ctx| {
            let user = ctx.value("buyer")?.clone();
            let lines = ctx.list("lines")?;
            let order_id = Value::Text(ctx.workflow_id().to_owned());
            let mut total = 0;
            for line in lines.chunks(3) {
                let [item, qty, price] = line else {
                    return Err(FunctionError::InvalidInput { input: "lines".into(), reason: "ragged cart".into() });
                };
                total += qty.as_i64().unwrap_or(0) * price.as_i64().unwrap_or(0);
                ctx.exec("order", &[user.clone(), order_id.clone(), item.clone(), qty.clone(), price.clone()])?;
            }
            let rs = ctx.exec("getUser", &[user.clone()])?;
            let spent = rs.first("spent").and_then(Value::as_i64).unwrap_or(0);
            let orders = rs.first("orders").and_then(Value::as_i64).unwrap_or(0);
            ctx.exec("setUser", &[Value::Int64(spent + total), Value::Int64(orders + 1), user])?;
            ctx.output("orderTotal", total)
        })
}

fn clear_cart() -> FunctionDef {
    FunctionDef::new("clearCart")
        .statement(PreparedStatement::delete("clear", "Carts", ["userID"]))
        .input("owner")
        .input("amount")
        .output("total")
        .site_hint("owner")
        .body(|ctx| {
            let user = ctx.value("owner")?.clone();
            let amount = ctx.i64("amount")?;
            ctx.exec("clear", &[user])?;
            ctx.output("total", amount)
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
        workload: "shop".into(),
        ops: vec![
            op("Browsing", "shop.browsing", 0.8, true, 1, 1),
            op("CartUpdate", "shop.cartUpdate", 0.1, false, 1, 2),
            op("Checkout", "shop.checkout", 0.1, false, 3, 5),
        ],
    }
}

pub fn build(d: &Dispatcher, policy: RecordingPolicy, scale: &ShopScale) -> Result<Workload, BenchError> {
    let engine = d.engine();
    for s in schemas() {
        engine.create_table(s)?;
    }
    let items = scale.categories * scale.items_per_category;
    engine.run(TxnMode::MultiPartition, |t| {
        let ins = PreparedStatement::insert("seed", "Items");
        for item in 0..items {
            let row = [
                Value::Int64(item),
                Value::Int64(item / scale.items_per_category),
                Value::Text(format!("item-{item}")),
                Value::Int64(price_of(item)),
            ];
            t.exec(&ins, &row)?;
        }
        let ins = PreparedStatement::insert("seed", "Users");
        for user in 0..scale.users {
            t.exec(&ins, &[Value::Int64(user), Value::Int64(0), Value::Int64(0)])?;
        }
        Ok(())
    })?;

    let browsing = create_workflow(
        "shop.browsing",
        vec![browse()],
        WiringSpec::new().wire("userID", "userID").wire("category", "category").wire("itemIDs", "items"),
    )?;
    let cart = create_workflow(
        "shop.cartUpdate",
        vec![update_cart()],
        WiringSpec::new()
            .wire("userID", "cartUser")
            .wire("item", "itemID")
            .wire("quantity", "qty")
            .wire("unitPrice", "price")
            .wire("cartQty", "quantity_set"),
    )?;
    let checkout = create_workflow(
        "shop.checkout",
        vec![get_cart(), place_order(), clear_cart()],
        WiringSpec::new()
            .wire("userID", "user")
            .wire("userID", "buyer")
            .wire("userID", "owner")
            .wire("cartLines", "lines")
            .wire("orderTotal", "amount")
            .wire("total", "checkoutTotal"),
    )?;
    for g in [&browsing, &cart, &checkout] {
        d.register(g, policy)?;
    }
    let mix = mix();
    verify_structure(d, &mix)?;
    expect_rows(d, "Items", items as usize)?;
    expect_rows(d, "Users", scale.users as usize)?;

    let (users, categories) = (scale.users, scale.categories);
    Ok(Workload::new(mix, move |op, rng, _| {
        let user = rng.gen_range(0..users);
        match op {
            0 => BTreeMap::from([("userID".into(), int(user)), ("category".into(), int(rng.gen_range(0..categories)))]),
            1 => {
                let item = rng.gen_range(0..items);
                BTreeMap::from([
                    ("userID".into(), int(user)),
                    ("item".into(), int(item)),
                    ("quantity".into(), int(rng.gen_range(1..=3))),
                    ("unitPrice".into(), int(price_of(item))),
                ])
            }
            _ => BTreeMap::from([("userID".into(), int(user))]),
        }
    }))
}
