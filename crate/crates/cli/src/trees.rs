//! `tree <check>`: exact event-tree reports, one JSON file per check.

use std::collections::BTreeMap;
use std::path::PathBuf;

use piecewise_market::tree::{
    dual_value, is_complete, minimal_financing, na1_probe, optional_decompose, replicable,
    superhedge, supermartingale_numeraire, Claim, DecomposeOutcome, EventTree, TreeFile,
    WithdrawalStream,
};
use piecewise_market::Error;
use serde_json::{json, Value};

use crate::out::Out;
use crate::{Common, Failure, Loaded, TreeCheck};

pub struct NamedTree {
    pub name: String,
    pub file: TreeFile,
    pub tree: EventTree,
}

fn load(path: &PathBuf) -> Result<NamedTree, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read tree file {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: TreeFile = serde_path_to_error::deserialize(de).map_err(|e| {
        Failure::Schema(piecewise_market::scenario::SchemaError {
            field: e.path().to_string(),
            message: format!("{}: {}", path.display(), e.inner()),
        })
    })?;
    let tree = EventTree::from_file(&file)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let name = file.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok(NamedTree { name, file, tree })
}

/// `--tree` if given, else every tree listed by the scenario.
pub fn tree_files(common: &Common, loaded: Option<&Loaded>) -> Result<Vec<NamedTree>, Failure> {
    if let Some(p) = &common.tree {
        return Ok(vec![load(p)?]);
    }
    let l = loaded.ok_or_else(|| Failure::Input("tree checks need --tree or --scenario".into()))?;
    if l.scenario.trees.is_empty() {
        return Err(Failure::Input("the scenario lists no trees".into()));
    }
    l.scenario
        .trees
        .iter()
        .map(|p| load(&l.base.join(p)))
        .collect()
}

// JSON object keys are strings; node ids become their decimal form.
fn by_id(tree: &EventTree, values: &[f64]) -> BTreeMap<String, f64> {
    (0..tree.len())
        .map(|i| (tree.node(i).id.to_string(), values[i]))
        .collect()
}

fn vec_by_id(tree: &EventTree, values: &[Vec<f64>]) -> BTreeMap<String, Vec<f64>> {
    (0..tree.len())
        .filter(|&i| !values[i].is_empty())
        .map(|i| (tree.node(i).id.to_string(), values[i].clone()))
        .collect()
}

/// The file's claims and streams as withdrawal streams.
fn streams(t: &NamedTree) -> Result<Vec<(String, &'static str, WithdrawalStream)>, Error> {
    let mut out = Vec::new();
    for (name, spec) in &t.file.claims {
        out.push((
            name.clone(),
            "claim",
            Claim::from_spec(&t.tree, spec)?.stream(),
        ));
    }
    for (name, map) in &t.file.streams {
        out.push((
            name.clone(),
            "stream",
            WithdrawalStream::from_map(&t.tree, map)?,
        ));
    }
    Ok(out)
}

fn check_one(check: TreeCheck, t: &NamedTree) -> Result<(Value, bool), Error> {
    let tree = &t.tree;
    match check {
        TreeCheck::Viability => {
            let probe = na1_probe(tree);
            let pass = probe.viable;
            Ok((serde_json::to_value(probe)?, pass))
        }
        TreeCheck::Superhedge => {
            let mut items = Vec::new();
            let mut pass = true;
            for (name, kind, k) in streams(t)? {
                let sh = superhedge(tree, &k)?;
                let dual = dual_value(tree, &k)?;
                let gap = (sh.x - dual.value).abs();
                let ok = sh.superhedges && gap <= 1e-8 * (1.0 + sh.x.abs());
                pass &= ok;
                items.push(json!({
                    "name": name,
                    "kind": kind,
                    "x": sh.x,
                    "dual_value": dual.value,
                    "duality_gap": gap,
                    "attained": dual.attained,
                    "not_attained": dual.not_attained,
                    "superhedges": sh.superhedges,
                    "theta": vec_by_id(tree, &sh.theta),
                    "value": by_id(tree, &sh.value),
                    "pass": ok,
                }));
            }
            Ok((json!({ "items": items }), pass))
        }
        TreeCheck::Decompose => {
            let mut items = Vec::new();
            let mut pass = true;
            for (name, kind, k) in streams(t)? {
                let x = minimal_financing(tree, &k)?;
                let item = match optional_decompose(tree, &x)? {
                    DecomposeOutcome::Accepted(d) => json!({
                        "outcome": "accepted",
                        "theta": vec_by_id(tree, &d.theta),
                        "dk": by_id(tree, &d.dk),
                        "reconstruction_error": d.reconstruction_error,
                    }),
                    DecomposeOutcome::Rejected(v) => {
                        pass = false;
                        json!({ "outcome": "rejected", "violation": v })
                    }
                };
                items.push(json!({
                    "name": name,
                    "kind": kind,
                    "process": by_id(tree, &x),
                    "decomposition": item,
                }));
            }
            Ok((json!({ "items": items }), pass))
        }
        TreeCheck::Complete => {
            let complete = is_complete(tree)?;
            let mut claims = BTreeMap::new();
            for (name, spec) in &t.file.claims {
                let r = replicable(tree, &Claim::from_spec(tree, spec)?)?;
                claims.insert(
                    name.clone(),
                    json!({
                        "replicable": r.replicable,
                        "price": r.price,
                        "max_withdrawal": r.max_withdrawal,
                    }),
                );
            }
            Ok((json!({ "complete": complete, "claims": claims }), true))
        }
        TreeCheck::Numeraire => {
            let x = supermartingale_numeraire(tree)?;
            Ok((
                json!({
                    "wealth": by_id(tree, &x.wealth),
                    "theta": vec_by_id(tree, &x.theta),
                    "weights": vec_by_id(tree, &x.weights),
                    "epochs": x.epochs,
                    "epoch_factors": vec_by_id(tree, &x.factors),
                }),
                true,
            ))
        }
    }
}

pub fn run(check: TreeCheck, files: &[NamedTree], out: &mut Out) -> Result<bool, Failure> {
    let mut reports = Vec::new();
    let mut pass = true;
    for t in files {
        let (mut v, ok) = check_one(check, t)?;
        pass &= ok;
        if let Value::Object(m) = &mut v {
            m.insert("tree".into(), json!(t.name));
            m.insert("pass".into(), json!(ok));
        }
        println!(
            "{:<24} {:<10} {}",
            t.name,
            check.name(),
            if ok { "PASS" } else { "FAIL" }
        );
        reports.push(v);
    }
    out.json(&format!("tree_{}.json", check.name()), &reports)?;
    Ok(pass)
}
