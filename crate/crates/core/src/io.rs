//! JSON documents: instances, menus, blueprints and reports.
//!
//! Every document carries `"v": 1`. Output floats are rounded to 12
//! significant digits so identical runs give identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::market::{AuditReport, BuyerType, Environment, Experiment, Menu, MenuEntry};
use crate::multi::{Buyer, MechanismBlueprint, MultiAudit, MultiEnvironment, ReducedForm, VpmWeights};
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

fn check_version(v: Option<u32>) -> Result<()> {
    match v {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(Error::invalid(format!("unsupported schema version {other}"))),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad {what} JSON: {e}")))
}

/// Round to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    // Avoid printing "-0.0".
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round12(x))) {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut value = serde_json::to_value(doc).map_err(|e| Error::invalid(e.to_string()))?;
    round_value(&mut value);
    let mut s = serde_json::to_string_pretty(&value).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeDoc {
    pub id: String,
    pub prior: Vec<f64>,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UtilityDoc {
    Shared(Vec<Vec<f64>>),
    PerType(BTreeMap<String, Vec<Vec<f64>>>),
}

/// Single-buyer instance. `actions` and `utility` may be left out when an
/// oracle supplies the utilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityDoc>,
    pub types: Vec<TypeDoc>,
}

impl InstanceDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: InstanceDoc = parse(text, "instance")?;
        check_version(doc.v)?;
        Ok(doc)
    }

    pub fn buyer_types(&self) -> (Vec<BuyerType>, Vec<f64>) {
        let types = self.types.iter().map(|t| BuyerType { id: t.id.clone(), prior: t.prior.clone() }).collect();
        (types, self.types.iter().map(|t| t.prob).collect())
    }

    pub fn environment(&self) -> Result<Environment> {
        let actions = self.actions.clone().ok_or_else(|| Error::invalid("instance has no `actions`"))?;
        let utilities = match &self.utility {
            None => return Err(Error::invalid("instance has no `utility`")),
            Some(UtilityDoc::Shared(u)) => vec![u.clone()],
            Some(UtilityDoc::PerType(map)) => self
                .types
                .iter()
                .map(|t| {
                    map.get(&t.id).cloned().ok_or_else(|| Error::invalid(format!("no utility for type `{}`", t.id)))
                })
                .collect::<Result<_>>()?,
        };
        let (types, probs) = self.buyer_types();
        Environment::new(self.states.clone(), actions, utilities, types, probs)
    }

    pub fn from_environment(env: &Environment) -> Self {
        let utility = if env.has_shared_utility() {
            UtilityDoc::Shared(env.utility(0).to_vec())
        } else {
            UtilityDoc::PerType(
                env.types.iter().enumerate().map(|(k, t)| (t.id.clone(), env.utility(k).to_vec())).collect(),
            )
        };
        InstanceDoc {
            v: Some(SCHEMA_VERSION),
            states: env.states.clone(),
            actions: Some(env.actions.clone()),
            utility: Some(utility),
            types: env
                .types
                .iter()
                .zip(&env.type_probs)
                .map(|(t, &prob)| TypeDoc { id: t.id.clone(), prior: t.prior.clone(), prob })
                .collect(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<Environment> {
    InstanceDoc::parse(text)?.environment()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryDoc {
    pub price: f64,
    /// States by signals.
    pub experiment: Vec<Vec<f64>>,
}

/// A menu, optionally with the revenue and audit it was reported with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MenuDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revenue: Option<f64>,
    pub entries: Vec<EntryDoc>,
    /// Entry bought by each type, `null` for the free null experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<Option<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
}

impl MenuDoc {
    pub fn new(menu: &Menu, audit: Option<&AuditReport>) -> Self {
        MenuDoc {
            v: Some(SCHEMA_VERSION),
            revenue: audit.map(|a| a.revenue),
            entries: menu
                .entries
                .iter()
                .map(|e| EntryDoc { price: e.price, experiment: e.experiment.rows().to_vec() })
                .collect(),
            assignment: menu.assignment.clone(),
            audit: audit.cloned(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: MenuDoc = parse(text, "menu")?;
        check_version(doc.v)?;
        Ok(doc)
    }

    pub fn menu(&self) -> Result<Menu> {
        let entries = self
            .entries
            .iter()
            .map(|e| Ok(MenuEntry { experiment: Experiment::new(e.experiment.clone())?, price: e.price }))
            .collect::<Result<_>>()?;
        let menu = Menu { entries, assignment: self.assignment.clone() };
        menu.validate()?;
        Ok(menu)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuyerDoc {
    pub id: String,
    pub utility: Vec<Vec<f64>>,
    pub types: Vec<TypeDoc>,
}

/// Multi-buyer instance: shared states and actions plus a `buyers` array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiInstanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub buyers: Vec<BuyerDoc>,
}

impl MultiInstanceDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: MultiInstanceDoc = parse(text, "multi-buyer instance")?;
        check_version(doc.v)?;
        Ok(doc)
    }

    pub fn environment(&self) -> Result<MultiEnvironment> {
        let buyers = self
            .buyers
            .iter()
            .map(|b| Buyer {
                id: b.id.clone(),
                types: b.types.iter().map(|t| BuyerType { id: t.id.clone(), prior: t.prior.clone() }).collect(),
                type_probs: b.types.iter().map(|t| t.prob).collect(),
                utility: b.utility.clone(),
            })
            .collect();
        MultiEnvironment::new(self.states.clone(), self.actions.clone(), buyers)
    }

    pub fn from_environment(env: &MultiEnvironment) -> Self {
        MultiInstanceDoc {
            v: Some(SCHEMA_VERSION),
            states: env.states.clone(),
            actions: env.actions.clone(),
            buyers: env
                .buyers
                .iter()
                .map(|b| BuyerDoc {
                    id: b.id.clone(),
                    utility: b.utility.clone(),
                    types: b
                        .types
                        .iter()
                        .zip(&b.type_probs)
                        .map(|(t, &prob)| TypeDoc { id: t.id.clone(), prior: t.prior.clone(), prob })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn parse_multi_instance(text: &str) -> Result<MultiEnvironment> {
    MultiInstanceDoc::parse(text)?.environment()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub weight: f64,
    /// `x[i][θ][ω][a]`.
    pub x: Vec<Vec<Vec<Vec<f64>>>>,
}

/// A solved multi-buyer mechanism, replayable with `run_mechanism`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlueprintDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revenue: Option<f64>,
    pub mixture: Vec<ComponentDoc>,
    pub interim_prices: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_form: Option<ReducedForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<MultiAudit>,
}

impl BlueprintDoc {
    pub fn new(bp: &MechanismBlueprint, rf: Option<&ReducedForm>, audit: Option<&MultiAudit>) -> Self {
        BlueprintDoc {
            v: Some(SCHEMA_VERSION),
            revenue: audit.map(|a| a.revenue),
            mixture: bp.mixture.iter().map(|(l, w)| ComponentDoc { weight: *l, x: w.x.clone() }).collect(),
            interim_prices: bp.interim_prices.clone(),
            reduced_form: rf.cloned(),
            audit: audit.cloned(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: BlueprintDoc = parse(text, "blueprint")?;
        check_version(doc.v)?;
        Ok(doc)
    }

    pub fn blueprint(&self, env: &MultiEnvironment) -> Result<MechanismBlueprint> {
        let bp = MechanismBlueprint {
            mixture: self.mixture.iter().map(|c| (c.weight, VpmWeights { x: c.x.clone() })).collect(),
            interim_prices: self.interim_prices.clone(),
        };
        bp.validate(env)?;
        Ok(bp)
    }
}

/// `{"v": 1, ...fields}` for ad-hoc reports.
pub fn report(fields: Value) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("v".into(), Value::from(SCHEMA_VERSION));
    if let Value::Object(rest) = fields {
        map.extend(rest);
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::audit_menu;

    const SINGLE: &str = r#"{"v":1,"states":["rain","sun"],"actions":["umbrella","none"],
        "utility":[[1,0],[0,1]],"types":[{"id":"t","prior":[0.5,0.5],"prob":1}]}"#;

    #[test]
    fn instance_round_trip() {
        let env = parse_instance(SINGLE).unwrap();
        assert_eq!(env.num_actions(), 2);
        let again = parse_instance(&to_json(&InstanceDoc::from_environment(&env)).unwrap()).unwrap();
        assert_eq!(env, again);
    }

    #[test]
    fn per_type_utilities_and_version() {
        let text = r#"{"states":["a","b"],"actions":["x","y"],
            "utility":{"p":[[1,0],[0,1]],"q":[[0,1],[1,0]]},
            "types":[{"id":"p","prior":[0.5,0.5],"prob":0.5},{"id":"q","prior":[0.2,0.8],"prob":0.5}]}"#;
        let env = parse_instance(text).unwrap();
        assert!(!env.has_shared_utility());
        let bad = SINGLE.replace("\"v\":1", "\"v\":2");
        assert!(matches!(parse_instance(&bad), Err(Error::InvalidInput(_))));
        assert!(matches!(parse_instance("{"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rounding_is_twelve_digits() {
        assert_eq!(round12(0.1 + 0.2), 0.3);
        assert_eq!(round12(1.0 / 3.0), 0.333333333333);
        assert_eq!(round12(-1e-20), -1e-20);
        let s = to_json(&serde_json::json!({"x": 2.0f64 / 3.0})).unwrap();
        assert!(s.contains("0.666666666667"), "{s}");
    }

    #[test]
    fn menu_round_trip_reaudits() {
        let env = parse_instance(SINGLE).unwrap();
        let sol = crate::explicit::solve_explicit(&env).unwrap();
        let text = to_json(&MenuDoc::new(&sol.menu, Some(&sol.audit))).unwrap();
        let doc = MenuDoc::parse(&text).unwrap();
        let report = audit_menu(&env, &doc.menu().unwrap()).unwrap();
        assert!((report.revenue - doc.revenue.unwrap()).abs() <= 1e-9);
        assert!(report.max_ic_violation <= doc.audit.as_ref().unwrap().max_ic_violation + 1e-9);
    }
}
