use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical condition and its value vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub values: Vec<String>,
    /// Value meaning "not applicable", if the vocabulary has one.
    #[serde(default)]
    pub null: Option<String>,
    /// Value meaning "missing for unknown reasons", if the vocabulary has one.
    #[serde(default)]
    pub unknown: Option<String>,
    #[serde(default)]
    pub description: String,
}

impl Condition {
    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn value_id(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn null_id(&self) -> Option<usize> {
        self.null.as_deref().and_then(|v| self.value_id(v))
    }

    pub fn unknown_id(&self) -> Option<usize> {
        self.unknown.as_deref().and_then(|v| self.value_id(v))
    }
}

/// Ordered list of conditions attached to every question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSchema {
    pub conditions: Vec<Condition>,
}

/// Value ids, one per schema condition.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionAssignment(pub Vec<usize>);

impl ConditionAssignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, slot: usize) -> usize {
        self.0[slot]
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

impl ConditionSchema {
    pub fn new(conditions: Vec<Condition>) -> Result<Self> {
        let s = Self { conditions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Schema("schema has no conditions".into()));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if self.conditions[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate condition {:?}", c.name)));
            }
            if c.values.is_empty() {
                return Err(Error::Schema(format!("condition {:?} has no values", c.name)));
            }
            for (j, v) in c.values.iter().enumerate() {
                if c.values[..j].contains(v) {
                    return Err(Error::Schema(format!(
                        "condition {:?} repeats value {v:?}",
                        c.name
                    )));
                }
            }
            for special in [&c.null, &c.unknown].into_iter().flatten() {
                if c.value_id(special).is_none() {
                    return Err(Error::Schema(format!(
                        "condition {:?} marks {special:?} but does not list it",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.conditions.iter().map(Condition::width).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c.name == name)
    }

    pub fn condition(&self, name: &str) -> Result<(usize, &Condition)> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown condition {name:?}")))?;
        Ok((i, &self.conditions[i]))
    }

    /// Checks arity and that every value id is inside its vocabulary.
    pub fn check(&self, a: &ConditionAssignment) -> Result<()> {
        if a.len() != self.len() {
            return Err(Error::Schema(format!(
                "assignment has {} values, schema has {} conditions",
                a.len(),
                self.len()
            )));
        }
        for (c, &v) in self.conditions.iter().zip(a.values()) {
            if v >= c.width() {
                return Err(Error::Schema(format!(
                    "value id {v} out of range for {:?} (width {})",
                    c.name,
                    c.width()
                )));
            }
        }
        Ok(())
    }

    /// Assignment from value names, in schema order.
    pub fn assign(&self, names: &[&str]) -> Result<ConditionAssignment> {
        if names.len() != self.len() {
            return Err(Error::Schema(format!(
                "expected {} values, got {}",
                self.len(),
                names.len()
            )));
        }
        self.conditions
            .iter()
            .zip(names)
            .map(|(c, n)| {
                c.value_id(n)
                    .ok_or_else(|| Error::Schema(format!("{:?} has no value {n:?}", c.name)))
            })
            .collect::<Result<Vec<_>>>()
            .map(ConditionAssignment)
    }

    pub fn value_name(&self, slot: usize, value: usize) -> &str {
        &self.conditions[slot].values[value]
    }

    /// `name=value` pairs for display.
    pub fn describe(&self, a: &ConditionAssignment) -> String {
        self.conditions
            .iter()
            .zip(a.values())
            .map(|(c, &v)| format!("{}={}", c.name, c.values.get(v).map_or("?", String::as_str)))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Every assignment in lexicographic order of value ids.
    pub fn enumerate(&self) -> impl Iterator<Item = ConditionAssignment> + '_ {
        let widths = self.widths();
        let total: usize = widths.iter().product();
        (0..total).map(move |mut code| {
            let mut vals = vec![0; widths.len()];
            for (slot, w) in widths.iter().enumerate().rev() {
                vals[slot] = code % w;
                code /= w;
            }
            ConditionAssignment(vals)
        })
    }
}

fn cond(name: &str, values: &[&str], null: bool, unknown: bool, description: &str) -> Condition {
    Condition {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
        null: null.then(|| "Null".to_string()),
        unknown: unknown.then(|| "Unknown".to_string()),
        description: description.into(),
    }
}

/// The seven order conditions of the e-commerce customer-service setting.
pub fn build_default_schema() -> ConditionSchema {
    ConditionSchema::new(vec![
        cond("Shipped", &["Yes", "No"], false, false, "Does this order has been shipped?"),
        cond(
            "Delivery status",
            &["Null", "Normal", "Delay", "Deliver failed", "Redelivery", "Missing", "Unknown"],
            true,
            true,
            "If the order has been shipped, the status of delivery.",
        ),
        cond(
            "Consignee's area",
            &["US", "NG", "GB", "Other site"],
            false,
            false,
            "Area of the consignee.",
        ),
        cond(
            "Delivery service type",
            &["Null", "Expedite service", "Normal"],
            true,
            false,
            "Type of delivery service chosed by buyer.",
        ),
        cond(
            "Stock information",
            &["In stock", "Out of stock"],
            false,
            false,
            "Are the items in the order still available?",
        ),
        cond(
            "Return goods received",
            &["Null", "Yes", "No"],
            true,
            false,
            "Dose seller receive the goods sent back from the buyer?",
        ),
        cond(
            "Refund processing status",
            &["Null", "Unprocessed", "Refunded"],
            true,
            false,
            "Whether pass buyer's refund application?",
        ),
    ])
    .expect("default schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_matches_order_condition_table() {
        let s = build_default_schema();
        assert_eq!(s.len(), 7);
        assert_eq!(s.widths(), vec![2, 7, 4, 3, 2, 3, 3]);
        let (_, shipped) = s.condition("Shipped").unwrap();
        assert_eq!(shipped.values, vec!["Yes", "No"]);
        let (_, status) = s.condition("Delivery status").unwrap();
        assert_eq!(
            status.values,
            vec!["Null", "Normal", "Delay", "Deliver failed", "Redelivery", "Missing", "Unknown"]
        );
        assert_eq!(status.null_id(), Some(0));
        assert_eq!(status.unknown_id(), Some(6));
        assert_eq!(shipped.description, "Does this order has been shipped?");
    }

    #[test]
    fn rejects_duplicates_and_empty_vocabularies() {
        let mut s = build_default_schema();
        s.conditions[1].name = "Shipped".into();
        assert!(s.validate().is_err());
        let mut s = build_default_schema();
        s.conditions[0].values.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn check_flags_out_of_range_values() {
        let s = build_default_schema();
        assert!(s.check(&ConditionAssignment(vec![0; 7])).is_ok());
        assert!(s.check(&ConditionAssignment(vec![0; 6])).is_err());
        assert!(s.check(&ConditionAssignment(vec![2, 0, 0, 0, 0, 0, 0])).is_err());
    }

    #[test]
    fn enumeration_covers_the_product_space() {
        let s = build_default_schema();
        let all: Vec<_> = s.enumerate().collect();
        assert_eq!(all.len(), 2 * 7 * 4 * 3 * 2 * 3 * 3);
        assert!(all.iter().all(|a| s.check(a).is_ok()));
        let mut sorted = all.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), all.len());
    }
}
