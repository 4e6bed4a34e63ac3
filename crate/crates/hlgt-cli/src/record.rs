use serde_json::{Map, Number, Value};

/// Full-precision JSON number; non-finite values become `null`.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    format!("{x:.16e}")
        .parse::<Number>()
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quantity {
    Value(f64),
    Residual(f64),
}

#[derive(Clone, Debug)]
pub struct Record {
    pub cmd: String,
    pub group: String,
    pub params: Map<String, Value>,
    pub quantity: Quantity,
    pub est_error: Option<f64>,
    pub seed: u64,
    pub notes: String,
    pub extra: Map<String, Value>,
    /// Explicit pass/fail for records whose check is not a residual bound.
    pub ok: Option<bool>,
}

impl Record {
    pub fn new(cmd: &str, group: &str, quantity: Quantity, seed: u64, notes: &str) -> Self {
        Record {
            cmd: cmd.to_string(),
            group: group.to_string(),
            params: Map::new(),
            quantity,
            est_error: None,
            seed,
            notes: notes.to_string(),
            extra: Map::new(),
            ok: None,
        }
    }

    pub fn param(mut self, k: &str, v: impl Into<Param>) -> Self {
        self.params.insert(k.to_string(), v.into().0);
        self
    }

    pub fn extra(mut self, k: &str, v: Value) -> Self {
        self.extra.insert(k.to_string(), v);
        self
    }

    pub fn est_error(mut self, e: f64) -> Self {
        self.est_error = Some(e);
        self
    }

    pub fn ok(mut self, ok: bool) -> Self {
        self.ok = Some(ok);
        self
    }

    pub fn passes(&self, tol: f64) -> bool {
        if let Some(ok) = self.ok {
            return ok;
        }
        match self.quantity {
            Quantity::Residual(r) => r <= tol,
            Quantity::Value(_) => true,
        }
    }

    pub fn to_json(&self, tol: f64) -> Value {
        let mut m = Map::new();
        m.insert("cmd".into(), Value::String(self.cmd.clone()));
        m.insert("group".into(), Value::String(self.group.clone()));
        m.insert("params".into(), Value::Object(self.params.clone()));
        match self.quantity {
            Quantity::Value(v) => m.insert("value".into(), num(v)),
            Quantity::Residual(r) => {
                m.insert("tolerance".into(), num(tol));
                m.insert("residual".into(), num(r))
            }
        };
        m.insert("est_error".into(), self.est_error.map_or(Value::Null, num));
        m.insert("seed".into(), Value::Number(self.seed.into()));
        m.insert("convention_notes".into(), Value::String(self.notes.clone()));
        for (k, v) in &self.extra {
            m.insert(k.clone(), v.clone());
        }
        if matches!(self.quantity, Quantity::Residual(_)) || self.ok.is_some() {
            m.insert("pass".into(), Value::Bool(self.passes(tol)));
        }
        Value::Object(m)
    }
}

pub struct Param(Value);

impl From<f64> for Param {
    fn from(x: f64) -> Self {
        Param(num(x))
    }
}

impl From<u32> for Param {
    fn from(x: u32) -> Self {
        Param(Value::Number(x.into()))
    }
}

impl From<u64> for Param {
    fn from(x: u64) -> Self {
        Param(Value::Number(x.into()))
    }
}

impl From<usize> for Param {
    fn from(x: usize) -> Self {
        Param(Value::Number((x as u64).into()))
    }
}

impl From<i64> for Param {
    fn from(x: i64) -> Self {
        Param(Value::Number(x.into()))
    }
}

impl From<&str> for Param {
    fn from(s: &str) -> Self {
        Param(Value::String(s.to_string()))
    }
}

impl From<String> for Param {
    fn from(s: String) -> Self {
        Param(Value::String(s))
    }
}

impl From<bool> for Param {
    fn from(b: bool) -> Self {
        Param(Value::Bool(b))
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// CSV with the columns of the first record: parameters, then the quantity.
pub fn to_csv(records: &[Record], tol: f64) -> String {
    let Some(first) = records.first() else {
        return String::new();
    };
    let keys: Vec<String> = first.params.keys().cloned().collect();
    let qname = match first.quantity {
        Quantity::Value(_) => "value",
        Quantity::Residual(_) => "residual",
    };
    let mut out = format!("cmd,group,{},{qname},est_error,seed\n", keys.join(","));
    for r in records {
        let j = r.to_json(tol);
        let mut row = vec![r.cmd.clone(), r.group.clone()];
        for k in &keys {
            row.push(r.params.get(k).map(csv_cell).unwrap_or_default());
        }
        let q = match r.quantity {
            Quantity::Value(v) | Quantity::Residual(v) => num(v),
        };
        row.push(csv_cell(&q));
        row.push(csv_cell(&j["est_error"]));
        row.push(r.seed.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_seventeen_digits() {
        assert_eq!(num(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(num(f64::NAN), Value::Null);
    }

    #[test]
    fn residual_records_carry_pass() {
        let r = Record::new("verify", "z2", Quantity::Residual(1e-3), 1, "n");
        let j = r.to_json(1e-6);
        assert_eq!(j["pass"], Value::Bool(false));
        assert!(r.clone().ok(true).passes(1e-6));
    }
}
