//! Attributable gains between adjacent groups, in exact rational arithmetic.

use std::collections::BTreeMap;

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use super::{Group, HarnessError};

/// An exact value that serializes as `{"exact": "p/q", "value": f64}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Exact(pub BigRational);

impl Exact {
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Exact", 2)?;
        st.serialize_field("exact", &self.0.to_string())?;
        st.serialize_field("value", &self.to_f64())?;
        st.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainReport {
    pub perf: BTreeMap<Group, Exact>,
    pub g_plan: Exact,
    pub g_scaffold: Exact,
    pub g_graph: Exact,
    pub g_patch: Exact,
    pub g_replan: Exact,
    /// Sum of the five gains.
    pub g_total: Exact,
    /// `Perf(G1) - Perf(G0)`, when G0 ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub info_vs_structure: Option<Exact>,
    /// `Perf(G6) - Perf(G0)`, when G0 ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_vs_g0: Option<Exact>,
}

impl GainReport {
    /// The five gains in order plan, scaffold, graph, patch, replan.
    pub fn gains(&self) -> [&BigRational; 5] {
        [&self.g_plan.0, &self.g_scaffold.0, &self.g_graph.0, &self.g_patch.0, &self.g_replan.0]
    }
}

pub fn compute_gains(perf: &BTreeMap<Group, BigRational>) -> Result<GainReport, HarnessError> {
    let p = |g: Group| perf.get(&g).cloned().ok_or(HarnessError::MissingGroup(g));
    let (p1, p2, p3, p4, p5, p6) =
        (p(Group::G1)?, p(Group::G2)?, p(Group::G3)?, p(Group::G4)?, p(Group::G5)?, p(Group::G6)?);
    let gains = [&p2 - &p1, &p3 - &p2, &p4 - &p3, &p5 - &p4, &p6 - &p5];
    let total = gains.iter().fold(BigRational::zero(), |acc, g| acc + g);
    let g0 = perf.get(&Group::G0);
    let [g_plan, g_scaffold, g_graph, g_patch, g_replan] = gains.map(Exact);
    Ok(GainReport {
        perf: perf.iter().map(|(g, v)| (*g, Exact(v.clone()))).collect(),
        g_plan,
        g_scaffold,
        g_graph,
        g_patch,
        g_replan,
        g_total: Exact(total),
        info_vs_structure: g0.map(|p0| Exact(&p1 - p0)),
        total_vs_g0: g0.map(|p0| Exact(&p6 - p0)),
    })
}

/// Parses a decimal literal such as `0.35` or `-2` exactly.
pub fn rational_from_decimal(text: &str) -> Option<BigRational> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = BigInt::from(10).pow(frac.len() as u32);
    let value = BigRational::new(digits, scale);
    Some(if neg { -value } else { value })
}
