use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCurvePoint {
    pub query_index: usize,
    pub per_query_tokens: u64,
    pub cumulative_tokens: u64,
}

/// Point 0 carries the offline cost; point i the i-th query in dataset order.
pub fn token_curves(per_query: &[u64], offline_cost: u64) -> Vec<TokenCurvePoint> {
    let mut points = Vec::with_capacity(per_query.len() + 1);
    points.push(TokenCurvePoint { query_index: 0, per_query_tokens: 0, cumulative_tokens: offline_cost });
    let mut total = offline_cost;
    for (i, &t) in per_query.iter().enumerate() {
        total += t;
        points.push(TokenCurvePoint { query_index: i + 1, per_query_tokens: t, cumulative_tokens: total });
    }
    points
}

pub const CURVE_HEADER: &str = "query_index,per_query_tokens,cumulative_tokens";

pub fn curves_csv(points: &[TokenCurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.query_index, p.per_query_tokens, p.cumulative_tokens));
    }
    out
}

/// First query index at which `cheaper` is strictly below `other`.
pub fn first_crossing(cheaper: &[TokenCurvePoint], other: &[TokenCurvePoint]) -> Option<usize> {
    cheaper.iter().zip(other).find(|(a, b)| a.cumulative_tokens < b.cumulative_tokens).map(|(a, _)| a.query_index)
}
