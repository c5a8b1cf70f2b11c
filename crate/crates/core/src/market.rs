//! Option quotes: loading, arbitrage repair, gridding in `(τ, y)` and
//! implied-volatility validation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use crate::dupire::{DupireModel, MarketParams};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Surface};
use crate::pricing::{black_scholes_call, black_scholes_vega};

pub const QUOTE_HEADER: [&str; 6] = ["maturity", "strike", "mid", "bid", "ask", "volume"];
pub const IV_MIN: f64 = 1e-4;
pub const IV_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionQuote {
    pub maturity: f64,
    pub strike: f64,
    pub mid: f64,
    pub bid: Option<f64>,
    pub ask: Option<f64>,
    pub volume: Option<f64>,
}

impl OptionQuote {
    /// Reason the quote violates an invariant, if any.
    pub fn violation(&self) -> Option<String> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Some(format!("maturity {} is not positive", self.maturity));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Some(format!("strike {} is not positive", self.strike));
        }
        if !self.mid.is_finite() {
            return Some("mid is not finite".into());
        }
        if let Some(b) = self.bid {
            if b > self.mid {
                return Some(format!("bid {b} above mid {}", self.mid));
            }
        }
        if let Some(a) = self.ask {
            if a < self.mid {
                return Some(format!("ask {a} below mid {}", self.mid));
            }
        }
        if let (Some(b), Some(a)) = (self.bid, self.ask) {
            if b > a {
                return Some(format!("bid {b} above ask {a}"));
            }
        }
        if let Some(v) = self.volume {
            if !(v >= 0.0) {
                return Some(format!("negative volume {v}"));
            }
        }
        None
    }

    pub fn half_spread(&self) -> Option<f64> {
        Some(0.5 * (self.ask? - self.bid?))
    }

    pub fn log_moneyness(&self, spot: f64) -> f64 {
        (self.strike / spot).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaturityGroup {
    pub maturity: f64,
    /// Strictly increasing strikes.
    pub quotes: Vec<OptionQuote>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedRow {
    /// 1-based line in the source file; 0 for whole-group removals.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuoteSet {
    pub params: MarketParams,
    pub groups: Vec<MaturityGroup>,
    pub dropped: Vec<DroppedRow>,
}

impl QuoteSet {
    /// Groups, sorts and filters quotes; each maturity keeps ≥ 2 distinct strikes.
    pub fn from_quotes(params: MarketParams, quotes: Vec<(usize, OptionQuote)>) -> Self {
        let mut dropped = Vec::new();
        let mut kept: Vec<(usize, OptionQuote)> = Vec::new();
        for (line, q) in quotes {
            match q.violation() {
                Some(reason) => {
                    warn!("dropping quote on line {line}: {reason}");
                    dropped.push(DroppedRow { line, reason });
                }
                None => kept.push((line, q)),
            }
        }
        kept.sort_by(|a, b| a.1.maturity.total_cmp(&b.1.maturity).then(a.1.strike.total_cmp(&b.1.strike)));
        let mut groups: Vec<MaturityGroup> = Vec::new();
        for (line, q) in kept {
            match groups.last_mut() {
                Some(g) if g.maturity == q.maturity => {
                    if g.quotes.last().is_some_and(|p| p.strike == q.strike) {
                        let reason = format!("duplicate strike {} at maturity {}", q.strike, q.maturity);
                        warn!("dropping quote on line {line}: {reason}");
                        dropped.push(DroppedRow { line, reason });
                    } else {
                        g.quotes.push(q);
                    }
                }
                _ => groups.push(MaturityGroup { maturity: q.maturity, quotes: vec![q] }),
            }
        }
        groups.retain(|g| {
            let ok = g.quotes.len() >= 2;
            if !ok {
                let reason = format!("maturity {} has fewer than 2 strikes", g.maturity);
                warn!("{reason}");
                dropped.push(DroppedRow { line: 0, reason });
            }
            ok
        });
        Self { params, groups, dropped }
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.quotes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn quotes(&self) -> impl Iterator<Item = &OptionQuote> {
        self.groups.iter().flat_map(|g| &g.quotes)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(QUOTE_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in self.quotes() {
            out.write_record([q.maturity.to_string(), q.strike.to_string(), q.mid.to_string(), opt(q.bid), opt(q.ask), opt(q.volume)])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_field(field: &str, line: usize, name: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Format { line, message: format!("cannot parse {name} '{t}'") })
}

/// Reads `maturity,strike,mid,bid,ask,volume` rows; `bid`, `ask` and `volume` may be empty.
pub fn read_quotes<R: Read>(r: R, params: MarketParams) -> Result<QuoteSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Format { line: 1, message: "missing header".into() }),
    };
    let names: Vec<String> = header.iter().map(|s| s.to_ascii_lowercase()).collect();
    if names != QUOTE_HEADER {
        return Err(Error::Format { line: 1, message: format!("expected header '{}'", QUOTE_HEADER.join(",")) });
    }
    let mut quotes = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != QUOTE_HEADER.len() {
            return Err(Error::Format { line, message: format!("expected 6 fields, found {}", rec.len()) });
        }
        let mut v = [None; 6];
        for (k, name) in QUOTE_HEADER.iter().enumerate() {
            v[k] = parse_field(&rec[k], line, name)?;
        }
        let required = |k: usize| v[k].ok_or_else(|| Error::Format { line, message: format!("{} is required", QUOTE_HEADER[k]) });
        let q = OptionQuote { maturity: required(0)?, strike: required(1)?, mid: required(2)?, bid: v[3], ask: v[4], volume: v[5] };
        quotes.push((line, q));
    }
    Ok(QuoteSet::from_quotes(params, quotes))
}

pub fn load_quotes(path: impl AsRef<Path>, params: MarketParams) -> Result<QuoteSet> {
    read_quotes(File::open(path)?, params)
}

/// Least-squares projection of `prices` (at increasing `strikes`) onto
/// sequences that are convex and non-increasing in strike, by Hildreth's dual
/// coordinate ascent. Feasible input is returned unchanged.
pub fn convexity_repair(strikes: &[f64], prices: &[f64]) -> Result<Vec<f64>> {
    let n = strikes.len();
    if prices.len() != n {
        return invalid("strikes and prices differ in length");
    }
    if strikes.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("strikes must be strictly increasing");
    }
    if n < 2 {
        return Ok(prices.to_vec());
    }
    // constraints a·p ≤ 0: slope(i-1) − slope(i) ≤ 0 for interior i, last slope ≤ 0
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n - 1);
    for i in 1..n - 1 {
        let (h0, h1) = (strikes[i] - strikes[i - 1], strikes[i + 1] - strikes[i]);
        rows.push(vec![(i - 1, -1.0 / h0), (i, 1.0 / h0 + 1.0 / h1), (i + 1, -1.0 / h1)]);
    }
    let h = strikes[n - 1] - strikes[n - 2];
    rows.push(vec![(n - 2, -1.0 / h), (n - 1, 1.0 / h)]);
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|(_, a)| a * a).sum()).collect();
    let scale = prices.iter().fold(0.0f64, |m, p| m.max(p.abs())).max(1e-300);
    let tol = 1e-15 * scale;

    let mut p = prices.to_vec();
    let mut lambda = vec![0.0; rows.len()];
    for _ in 0..1_000_000 {
        let mut moved = 0.0f64;
        for (k, row) in rows.iter().enumerate() {
            let ap: f64 = row.iter().map(|&(j, a)| a * p[j]).sum();
            let next = (lambda[k] + ap / norms[k]).max(0.0);
            let d = next - lambda[k];
            if d != 0.0 {
                lambda[k] = next;
                for &(j, a) in row {
                    p[j] -= d * a;
                }
                moved = moved.max(d.abs() * norms[k].sqrt());
            }
        }
        if moved <= tol {
            return Ok(p);
        }
    }
    Err(Error::Numerical("convexity repair did not converge".into()))
}

/// Gridded data with a `{0,1}` mask marking nodes inside the data hull.
#[derive(Clone, Debug)]
pub struct GriddedQuotes {
    pub u_obs: Surface,
    pub mask: Vec<f64>,
    /// Largest absolute change made by the convexity repair.
    pub max_adjustment: f64,
}

/// Linear interpolation of increasing `xs` with flat extrapolation.
fn interp_flat(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull in counter-clockwise order (monotone chain).
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[(f64, f64)], p: (f64, f64), eps: f64) -> bool {
    match hull.len() {
        0 => false,
        1 => (hull[0].0 - p.0).abs() <= eps && (hull[0].1 - p.1).abs() <= eps,
        _ => (0..hull.len()).all(|k| {
            let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            cross(a, b, p) >= -eps * len
        }),
    }
}

/// Repairs every maturity, interpolates linearly in `y` and `τ` onto `g`
/// (flat outside the data) and masks nodes outside the data hull.
pub fn to_grid_surface(q: &QuoteSet, g: &Grid) -> Result<GriddedQuotes> {
    if q.groups.len() < 2 {
        return Err(Error::InsufficientData(format!("need quotes at 2 or more maturities, found {}", q.groups.len())));
    }
    let spot = q.params.spot;
    let mut taus = Vec::with_capacity(q.groups.len());
    let mut slices: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(q.groups.len());
    let mut points = Vec::new();
    let mut max_adjustment = 0.0f64;
    for grp in &q.groups {
        let strikes: Vec<f64> = grp.quotes.iter().map(|x| x.strike).collect();
        let mids: Vec<f64> = grp.quotes.iter().map(|x| x.mid).collect();
        let repaired = convexity_repair(&strikes, &mids)?;
        max_adjustment = mids.iter().zip(&repaired).fold(max_adjustment, |m, (a, b)| m.max((a - b).abs()));
        let ys: Vec<f64> = strikes.iter().map(|k| (k / spot).ln()).collect();
        points.extend(ys.iter().map(|&y| (grp.maturity, y)));
        taus.push(grp.maturity);
        slices.push((ys, repaired));
    }
    let hull = convex_hull(points);
    let eps = 1e-9 * (g.tau_max - g.tau_min).max(g.y_max - g.y_min);
    let mut values = Vec::with_capacity(g.node_count());
    let mut mask = Vec::with_capacity(g.node_count());
    for i in 0..g.rows() {
        let t = g.tau(i);
        for j in 0..g.cols() {
            let y = g.y(j);
            let at: Vec<f64> = slices.iter().map(|(ys, ps)| interp_flat(ys, ps, y)).collect();
            values.push(interp_flat(&taus, &at, t));
            mask.push(if inside_hull(&hull, (t, y), eps) { 1.0 } else { 0.0 });
        }
    }
    Ok(GriddedQuotes { u_obs: Surface::new(*g, values)?, mask, max_adjustment })
}

/// Noise bound from quoted spreads: RMS half-spread times the square root of
/// the data-hull area in `(τ, y)`. `None` without any bid/ask pair.
pub fn estimate_eta(q: &QuoteSet) -> Option<f64> {
    let hs: Vec<f64> = q.quotes().filter_map(|x| x.half_spread()).collect();
    if hs.is_empty() {
        return None;
    }
    let rms = (hs.iter().map(|h| h * h).sum::<f64>() / hs.len() as f64).sqrt();
    let hull = convex_hull(q.quotes().map(|x| (x.maturity, x.log_moneyness(q.params.spot))).collect());
    let area = if hull.len() < 3 {
        0.0
    } else {
        0.5 * (0..hull.len()).map(|k| cross((0.0, 0.0), hull[k], hull[(k + 1) % hull.len()])).sum::<f64>().abs()
    };
    Some(rms * area.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpliedVol {
    pub sigma: f64,
    /// The price lies beyond the model range on `[IV_MIN, IV_MAX]` and `sigma` is that end.
    pub clamped: bool,
}

/// Black–Scholes implied volatility by safeguarded Newton on `[IV_MIN, IV_MAX]`.
pub fn implied_vol(price: f64, strike: f64, maturity: f64, p: &MarketParams) -> Result<ImpliedVol> {
    if !(strike > 0.0 && maturity > 0.0) || !price.is_finite() {
        return invalid(format!("bad implied-vol input (price {price}, strike {strike}, maturity {maturity})"));
    }
    let s = p.spot;
    let lower = (s - strike * (-p.rate * maturity).exp()).max(0.0);
    if price >= s {
        return Err(Error::NoSolution { price, bound: "upper", limit: s });
    }
    if price < lower - 1e-14 * s {
        return Err(Error::NoSolution { price, bound: "lower", limit: lower });
    }
    let f = |v: f64| black_scholes_call(s, strike, maturity, p.rate, v) - price;
    let (f_lo, f_hi) = (f(IV_MIN), f(IV_MAX));
    if f_lo >= -1e-15 * s {
        return Ok(ImpliedVol { sigma: IV_MIN, clamped: true });
    }
    if f_hi <= 0.0 {
        return Ok(ImpliedVol { sigma: IV_MAX, clamped: true });
    }
    let (mut lo, mut hi) = (IV_MIN, IV_MAX);
    // Brenner–Subrahmanyam start, kept inside the bracket
    let mut v = ((2.0 * std::f64::consts::PI / maturity).sqrt() * price / s).clamp(0.05, 1.0);
    for _ in 0..200 {
        let fv = f(v);
        if fv == 0.0 {
            return Ok(ImpliedVol { sigma: v, clamped: false });
        }
        if fv < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let vega = black_scholes_vega(s, strike, maturity, p.rate, v);
        let newton = v - fv / vega;
        let next = if vega > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - v).abs() <= 1e-15 * v.max(1.0) || hi - lo <= 1e-15 {
            return Ok(ImpliedVol { sigma: next, clamped: false });
        }
        v = next;
    }
    Ok(ImpliedVol { sigma: v, clamped: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationRow {
    pub maturity: f64,
    pub strike: f64,
    pub y: f64,
    pub market_price: f64,
    pub model_price: f64,
    pub market_iv: Option<f64>,
    pub model_iv: Option<f64>,
    pub volume: Option<f64>,
}

impl ValidationRow {
    pub fn gap(&self) -> Option<f64> {
        Some((self.market_iv? - self.model_iv?).abs())
    }
}

fn unclamped_iv(price: f64, strike: f64, maturity: f64, p: &MarketParams) -> Option<f64> {
    implied_vol(price, strike, maturity, p).ok().filter(|v| !v.clamped).map(|v| v.sigma)
}

/// Prices every quote with `a_hat` (bilinear reads of the Dupire solution) and
/// compares implied volatilities. Rows are sorted by maturity then strike.
pub fn validate_calibration(model: &DupireModel, a_hat: &Surface, q: &QuoteSet) -> Result<Vec<ValidationRow>> {
    if q.is_empty() {
        return Ok(Vec::new());
    }
    let u = model.solve(a_hat)?;
    let p = model.params;
    Ok(q.quotes()
        .map(|x| {
            let y = x.log_moneyness(p.spot);
            let model_price = u.sample_bilinear(x.maturity, y);
            ValidationRow {
                maturity: x.maturity,
                strike: x.strike,
                y,
                market_price: x.mid,
                model_price,
                market_iv: unclamped_iv(x.mid, x.strike, x.maturity, &p),
                model_iv: unclamped_iv(model_price, x.strike, x.maturity, &p),
                volume: x.volume,
            }
        })
        .collect())
}

pub fn write_validation_csv<W: Write>(rows: &[ValidationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["maturity", "strike", "y", "market_iv", "model_iv", "gap", "volume"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([r.maturity.to_string(), r.strike.to_string(), r.y.to_string(), opt(r.market_iv), opt(r.model_iv), opt(r.gap()), opt(r.volume)])?;
    }
    out.flush()?;
    Ok(())
}

/// Synthetic option chain: prices from `model` with diffusion `a`, perturbed
/// in implied volatility by Gaussian noise whose deviation grows with
/// `|y|` as `iv_noise·(1 + wing·y²)`. Volume decays as `exp(−y²/0.1)` and the
/// quoted spread is twice the local noise deviation (in price).
pub struct ChainSpec<'a> {
    pub maturities: &'a [f64],
    pub log_strikes: &'a [f64],
    pub iv_noise: f64,
    pub wing: f64,
    pub seed: u64,
}

pub fn synthetic_chain(model: &DupireModel, a: &Surface, spec: &ChainSpec<'_>) -> Result<QuoteSet> {
    let u = model.solve(a)?;
    let p = model.params;
    let eps = crate::experiments::gaussian_noise(spec.maturities.len() * spec.log_strikes.len(), 1.0, spec.seed);
    let mut quotes = Vec::new();
    let mut skipped = Vec::new();
    let mut k = 0;
    for &t in spec.maturities {
        for &y in spec.log_strikes {
            let strike = p.spot * y.exp();
            let clean = u.sample_bilinear(t, y);
            let e = eps[k];
            k += 1;
            let iv = match implied_vol(clean, strike, t, &p) {
                Ok(v) if !v.clamped => v.sigma,
                _ => {
                    skipped.push(DroppedRow { line: 0, reason: format!("model price at ({t}, {y}) has no implied volatility") });
                    continue;
                }
            };
            let sd = spec.iv_noise * (1.0 + spec.wing * y * y);
            let noisy_iv = (iv + sd * e).clamp(0.01, 3.0);
            let mid = black_scholes_call(p.spot, strike, t, p.rate, noisy_iv);
            let half = sd * black_scholes_vega(p.spot, strike, t, p.rate, noisy_iv);
            quotes.push((
                0,
                OptionQuote {
                    maturity: t,
                    strike,
                    mid,
                    bid: Some((mid - half).max(0.0)),
                    ask: Some(mid + half),
                    volume: Some((1000.0 * (-y * y / 0.1).exp()).round()),
                },
            ));
        }
    }
    let mut set = QuoteSet::from_quotes(p, quotes);
    set.dropped.extend(skipped);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dupire::DiffusionBounds;
    use proptest::prelude::*;

    fn params() -> MarketParams {
        MarketParams::default()
    }

    #[test]
    fn empty_file_after_header() {
        let q = read_quotes("maturity,strike,mid,bid,ask,volume\n".as_bytes(), params()).unwrap();
        assert!(q.groups.is_empty());
        assert!(q.is_empty());
    }

    #[test]
    fn missing_header_and_bad_numbers() {
        match read_quotes("".as_bytes(), params()) {
            Err(Error::Format { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_quotes("maturity,strike,price\n".as_bytes(), params()) {
            Err(Error::Format { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let text = "maturity,strike,mid,bid,ask,volume\n0.5,1.0,0.1,,,\n0.5,abc,0.1,,,\n";
        match read_quotes(text.as_bytes(), params()) {
            Err(Error::Format { line: 3, message }) => assert!(message.contains("strike")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_rows_are_dropped_and_counted() {
        let text = "maturity,strike,mid,bid,ask,volume\n\
                    0.5,1.0,0.10,0.09,0.11,10\n\
                    0.5,1.1,0.06,0.07,0.05,10\n\
                    0.5,1.2,0.03,,,\n\
                    -1,1.0,0.1,,,\n";
        let q = read_quotes(text.as_bytes(), params()).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.dropped.len(), 2);
        assert_eq!(q.dropped[0].line, 3);
        assert!(q.dropped[0].reason.contains("bid"));
    }

    #[test]
    fn groups_by_maturity_sorted() {
        let mut text = String::from("maturity,strike,mid,bid,ask,volume\n");
        for t in [1.0, 0.25, 0.5] {
            for k in (0..20).rev() {
                let strike = 0.7 + 0.03 * k as f64;
                let mid = black_scholes_call(1.0, strike, t, 0.0, 0.3);
                text.push_str(&format!("{t},{strike},{mid},,,\n"));
            }
        }
        let q = read_quotes(text.as_bytes(), params()).unwrap();
        assert_eq!(q.groups.len(), 3);
        assert_eq!(q.groups.iter().map(|g| g.maturity).collect::<Vec<_>>(), vec![0.25, 0.5, 1.0]);
        for g in &q.groups {
            assert_eq!(g.quotes.len(), 20);
            assert!(g.quotes.windows(2).all(|w| w[0].strike < w[1].strike));
        }
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(read_quotes(buf.as_slice(), params()).unwrap(), q);
    }

    #[test]
    fn repair_leaves_black_scholes_prices_alone() {
        let strikes: Vec<f64> = (0..30).map(|k| 0.5 + 0.04 * k as f64).collect();
        let prices: Vec<f64> = strikes.iter().map(|&k| black_scholes_call(1.0, k, 0.7, 0.02, 0.25)).collect();
        let r = convexity_repair(&strikes, &prices).unwrap();
        let max = prices.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max <= 1e-10);
    }

    fn second_differences(k: &[f64], p: &[f64]) -> Vec<f64> {
        (1..k.len() - 1).map(|i| (p[i + 1] - p[i]) / (k[i + 1] - k[i]) - (p[i] - p[i - 1]) / (k[i] - k[i - 1])).collect()
    }

    #[test]
    fn repair_fixes_a_bumped_quote() {
        let strikes: Vec<f64> = (0..15).map(|k| 0.7 + 0.05 * k as f64).collect();
        let mut prices: Vec<f64> = strikes.iter().map(|&k| black_scholes_call(1.0, k, 0.5, 0.0, 0.3)).collect();
        prices[7] += 0.02;
        let r = convexity_repair(&strikes, &prices).unwrap();
        assert!(second_differences(&strikes, &r).iter().all(|&d| d >= -1e-10));
        assert!(r.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let twice = convexity_repair(&strikes, &r).unwrap();
        assert!(r.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn gridding_needs_two_maturities() {
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 10, 10).unwrap();
        let quotes = (0..3).map(|k| (0, OptionQuote { maturity: 0.5, strike: 0.9 + 0.1 * k as f64, mid: 0.1 - 0.03 * k as f64, bid: None, ask: None, volume: None }));
        let q = QuoteSet::from_quotes(params(), quotes.collect());
        assert!(matches!(to_grid_surface(&q, &g), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn gridding_reproduces_linear_data_and_masks_outside() {
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 10, 20).unwrap();
        let mut quotes = Vec::new();
        for &t in &[0.3, 0.8] {
            for j in 0..5 {
                let y = -0.4 + 0.2 * j as f64;
                // convex decreasing in strike: 1 − K/2
                let strike = y.exp();
                quotes.push((0, OptionQuote { maturity: t, strike, mid: 1.0 - 0.5 * strike, bid: None, ask: None, volume: None }));
            }
        }
        let q = QuoteSet::from_quotes(params(), quotes);
        let out = to_grid_surface(&q, &g).unwrap();
        assert!(out.max_adjustment < 1e-12);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let (t, y) = (g.tau(i), g.y(j));
                let m = out.mask[g.idx(i, j)];
                let inside = (0.3 - 1e-12..=0.8 + 1e-12).contains(&t) && (-0.4 - 1e-12..=0.4 + 1e-12).contains(&y);
                assert_eq!(m == 1.0, inside, "node ({t}, {y})");
            }
        }
        // flat outside the data in y
        assert_eq!(out.u_obs.get(5, 0), out.u_obs.get(5, 6));
    }

    #[test]
    fn eta_from_spreads() {
        let mut quotes = Vec::new();
        for &t in &[0.0 + 0.5, 1.0] {
            for &k in &[1.0, std::f64::consts::E] {
                quotes.push((0, OptionQuote { maturity: t, strike: k, mid: 0.1, bid: Some(0.09), ask: Some(0.11), volume: None }));
            }
        }
        let q = QuoteSet::from_quotes(params(), quotes);
        // hull is [0.5, 1] × [0, 1]: area 0.5
        assert!((estimate_eta(&q).unwrap() - 0.01 * 0.5f64.sqrt()).abs() < 1e-12);
        let none = QuoteSet::from_quotes(params(), vec![]);
        assert!(estimate_eta(&none).is_none());
    }

    #[test]
    fn implied_vol_examples() {
        let p = params();
        let price = black_scholes_call(1.0, 1.0, 1.0, 0.0, 0.2);
        let v = implied_vol(price, 1.0, 1.0, &p).unwrap();
        assert!((v.sigma - 0.2).abs() < 1e-8 && !v.clamped);
        match implied_vol(1.0, 1.0, 1.0, &p) {
            Err(Error::NoSolution { bound, .. }) => assert_eq!(bound, "upper"),
            other => panic!("{other:?}"),
        }
        match implied_vol(0.1, 0.8, 1.0, &p) {
            Err(Error::NoSolution { bound, .. }) => assert_eq!(bound, "lower"),
            other => panic!("{other:?}"),
        }
        let v = implied_vol(0.2, 0.8, 1.0, &p).unwrap();
        assert!(v.clamped && v.sigma == IV_MIN);
    }

    #[test]
    fn validation_of_self_generated_quotes() {
        let g = Grid::new(0.0, 1.0, -3.0, 3.0, 100, 120).unwrap();
        let model = DupireModel::new(params(), DiffusionBounds::default());
        let a = Surface::from_fn(g, |t, y| 0.05 + 0.02 * y * y + 0.01 * t);
        let u = model.solve(&a).unwrap();
        let mut quotes = Vec::new();
        for &t in &[0.25, 0.5, 1.0] {
            for j in 0..9 {
                let y = -0.4 + 0.1 * j as f64;
                quotes.push((0, OptionQuote { maturity: t, strike: y.exp(), mid: u.sample_bilinear(t, y), bid: None, ask: None, volume: Some(5.0) }));
            }
        }
        let q = QuoteSet::from_quotes(params(), quotes);
        let rows = validate_calibration(&model, &a, &q).unwrap();
        assert_eq!(rows.len(), 27);
        assert!(rows.iter().all(|r| r.gap().unwrap() <= 1e-4));
        assert!(validate_calibration(&model, &a, &QuoteSet::from_quotes(params(), vec![])).unwrap().is_empty());
        let mut buf = Vec::new();
        write_validation_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("maturity,strike,y,market_iv,model_iv,gap,volume\n"));
    }

    proptest! {
        #[test]
        fn implied_vol_round_trip(sigma in 0.05f64..2.0, k in 0.9f64..1.1, t in 0.25f64..2.0) {
            let p = MarketParams::new(1.0, 0.01).unwrap();
            let price = black_scholes_call(1.0, k, t, 0.01, sigma);
            let v = implied_vol(price, k, t, &p).unwrap();
            prop_assert!(!v.clamped);
            prop_assert!((v.sigma - sigma).abs() <= 1e-8);
        }

        #[test]
        fn repair_is_a_projection(bumps in proptest::collection::vec(-0.02f64..0.02, 12), w in proptest::collection::vec(0.0f64..1.0, 12)) {
            let strikes: Vec<f64> = (0..12).map(|k| 0.7 + 0.05 * k as f64).collect();
            let prices: Vec<f64> = strikes.iter().zip(&bumps).map(|(&k, b)| black_scholes_call(1.0, k, 0.5, 0.0, 0.3) + b).collect();
            let r = convexity_repair(&strikes, &prices).unwrap();
            prop_assert!(second_differences(&strikes, &r).iter().all(|&d| d >= -1e-9));
            prop_assert!(r.windows(2).all(|x| x[1] <= x[0] + 1e-10));
            let dist = |v: &[f64]| v.iter().zip(&prices).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            // any other feasible point: mix of r with a convex decreasing sequence
            let other: Vec<f64> = strikes.iter().zip(&r).zip(&w).map(|((&k, &x), &s)| 0.5 * x + 0.5 * (s * 0.0 + black_scholes_call(1.0, k, 0.5, 0.0, 0.25))).collect();
            prop_assert!(dist(&r) <= dist(&other) + 1e-12);
            let twice = convexity_repair(&strikes, &r).unwrap();
            prop_assert!(r.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }
}
