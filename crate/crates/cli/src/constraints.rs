//! Feasibility conditions on the model parameters, evaluated in exact
//! rational arithmetic.
//!
//! Two of the published parameter choices sit exactly on constraint
//! boundaries, so every comparison here is exact; floats would flip those
//! verdicts. The survival factor `z` combines the churn rate `alpha` and
//! the crash fraction `delta` into the fraction of nodes guaranteed to
//! remain across a three-delay interval, and the four conditions bound the
//! join threshold `gamma`, the phase threshold `beta`, and the minimum
//! system size against it.

use churnstore_protocol::params::{rat_to_f64, rat_to_string, Rat};
use num::{BigInt, One, Zero};
use serde_json::{json, Value};

/// Survival factor: `(1 - alpha)^3 - delta * (1 + alpha)^3`.
pub fn compute_z(alpha: &Rat, delta: &Rat) -> Rat {
    let one = Rat::one();
    (&one - alpha).pow(3) - delta * (&one + alpha).pow(3)
}

/// One evaluated condition. `bound` is None when its defining expression
/// has a non-positive denominator, which already makes the point
/// infeasible; `note` says so.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub id: &'static str,
    pub lhs: Rat,
    pub bound: Option<Rat>,
    pub satisfied: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub z: Rat,
    pub rows: Vec<ConstraintRow>,
    pub overall: bool,
}

impl ConstraintReport {
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut o = json!({
                    "id": r.id,
                    "lhs": rat_to_string(&r.lhs),
                    "lhs_approx": rat_to_f64(&r.lhs),
                    "satisfied": r.satisfied,
                });
                let m = o.as_object_mut().unwrap();
                match &r.bound {
                    Some(b) => {
                        m.insert("bound".into(), json!(rat_to_string(b)));
                        m.insert("bound_approx".into(), json!(rat_to_f64(b)));
                    }
                    None => {
                        m.insert("bound".into(), Value::Null);
                    }
                }
                if let Some(n) = &r.note {
                    m.insert("note".into(), json!(n));
                }
                o
            })
            .collect();
        json!({
            "z": rat_to_string(&self.z),
            "z_approx": rat_to_f64(&self.z),
            "constraints": rows,
            "overall": self.overall,
        })
    }
}

/// Evaluates the four feasibility conditions:
///
/// 1. `n_min >= 1 / (z + gamma - (1+alpha)^3)`, infeasible when the
///    denominator is not positive;
/// 2. `gamma <= z / (1+alpha)^3`;
/// 3. `beta <= z / (1+alpha)^2`;
/// 4. `beta > ((1-z)(1+alpha)^5 + (1+alpha)^6)
///    / (((1-alpha)^3 - delta (1+alpha)^2) ((1+alpha)^2 + 1))`, strict,
///    infeasible when that denominator is not positive.
pub fn check_constraints(
    alpha: &Rat,
    delta: &Rat,
    gamma: &Rat,
    beta: &Rat,
    n_min: u64,
) -> ConstraintReport {
    let one = Rat::one();
    let z = compute_z(alpha, delta);
    let up = &one + alpha;
    let nmin = Rat::from_integer(BigInt::from(n_min));

    let mut rows = Vec::with_capacity(4);

    let denom1 = &z + gamma - up.pow(3);
    rows.push(if denom1 > Rat::zero() {
        let bound = denom1.recip();
        ConstraintRow {
            id: "C1",
            lhs: nmin.clone(),
            satisfied: nmin >= bound,
            bound: Some(bound),
            note: None,
        }
    } else {
        ConstraintRow {
            id: "C1",
            lhs: nmin.clone(),
            bound: None,
            satisfied: false,
            note: Some(format!(
                "z + gamma - (1+alpha)^3 = {} is not positive; no system size suffices",
                rat_to_string(&denom1)
            )),
        }
    });

    let bound2 = &z / up.pow(3);
    rows.push(ConstraintRow {
        id: "C2",
        lhs: gamma.clone(),
        satisfied: gamma <= &bound2,
        bound: Some(bound2),
        note: None,
    });

    let bound3 = &z / up.pow(2);
    rows.push(ConstraintRow {
        id: "C3",
        lhs: beta.clone(),
        satisfied: beta <= &bound3,
        bound: Some(bound3),
        note: None,
    });

    let denom4 = ((&one - alpha).pow(3) - delta * up.pow(2)) * (up.pow(2) + &one);
    rows.push(if denom4 > Rat::zero() {
        let bound = ((&one - &z) * up.pow(5) + up.pow(6)) / denom4;
        ConstraintRow {
            id: "C4",
            lhs: beta.clone(),
            satisfied: beta > &bound,
            bound: Some(bound),
            note: None,
        }
    } else {
        ConstraintRow {
            id: "C4",
            lhs: beta.clone(),
            bound: None,
            satisfied: false,
            note: Some(format!(
                "((1-alpha)^3 - delta(1+alpha)^2)((1+alpha)^2+1) = {} is not positive",
                rat_to_string(&denom4)
            )),
        }
    });

    let overall = rows.iter().all(|r| r.satisfied);
    ConstraintReport { z, rows, overall }
}

/// Inclusive decimal grid `lo..hi:step`, e.g. `0..0.05:0.005`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Rat,
    pub hi: Rat,
    pub step: Rat,
}

impl GridSpec {
    pub fn parse(s: &str) -> Result<GridSpec, String> {
        let (range, step) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("grid {s:?} must look like lo..hi:step"))?;
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| format!("grid {s:?} must look like lo..hi:step"))?;
        let dec = |t: &str| {
            churnstore_protocol::params::rat_from_decimal(t.trim()).map_err(|e| e.to_string())
        };
        let g = GridSpec { lo: dec(lo)?, hi: dec(hi)?, step: dec(step)? };
        if g.step <= Rat::zero() {
            return Err(format!("grid {s:?} has a non-positive step"));
        }
        if g.hi < g.lo {
            return Err(format!("grid {s:?} is empty"));
        }
        Ok(g)
    }

    pub fn points(&self) -> Vec<Rat> {
        let mut out = Vec::new();
        let mut x = self.lo.clone();
        while x <= self.hi {
            out.push(x.clone());
            x += &self.step;
        }
        out
    }
}

/// One scanned cell: the largest grid-aligned `gamma` and `beta` that
/// satisfy all four conditions at this `(alpha, delta)`, if any exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCell {
    pub alpha: Rat,
    pub delta: Rat,
    pub feasible: bool,
    pub gamma: Option<Rat>,
    pub beta: Option<Rat>,
}

/// Scans the `(alpha, delta)` grid, searching the percent grid
/// `{1/100 .. 100/100}` for a satisfying `(gamma, beta)` pair in each cell.
/// The search closes over the constraint structure instead of trying all
/// pairs: the conditions give an interval of admissible `gamma` (from C1
/// and C2) and of `beta` (from C4 and C3), so a cell is feasible exactly
/// when both intervals contain a grid point, and the largest such points
/// are reported.
pub fn scan_feasible_region(alpha: &GridSpec, delta: &GridSpec, n_min: u64) -> Vec<ScanCell> {
    let hundredth = Rat::new(BigInt::from(1), BigInt::from(100));
    let one = Rat::one();
    let mut cells = Vec::new();
    for a in alpha.points() {
        for d in delta.points() {
            let mut best = None;
            // Largest grid gamma within (C1's lower bound, C2's cap].
            let cap2 = {
                let z = compute_z(&a, &d);
                &z / (&one + &a).pow(3)
            };
            let gamma_hi = floor_to_grid(&cap2, &hundredth);
            if let Some(gamma) = gamma_hi {
                // C1 tightens as gamma shrinks, so only the largest grid
                // gamma needs checking; likewise the largest beta under
                // C3's cap is the easiest for C4's strict lower bound.
                let cap3 = {
                    let z = compute_z(&a, &d);
                    &z / (&one + &a).pow(2)
                };
                if let Some(beta) = floor_to_grid(&cap3, &hundredth) {
                    let report = check_constraints(&a, &d, &gamma, &beta, n_min);
                    if report.overall {
                        best = Some((gamma, beta));
                    }
                }
            }
            cells.push(ScanCell {
                alpha: a.clone(),
                delta: d.clone(),
                feasible: best.is_some(),
                gamma: best.as_ref().map(|(g, _)| g.clone()),
                beta: best.as_ref().map(|(_, b)| b.clone()),
            });
        }
    }
    cells
}

/// Largest positive multiple of `step` that is `<= cap` and `<= 1`.
fn floor_to_grid(cap: &Rat, step: &Rat) -> Option<Rat> {
    let capped = cap.min(&Rat::one()).clone();
    let k = (&capped / step).floor();
    let x = &k * step;
    (x > Rat::zero()).then_some(x)
}

/// Renders scan cells as CSV with a header row.
pub fn scan_to_csv(cells: &[ScanCell]) -> String {
    let mut out = String::from("alpha,delta,feasible,gamma,beta\n");
    for c in cells {
        let opt = |r: &Option<Rat>| r.as_ref().map(|x| rat_to_string(x)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rat_to_string(&c.alpha),
            rat_to_string(&c.delta),
            c.feasible,
            opt(&c.gamma),
            opt(&c.beta),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use churnstore_protocol::params::rat_from_decimal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn r(s: &str) -> Rat {
        rat_from_decimal(s).unwrap()
    }

    #[test]
    fn survival_factor_matches_hand_computed_points() {
        assert_eq!(compute_z(&r("0"), &r("0")), r("1"));
        assert_eq!(compute_z(&r("0"), &r("0.21")), r("0.79"));
        assert_eq!(compute_z(&r("0.04"), &r("0.01")), r("0.87348736"));
    }

    #[test]
    fn survival_factor_matches_float_rederivation_at_random_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = rng.gen_range(0..100_000u64);
            let d = rng.gen_range(0..100_000u64);
            let alpha = Rat::new(BigInt::from(a), BigInt::from(1_000_000));
            let delta = Rat::new(BigInt::from(d), BigInt::from(1_000_000));
            let exact = rat_to_f64(&compute_z(&alpha, &delta));
            let (af, df) = (a as f64 / 1e6, d as f64 / 1e6);
            let float = (1.0 - af).powi(3) - df * (1.0 + af).powi(3);
            let scale = float.abs().max(1e-12);
            assert!(
                ((exact - float) / scale).abs() < 1e-12,
                "alpha={af} delta={df}: {exact} vs {float}"
            );
        }
    }

    #[test]
    fn published_parameter_points_are_feasible() {
        let report = check_constraints(&r("0"), &r("0.21"), &r("0.79"), &r("0.79"), 2);
        assert!(report.overall, "{:?}", report.rows);
        assert_eq!(report.z, r("0.79"));

        let report = check_constraints(&r("0.04"), &r("0.01"), &r("0.77"), &r("0.80"), 2);
        assert!(report.overall, "{:?}", report.rows);
        assert_eq!(report.z, r("0.87348736"));
    }

    #[test]
    fn boundary_equalities_resolve_exactly() {
        // gamma and beta sit exactly on their caps at this point; both
        // inequalities are non-strict, so the point passes. A float
        // evaluation of z could land an ulp below 0.79 and flip it.
        let report = check_constraints(&r("0"), &r("0.21"), &r("0.79"), &r("0.79"), 2);
        assert!(report.rows.iter().all(|c| c.satisfied));
        let c2 = &report.rows[1];
        assert_eq!(c2.lhs, c2.bound.clone().unwrap());

        // The strict condition rejects its exact boundary: at alpha = 0,
        // delta = 0 the lower bound on beta is 1/2.
        let report = check_constraints(&r("0"), &r("0"), &r("0.6"), &r("0.5"), 2);
        let c4 = &report.rows[3];
        assert_eq!(c4.bound.clone().unwrap(), r("0.5"));
        assert!(!c4.satisfied);
        let report = check_constraints(&r("0"), &r("0"), &r("0.6"), &r("0.51"), 2);
        assert!(report.rows[3].satisfied);
    }

    #[test]
    fn excess_crash_fraction_fails_the_join_cap() {
        let report = check_constraints(&r("0"), &r("0.5"), &r("0.79"), &r("0.79"), 2);
        assert_eq!(report.z, r("0.5"));
        let c2 = &report.rows[1];
        assert!(!c2.satisfied, "gamma 0.79 > z 0.5 must fail");
        assert!(!report.overall);
    }

    #[test]
    fn nonpositive_denominators_report_infeasible_without_panicking() {
        // z + gamma - (1+alpha)^3 = 0.1 + 0.1 - 1 < 0.
        let report = check_constraints(&r("0"), &r("0.9"), &r("0.1"), &r("0.5"), 1000);
        let c1 = &report.rows[0];
        assert!(!c1.satisfied);
        assert!(c1.bound.is_none());
        assert!(c1.note.as_ref().unwrap().contains("not positive"));
        assert!(!report.overall);

        // (1-alpha)^3 - delta (1+alpha)^2 < 0 kills C4's denominator.
        let report = check_constraints(&r("0"), &r("1"), &r("0.1"), &r("0.5"), 1000);
        let c4 = &report.rows[3];
        assert!(!c4.satisfied);
        assert!(c4.bound.is_none());
    }

    #[test]
    fn report_json_carries_exact_and_approximate_forms() {
        let report = check_constraints(&r("0"), &r("0.21"), &r("0.79"), &r("0.79"), 2);
        let j = report.to_json();
        assert_eq!(j["z"], "0.79");
        assert_eq!(j["overall"], true);
        assert_eq!(j["constraints"][0]["id"], "C1");
        assert!(j["constraints"][3]["bound_approx"].as_f64().unwrap() < 0.79);
    }

    #[test]
    fn grid_parsing_accepts_decimal_ranges() {
        let g = GridSpec::parse("0..0.05:0.005").unwrap();
        assert_eq!(g.points().len(), 11);
        assert_eq!(g.points()[1], r("0.005"));
        assert!(GridSpec::parse("1..0:0.1").is_err());
        assert!(GridSpec::parse("0..1:0").is_err());
        assert!(GridSpec::parse("junk").is_err());
    }

    #[test]
    fn scan_finds_the_published_cells_and_respects_monotonicity() {
        let alpha = GridSpec::parse("0..0.04:0.01").unwrap();
        let delta = GridSpec::parse("0..0.25:0.01").unwrap();
        let cells = scan_feasible_region(&alpha, &delta, 2);

        let at = |a: &str, d: &str| {
            cells
                .iter()
                .find(|c| c.alpha == r(a) && c.delta == r(d))
                .unwrap_or_else(|| panic!("missing cell ({a}, {d})"))
        };
        assert!(at("0", "0.21").feasible);
        assert!(at("0.04", "0.01").feasible);
        assert!(!at("0.04", "0.21").feasible);

        // For fixed alpha, raising delta never turns a cell feasible again.
        for a in alpha.points() {
            let mut column: Vec<&ScanCell> = cells.iter().filter(|c| c.alpha == a).collect();
            column.sort_by(|x, y| x.delta.cmp(&y.delta));
            let mut seen_infeasible = false;
            for c in column {
                if seen_infeasible {
                    assert!(!c.feasible, "alpha {} regained feasibility", rat_to_string(&a));
                }
                seen_infeasible |= !c.feasible;
            }
        }
    }

    #[test]
    fn scan_reports_grid_aligned_witnesses() {
        let alpha = GridSpec::parse("0..0:0.01").unwrap();
        let delta = GridSpec::parse("0.21..0.21:0.01").unwrap();
        let cells = scan_feasible_region(&alpha, &delta, 2);
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert!(c.feasible);
        assert_eq!(c.gamma.clone().unwrap(), r("0.79"));
        assert_eq!(c.beta.clone().unwrap(), r("0.79"));
        let csv = scan_to_csv(&cells);
        assert!(csv.starts_with("alpha,delta,feasible,gamma,beta\n"));
        assert!(csv.contains("0,0.21,true,0.79,0.79"));
    }
}
