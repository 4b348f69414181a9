//! One function per command. Each returns the report payload and tables.

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;
use tfm_core::audit::{
    bnic_audit, burning_audit, competitiveness_audit, conservative_field_audit, dsic_audit,
    first_price_counterexample, monotonicity_audit, nfl_audit, scp1_audit, symmetry_audit,
    uir_bf_check, AuditReport, BnicConfig, BurningConfig, Check, DsicConfig, Evidence, Property,
    Scp1Config, Seeds, StructuralConfig,
};
use tfm_core::hsearch::{
    h_star_estimate, revenue_study, violation_oracle, HSearchConfig, SearchConfig, FEASIBILITY_TOL,
};
use tfm_core::reference::{FirstPrice, NoBurn, RandomFreeAllocation};
use tfm_core::ssp_k::{monte_carlo_outcome, prefix_count, ENUMERATION_LIMIT};
use tfm_core::stats::{chunks, substream};
use tfm_core::{framed_mechanism, simulate, BidVector, Mechanism, VariationTerm};

use crate::config::{Command, MechanismChoice, Resolved};
use crate::output::{cell, Outcome, Status, Table};

/// Runs the resolved command.
pub fn dispatch(cfg: &Resolved) -> Result<Outcome> {
    match cfg.command {
        Command::Simulate => run_simulate(cfg),
        Command::Audit => run_audit(cfg),
        Command::Hsearch => run_hsearch(cfg),
        Command::Counterexample => run_counterexample(),
        Command::Allocation => run_allocation(cfg),
        Command::RevenueStudy => run_revenue_study(cfg),
    }
}

fn seed(cfg: &Resolved) -> u64 {
    cfg.seed
        .expect("stochastic commands are resolved with a seed")
}

fn fmt_bids(b: &[f64]) -> String {
    let parts: Vec<String> = b.iter().map(|x| cell(*x)).collect();
    parts.join(" ")
}

fn build_mechanism(cfg: &Resolved) -> Result<Box<dyn Mechanism>> {
    let p = &cfg.params;
    Ok(match cfg.mechanism {
        MechanismChoice::SoftSecondPrice => framed_mechanism(p)?,
        MechanismChoice::NoBurn => Box::new(NoBurn::new(framed_mechanism(p)?)),
        MechanismChoice::FirstPrice => Box::new(FirstPrice::unshaded(p.n)?),
        MechanismChoice::ShadedFirstPrice => Box::new(FirstPrice::shaded(p.n)?),
        MechanismChoice::RandomFreeAllocation => Box::new(RandomFreeAllocation::new(p.n, p.k)?),
    })
}

fn run_simulate(cfg: &Resolved) -> Result<Outcome> {
    let s = simulate(&cfg.params, &cfg.dist, cfg.samples, seed(cfg))?;
    let mut t = Table::new("summary", &["quantity", "mean", "se"]);
    for (name, e) in [
        ("expected_fees", s.expected_fees),
        ("miner_revenue", s.miner_revenue),
        ("burn", s.burn),
        ("expected_welfare", s.expected_welfare),
        ("realised_fees", s.realised_fees),
        ("realised_welfare", s.realised_welfare),
        ("top_user_confirmed", s.top_user_confirmed),
    ] {
        t.push(vec![name.into(), cell(e.mean), cell(e.se)]);
    }
    let p = &cfg.params;
    Ok(Outcome {
        status: Status::Completed,
        result: json!({
            "summary": s,
            "revenue_formula": 0.25 * p.h * p.n as f64 * p.c,
        }),
        tables: vec![t],
    })
}

fn evidence_table(r: &AuditReport) -> Table {
    let mut t = Table::new("evidence", &["input", "statistic", "standard_error"]);
    for e in &r.evidence {
        t.push(vec![
            e.input.clone(),
            cell(e.statistic),
            cell(e.standard_error),
        ]);
    }
    t
}

fn audit_outcome(
    report: AuditReport,
    extra: Option<(&str, serde_json::Value)>,
    mut tables: Vec<Table>,
) -> Outcome {
    tables.insert(0, evidence_table(&report));
    let status = report.verdict.into();
    let mut result = serde_json::Map::new();
    result.insert(
        "report".into(),
        serde_json::to_value(&report).expect("report serialises"),
    );
    if let Some((key, value)) = extra {
        result.insert(key.into(), value);
    }
    Outcome {
        status,
        result: serde_json::Value::Object(result),
        tables,
    }
}

fn run_audit(cfg: &Resolved) -> Result<Outcome> {
    let property = cfg.property.expect("audit is resolved with a property");
    let seed = seed(cfg);
    let mech = build_mechanism(cfg)?;
    let structural = StructuralConfig::new(cfg.trials, seed);
    let report = match property {
        Property::UDsic => dsic_audit(&mech, &DsicConfig::new(cfg.trials, seed))?,
        Property::UBnic => {
            let a = bnic_audit(&mech, &cfg.dist, &BnicConfig::new(cfg.samples, seed))?;
            let mut curves = Table::new(
                "deviation_curves",
                &["value", "bid", "expected_utility", "se", "gain", "gain_se"],
            );
            for c in &a.curves {
                for j in 0..c.bid_grid.len() {
                    curves.push(vec![
                        cell(c.value),
                        cell(c.bid_grid[j]),
                        cell(c.expected_utility[j]),
                        cell(c.standard_errors[j]),
                        cell(c.gain[j]),
                        cell(c.gain_standard_errors[j]),
                    ]);
                }
            }
            let value = serde_json::to_value(&a.curves)?;
            return Ok(audit_outcome(
                a.report,
                Some(("curves", value)),
                vec![curves],
            ));
        }
        Property::Scp1 => {
            let scp = if cfg.params.k == 1 {
                Scp1Config::new(cfg.trials, seed)
            } else {
                Scp1Config::quadrature_payments(cfg.trials, seed)
            };
            scp1_audit(&mech, &scp)?
        }
        Property::Uir | Property::Bf => feasibility_audit(cfg, &mech, property, seed)?,
        Property::Nfl => nfl_audit(&mech, &structural)?,
        Property::Symmetry => symmetry_audit(&mech, &structural)?,
        Property::Monotonicity => monotonicity_audit(&mech, &structural)?,
        Property::Competitiveness => competitiveness_audit(&mech, &structural)?,
        Property::ConservativeField => {
            if cfg.mechanism != MechanismChoice::SoftSecondPrice {
                bail!("the conservative-field audit applies to the soft second-price variation term only");
            }
            let term = VariationTerm::from_params(&cfg.params)?;
            conservative_field_audit(
                &term,
                "variation-term",
                cfg.params.n,
                cfg.trials,
                seed,
                1e-10,
            )?
        }
        Property::Burning => {
            let b = burning_audit(&mech, &cfg.dist, &BurningConfig::new(cfg.samples, seed))?;
            let value = serde_json::to_value(&b.classification)?;
            return Ok(audit_outcome(
                b.report,
                Some(("classification", value)),
                vec![],
            ));
        }
    };
    Ok(audit_outcome(report, None, vec![]))
}

/// Rationality or budget feasibility. The soft second-price mechanism is
/// searched with the witness search; other mechanisms are evaluated at
/// `trials` uniform profiles.
fn feasibility_audit(
    cfg: &Resolved,
    mech: &dyn Mechanism,
    property: Property,
    seed: u64,
) -> Result<AuditReport> {
    let (name, slack, bids, substreams) = if cfg.mechanism == MechanismChoice::SoftSecondPrice {
        let r = violation_oracle(&cfg.params, cfg.search_budget, seed)?;
        let w = if property == Property::Uir {
            r.uir
        } else {
            r.bf
        };
        let subs = cfg.search_budget.div_ceil(tfm_core::stats::CHUNK) as u64;
        (
            format!("searched {} profiles", r.evaluations),
            w.slack,
            w.bids,
            subs,
        )
    } else {
        let n = cfg.params.n;
        let worst: Vec<Result<(f64, BidVector)>> = chunks(cfg.trials)
            .into_par_iter()
            .map(|(stream, len)| {
                let mut rng = substream(seed, stream);
                let mut best = (f64::INFINITY, BidVector::zeros(n));
                for _ in 0..len {
                    let b = tfm_core::ValuationDistribution::uniform().sample(&mut rng, n)?;
                    let s = uir_bf_check(mech, &b)?;
                    let v = if property == Property::Uir {
                        s.uir
                            .iter()
                            .flatten()
                            .copied()
                            .fold(f64::INFINITY, f64::min)
                    } else {
                        s.bf
                    };
                    if v < best.0 {
                        best = (v, b);
                    }
                }
                Ok(best)
            })
            .collect();
        let mut best = (f64::INFINITY, BidVector::zeros(n));
        for w in worst {
            let w = w?;
            if w.0 < best.0 {
                best = w;
            }
        }
        let subs = cfg.trials.div_ceil(tfm_core::stats::CHUNK) as u64;
        (
            format!("sampled {} profiles", cfg.trials),
            best.0,
            best.1,
            subs,
        )
    };
    let check_name = format!("smallest {} slack, {name}", property.as_str());
    Ok(AuditReport::new(
        property,
        mech.name(),
        vec![Check::new(&check_name, 0.0 - slack, FEASIBILITY_TOL, 0.0)],
        vec![Evidence::new(fmt_bids(bids.as_slice()), slack, 0.0)],
        Seeds::random(seed, substreams),
    ))
}

fn run_hsearch(cfg: &Resolved) -> Result<Outcome> {
    let seed = seed(cfg);
    let mut table = Table::new(
        "h_star",
        &[
            "n",
            "k",
            "m",
            "c",
            "h_star",
            "bracket_high",
            "h_star_n_over_kc",
            "revenue",
            "revenue_se",
            "revenue_formula",
        ],
    );
    let mut witnesses = Table::new("witnesses", &["n", "k", "constraint", "slack", "bids"]);
    let mut reports = Vec::new();
    for p in &cfg.study {
        let h = HSearchConfig {
            search: SearchConfig::new(cfg.search_budget, seed),
            tolerance: cfg.tolerance,
            revenue_samples: cfg.samples,
            ..HSearchConfig::new(cfg.search_budget, seed)
        };
        let r = h_star_estimate(p, &cfg.dist, &h)?;
        table.push(vec![
            p.n.to_string(),
            p.k.to_string(),
            cell(p.m),
            cell(p.c),
            cell(r.h_star),
            cell(r.bisection_bracket.1),
            cell(r.h_star * p.n as f64 / (p.k as f64 * p.c)),
            cell(r.revenue_at_h_star.mean),
            cell(r.revenue_at_h_star.se),
            cell(r.revenue_formula),
        ]);
        for (label, w) in [("uir", &r.worst_uir_witness), ("bf", &r.worst_bf_witness)] {
            witnesses.push(vec![
                p.n.to_string(),
                p.k.to_string(),
                label.into(),
                cell(w.slack),
                fmt_bids(w.bids.as_slice()),
            ]);
        }
        reports.push(json!({
            "n": p.n,
            "k": p.k,
            "m": p.m,
            "c": p.c,
            "h_star_label": "upper-bound estimate: feasible on the searched witness set",
            "feasibility": r,
        }));
    }
    Ok(Outcome {
        status: Status::Completed,
        result: json!({ "searches": reports }),
        tables: vec![table, witnesses],
    })
}

fn run_counterexample() -> Result<Outcome> {
    let c = first_price_counterexample()?;
    let mut t = Table::new("increments", &["profile", "user", "theta"]);
    for (profile, user, theta) in &c.increments {
        t.push(vec![profile.clone(), user.to_string(), cell(*theta)]);
    }
    Ok(Outcome {
        status: Status::Completed,
        result: serde_json::to_value(&c)?,
        tables: vec![t],
    })
}

fn run_allocation(cfg: &Resolved) -> Result<Outcome> {
    let p = &cfg.params;
    let b = cfg.bids.as_ref().expect("allocation is resolved with bids");
    let term = VariationTerm::from_params(p)?;
    let theta = term.theta_all(b)?;
    let revenue = term.revenue(b)?;
    let mut t = Table::new(
        "allocation",
        &[
            "user",
            "bid",
            "alloc",
            "alloc_se",
            "payment",
            "expected_payment",
            "expected_payment_se",
            "theta",
        ],
    );
    let exact = p.k == 1 || prefix_count(p.n, p.k) <= ENUMERATION_LIMIT;
    let mut users = Vec::new();
    let mut total = 0.0;
    let mut total_se = 0.0;
    if exact {
        let mech = framed_mechanism(p)?;
        let a = mech.allocation(b)?;
        let pay = mech.payments(b)?;
        for (&ai, &pi) in a.probs().iter().zip(&pay) {
            let ep = ai * pi;
            total += ep;
            users.push((ai, 0.0, pi, ep, 0.0));
        }
    } else {
        let mc = monte_carlo_outcome(b, p.k, p.m, cfg.samples, seed(cfg))?;
        for (i, u) in mc.users.iter().enumerate() {
            let ep = u.expected_payment.mean + theta[i];
            let pay = if u.alloc.mean > 0.0 {
                ep / u.alloc.mean
            } else {
                0.0
            };
            users.push((u.alloc.mean, u.alloc.se, pay, ep, u.expected_payment.se));
        }
        total = mc.total_payment.mean + theta.iter().sum::<f64>();
        total_se = mc.total_payment.se;
    }
    let mut rows = Vec::new();
    for (i, &(a, a_se, pay, ep, ep_se)) in users.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            cell(b[i]),
            cell(a),
            cell(a_se),
            cell(pay),
            cell(ep),
            cell(ep_se),
            cell(theta[i]),
        ]);
        rows.push(json!({
            "bid": b[i],
            "alloc": a,
            "alloc_se": a_se,
            "payment": pay,
            "expected_payment": ep,
            "expected_payment_se": ep_se,
            "theta": theta[i],
        }));
    }
    Ok(Outcome {
        status: Status::Completed,
        result: json!({
            "method": if exact { "exact" } else { "monte-carlo" },
            "users": rows,
            "total_expected_payment": total,
            "total_expected_payment_se": total_se,
            "miner_revenue": revenue,
            "burn": total - revenue,
        }),
        tables: vec![t],
    })
}

fn run_revenue_study(cfg: &Resolved) -> Result<Outcome> {
    let rows = revenue_study(&cfg.study, &cfg.dist, cfg.samples, seed(cfg))?;
    let mut t = Table::new(
        "revenue",
        &["n", "k", "h", "c", "estimate", "se", "formula"],
    );
    for r in &rows {
        t.push(vec![
            r.n.to_string(),
            r.k.to_string(),
            cell(r.h),
            cell(r.c),
            cell(r.estimate),
            cell(r.se),
            cell(r.formula),
        ]);
    }
    Ok(Outcome {
        status: Status::Completed,
        result: json!({ "rows": rows }),
        tables: vec![t],
    })
}
