use crate::Command;
use lamyfin::engine::{decide_finiteness, EngineConfig, Verdict};
use lamyfin::export::{export_dot, export_json, export_text};
use lamyfin::judgment::render_judgment;
use lamyfin::oracle;
use lamyfin::rules::validate;
use lamyfin::scheme::{parse_scheme, scheme_to_term};
use lamyfin::term::Term;
use std::process::ExitCode;
use std::time::Instant;

pub fn run(cmd: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cmd {
        Command::Check {
            input,
            format,
            budget,
            threads,
            verbose,
        } => {
            let term = load(&input)?;
            let config = EngineConfig { budget, threads };
            let start = Instant::now();
            let (verdict, mut analysis) = decide_finiteness(&term, config)?;
            let elapsed = start.elapsed();
            eprintln!("time: {:.3}s", elapsed.as_secs_f64());
            match verdict {
                Verdict::Finite { explored } => {
                    match format.as_str() {
                        "json" => println!(
                            "{}",
                            serde_json::json!({
                                "verdict": "FINITE",
                                "explored": {
                                    "facts": explored.facts,
                                    "instances": explored.instances,
                                    "rounds": explored.rounds,
                                },
                            })
                        ),
                        _ => println!(
                            "FINITE (explored {} skeletons, {} instances, {} rounds)",
                            explored.facts, explored.instances, explored.rounds
                        ),
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Verdict::Infinite { witness } => {
                    let report = validate(&mut analysis.ctx, &witness.derivation);
                    debug_assert!(report.is_valid());
                    match format.as_str() {
                        "json" => {
                            let derivation_json =
                                export_json(&analysis.ctx, &term, &witness.derivation);
                            println!(
                                "{}",
                                serde_json::json!({
                                    "verdict": "INFINITE",
                                    "gain": witness.gain,
                                    "ancestor": witness.ancestor,
                                    "descendant": witness.descendant,
                                    "witness": serde_json::from_str::<serde_json::Value>(&derivation_json)?,
                                })
                            );
                        }
                        "dot" => {
                            println!("{}", export_dot(&analysis.ctx, &witness.derivation));
                        }
                        _ => {
                            println!("INFINITE");
                            let anc = witness
                                .derivation
                                .at_path(&witness.ancestor)
                                .expect("witness path");
                            let desc = witness
                                .derivation
                                .at_path(&witness.descendant)
                                .expect("witness path");
                            println!(
                                "pump section: counter gain {} between equivalent judgments",
                                witness.gain
                            );
                            println!("  ancestor:   {}", render_judgment(&analysis.ctx, &anc.judgment));
                            println!("  descendant: {}", render_judgment(&analysis.ctx, &desc.judgment));
                            if verbose {
                                print!("{}", export_text(&analysis.ctx, &witness.derivation));
                            }
                        }
                    }
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Derive {
            input,
            target,
            min_counter,
            format,
            budget,
            threads,
        } => {
            let term = load(&input)?;
            let config = EngineConfig { budget, threads };
            let target = match target {
                Some(t) => t,
                None => {
                    let m = lamyfin::closure::complexity(&term)?;
                    let all: Vec<String> = (0..m).map(|n| n.to_string()).collect();
                    format!("({},{{}},{{{}}},o)", m, all.join(","))
                }
            };
            match lamyfin::engine::find_derivation(&term, &target, min_counter, config)? {
                None => {
                    println!("NOT FOUND");
                    Ok(ExitCode::from(1))
                }
                Some((d, analysis)) => {
                    match format.as_str() {
                        "json" => println!("{}", export_json(&analysis.ctx, &term, &d)),
                        "dot" => println!("{}", export_dot(&analysis.ctx, &d)),
                        _ => print!("{}", export_text(&analysis.ctx, &d)),
                    }
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Enumerate {
            input,
            max_size,
            depth_fuel,
            step_fuel,
            format,
        } => {
            let term = load(&input)?;
            let (trees, exhaustive) =
                oracle::language_upto(&term, max_size, depth_fuel, step_fuel);
            match format.as_str() {
                "json" => println!(
                    "{}",
                    serde_json::json!({
                        "trees": trees.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                        "sizes": trees.iter().map(|t| t.size()).collect::<Vec<_>>(),
                        "exhaustive": exhaustive,
                    })
                ),
                _ => {
                    for t in &trees {
                        println!("{}", t);
                    }
                    eprintln!(
                        "{} trees (size <= {}), exhaustive: {}",
                        trees.len(),
                        max_size,
                        exhaustive
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bohm {
            input,
            depth_fuel,
            step_fuel,
            format,
        } => {
            let term = load(&input)?;
            let pt = oracle::bohm_expand(&term, depth_fuel, step_fuel);
            match format.as_str() {
                "json" => println!("{}", serde_json::to_string(&partial_to_json(&pt))?),
                _ => println!("{}", render_partial(&pt)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Growth { input, steps } => {
            let term = load(&input)?;
            let mut schedule = Vec::new();
            for s in &steps {
                let parts: Vec<&str> = s.split(':').collect();
                if parts.len() != 3 {
                    return Err(format!("bad schedule step `{}`", s).into());
                }
                schedule.push((parts[0].parse()?, parts[1].parse()?, parts[2].parse()?));
            }
            let report = oracle::growth_report(&term, &schedule);
            for step in &report.steps {
                println!("{}", serde_json::to_string(step)?);
            }
            println!(
                "{}",
                serde_json::json!({"strictly_increasing": report.strictly_increasing})
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &std::path::Path) -> Result<Term, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {}", path.display(), e))?;
    let scheme = parse_scheme(&text)?;
    Ok(scheme_to_term(&scheme)?)
}

fn render_partial(pt: &oracle::PartialTree) -> String {
    match pt {
        oracle::PartialTree::Sym { sym, children } => {
            if children.is_empty() {
                format!("({})", sym)
            } else {
                format!(
                    "({} {})",
                    sym,
                    children
                        .iter()
                        .map(render_partial)
                        .collect::<Vec<_>>()
                        .join(" ")
                )
            }
        }
        oracle::PartialTree::Unexpanded(_) => "?".to_string(),
        oracle::PartialTree::Diverged => "_|_".to_string(),
    }
}

fn partial_to_json(pt: &oracle::PartialTree) -> serde_json::Value {
    match pt {
        oracle::PartialTree::Sym { sym, children } => serde_json::json!({
            "sym": sym,
            "children": children.iter().map(partial_to_json).collect::<Vec<_>>(),
        }),
        oracle::PartialTree::Unexpanded(_) => serde_json::json!({"unexpanded": true}),
        oracle::PartialTree::Diverged => serde_json::json!({"diverged": true}),
    }
}
