use anyhow::bail;
use redi_core::autodiff::gradcheck::{fault_case, registry, run_case, Case, DEFAULT_SEEDS, TOLERANCE};

use super::Failed;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Check every registered op, loss and model.
    #[arg(long)]
    pub all: bool,
    /// Check only these cases (repeatable).
    #[arg(long = "case")]
    pub cases: Vec<String>,
    /// Add the deliberately broken fixture, which must fail.
    #[arg(long)]
    pub fault: bool,
    /// List case names and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    pub seeds: u64,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let all = registry();
    if a.list {
        for c in &all {
            println!("{}", c.name);
        }
        return Ok(());
    }
    let mut selected: Vec<Case> = if a.all {
        all.clone()
    } else {
        let mut v = Vec::new();
        for name in &a.cases {
            match all.iter().find(|c| c.name == name) {
                Some(c) => v.push(*c),
                None => bail!("unknown gradcheck case '{name}' (see --list)"),
            }
        }
        v
    };
    if a.fault {
        selected.push(fault_case());
    }
    if selected.is_empty() {
        bail!("nothing to check: pass --all, --case NAME or --fault");
    }
    if a.seeds == 0 {
        bail!("--seeds must be >= 1");
    }
    let width = selected.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
    println!(
        "{:<width$}  {:>5}  {:>12}  {:>7}  {:>7}  result",
        "case", "seeds", "max_rel_err", "coords", "skipped"
    );
    let mut failed = 0;
    for case in &selected {
        let row = run_case(case, a.seeds)?;
        let verdict = if row.passed { "pass" } else { "FAIL" };
        println!(
            "{:<width$}  {:>5}  {:>12.3e}  {:>7}  {:>7}  {verdict}",
            row.name, row.seeds, row.max_rel_err, row.coords, row.skipped
        );
        if !row.unchecked.is_empty() {
            println!("{:<width$}  unchecked: {}", "", row.unchecked.join(", "));
        }
        failed += usize::from(!row.passed);
    }
    println!("tolerance {TOLERANCE:e}; {} of {} cases passed", selected.len() - failed, selected.len());
    if failed > 0 {
        return Err(Failed(crate::EXIT_USAGE).into());
    }
    Ok(())
}
