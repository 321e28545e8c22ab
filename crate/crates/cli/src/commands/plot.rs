//! `semflow plot`: render a CDF CSV as an SVG.

use crate::{CliError, PlotArgs};

pub fn run(args: PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.csv)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.csv.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty CSV", args.csv.display())))?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(CliError::Config(format!(
            "{}: header {header:?} has no method columns",
            args.csv.display()
        )));
    }
    let mut thresholds = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() + 1 {
            return Err(CliError::Config(format!(
                "{}: line {} has {} fields, expected {}",
                args.csv.display(),
                lineno + 2,
                fields.len(),
                names.len() + 1
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "{}: line {}: {s:?} is not a number",
                    args.csv.display(),
                    lineno + 2
                ))
            })
        };
        thresholds.push(parse(fields[0])?);
        for (col, field) in columns.iter_mut().zip(&fields[1..]) {
            col.push(parse(field)?);
        }
    }
    if thresholds.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", args.csv.display())));
    }
    let methods: Vec<(String, Vec<f64>)> = names.into_iter().zip(columns).collect();
    std::fs::write(&args.out, crate::svg::render_cdf_svg(&thresholds, &methods))
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
