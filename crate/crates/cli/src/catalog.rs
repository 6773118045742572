use sgdlab::checks;
use sgdlab::games;

const OBJECTIVES: &[(&str, &str)] = &[
    ("convex1d", "f = ((x-1)^2 + (x+1)^2)/2, minimum at 0"),
    (
        "nonconvex1d:sigma",
        "quartic with two local minima, components tilted by +-sigma*x",
    ),
    (
        "quadratic:path",
        "JSON file {dim, quadratic (row-major), offsets}",
    ),
];

const ESTIMATORS: &[(&str, &str)] = &[
    (
        "combined",
        "d * df_i/dw_j e_j, random component and coordinate",
    ),
    ("coordinate", "d * df/dw_j e_j, random coordinate"),
    ("gd", "exact gradient"),
    (
        "minibatch:b",
        "mean of b component gradients, drawn without replacement",
    ),
    ("sgd", "one random component gradient"),
];

const SCHEDULES: &[(&str, &str)] = &[
    ("const:c", "alpha_m = c"),
    ("delayed:c:m0:q", "alpha_m = c up to m0+1, then c/(m-m0)^q"),
    ("log:c", "alpha_m = c/ln(1 + m)"),
    ("power:c:p", "alpha_m = c/m^p"),
];

fn section(out: &mut String, title: &str, mut rows: Vec<(String, String)>) {
    rows.sort();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    out.push_str(title);
    out.push_str(":\n");
    for (name, desc) in rows {
        out.push_str(&format!("  {name:<width$}  {desc}\n"));
    }
}

fn owned(rows: &[(&str, &str)]) -> Vec<(String, String)> {
    rows.iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

/// Sorted sections, each sorted by name.
pub fn listing() -> String {
    let mut out = String::new();
    section(
        &mut out,
        "checks",
        checks::checks()
            .iter()
            .map(|c| (c.name.to_string(), c.description.to_string()))
            .collect(),
    );
    section(&mut out, "estimators", owned(ESTIMATORS));
    section(
        &mut out,
        "games",
        games::catalog()
            .iter()
            .map(|g| (g.name.to_string(), g.description.to_string()))
            .collect(),
    );
    section(&mut out, "objectives", owned(OBJECTIVES));
    section(&mut out, "schedules", owned(SCHEDULES));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_complete() {
        let text = listing();
        assert_eq!(text, listing());
        for needle in [
            "ex67-reduced",
            "delayed:c:m0:q",
            "nonconvex1d:sigma",
            "mass-conservation",
        ] {
            assert!(text.contains(needle), "{needle}");
        }
    }

    #[test]
    fn schedule_grammar_parses() {
        for (spec, _) in SCHEDULES {
            let (head, params) = spec.split_once(':').unwrap();
            let vals: Vec<&str> = params
                .split(':')
                .map(|p| if p == "m0" { "10" } else { "0.5" })
                .collect();
            let example = format!("{head}:{}", vals.join(":"));
            assert!(example.parse::<sgdlab::Schedule>().is_ok(), "{example}");
        }
    }
}
