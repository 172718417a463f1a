//! `--config` files: flat `key = value` lines that become long flags unless
//! the same flag is already on the command line.

use std::path::Path;

/// Pull the `--config` path out of `argv`, if any.
fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key `{}`", n + 1, k.trim()));
        }
        out.push((key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn on_command_line(argv: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    argv.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// `argv` with config entries appended as flags. Boolean entries use the
/// values `true` / `false`.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| format!("config {path}: {e}"))?;
    let mut out = argv.clone();
    for (key, value) in parse(&text)? {
        if on_command_line(&argv, &key) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => out.push(format!("--{key}={value}")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let p = parse("# run\nseed = 3\ntv_lambda=0.5  # comment\n\naugment-tvr = true\n").unwrap();
        assert_eq!(
            p,
            vec![
                ("seed".to_string(), "3".to_string()),
                ("tv-lambda".to_string(), "0.5".to_string()),
                ("augment-tvr".to_string(), "true".to_string()),
            ]
        );
        assert!(parse("novalue\n").is_err());
    }

    #[test]
    fn command_line_wins() {
        let argv: Vec<String> = ["hummit", "train", "--seed", "1"].iter().map(|s| s.to_string()).collect();
        assert!(on_command_line(&argv, "seed"));
        assert!(!on_command_line(&argv, "arch"));
        assert_eq!(config_path(&argv), None);
    }
}
