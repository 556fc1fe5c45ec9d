use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use toml::Value;

/// Keys whose values are paths, resolved against the config file's directory.
const PATH_KEYS: [&str; 4] = ["material", "input", "output", "report"];

/// Splits `--config <path>` out of argv and expands the table named after the
/// subcommand into flags placed right after the subcommand, so flags given on
/// the command line still win.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(PathBuf::from(it.next().context("--config needs a path")?));
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let Some(sub_at) = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1) else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let doc: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let flags = match doc.get(rest[sub_at].as_str()) {
        Some(Value::Table(t)) => table_flags(t, base)?,
        Some(_) => bail!("config entry [{}] must be a table", rest[sub_at]),
        None => Vec::new(),
    };
    rest.splice(sub_at + 1..sub_at + 1, flags);
    Ok(rest)
}

fn table_flags(table: &toml::Table, base: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match value {
            Value::Boolean(true) => {
                out.push(flag);
                continue;
            }
            Value::Boolean(false) => continue,
            Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(","),
            v => scalar(v)?,
        };
        let text = if PATH_KEYS.contains(&key.as_str()) && Path::new(&text).is_relative() {
            base.join(&text).to_string_lossy().into_owned()
        } else {
            text
        };
        out.push(flag);
        out.push(text);
    }
    Ok(out)
}

fn scalar(v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => format!("{f:e}"),
        Value::Boolean(b) => b.to_string(),
        other => bail!("unsupported config value {other}"),
    })
}
