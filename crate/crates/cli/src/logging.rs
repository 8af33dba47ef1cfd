use std::io::Write;

/// Installs a stderr logger printing `LEVEL<TAB>stage<TAB>message`. The
/// stage is the log target. `RUST_LOG` overrides `default_level`.
pub fn init(default_level: log::LevelFilter) {
    let mut builder = env_logger::Builder::new();
    builder.filter_level(default_level);
    if let Ok(spec) = std::env::var("RUST_LOG") {
        builder.parse_filters(&spec);
    }
    builder
        .format(|buf, record| {
            let stage = record.target().rsplit("::").next().unwrap_or("verifkit");
            writeln!(buf, "{}\t{}\t{}", record.level(), stage, record.args())
        })
        .target(env_logger::Target::Stderr)
        .try_init()
        .ok();
}
