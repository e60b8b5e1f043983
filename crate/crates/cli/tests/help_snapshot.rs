use std::path::PathBuf;

use clap::CommandFactory;
use prosody_cli::Cli;

fn walk(cmd: &mut clap::Command, path: &str, out: &mut String, flags: &mut Vec<(String, String)>) {
    let name = if path.is_empty() { cmd.get_name().to_string() } else { format!("{path} {}", cmd.get_name()) };
    let help = cmd.render_long_help().to_string();
    for a in cmd.get_arguments() {
        if let Some(l) = a.get_long() {
            assert!(help.contains(&format!("--{l}")), "{name}: --{l} missing from help");
            flags.push((name.clone(), l.to_string()));
        }
    }
    out.push_str(&format!("=== {name}\n{help}\n"));
    let subs: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for s in subs {
        if s == "help" {
            continue;
        }
        walk(cmd.find_subcommand_mut(&s).unwrap(), &name, out, flags);
    }
}

#[test]
fn help_lists_every_flag_and_matches_snapshot() {
    let mut cmd = Cli::command();
    cmd.build();
    let mut text = String::new();
    let mut flags = Vec::new();
    walk(&mut cmd, "", &mut text, &mut flags);
    for global in ["seed", "out-dir", "log-level"] {
        assert!(flags.iter().any(|(c, f)| c == "prosody serve" && f == global));
    }

    let snap = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/help.txt");
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::create_dir_all(snap.parent().unwrap()).unwrap();
        std::fs::write(&snap, &text).unwrap();
    }
    let expected = std::fs::read_to_string(&snap).expect("snapshot exists; run with UPDATE_SNAPSHOTS=1 to create");
    if expected != text {
        let first = expected.lines().zip(text.lines()).position(|(a, b)| a != b).unwrap_or(0);
        panic!(
            "help output changed at line {}:\n  snapshot: {:?}\n  current:  {:?}\nrerun with UPDATE_SNAPSHOTS=1 if intended",
            first + 1,
            expected.lines().nth(first),
            text.lines().nth(first)
        );
    }
}
