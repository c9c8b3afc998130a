//! Independent MRT reader used to cross-check the archive writer.
//!
//! Usage: mrtcheck <file.mrt> [--elems]
//!
//! Prints a one-line JSON summary (element counts by type, unique prefix
//! count). With --elems, first prints one JSON line per parsed element so
//! callers can compare full content, then the summary line.

use std::collections::BTreeSet;
use std::env;
use std::fs::File;
use std::io::BufReader;
use std::process::exit;

use bgpkit_parser::BgpkitParser;
use bgpkit_parser::models::ElemType;

fn json_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn main() {
    let args: Vec<String> = env::args().collect();
    if args.len() < 2 {
        eprintln!("usage: mrtcheck <file.mrt> [--elems]");
        exit(2);
    }
    let path = &args[1];
    let dump_elems = args.iter().any(|a| a == "--elems");

    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {}", path, e);
            exit(1);
        }
    };
    let parser = BgpkitParser::from_reader(BufReader::new(file));

    let mut announce = 0u64;
    let mut withdraw = 0u64;
    let mut prefixes: BTreeSet<String> = BTreeSet::new();
    let mut peers: BTreeSet<String> = BTreeSet::new();

    for elem in parser {
        let kind = match elem.elem_type {
            ElemType::ANNOUNCE => {
                announce += 1;
                "announce"
            }
            ElemType::WITHDRAW => {
                withdraw += 1;
                "withdraw"
            }
        };
        let prefix = elem.prefix.to_string();
        prefixes.insert(prefix.clone());
        peers.insert(elem.peer_asn.to_string());
        if dump_elems {
            let path_text = elem
                .as_path
                .as_ref()
                .map(|p| p.to_string())
                .unwrap_or_default();
            let origins = elem
                .origin_asns
                .as_ref()
                .map(|v| {
                    v.iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .unwrap_or_default();
            println!(
                "{{\"ts\":{},\"type\":\"{}\",\"prefix\":\"{}\",\"peer_asn\":\"{}\",\"as_path\":\"{}\",\"origins\":\"{}\"}}",
                elem.timestamp,
                kind,
                json_escape(&prefix),
                elem.peer_asn,
                json_escape(&path_text),
                json_escape(&origins),
            );
        }
    }

    println!(
        "{{\"file\":\"{}\",\"announce\":{},\"withdraw\":{},\"unique_prefixes\":{},\"peers\":{}}}",
        json_escape(path),
        announce,
        withdraw,
        prefixes.len(),
        peers.len()
    );
}
