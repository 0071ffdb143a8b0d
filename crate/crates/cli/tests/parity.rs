use std::collections::BTreeSet;

use fabric_cli::parity::{leaf_commands, COMMAND_ENDPOINTS};
use fabric_middleware::ROUTES;

#[test]
fn every_subcommand_has_an_endpoint_entry() {
    let leaves: BTreeSet<String> = leaf_commands().into_iter().collect();
    let table: BTreeSet<String> = COMMAND_ENDPOINTS.iter().map(|c| c.command.to_string()).collect();
    assert_eq!(leaves, table);
    assert_eq!(table.len(), COMMAND_ENDPOINTS.len(), "duplicate command entries");
}

#[test]
fn cli_endpoints_are_documented_routes() {
    let routes: BTreeSet<(&str, &str)> = ROUTES.iter().map(|r| (r.method, r.path)).collect();
    for c in COMMAND_ENDPOINTS {
        for e in c.endpoints {
            assert!(routes.contains(e), "`{}` calls undocumented {} {}", c.command, e.0, e.1);
        }
    }
}

#[test]
fn every_authenticated_route_is_reachable_from_the_cli() {
    let used: BTreeSet<(&str, &str)> = COMMAND_ENDPOINTS.iter().flat_map(|c| c.endpoints.iter().copied()).collect();
    for r in ROUTES.iter().filter(|r| r.authenticated) {
        assert!(used.contains(&(r.method, r.path)), "no subcommand for {} {}", r.method, r.path);
    }
}
