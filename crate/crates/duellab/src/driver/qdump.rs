//! Value-head dump: what the net thinks of every single-path prefix of the
//! experiment tree, keyed by vertex label. Useful for plotting how an
//! agent's preferences spread over the tree as training progresses.

use std::collections::BTreeMap;

use crate::game::{self, GameState, Side};
use crate::learner::net::PolicyValueNet;
use crate::Real;

use super::{DriverError, GameSetup};

/// Evaluate the value head on every reachable first-path prefix state: the
/// root entry (path opened, nothing chosen) down to each full experiment.
/// States are built by applying real game actions, so every dumped state is
/// reachable by play.
pub fn dump_qvalues(
    setup: &GameSetup,
    net: &PolicyValueNet<Real>,
    side: Side,
) -> Result<BTreeMap<String, Real>, DriverError> {
    let gcfg = &setup.game;
    let tree = &setup.tree;
    let opened = game::apply_action(gcfg, &game::initial_state(gcfg, side), 1)?;

    let mut out = BTreeMap::new();
    let mut stack: Vec<(usize, GameState)> = vec![(0, opened)];
    while let Some((v, state)) = stack.pop() {
        let value = net.value(&game::encode_state(gcfg, &state))?;
        out.insert(tree.vertex(v).label.clone(), value);
        for &child in &tree.vertex(v).children {
            let action = tree.vertex(child).choice.expect("non-root vertex") + 1;
            stack.push((child, game::apply_action(gcfg, &state, action)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::RunConfig;
    use crate::learner::net::NetConfig;
    use crate::tree::ROOT_LABEL;

    fn setup() -> GameSetup {
        let mut cfg = RunConfig::preset("toy").unwrap();
        // Different per-side widths so a wrong-side net cannot slip through.
        cfg.max_paths_adversary = 2;
        GameSetup::new(cfg).unwrap()
    }

    fn net(setup: &GameSetup, side: Side, seed: u64) -> PolicyValueNet<Real> {
        PolicyValueNet::new(
            NetConfig {
                input: setup.encoded_len(side),
                hidden: 16,
                actions: setup.game.n_action(),
                dropout: 0.0,
            },
            seed,
        )
    }

    #[test]
    fn fresh_zero_net_dumps_zero_everywhere() {
        let setup = setup();
        let net = PolicyValueNet::<Real>::zeros(NetConfig {
            input: setup.encoded_len(Side::Protagonist),
            hidden: 16,
            actions: setup.game.n_action(),
            dropout: 0.0,
        });
        let map = dump_qvalues(&setup, &net, Side::Protagonist).unwrap();
        assert_eq!(map.len(), setup.tree.vertex_count());
        assert!(map.contains_key(ROOT_LABEL));
        assert!(map.values().all(|&v| v == 0.0));
    }

    #[test]
    fn values_are_bounded_and_cover_all_prefixes() {
        let setup = setup();
        let net = net(&setup, Side::Adversary, 9);
        let map = dump_qvalues(&setup, &net, Side::Adversary).unwrap();
        assert_eq!(map.len(), setup.tree.vertex_count());
        // Prefixes at every depth of the toy tree.
        assert!(map.contains_key("300kPa"));
        assert!(map.contains_key("300kPa_DTC"));
        assert!(map.contains_key("300kPa_DTC_1%"));
        assert!(map.values().all(|&v| (-1.0..=1.0).contains(&v) && v.abs() < 1.0));

        let again = dump_qvalues(&setup, &net, Side::Adversary).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn wrong_side_net_is_rejected_by_shape() {
        let setup = setup();
        let net = net(&setup, Side::Protagonist, 9);
        assert!(dump_qvalues(&setup, &net, Side::Adversary).is_err());
    }
}
