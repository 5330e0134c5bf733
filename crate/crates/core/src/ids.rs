//! Opaque identifiers shared by the protocol modules.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident, $prefix:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Mobile node.
    MnId, "MN"
);
id_type!(
    /// Point of attachment; each POA is served by exactly one MAG, so this
    /// also names the MAG.
    PoaId, "POA"
);
id_type!(
    /// Home network prefix. Real IPv6 prefixes are not modelled.
    Hnp, "HNP"
);
id_type!(
    /// MAG–LMA binding identifier referenced by MAG/LMA flow tables.
    BindId, "B"
);
id_type!(TunnelId, "T");
