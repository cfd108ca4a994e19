use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Officially assigned ISO 3166-1 alpha-2 codes.
const ISO_ALPHA2: &str = "AD AE AF AG AI AL AM AO AQ AR AS AT AU AW AX AZ BA BB BD BE BF BG BH BI BJ BL \
BM BN BO BQ BR BS BT BV BW BY BZ CA CC CD CF CG CH CI CK CL CM CN CO CR CU CV CW CX CY CZ DE DJ DK DM \
DO DZ EC EE EG EH ER ES ET FI FJ FK FM FO FR GA GB GD GE GF GG GH GI GL GM GN GP GQ GR GS GT GU GW GY \
HK HM HN HR HT HU ID IE IL IM IN IO IQ IR IS IT JE JM JO JP KE KG KH KI KM KN KP KR KW KY KZ LA LB LC \
LI LK LR LS LT LU LV LY MA MC MD ME MF MG MH MK ML MM MN MO MP MQ MR MS MT MU MV MW MX MY MZ NA NC NE \
NF NG NI NL NO NP NR NU NZ OM PA PE PF PG PH PK PL PM PN PR PS PT PW PY QA RE RO RS RU RW SA SB SC SD \
SE SG SH SI SJ SK SL SM SN SO SR SS ST SV SX SY SZ TC TD TF TG TH TJ TK TL TM TN TO TR TT TV TW TZ UA \
UG UM US UY UZ VA VC VE VG VI VN VU WF WS YE YT ZA ZM ZW";

/// The 27 EU member states.
pub const EU_MEMBERS: [&str; 27] = [
    "AT", "BE", "BG", "HR", "CY", "CZ", "DK", "EE", "FI", "FR", "DE", "GR", "HU", "IE", "IT", "LV", "LT", "LU", "MT",
    "NL", "PL", "PT", "RO", "SK", "SI", "ES", "SE",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid jurisdiction code {0:?}")]
pub struct JurisdictionError(pub String);

/// Country-level jurisdiction, or `??` when unknown.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Jurisdiction(String);

impl Jurisdiction {
    pub const UNKNOWN_CODE: &'static str = "??";

    pub fn unknown() -> Self {
        Jurisdiction(Self::UNKNOWN_CODE.to_owned())
    }

    pub fn is_unknown(&self) -> bool {
        self.0 == Self::UNKNOWN_CODE
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Jurisdiction {
    type Err = JurisdictionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_uppercase();
        if code == Self::UNKNOWN_CODE || (code.len() == 2 && ISO_ALPHA2.split_ascii_whitespace().any(|c| c == code)) {
            Ok(Jurisdiction(code))
        } else {
            Err(JurisdictionError(s.to_owned()))
        }
    }
}

impl TryFrom<String> for Jurisdiction {
    type Error = JurisdictionError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Jurisdiction> for String {
    fn from(value: Jurisdiction) -> Self {
        value.0
    }
}

impl fmt::Display for Jurisdiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The set of jurisdictions a household considers "home".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HomeRegion(BTreeSet<Jurisdiction>);

impl HomeRegion {
    pub fn eu() -> Self {
        HomeRegion(EU_MEMBERS.iter().map(|c| Jurisdiction((*c).to_owned())).collect())
    }

    pub fn contains(&self, j: &Jurisdiction) -> bool {
        self.0.contains(j)
    }

    pub fn codes(&self) -> impl Iterator<Item = &Jurisdiction> {
        self.0.iter()
    }
}

impl Default for HomeRegion {
    fn default() -> Self {
        Self::eu()
    }
}

impl FromStr for HomeRegion {
    type Err = JurisdictionError;

    /// Comma-separated codes; `EU` expands to the member states.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("EU") {
                set.extend(Self::eu().0);
            } else {
                let j: Jurisdiction = part.parse()?;
                if j.is_unknown() {
                    return Err(JurisdictionError(part.to_owned()));
                }
                set.insert(j);
            }
        }
        if set.is_empty() {
            return Err(JurisdictionError(s.to_owned()));
        }
        Ok(HomeRegion(set))
    }
}
