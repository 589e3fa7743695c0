#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <korn/verification.hpp>

namespace korn {

/// Comma-separated positive reals, e.g. "0.08,0.04,0.02". Throws on empty
/// input, unparseable entries, or non-positive values.
std::vector<double> parse_level_list(const std::string& text);

/// Comma-separated identifiers with surrounding whitespace trimmed.
std::vector<std::string> parse_id_list(const std::string& text);

/// Maps the short command-line spellings ("bandlimited", "skew",
/// "monomial") to the full field-family ids; full ids pass through.
std::string canonical_family(const std::string& name);

/// A campaign holding the named check once, with the given grid and
/// parameter overrides. The id must be registered.
CampaignSpec single_check_plan(const std::string& id, std::uint64_t seed,
                               const CheckGrid& grid,
                               const std::map<std::string, double>& num = {},
                               const std::map<std::string, std::string>& str = {});

/// The default campaign, optionally restricted to a comma-separated subset
/// of check ids (run in the listed order). Throws on unregistered ids.
CampaignSpec filtered_campaign(std::uint64_t seed, bool quick,
                               const std::string& checks_csv);

}  // namespace korn
