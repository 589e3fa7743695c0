#include "korn/config.hpp"

#include <algorithm>
#include <cstdlib>

#include "korn/common.hpp"

namespace korn {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    parts.push_back(trim(text.substr(pos, end - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return parts;
}

}  // namespace

std::vector<double> parse_level_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& tok : split_csv(text)) {
    if (tok.empty()) fail("level list: empty entry in \"" + text + "\"");
    char* tail = nullptr;
    const double v = std::strtod(tok.c_str(), &tail);
    if (tail == tok.c_str() || *tail != '\0')
      fail("level list: cannot parse \"" + tok + "\"");
    if (!(v > 0.0)) fail("level list: entries must be positive, got \"" + tok + "\"");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> parse_id_list(const std::string& text) {
  std::vector<std::string> out;
  for (const std::string& tok : split_csv(text)) {
    if (tok.empty()) fail("id list: empty entry in \"" + text + "\"");
    out.push_back(tok);
  }
  return out;
}

std::string canonical_family(const std::string& name) {
  if (name == "bandlimited") return "bandlimited_random";
  if (name == "skew") return "windowed_skew_affine";
  if (name == "monomial") return "windowed_monomial";
  return name;
}

CampaignSpec single_check_plan(const std::string& id, std::uint64_t seed,
                               const CheckGrid& grid,
                               const std::map<std::string, double>& num,
                               const std::map<std::string, std::string>& str) {
  const std::vector<std::string> known = campaign_check_ids();
  if (std::find(known.begin(), known.end(), id) == known.end())
    fail("unknown check id \"" + id + "\"");
  CampaignSpec spec;
  spec.seed = seed;
  spec.grid = grid;
  CampaignCheckSpec c;
  c.id = id;
  c.num = num;
  c.str = str;
  spec.checks.push_back(c);
  return spec;
}

CampaignSpec filtered_campaign(std::uint64_t seed, bool quick,
                               const std::string& checks_csv) {
  CampaignSpec spec = default_campaign(seed, quick);
  if (trim(checks_csv).empty()) return spec;

  std::vector<CampaignCheckSpec> kept;
  for (const std::string& id : parse_id_list(checks_csv)) {
    const auto it = std::find_if(spec.checks.begin(), spec.checks.end(),
                                 [&](const CampaignCheckSpec& c) { return c.id == id; });
    if (it == spec.checks.end()) fail("unknown check id \"" + id + "\"");
    kept.push_back(*it);
  }
  spec.checks = kept;
  return spec;
}

}  // namespace korn
