#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "json.hpp"

namespace nfe {

// Parsed sectioned key-value file (a TOML subset: [section] headers,
// key = value with strings, integers, floats, booleans and flat arrays,
// '#' comments). Keys before the first header land in section "".
struct ConfigDoc {
    nlohmann::json root = nlohmann::json::object();  // section -> {key -> value}
    std::map<std::string, int> lines;                 // "section.key" -> source line

    bool has(const std::string& section, const std::string& key) const;
    const nlohmann::json& section(const std::string& name) const;  // empty object when absent
    int line_of(const std::string& section, const std::string& key) const;  // 0 when unknown
};

ConfigDoc parse_config(const std::string& text);
ConfigDoc load_config(const std::filesystem::path& path);

// Sections any nfebench config may carry; one file can serve every subcommand.
const std::set<std::string>& known_config_sections();
// Throws ConfigError at the header line of the first section not in the list.
void reject_unknown_sections(const ConfigDoc& doc);

}  // namespace nfe
